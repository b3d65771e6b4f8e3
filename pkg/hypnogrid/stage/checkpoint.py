# -*- coding: utf-8 -*-
"""Checkpoints: an INI manifest (config + name -> dtype;shape;offset) and a little-endian float32 blob."""
import os
import json
import configparser
import logging as log

import numpy as np

from .. import __version__
from ..errors import ConfigError, FormatError
from .params import ModelConfig, init_params

FORMAT_VERSION = 1
_BLOB_DTYPE = np.dtype('<f4')


def _paths(basepath):
    return basepath + '.manifest', basepath + '.blob'


def _new_parser():
    parser = configparser.ConfigParser()
    parser.optionxform = str
    return parser


def save_checkpoint(params, basepath):
    """Write ``basepath``.manifest and ``basepath``.blob; BN running stats are included."""
    manifest_path, blob_path = _paths(basepath)
    directory = os.path.dirname(manifest_path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)

    parser = _new_parser()
    parser['Checkpoint'] = {'FORMAT_VERSION': str(FORMAT_VERSION),
                            'BLOB': os.path.basename(blob_path),
                            'HYPNOGRID_VERSION': __version__}
    parser['ModelConfig'] = {k: json.dumps(v) for k, v in params.config.to_dict().items()}
    tensors = {}
    offset = 0
    with open(blob_path, 'wb') as f:
        for name, array in params.state_arrays().items():
            data = np.ascontiguousarray(array, dtype=_BLOB_DTYPE)
            tensors[name] = 'float32;%s;%d' % (','.join(str(n) for n in data.shape), offset)
            f.write(data.tobytes())
            offset += data.nbytes
    parser['Tensors'] = tensors
    with open(manifest_path, 'w') as f:
        parser.write(f)
    log.info('saved checkpoint %s (%d tensors, %d bytes)', basepath, len(tensors), offset)
    return manifest_path, blob_path


def _parse_entry(name, entry):
    try:
        dtype, shape, offset = entry.split(';')
        shape = tuple(int(n) for n in shape.split(',')) if shape else ()
        return dtype, shape, int(offset)
    except ValueError:
        raise FormatError('bad manifest entry for %s: %r' % (name, entry))


def read_manifest_config(basepath):
    manifest_path, _ = _paths(basepath)
    if not os.path.exists(manifest_path):
        raise FormatError('no checkpoint manifest at %s' % manifest_path)
    parser = _new_parser()
    try:
        parser.read(manifest_path)
        if parser.getint('Checkpoint', 'FORMAT_VERSION') != FORMAT_VERSION:
            raise FormatError('unsupported checkpoint format %s' % parser.get('Checkpoint', 'FORMAT_VERSION'))
        config = ModelConfig.from_dict({k: json.loads(v) for k, v in parser.items('ModelConfig')})
    except (configparser.Error, ValueError, TypeError) as e:
        raise FormatError('corrupt checkpoint manifest %s: %s' % (manifest_path, e))
    return config, parser


def _shape_diff(expected, found):
    lines = []
    for name in sorted(set(expected) | set(found)):
        a, b = expected.get(name), found.get(name)
        if a != b:
            lines.append('  %s: expected %s, checkpoint has %s' % (name, a, b))
    return '\n'.join(lines)


def load_checkpoint(basepath, config=None, dtype=np.float32):
    """Rebuild ModelParams from a checkpoint.

    :param config: when given, the stored config must produce the same tensors,
        otherwise ConfigError lists the shape differences
    Every check runs before any value is assigned.
    """
    stored_config, parser = read_manifest_config(basepath)
    _, blob_path = _paths(basepath)
    target = config or stored_config
    entries = dict((name, _parse_entry(name, entry)) for name, entry in parser.items('Tensors'))

    params = init_params(target, np.random.default_rng(0), dtype=dtype)
    wanted = {name: tuple(a.shape) for name, a in params.state_arrays().items()}
    found = {name: shape for name, (_, shape, _) in entries.items()}
    if wanted != found:
        diff = _shape_diff(wanted, found)
        if config is not None and config != stored_config:
            raise ConfigError('checkpoint %s was trained with a different model config:\n%s' % (basepath, diff))
        raise FormatError('checkpoint %s does not match its config:\n%s' % (basepath, diff))

    if not os.path.exists(blob_path):
        raise FormatError('missing checkpoint blob %s' % blob_path)
    blob = np.fromfile(blob_path, dtype=np.uint8)
    arrays = {}
    end = 0
    for name, (kind, shape, offset) in entries.items():
        if kind != 'float32':
            raise FormatError('%s: unsupported dtype %s' % (name, kind))
        nbytes = int(np.prod(shape)) * _BLOB_DTYPE.itemsize
        if offset < 0 or offset + nbytes > blob.size:
            raise FormatError('%s: blob %s is truncated' % (name, blob_path))
        arrays[name] = blob[offset:offset + nbytes].view(_BLOB_DTYPE).reshape(shape)
        end = max(end, offset + nbytes)
    if end != blob.size:
        raise FormatError('blob %s has %d trailing bytes' % (blob_path, blob.size - end))

    params.assign(arrays)
    log.info('loaded checkpoint %s', basepath)
    return params


def checkpoint_io(params, basepath, direction):
    if direction == 'save':
        save_checkpoint(params, basepath)
        return None
    if direction == 'load':
        return load_checkpoint(basepath, config=params.config if params is not None else None)
    raise ConfigError('checkpoint direction must be save or load, got %r' % direction)
