import os
import os.path as osp
import sys
cur_dir = osp.dirname(osp.abspath(__file__))
sys.path.insert(0, osp.join(cur_dir, '..'))

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from hypnogrid.errors import ConfigError, FormatError
from hypnogrid.stage.params import ModelConfig, init_params
from hypnogrid.stage.checkpoint import save_checkpoint, load_checkpoint, read_manifest_config, checkpoint_io
from hypnogrid.stage.manifest import RunManifest
from hypnogrid.stage.model import model_forward


def _trained_looking_params(seed=0):
    params = init_params(ModelConfig.miniature(), np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for stats in params.buffers.values():
        stats.mean[...] = rng.standard_normal(stats.mean.shape)
        stats.var[...] = rng.uniform(0.5, 2.0, stats.var.shape)
    return params


def test_round_trip_is_bit_exact(tmp_path):
    params = _trained_looking_params()
    base = str(tmp_path / 'ckpt' / 'chkpt')
    save_checkpoint(params, base)
    back = load_checkpoint(base)
    assert back.config == params.config
    assert list(back.state_arrays()) == list(params.state_arrays())
    for name, array in params.state_arrays().items():
        assert_array_equal(back.state_arrays()[name], array)


def test_eval_outputs_survive_a_round_trip(tmp_path):
    params = _trained_looking_params(3)
    base = str(tmp_path / 'chkpt')
    save_checkpoint(params, base)
    batch = np.random.default_rng(4).standard_normal((3, 3, 200)).astype(np.float32)
    before, alpha_before = model_forward(batch, params)
    after, alpha_after = model_forward(batch, load_checkpoint(base))
    assert np.array_equal(before.data, after.data)
    assert np.array_equal(alpha_before.data, alpha_after.data)


def test_manifest_carries_config(tmp_path):
    params = _trained_looking_params()
    base = str(tmp_path / 'chkpt')
    save_checkpoint(params, base)
    config, parser = read_manifest_config(base)
    assert config == ModelConfig.miniature()
    assert parser.getint('Checkpoint', 'FORMAT_VERSION') == 1
    assert parser.get('Tensors', 'classifier.out.bias').startswith('float32;5;')


def test_different_config_is_a_config_error(tmp_path):
    base = str(tmp_path / 'chkpt')
    save_checkpoint(_trained_looking_params(), base)
    with pytest.raises(ConfigError) as e:
        load_checkpoint(base, config=ModelConfig.miniature(h1=6))
    assert 'intra.fwd.w_hh' in str(e.value)


def test_truncated_blob_is_a_format_error(tmp_path):
    base = str(tmp_path / 'chkpt')
    _, blob = save_checkpoint(_trained_looking_params(), base)
    size = os.path.getsize(blob)
    with open(blob, 'r+b') as f:
        f.truncate(size - 8)
    with pytest.raises(FormatError):
        load_checkpoint(base)


def test_trailing_bytes_are_a_format_error(tmp_path):
    base = str(tmp_path / 'chkpt')
    _, blob = save_checkpoint(_trained_looking_params(), base)
    with open(blob, 'ab') as f:
        f.write(b'\0\0\0\0')
    with pytest.raises(FormatError):
        load_checkpoint(base)


def test_missing_or_corrupt_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(str(tmp_path / 'nothing'))
    base = str(tmp_path / 'chkpt')
    manifest, _ = save_checkpoint(_trained_looking_params(), base)
    with open(manifest, 'w') as f:
        f.write('[Checkpoint]\nFORMAT_VERSION: 7\n')
    with pytest.raises(FormatError):
        load_checkpoint(base)


def test_checkpoint_io_directions(tmp_path):
    params = _trained_looking_params()
    base = str(tmp_path / 'chkpt')
    assert checkpoint_io(params, base, 'save') is None
    assert checkpoint_io(params, base, 'load').config == params.config
    with pytest.raises(ConfigError):
        checkpoint_io(params, base, 'sideways')


def test_run_manifest_identity_ignores_timestamps(tmp_path):
    a = RunManifest('abc', 1, 'fff', 0, version='v0.9', started='2020-01-01T00:00:00')
    b = RunManifest('abc', 1, 'fff', 0, version='v0.9', started='2021-01-01T00:00:00').mark_finished()
    assert a == b
    assert a != a.for_fold(1)
    path = a.write(str(tmp_path / 'manifest.json'))
    back = RunManifest.load(path)
    assert back == a and back.started == a.started


def test_run_manifest_bad_file(tmp_path):
    path = str(tmp_path / 'manifest.json')
    with open(path, 'w') as f:
        f.write('{"seed": 1}')
    with pytest.raises(FormatError):
        RunManifest.load(path)


if __name__ == "__main__":
    pytest.main([__file__])
