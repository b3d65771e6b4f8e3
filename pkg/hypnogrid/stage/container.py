# -*- coding: utf-8 -*-
"""Reader/writer for the little-endian EEG1 signal container.

Layout: magic "EEG1", u16 version (1), u16 reserved, u32 sample_rate,
u32 len + utf-8 subject id, u32 len + utf-8 recording id, u64 n_samples,
n_samples f32 samples, u32 n_epochs, n_epochs u8 raw labels.
"""
import os
import struct
import logging as log

import numpy as np

from ..errors import DataError, FormatError

MAGIC = b'EEG1'
VERSION = 1
SAMPLE_RATE = 100

RAW_LABELS = ('W', 'N1', 'N2', 'N3', 'N4', 'REM', 'MOVEMENT', 'UNKNOWN')
RAW_CODES = {name: code for code, name in enumerate(RAW_LABELS)}


class Recording(object):

    def __init__(self, subject_id, recording_id, samples, raw_labels, sample_rate=SAMPLE_RATE):
        self.subject_id = subject_id
        self.recording_id = recording_id
        self.sample_rate = int(sample_rate)
        self.samples = np.asarray(samples, dtype=np.float32)
        self.raw_labels = list(raw_labels)

    @property
    def n_epochs(self):
        return len(self.raw_labels)

    def __repr__(self):
        return 'Recording(%s/%s, %d samples, %d epochs)' % (
            self.subject_id, self.recording_id, len(self.samples), self.n_epochs)


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError('truncated container while reading %s (%d of %d bytes)' % (what, len(data), n))
    return data


def _unpack(f, fmt, what):
    return struct.unpack(fmt, _read_exact(f, struct.calcsize(fmt), what))


def _read_text(f, path, what):
    (n,) = _unpack(f, '<I', what + ' length')
    raw = _read_exact(f, n, what)
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError:
        raise FormatError('%s: %s is not valid utf-8: %r' % (path, what, raw))


def read_container(path):
    """Load a Recording; labels come back as symbols from RAW_LABELS.

    :raises FormatError: bad magic, unsupported version, non-utf-8 ids or truncated payload
    :raises DataError: sample rate other than 100 Hz, unknown label code
    """
    with open(path, 'rb') as f:
        magic = _read_exact(f, 4, 'magic')
        if magic != MAGIC:
            raise FormatError('%s: bad magic %r' % (path, magic))
        version, _reserved, sample_rate = _unpack(f, '<HHI', 'header')
        if version != VERSION:
            raise FormatError('%s: unsupported container version %d' % (path, version))
        subject_id = _read_text(f, path, 'subject id')
        recording_id = _read_text(f, path, 'recording id')
        (n_samples,) = _unpack(f, '<Q', 'sample count')
        samples = np.frombuffer(_read_exact(f, 4 * n_samples, 'samples'), dtype='<f4').astype(np.float32)
        (n_epochs,) = _unpack(f, '<I', 'epoch count')
        codes = np.frombuffer(_read_exact(f, n_epochs, 'labels'), dtype=np.uint8)
        if f.read(1):
            raise FormatError('%s: trailing bytes after label block' % path)

    if sample_rate != SAMPLE_RATE:
        raise DataError('%s: sample rate %d Hz, only %d Hz is supported' % (path, sample_rate, SAMPLE_RATE))
    if codes.size and codes.max() >= len(RAW_LABELS):
        raise DataError('%s: unknown label code %d' % (path, codes.max()))
    log.debug('read %s: %d samples, %d epochs', path, n_samples, n_epochs)
    return Recording(subject_id, recording_id, samples, [RAW_LABELS[c] for c in codes], sample_rate)


def write_container(recording, path):
    try:
        codes = bytes(RAW_CODES[label] for label in recording.raw_labels)
    except KeyError as e:
        raise DataError('cannot encode stage label %s' % e)
    subject = recording.subject_id.encode('utf-8')
    rec_id = recording.recording_id.encode('utf-8')
    samples = np.ascontiguousarray(recording.samples, dtype='<f4')

    dirname = os.path.dirname(path)
    if dirname and not os.path.exists(dirname):
        os.makedirs(dirname)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<HHI', VERSION, 0, recording.sample_rate))
        f.write(struct.pack('<I', len(subject)))
        f.write(subject)
        f.write(struct.pack('<I', len(rec_id)))
        f.write(rec_id)
        f.write(struct.pack('<Q', samples.size))
        f.write(samples.tobytes())
        f.write(struct.pack('<I', len(codes)))
        f.write(codes)
    return path
