# -*- coding: utf-8 -*-
"""From signal containers to 3 x 500-sample context windows.

read -> relabel -> trim -> normalize -> segment into 5 s chunks -> context windows
"""
import os
import glob
import hashlib
import logging as log
from collections import namedtuple

import numpy as np

from ..errors import ConfigError, DataError
from .container import read_container, SAMPLE_RATE
from . import utils as u

STAGES = ('W', 'N1', 'N2', 'N3', 'REM')
N_CLASSES = len(STAGES)
EXCLUDED = -1

EPOCH_LEN = 30 * SAMPLE_RATE
CHUNK_LEN = 5 * SAMPLE_RATE
CHUNKS_PER_EPOCH = EPOCH_LEN // CHUNK_LEN

# epoch counts per stage (W, N1, N2, N3, REM)
SLEEPEDF20_COUNTS = (8285, 2804, 17799, 5703, 7717)
SLEEPEDF78_COUNTS = (69824, 21522, 69132, 13039, 25835)

_RELABEL = {
    'W': 0,
    'N1': 1,
    'N2': 2,
    'N3': 3,
    'N4': 3,
    'REM': 4,
    'MOVEMENT': EXCLUDED,
    'UNKNOWN': EXCLUDED,
}

Chunk = namedtuple('Chunk', ['block_id', 'chunk_index', 'samples', 'label'])
SubEpochWindow = namedtuple('SubEpochWindow', ['data', 'label', 'block_id', 'chunk_index', 'subject_id'])


def relabel_stages(raw_labels):
    """Map R&K symbols onto the five AASM classes; N4 joins N3.

    :return: int array of class indices, EXCLUDED (-1) for movement/unknown epochs
    """
    try:
        return np.array([_RELABEL[label] for label in raw_labels], dtype=np.int64)
    except KeyError as e:
        raise DataError('unknown stage symbol %s' % e)


def trim_wake(samples, labels, edge_epochs=60):
    """Keep ``edge_epochs`` of wake before the first and after the last sleep epoch.

    :return: (samples, labels, index of the first kept epoch)
    """
    labels = np.asarray(labels)
    sleep = np.flatnonzero((labels != 0) & (labels != EXCLUDED))
    if sleep.size == 0:
        return samples, labels, 0
    start = max(0, sleep[0] - edge_epochs)
    end = min(len(labels), sleep[-1] + edge_epochs + 1)
    return samples[start * EPOCH_LEN:end * EPOCH_LEN], labels[start:end], int(start)


def normalize_recording(samples):
    samples = np.asarray(samples, dtype=np.float32)
    std = samples.std()
    if std == 0:
        log.warning('flat recording, only centering it')
        return samples - samples.mean()
    return ((samples - samples.mean()) / std).astype(np.float32)


def segment_and_chunk(samples, labels, recording_id='', epoch_offset=0):
    """Split every labelled, non-excluded 30 s epoch into six 500-sample chunks.

    :param epoch_offset: epoch index of ``labels[0]`` in the untrimmed recording
    :return: list of Chunk with block_id = (recording_id, epoch index)
    """
    labels = np.asarray(labels)
    n_full = len(samples) // EPOCH_LEN
    if len(labels) < n_full:
        raise DataError('%s: %d full epochs but only %d labels' % (recording_id, n_full, len(labels)))
    if len(labels) > n_full:
        log.info('%s: dropping %d trailing partial epoch(s)', recording_id, len(labels) - n_full)
    if len(samples) > n_full * EPOCH_LEN and len(labels) == n_full:
        log.debug('%s: ignoring %d samples past the last labelled epoch',
                  recording_id, len(samples) - n_full * EPOCH_LEN)
    chunks = []
    for e in range(n_full):
        if labels[e] == EXCLUDED:
            continue
        epoch = samples[e * EPOCH_LEN:(e + 1) * EPOCH_LEN]
        block_id = (recording_id, epoch_offset + e)
        for i in range(CHUNKS_PER_EPOCH):
            chunks.append(Chunk(block_id, i, epoch[i * CHUNK_LEN:(i + 1) * CHUNK_LEN], int(labels[e])))
    return chunks


def _position(chunk):
    return chunk.block_id[1] * CHUNKS_PER_EPOCH + chunk.chunk_index


def _adjacent(a, b):
    return a.block_id[0] == b.block_id[0] and _position(b) == _position(a) + 1


def build_context_windows(chunks, subject_id=''):
    """Make one (past, center, future) window per chunk.

    A missing neighbour (recording edge, or an excluded epoch in between)
    is replaced by a copy of the center chunk.
    """
    windows = []
    for j, center in enumerate(chunks):
        past = chunks[j - 1] if j > 0 and _adjacent(chunks[j - 1], center) else center
        future = chunks[j + 1] if j + 1 < len(chunks) and _adjacent(center, chunks[j + 1]) else center
        data = np.stack([past.samples, center.samples, future.samples]).astype(np.float32)
        windows.append(SubEpochWindow(data, center.label, center.block_id, center.chunk_index, subject_id))
    return windows


def compute_class_weights(labels, n_classes=N_CLASSES):
    """w_k = N / (K * n_k), so the weights have mean 1 under the label distribution."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)[:n_classes]
    missing = [STAGES[k] if k < len(STAGES) else str(k) for k in np.flatnonzero(counts == 0)]
    if missing:
        raise ConfigError('no training samples of class(es) %s; enable augmentation or merge folds'
                          % ', '.join(missing))
    return counts.sum() / (float(n_classes) * counts)


class WindowSet(object):
    """Struct-of-arrays view over context windows."""

    def __init__(self, data, labels, subjects, recordings, epochs, chunks):
        self.data = np.asarray(data, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.subjects = np.asarray(subjects, dtype=object)
        self.recordings = np.asarray(recordings, dtype=object)
        self.epochs = np.asarray(epochs, dtype=np.int64)
        self.chunks = np.asarray(chunks, dtype=np.int64)
        n = len(self.labels)
        for name in ('data', 'subjects', 'recordings', 'epochs', 'chunks'):
            if len(getattr(self, name)) != n:
                raise DataError('WindowSet field %s has %d rows, expected %d' % (name, len(getattr(self, name)), n))

    @classmethod
    def empty(cls, chunk_len=CHUNK_LEN):
        return cls(np.zeros((0, 3, chunk_len), np.float32), [], [], [], [], [])

    @classmethod
    def from_windows(cls, windows):
        if not windows:
            return cls.empty()
        return cls(np.stack([w.data for w in windows]),
                   [w.label for w in windows],
                   [w.subject_id for w in windows],
                   [w.block_id[0] for w in windows],
                   [w.block_id[1] for w in windows],
                   [w.chunk_index for w in windows])

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.data for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.subjects for s in sets]),
                   np.concatenate([s.recordings for s in sets]),
                   np.concatenate([s.epochs for s in sets]),
                   np.concatenate([s.chunks for s in sets]))

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        indices = np.asarray(indices)
        return WindowSet(self.data[indices], self.labels[indices], self.subjects[indices],
                         self.recordings[indices], self.epochs[indices], self.chunks[indices])

    def block_keys(self):
        return list(zip(self.recordings.tolist(), self.epochs.tolist()))

    def subject_ids(self):
        return sorted(set(self.subjects.tolist()))

    def save(self, path):
        np.savez(path, data=self.data, labels=self.labels,
                 subjects=self.subjects.astype(str), recordings=self.recordings.astype(str),
                 epochs=self.epochs, chunks=self.chunks)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z['data'], z['labels'], z['subjects'].tolist(), z['recordings'].tolist(),
                       z['epochs'], z['chunks'])


def recording_windows(recording, edge_epochs=60, normalize='per_recording'):
    labels = relabel_stages(recording.raw_labels)
    samples, labels, offset = trim_wake(recording.samples, labels, edge_epochs)
    if normalize == 'per_recording':
        samples = normalize_recording(samples)
    elif normalize != 'none':
        raise ConfigError('NORMALIZE must be per_recording or none, got %r' % normalize)
    chunks = segment_and_chunk(samples, labels, recording.recording_id, offset)
    return WindowSet.from_windows(build_context_windows(chunks, recording.subject_id))


def list_containers(dataset_dir):
    files = sorted(glob.glob(os.path.join(dataset_dir, '*.eeg')))
    if not files:
        raise DataError('no *.eeg signal containers in %s' % dataset_dir)
    return files


def build_window_dataset(dataset_dir, args, cache_dir=None):
    """Windows of every container in ``dataset_dir``, cached as npz under ``cache_dir``.

    The cache name is the md5 of the [Dataset] section plus the dataset fingerprint.
    """
    files = list_containers(dataset_dir)
    edge = args.getint('Dataset', 'TRIM_EDGE_EPOCHS')
    normalize = args.get('Dataset', 'NORMALIZE')

    cache_file = None
    if cache_dir is not None:
        key = str(args.items('Dataset')) + u.dataset_fingerprint(files)
        cache_file = os.path.join(cache_dir, hashlib.md5(key.encode('utf-8')).hexdigest() + '.npz')
        if os.path.exists(cache_file):
            log.info('loading cached windows from %s', cache_file)
            return WindowSet.load(cache_file)
        log.info('no window cache at %s, building it', cache_file)

    sets = [recording_windows(read_container(f), edge, normalize) for f in files]
    windows = WindowSet.concat(sets)
    log.info('%d windows from %d recordings', len(windows), len(files))

    if cache_file is not None:
        if not os.path.exists(cache_dir):
            os.makedirs(cache_dir)
        windows.save(cache_file)
    return windows
