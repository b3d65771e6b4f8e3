# -*- coding: utf-8 -*-
"""Occlusion maps, attention export and hypnogram pairing."""
from collections import namedtuple

import numpy as np
import pandas as pd
from scipy import special

from ..errors import ConfigError, DataError
from ..tensor import no_grad
from ..stage.model import model_forward
from ..stage import utils as u

CENTER = 1

ImportanceMap = namedtuple('ImportanceMap', ['block_id', 'segment_len', 'values', 'predicted', 'true'])
Hypnogram = namedtuple('Hypnogram', ['predicted', 'true', 'agree', 'agreement'])


def _probabilities(params, batch):
    with no_grad():
        logits, _ = model_forward(batch, params, training=False)
    return special.softmax(logits.data.astype(np.float64), axis=1)


def occlusion_importance(params, window, segment_len=50):
    """Drop in predicted-class probability when each center segment is zeroed.

    :param window: [3, L] context window
    :return: (importances [L / segment_len], predicted class)
    """
    window = np.asarray(window)
    L = window.shape[-1]
    if segment_len < 1 or L % segment_len:
        raise ConfigError('segment length %d does not divide %d samples' % (segment_len, L))
    n_seg = L // segment_len
    batch = np.repeat(window[None], n_seg + 1, axis=0)
    for j in range(n_seg):
        batch[j + 1, CENTER, j * segment_len:(j + 1) * segment_len] = 0.0
    probs = _probabilities(params, batch)
    cls = int(np.argmax(probs[0]))
    return np.maximum(0.0, probs[0, cls] - probs[1:, cls]), cls


def epoch_importance_maps(params, windows, segment_len=50, quiet=True):
    """One ImportanceMap per epoch: the chunk maps concatenated in chunk order.

    The reported class is the prediction of the voted epoch probabilities.
    """
    order = np.lexsort((windows.chunks, windows.epochs, windows.recordings.astype(str)))
    groups = {}
    for i in order:
        groups.setdefault((windows.recordings[i], int(windows.epochs[i])), []).append(i)

    maps = []
    bar = u.progress_bar('Occlusion: ', len(groups), quiet)
    bar.start()
    for n, (block_id, idx) in enumerate(groups.items()):
        rows, probs = [], []
        for i in idx:
            values, _ = occlusion_importance(params, windows.data[i], segment_len)
            rows.append(values)
            probs.append(_probabilities(params, windows.data[i:i + 1])[0])
        predicted = int(np.argmax(np.mean(probs, axis=0)))
        maps.append(ImportanceMap(block_id, segment_len, np.concatenate(rows), predicted, int(windows.labels[idx[0]])))
        bar.update(n + 1)
    bar.finish()
    return maps


def _block_name(block_id):
    return '%s/%d' % (block_id[0], block_id[1])


def importance_table(maps):
    rows = []
    for m in maps:
        for j, value in enumerate(m.values):
            rows.append((_block_name(m.block_id), j * m.segment_len, float(value), m.predicted, m.true))
    return pd.DataFrame(rows, columns=['block_id', 'segment_start_sample', 'importance', 'predicted', 'true'])


def export_attention(windows, alpha, atol=1e-5):
    """Per-window attention weights over (past, center, future)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(windows), 3):
        raise DataError('attention weights %s do not match %d windows' % (alpha.shape, len(windows)))
    if len(alpha) and np.abs(alpha.sum(axis=1) - 1.0).max() > atol:
        raise DataError('attention rows do not sum to 1')
    return pd.DataFrame({'block_id': [_block_name(k) for k in windows.block_keys()],
                         'chunk_index': windows.chunks,
                         'alpha_past': alpha[:, 0],
                         'alpha_center': alpha[:, 1],
                         'alpha_future': alpha[:, 2]},
                        columns=['block_id', 'chunk_index', 'alpha_past', 'alpha_center', 'alpha_future'])


def hypnogram_compare(predicted, true):
    predicted = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if predicted.shape != true.shape:
        raise DataError('hypnograms of %d and %d epochs' % (len(predicted), len(true)))
    agree = predicted == true
    return Hypnogram(predicted, true, agree, float(agree.mean()) if len(agree) else float('nan'))


def hypnogram_table(keys, hypnogram):
    return pd.DataFrame({'block_id': [_block_name(k) for k in keys],
                         'true': hypnogram.true, 'predicted': hypnogram.predicted,
                         'agree': hypnogram.agree.astype(int)},
                        columns=['block_id', 'true', 'predicted', 'agree'])
