# -*- coding: utf-8 -*-
"""Score chunk predictions at the epoch level."""
from collections import namedtuple

import numpy as np

from ..errors import DataError
from ..stage.dataset import STAGES, WindowSet
from ..stage.training import evaluate_windows
from .voting import vote_windows
from .metrics import confusion_and_metrics
from .calibration import calibration_ece, class_calibration_ece
from .importance import export_attention, hypnogram_compare

Evaluation = namedtuple('Evaluation', ['report', 'reliability', 'class_reliability', 'keys',
                                       'epoch_probs', 'predicted', 'true', 'attention', 'hypnogram'])


def score_predictions(windows, probs, alpha=None, n_bins=10):
    """Vote chunk probabilities into epochs and compute every epoch-level metric."""
    if len(windows) == 0:
        raise DataError('no windows to evaluate')
    keys, epoch_probs, pred, true = vote_windows(windows.block_keys(), probs, windows.labels)
    n_classes = epoch_probs.shape[1]
    report = confusion_and_metrics(pred, true, n_classes, scores=epoch_probs)
    report.ece, reliability = calibration_ece(epoch_probs, true, n_bins)
    class_reliability = dict((STAGES[k] if n_classes == len(STAGES) else str(k),
                              class_calibration_ece(epoch_probs, true, k, n_bins)[1]) for k in range(n_classes))
    attention = export_attention(windows, alpha) if alpha is not None else None
    return Evaluation(report, reliability, class_reliability, keys, epoch_probs, pred, true,
                      attention, hypnogram_compare(pred, true))


def evaluate_checkpoint(params, windows, batch_size=256, n_bins=10):
    out = evaluate_windows(params, windows, batch_size)
    return score_predictions(windows, out.probs, out.alpha, n_bins)


def load_predictions(paths):
    """Concatenate fold prediction files into (WindowSet without signals, probs, alpha)."""
    sets, probs, alphas = [], [], []
    for path in paths:
        with np.load(path) as z:
            n = len(z['labels'])
            sets.append(WindowSet(np.zeros((n, 3, 0), np.float32), z['labels'], z['subjects'].tolist(),
                                  z['recordings'].tolist(), z['epochs'], z['chunks']))
            probs.append(z['probs'])
            alphas.append(z['alpha'] if len(z['alpha']) == n else None)
    alpha = None if any(a is None for a in alphas) else np.concatenate(alphas)
    return WindowSet.concat(sets), np.concatenate(probs), alpha
