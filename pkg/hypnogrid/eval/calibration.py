# -*- coding: utf-8 -*-
import numpy as np
import pandas as pd

from ..errors import DataError


class ReliabilityBins(object):
    """Equal-width confidence bins over [0, 1]; empty bins carry NaN means."""

    def __init__(self, edges, counts, confidence, accuracy):
        self.edges = np.asarray(edges, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.confidence = np.asarray(confidence, dtype=np.float64)
        self.accuracy = np.asarray(accuracy, dtype=np.float64)

    @property
    def n_bins(self):
        return len(self.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def ece(self):
        used = self.counts > 0
        if not used.any():
            return 0.0
        gaps = np.abs(self.accuracy[used] - self.confidence[used])
        return float(np.dot(self.counts[used], gaps) / self.total)

    def to_frame(self):
        return pd.DataFrame({'bin_lower': self.edges[:-1], 'bin_upper': self.edges[1:],
                             'count': self.counts, 'confidence': self.confidence,
                             'accuracy': self.accuracy},
                            columns=['bin_lower', 'bin_upper', 'count', 'confidence', 'accuracy'])

    @classmethod
    def from_frame(cls, frame):
        edges = np.append(frame['bin_lower'].values, frame['bin_upper'].values[-1])
        return cls(edges, frame['count'].values, frame['confidence'].values, frame['accuracy'].values)


def reliability_bins(confidence, outcome, n_bins=10):
    """Bin index floor(conf * n_bins), with conf == 1 falling into the last bin."""
    confidence = np.asarray(confidence, dtype=np.float64).reshape(-1)
    outcome = np.asarray(outcome, dtype=np.float64).reshape(-1)
    if len(confidence) != len(outcome):
        raise DataError('%d confidences for %d outcomes' % (len(confidence), len(outcome)))
    if n_bins < 1:
        raise DataError('need at least one bin')
    if len(confidence) and (confidence.min() < 0 or confidence.max() > 1):
        raise DataError('confidences must lie in [0, 1]')
    idx = np.minimum((confidence * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    with np.errstate(invalid='ignore', divide='ignore'):
        conf = np.bincount(idx, weights=confidence, minlength=n_bins) / counts
        acc = np.bincount(idx, weights=outcome, minlength=n_bins) / counts
    return ReliabilityBins(np.linspace(0.0, 1.0, n_bins + 1), counts, conf, acc)


def calibration_ece(probs, true, n_bins=10):
    """Expected calibration error of the max-probability confidence.

    :return: (ECE, ReliabilityBins)
    """
    probs = np.asarray(probs, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    if probs.ndim != 2 or len(probs) != len(true):
        raise DataError('probabilities %s do not match %d labels' % (probs.shape, len(true)))
    bins = reliability_bins(probs.max(axis=1), probs.argmax(axis=1) == true, n_bins)
    return bins.ece(), bins


def class_calibration_ece(probs, true, k, n_bins=10):
    """Reliability of the class-k probability against the class-k indicator."""
    probs = np.asarray(probs, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    bins = reliability_bins(probs[:, k], true == k, n_bins)
    return bins.ece(), bins
