# -*- coding: utf-8 -*-
"""Epoch-level scoring: confusion matrix, one-vs-rest rates, macro F1, Cohen's kappa and AUROC.

A class that appears neither in the predictions nor in the truth has undefined
(None) per-class values and is left out of every macro mean.
"""
from collections import OrderedDict

import numpy as np
import pandas as pd
from scipy import stats

from ..errors import DataError
from ..stage.dataset import STAGES, N_CLASSES


class ConfusionMatrix(object):
    """counts[true, predicted]"""

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1] or (self.counts < 0).any():
            raise DataError('confusion counts must be a square nonnegative matrix')

    @classmethod
    def from_labels(cls, pred, true, n_classes=N_CLASSES):
        pred, true = _check_labels(pred, true, n_classes)
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (true, pred), 1)
        return cls(counts)

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def to_frame(self, class_names=None):
        names = list(class_names or _class_names(self.n_classes))
        return pd.DataFrame(self.counts, index=pd.Index(names, name='true'), columns=names)


def _class_names(n_classes):
    return STAGES if n_classes == len(STAGES) else tuple(str(k) for k in range(n_classes))


def _check_labels(pred, true, n_classes):
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    if len(pred) != len(true):
        raise DataError('%d predictions for %d labels' % (len(pred), len(true)))
    if len(true) == 0:
        raise DataError('nothing to score')
    for name, v in (('predictions', pred), ('labels', true)):
        if v.min() < 0 or v.max() >= n_classes:
            raise DataError('%s must be in 0..%d' % (name, n_classes - 1))
    return pred, true


def _ratio(num, den):
    return float(num) / den if den else 0.0


def cohen_kappa(counts):
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    p_o = np.trace(counts) / n
    p_e = float(np.dot(counts.sum(axis=1), counts.sum(axis=0))) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def _macro(values):
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


class MetricsReport(object):

    PER_CLASS = ('precision', 'sensitivity', 'specificity', 'f1', 'auroc')

    def __init__(self, confusion, accuracy, per_class, macro_f1, kappa, sensitivity, specificity,
                 ece=None, class_names=None):
        self.confusion = confusion
        self.accuracy = accuracy
        self.per_class = per_class
        self.macro_f1 = macro_f1
        self.kappa = kappa
        self.sensitivity = sensitivity
        self.specificity = specificity
        self.ece = ece
        self.class_names = tuple(class_names or _class_names(confusion.n_classes))

    @property
    def n_scored(self):
        return self.confusion.total

    def to_dict(self):
        d = OrderedDict()
        d['n_epochs'] = self.n_scored
        for key in ('accuracy', 'macro_f1', 'kappa', 'sensitivity', 'specificity', 'ece'):
            d[key] = getattr(self, key)
        d['per_class'] = OrderedDict(
            (name, OrderedDict((m, self.per_class[m][k]) for m in self.PER_CLASS if m in self.per_class))
            for k, name in enumerate(self.class_names))
        d['confusion'] = self.confusion.counts.tolist()
        return d

    def per_class_frame(self):
        cols = [m for m in self.PER_CLASS if m in self.per_class]
        frame = pd.DataFrame(OrderedDict((m, self.per_class[m]) for m in cols), index=list(self.class_names))
        frame['support'] = self.confusion.counts.sum(axis=1)
        frame.index.name = 'class'
        return frame

    def table(self):
        """Aligned plain-text summary."""
        def fmt(v):
            return '   n/a' if v is None else '%6.4f' % v
        lines = ['epochs scored: %d' % self.n_scored]
        for key in ('accuracy', 'macro_f1', 'kappa', 'sensitivity', 'specificity', 'ece'):
            lines.append('%-12s %s' % (key, fmt(getattr(self, key))))
        cols = [m for m in self.PER_CLASS if m in self.per_class]
        lines.append('')
        lines.append('%-6s' % 'class' + ''.join('%12s' % m for m in cols))
        for k, name in enumerate(self.class_names):
            lines.append('%-6s' % name + ''.join('%12s' % fmt(self.per_class[m][k]).strip() for m in cols))
        return '\n'.join(lines) + '\n'


def confusion_and_metrics(pred, true, n_classes=N_CLASSES, scores=None):
    """Accuracy, per-class one-vs-rest rates, macro means and kappa.

    :param scores: optional [N, K] class probabilities; adds per-class AUROC
    """
    cm = ConfusionMatrix.from_labels(pred, true, n_classes)
    c = cm.counts
    n = cm.total
    per_class = OrderedDict((m, []) for m in ('precision', 'sensitivity', 'specificity', 'f1'))
    for k in range(n_classes):
        tp = c[k, k]
        fn = c[k].sum() - tp
        fp = c[:, k].sum() - tp
        tn = n - tp - fn - fp
        if tp + fn + fp == 0:
            for m in per_class:
                per_class[m].append(None)
            continue
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        per_class['precision'].append(precision)
        per_class['sensitivity'].append(recall)
        per_class['specificity'].append(_ratio(tn, tn + fp))
        per_class['f1'].append(_ratio(2.0 * precision * recall, precision + recall))
    if scores is not None:
        per_class['auroc'] = auroc(scores, true, n_classes)
    return MetricsReport(cm, float(np.trace(c)) / n, per_class, _macro(per_class['f1']), cohen_kappa(c),
                         _macro(per_class['sensitivity']), _macro(per_class['specificity']))


def auroc(scores, true, n_classes=N_CLASSES):
    """One-vs-rest Mann-Whitney AUROC per class; ties count one half, None without positives or negatives."""
    scores = np.asarray(scores, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64).reshape(-1)
    if scores.shape != (len(true), n_classes):
        raise DataError('scores %s do not match %d samples x %d classes' % (scores.shape, len(true), n_classes))
    result = []
    for k in range(n_classes):
        positive = true == k
        n_pos = int(positive.sum())
        n_neg = len(true) - n_pos
        if n_pos == 0 or n_neg == 0:
            result.append(None)
            continue
        ranks = stats.rankdata(scores[:, k])
        u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
        result.append(float(u / (n_pos * n_neg)))
    return result
