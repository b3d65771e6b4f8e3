# -*- coding: utf-8 -*-
import logging as log

import numpy as np

from ..errors import ConfigError
from .dataset import N_CLASSES


class FoldPlan(object):

    def __init__(self, k, assignments):
        self.k = k
        self.assignments = dict(assignments)

    def subjects_in(self, fold):
        return sorted(s for s, f in self.assignments.items() if f == fold)

    def fold_of(self, subject_id):
        return self.assignments[subject_id]

    def __repr__(self):
        return 'FoldPlan(k=%d, %s)' % (self.k, [self.subjects_in(f) for f in range(self.k)])


def _divergence(fold_hist, p, present):
    """Per-fold sum over present classes of |n_fc / n_f - p_c|; empty folds score 0."""
    n = fold_hist.sum(axis=-1, keepdims=True)
    share = fold_hist / np.maximum(n, 1)
    return np.where(n[..., 0] > 0, np.abs(share - p)[..., present].sum(axis=-1), 0.0)


def stratified_group_kfold(windows, k, seed, n_classes=N_CLASSES, max_passes=50):
    """Subject-grouped folds whose class mix stays close to the global one.

    The objective is the sum over folds and classes of |n_fc / n_f - p_c|, with
    p the global class distribution. Subjects are placed largest first (seeded
    order among equal sizes) into one of the folds holding the fewest subjects,
    picking the placement that adds least to the objective; ties go to the fold
    with fewer windows, then the lower index. Pairwise subject swaps between
    folds then run until none lowers the objective, so subject counts per fold
    never differ by more than one.
    """
    if k < 2:
        raise ConfigError('need at least 2 folds, got %d' % k)
    subjects = windows.subject_ids()
    if len(subjects) < k:
        raise ConfigError('%d subjects cannot fill %d folds' % (len(subjects), k))

    index = {s: i for i, s in enumerate(subjects)}
    hist = np.zeros((len(subjects), n_classes))
    np.add.at(hist, ([index[s] for s in windows.subjects.tolist()], windows.labels), 1)
    totals = hist.sum(axis=0)
    p = totals / totals.sum()
    present = totals > 0
    sizes = hist.sum(axis=1)

    tie_break = np.random.default_rng(seed).permutation(len(subjects))
    order = sorted(range(len(subjects)), key=lambda i: (-sizes[i], tie_break[i]))

    fold_hist = np.zeros((k, n_classes))
    fold_members = np.zeros(k, dtype=int)
    fold_of = np.zeros(len(subjects), dtype=int)
    for i in order:
        open_folds = np.flatnonzero(fold_members == fold_members.min())
        before = _divergence(fold_hist[open_folds], p, present)
        after = _divergence(fold_hist[open_folds] + hist[i], p, present)
        keys = [(round(a - b, 12), fold_hist[f].sum(), f) for f, a, b in zip(open_folds, after, before)]
        best = min(keys)[2]
        fold_hist[best] += hist[i]
        fold_members[best] += 1
        fold_of[i] = best

    cost = _divergence(fold_hist, p, present).sum()
    for n_pass in range(max_passes):
        improved = False
        for a_pos, a in enumerate(order):
            for b in order[a_pos + 1:]:
                fa, fb = fold_of[a], fold_of[b]
                if fa == fb:
                    continue
                delta = hist[b] - hist[a]
                pair = np.stack([fold_hist[fa] + delta, fold_hist[fb] - delta])
                new_cost = cost - _divergence(fold_hist[[fa, fb]], p, present).sum() \
                    + _divergence(pair, p, present).sum()
                if new_cost < cost - 1e-12:
                    fold_hist[fa], fold_hist[fb] = pair
                    fold_of[a], fold_of[b] = fb, fa
                    cost = new_cost
                    improved = True
        if not improved:
            break
    log.debug('fold divergence %.4f after %d swap pass(es), fold sizes %s',
              cost, n_pass + 1, fold_hist.sum(axis=1).tolist())
    return FoldPlan(k, {subjects[i]: int(fold_of[i]) for i in range(len(subjects))})


def split_by_fold(windows, plan, fold):
    """(train, validation) windows for one fold; validation holds the fold's subjects."""
    in_fold = np.array([plan.assignments[s] == fold for s in windows.subjects.tolist()], dtype=bool)
    return windows.subset(np.flatnonzero(~in_fold)), windows.subset(np.flatnonzero(in_fold))
