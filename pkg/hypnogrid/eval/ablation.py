# -*- coding: utf-8 -*-
"""Component study: every ablation row trained on the same fold plan and seeds."""
import os
import logging as log
from collections import OrderedDict

import numpy as np
import pandas as pd

from ..stage import stage_factory as factory
from ..stage import utils as u
from ..stage.dataset import STAGES
from ..stage.training import cross_validate
from .stage_eval import score_predictions, load_predictions

ABLATION_COLUMNS = ['row', 'seed', 'accuracy', 'macro_f1', 'kappa', 'n1_f1']


def ablation_study(windows, plan, outdir, seeds=(0, 1, 2), config=None, rows=factory.ABLATIONS,
                   folds=None, deterministic=True, workers=1):
    """Cross-validate each row for each seed and score the pooled validation epochs.

    :param config: optional INI overlay read on top of every row's overlay
    :param folds: subset of fold indices to train (default: all)
    :return: DataFrame with one line per (row, seed)
    """
    fold_ids = list(range(plan.k)) if folds is None else list(folds)
    records = []
    for row in rows:
        cfg = factory.load_config(factory.ablation_cfg(row), config)
        model_config = factory.build_model_config(cfg)
        aug_config = factory.build_augmentation_config(cfg)
        for seed in seeds:
            train_config = factory.build_train_config(cfg, seed, deterministic)
            run_dir = u.resolve_under(outdir, 'ablation', row, 'seed_%d' % seed)
            cross_validate(windows, plan, model_config, train_config, aug_config, run_dir,
                           folds=fold_ids, workers=workers)
            paths = [os.path.join(u.get_fold_dir(run_dir, f), 'predictions.npz') for f in fold_ids]
            pooled, probs, _ = load_predictions([p for p in paths if os.path.exists(p)])
            report = score_predictions(pooled, probs).report
            n1_f1 = report.per_class['f1'][STAGES.index('N1')]
            records.append(OrderedDict([('row', row), ('seed', seed), ('accuracy', report.accuracy),
                                        ('macro_f1', report.macro_f1), ('kappa', report.kappa),
                                        ('n1_f1', np.nan if n1_f1 is None else n1_f1)]))
            log.info('ablation %s seed %d: accuracy %.4f, macro-F1 %.4f, N1-F1 %s',
                     row, seed, report.accuracy, report.macro_f1, n1_f1)
    return pd.DataFrame(records, columns=ABLATION_COLUMNS)


def ordering_holds(frame, metric='accuracy', slack=0.0, rows=factory.ABLATIONS):
    """Per seed, whether ``metric`` never drops by more than ``slack`` from one row to the next.

    :return: boolean Series indexed by seed
    """
    table = frame.pivot(index='seed', columns='row', values=metric)[list(rows)]
    steps = np.diff(table.values, axis=1)
    return pd.Series((steps >= -slack).all(axis=1), index=table.index)


def n1_gain(frame, with_row='augmentation', without_row='sequence'):
    """Per-seed N1-F1 difference between a row with class weighting and augmentation and one without."""
    table = frame.pivot(index='seed', columns='row', values='n1_f1')
    return table[with_row] - table[without_row]
