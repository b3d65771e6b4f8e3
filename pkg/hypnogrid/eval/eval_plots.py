# -*- coding: utf-8 -*-
import os
import glob
import logging as log

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from ..errors import DataError
from ..stage.dataset import STAGES
from ..stage import utils as u
from .calibration import ReliabilityBins


def _save(fig, path):
    fig.savefig(path, format='svg')
    plt.close(fig)
    log.debug('wrote %s', path)
    return path


def learning_curve_summary(histories):
    """Per-epoch mean and std of train/val accuracy over folds (folds that stopped early drop out)."""
    frames = [h.set_index('epoch')[['train_acc', 'val_acc']] for h in histories]
    stacked = pd.concat(frames, keys=range(len(frames)), names=['fold', 'epoch'])
    summary = stacked.groupby(level='epoch').agg(['mean', 'std']).fillna(0.0)
    summary.columns = ['%s_%s' % c for c in summary.columns]
    return summary.reset_index()


def plot_learning_curves(summary, path):
    fig = plt.figure()
    plt.title('Cross-validation learning curves')
    plt.grid()
    for key, label in (('train_acc', 'train'), ('val_acc', 'validation')):
        mean, std = summary[key + '_mean'].values, summary[key + '_std'].values
        plt.plot(summary['epoch'], mean, label=label)
        plt.fill_between(summary['epoch'], mean - std, mean + std, alpha=0.25)
    plt.xlabel('epoch')
    plt.ylabel('accuracy')
    plt.legend()
    return _save(fig, path)


def plot_confusion(counts, path, class_names=STAGES):
    counts = np.asarray(counts, dtype=np.float64)
    rows = np.maximum(counts.sum(axis=1, keepdims=True), 1.0)
    fig = plt.figure()
    plt.title('Confusion matrix (row-normalized)')
    plt.imshow(counts / rows, cmap='Blues', vmin=0.0, vmax=1.0)
    plt.colorbar()
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            plt.text(j, i, '%d' % counts[i, j], ha='center', va='center', fontsize=8)
    ticks = np.arange(len(class_names))
    plt.xticks(ticks, class_names)
    plt.yticks(ticks, class_names)
    plt.xlabel('predicted')
    plt.ylabel('true')
    return _save(fig, path)


def plot_reliability(bins, path, title='Reliability diagram'):
    centers = 0.5 * (bins.edges[:-1] + bins.edges[1:])
    width = bins.edges[1] - bins.edges[0]
    fig = plt.figure()
    plt.title('%s (ECE %.3f)' % (title, bins.ece()))
    plt.grid()
    plt.plot([0, 1], [0, 1], 'k--', linewidth=1)
    used = bins.counts > 0
    plt.bar(centers[used], bins.accuracy[used], width * 0.9, edgecolor='k')
    plt.xlim(0, 1)
    plt.ylim(0, 1)
    plt.xlabel('confidence')
    plt.ylabel('accuracy')
    return _save(fig, path)


def plot_hypnogram(table, path, class_names=STAGES):
    """Expert and predicted stage strips, disagreements marked."""
    order = [0, 4, 1, 2, 3]  # W, REM, N1, N2, N3 from top to bottom
    level = {k: -i for i, k in enumerate(order)}
    x = np.arange(len(table))
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(10, 4))
    for ax, key in zip(axes, ('true', 'predicted')):
        ax.step(x, [level[k] for k in table[key]], where='post', linewidth=0.8)
        ax.set_yticks([level[k] for k in order])
        ax.set_yticklabels([class_names[k] for k in order])
        ax.set_ylabel(key)
    wrong = np.flatnonzero(table['agree'].values == 0)
    axes[1].plot(wrong, [level[k] for k in table['predicted'].values[wrong]], 'r|', markersize=6)
    axes[0].set_title('Hypnogram (agreement %.3f)' % table['agree'].mean())
    axes[1].set_xlabel('epoch')
    return _save(fig, path)


def plot_importance(table, path, max_epochs=8):
    blocks = list(dict.fromkeys(table['block_id']))[:max_epochs]
    rows = [table[table['block_id'] == b]['importance'].values for b in blocks]
    fig = plt.figure(figsize=(10, 0.5 + 0.4 * len(rows)))
    plt.title('Occlusion importance per segment')
    plt.imshow(np.vstack(rows), aspect='auto', cmap='Greys', interpolation='nearest')
    plt.yticks(np.arange(len(blocks)), blocks)
    plt.xlabel('segment')
    plt.colorbar()
    return _save(fig, path)


def emit_plots(outdir):
    """Render every figure of a run directory as SVG under figures/.

    Needs the fold histories and the metrics CSVs written by ``train``/``evaluate``;
    the occlusion strip is drawn when importance.csv exists.
    """
    metrics_dir = u.get_metrics_dir(outdir)
    history_files = sorted(glob.glob(os.path.join(u.resolve_under(outdir, 'folds'), 'fold_*', 'history.csv')))
    required = [os.path.join(metrics_dir, name) for name in
                ('confusion.csv', 'reliability.csv', 'reliability_N1.csv', 'hypnogram.csv')]
    missing = [p for p in required if not os.path.exists(p)]
    if not history_files:
        missing.insert(0, os.path.join(outdir, 'folds', 'fold_*', 'history.csv'))
    if missing:
        raise DataError('cannot plot, missing inputs:\n  %s' % '\n  '.join(missing))

    figure_dir = u.get_figure_dir(outdir)
    if not os.path.exists(figure_dir):
        os.makedirs(figure_dir)

    summary = learning_curve_summary([pd.read_csv(f) for f in history_files])
    summary.to_csv(os.path.join(figure_dir, 'learning_curves.csv'), index=False, float_format='%.8g')
    written = [plot_learning_curves(summary, os.path.join(figure_dir, 'learning_curves.svg'))]
    confusion = pd.read_csv(required[0], index_col=0)
    written.append(plot_confusion(confusion.values, os.path.join(figure_dir, 'confusion.svg')))
    written.append(plot_reliability(ReliabilityBins.from_frame(pd.read_csv(required[1])),
                                    os.path.join(figure_dir, 'reliability.svg')))
    written.append(plot_reliability(ReliabilityBins.from_frame(pd.read_csv(required[2])),
                                    os.path.join(figure_dir, 'reliability_N1.svg'), 'N1 reliability'))
    hypnogram = pd.read_csv(required[3])
    recording = hypnogram['block_id'].str.rsplit('/', n=1).str[0]
    hypnogram = hypnogram[recording == recording.iloc[0]]
    written.append(plot_hypnogram(hypnogram, os.path.join(figure_dir, 'hypnogram.svg')))
    importance = os.path.join(metrics_dir, 'importance.csv')
    if os.path.exists(importance):
        written.append(plot_importance(pd.read_csv(importance), os.path.join(figure_dir, 'importance.svg')))
    log.info('wrote %d figures to %s', len(written), figure_dir)
    return written
