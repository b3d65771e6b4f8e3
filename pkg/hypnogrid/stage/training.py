# -*- coding: utf-8 -*-
"""Weighted cross-entropy, Adam with decoupled decay, plateau scheduling, early stopping and the fold loop."""
import os
import copy
import logging as log
import multiprocessing
from collections import OrderedDict, namedtuple
from concurrent.futures import ThreadPoolExecutor, as_completed

import numpy as np
import pandas as pd
from scipy import special

from ..errors import ConfigError, DataError, DimensionError
from ..tensor import backward, no_grad, reset_graph
from ..tensor import functional as F
from ..tensor.tensor import make_result
from ..eval.voting import voted_accuracy
from .augment import AugmentationConfig, augment_batch, expand_minority
from .checkpoint import save_checkpoint
from .dataset import compute_class_weights
from .folds import split_by_fold
from .model import model_forward
from .params import init_params
from . import utils as u

CONTINUE = 'continue'
STOP = 'stop'
HISTORY_COLUMNS = ['epoch', 'train_loss', 'train_acc', 'val_loss', 'val_acc', 'lr']


class TrainConfig(object):

    def __init__(self, lr=1e-4, weight_decay=1e-4, batch_size=128, max_epochs=100,
                 early_stop_patience=30, scheduler_factor=0.5, scheduler_patience=7,
                 min_lr=1e-6, class_weighting=True, beta1=0.9, beta2=0.999, eps=1e-8,
                 shards=1, deterministic=True, seed=0):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.batch_size = int(batch_size)
        self.max_epochs = int(max_epochs)
        self.early_stop_patience = int(early_stop_patience)
        self.scheduler_factor = float(scheduler_factor)
        self.scheduler_patience = int(scheduler_patience)
        self.min_lr = float(min_lr)
        self.class_weighting = bool(class_weighting)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.shards = int(shards)
        self.deterministic = bool(deterministic)
        self.seed = int(seed)
        self.validate()

    def validate(self):
        if self.lr <= 0 or self.weight_decay < 0 or self.min_lr < 0 or self.eps <= 0:
            raise ConfigError('lr and eps must be > 0, weight_decay and min_lr >= 0')
        if min(self.batch_size, self.max_epochs, self.early_stop_patience,
               self.scheduler_patience, self.shards) < 1:
            raise ConfigError('batch size, epochs, patiences and shards must be >= 1')
        if self.batch_size < 2:
            raise ConfigError('batch size must be >= 2 for batch statistics, got %d' % self.batch_size)
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ConfigError('scheduler factor must be in (0, 1), got %s' % self.scheduler_factor)
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError('Adam betas must be in [0, 1)')
        return self

    def replace(self, **changes):
        other = copy.copy(self)
        for k, v in changes.items():
            if not hasattr(other, k):
                raise ConfigError('unknown training option %s' % k)
            setattr(other, k, v)
        return other.validate()


def weighted_ce_loss(logits, labels, weights):
    """mean_b w[y_b] * -log softmax(logits_b)[y_b], via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or logits.shape[0] == 0:
        raise DimensionError('weighted_ce_loss: logits %s vs labels %s' % (logits.shape, labels.shape))
    B, K = logits.shape
    if weights.shape != (K,) or (weights <= 0).any():
        raise ConfigError('class weights must be %d positive values, got %s' % (K, weights.tolist()))
    if labels.min() < 0 or labels.max() >= K:
        raise DataError('labels must be in 0..%d, got range %d..%d' % (K - 1, labels.min(), labels.max()))
    logp = special.log_softmax(logits.data, axis=1)
    rows = np.arange(B)
    w = weights[labels].astype(logits.dtype)
    loss = np.asarray(np.dot(w, -logp[rows, labels]) / B, dtype=logits.dtype)

    def _backward(g):
        delta = np.exp(logp)
        delta[rows, labels] -= 1.0
        return (g * delta * (w / B)[:, None],)
    return make_result(loss, (logits,), 'weighted_ce', _backward)


class OptimizerState(object):

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.named_parameters())
        self.v = OrderedDict((name, np.zeros_like(p.data)) for name, p in params.named_parameters())
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0


def decays(name):
    """Normalization gains and shifts are not decayed."""
    return not name.endswith(('.gain', '.shift'))


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """Bias-corrected Adam, then theta <- theta - lr * weight_decay * theta.

    :param grads: name -> gradient array; missing names count as zero gradients
    """
    named = params.named_parameters()
    for name, p in named:
        g = grads.get(name)
        if (g is not None and np.shape(g) != p.shape) or state.m[name].shape != p.shape:
            raise ConfigError('gradient/moment shape mismatch for %s: %s vs %s'
                              % (name, None if g is None else np.shape(g), p.shape))
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in named:
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if weight_decay and decays(name):
            data = data - lr * weight_decay * data
        p.data = data.astype(p.dtype, copy=False)
    return params, state


class PlateauState(object):

    def __init__(self, lr, factor=0.5, patience=7, min_lr=1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = None
        self.stale = 0


def plateau_schedule(state, val_metric):
    """Scale lr by ``factor`` once ``patience`` epochs pass without a strict improvement."""
    if state.best is None or val_metric > state.best:
        state.best = val_metric
        state.stale = 0
        return state.lr
    state.stale += 1
    if state.stale >= state.patience:
        new_lr = max(state.lr * state.factor, state.min_lr)
        if new_lr < state.lr:
            log.info('validation metric flat for %d epochs, lr %.3g -> %.3g', state.stale, state.lr, new_lr)
        state.lr = new_lr
        state.stale = 0
    return state.lr


class EarlyStopState(object):

    def __init__(self, patience=30):
        self.patience = patience
        self.best_metric = None
        self.best_epoch = 0
        self.epochs_since_improvement = 0
        self.snapshot = None


def early_stop(state, val_metric, epoch, params=None):
    if state.best_metric is None or val_metric > state.best_metric:
        state.best_metric = val_metric
        state.best_epoch = epoch
        state.epochs_since_improvement = 0
        if params is not None:
            state.snapshot = OrderedDict((k, np.array(v, copy=True)) for k, v in params.state_arrays().items())
        return CONTINUE
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= state.patience:
        log.info('early stop at epoch %d, best epoch %d (%.4f)', epoch, state.best_epoch, state.best_metric)
        return STOP
    return CONTINUE


EvalOutput = namedtuple('EvalOutput', ['probs', 'alpha', 'loss'])
FitResult = namedtuple('FitResult', ['params', 'history', 'best_epoch', 'stop_epoch', 'best_metric'])


def evaluate_windows(params, windows, batch_size=256, class_weights=None):
    """Eval-mode chunk probabilities, attention weights and (weighted) loss; never augments."""
    n = len(windows)
    probs = np.zeros((n, params.config.n_classes))
    alpha = np.zeros((n, params.config.context)) if params.config.use_sequence else None
    if class_weights is None:
        class_weights = np.ones(params.config.n_classes)
    loss_sum = 0.0
    with no_grad():
        for a, e in u.batch_iteration_indices(n, batch_size):
            logits, att = model_forward(windows.data[a:e], params, training=False)
            probs[a:e] = special.softmax(logits.data.astype(np.float64), axis=1)
            if alpha is not None:
                alpha[a:e] = att.data
            loss_sum += float(weighted_ce_loss(logits, windows.labels[a:e], class_weights).data) * (e - a)
    return EvalOutput(probs, alpha, loss_sum / n if n else float('nan'))


class _DeferredStats(object):
    """Collects batch-norm updates of one gradient shard so they can be replayed in a chosen order."""

    def __init__(self, target):
        self.target = target
        self.pending = []

    @property
    def mean(self):
        return self.target.mean

    @property
    def var(self):
        return self.target.var

    def update(self, mean, var_unbiased, momentum):
        self.pending.append((mean, var_unbiased, momentum))

    def flush(self):
        for args in self.pending:
            self.target.update(*args)
        self.pending = []


def _shard_gradients(params, data, labels, weights, rng, scale=1.0):
    reset_graph()
    logits, _ = model_forward(data, params, training=True, rng=rng)
    loss = weighted_ce_loss(logits, labels, weights)
    target = loss if scale == 1.0 else F.mul(loss, scale)
    grads = backward(target, leaves=list(params), accumulate=False)
    return float(loss.data), logits.data, OrderedDict((name, grads[p]) for name, p in params.named_parameters())


def batch_gradients(params, data, labels, weights, config, rng):
    """Loss, logits and name -> gradient for one minibatch.

    With ``config.shards > 1`` the batch is split across threads, each recording
    its own graph. Shard gradients and batch-norm updates are reduced in shard
    order when ``config.deterministic``, in completion order otherwise.
    """
    n_shards = min(config.shards, len(labels) // 2)
    if n_shards <= 1:
        return _shard_gradients(params, data, labels, weights, rng)

    parts = np.array_split(np.arange(len(labels)), n_shards)
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 62))).spawn(n_shards)
    views = [params.with_buffers((name, _DeferredStats(s)) for name, s in params.buffers.items())
             for _ in parts]
    with ThreadPoolExecutor(max_workers=min(n_shards, u.worker_cap())) as pool:
        futures = [pool.submit(_shard_gradients, views[i], data[idx], labels[idx], weights,
                               np.random.default_rng(seeds[i]), len(idx) / float(len(labels)))
                   for i, idx in enumerate(parts)]
        if config.deterministic:
            results = [(i, f.result()) for i, f in enumerate(futures)]
        else:
            results = [(futures.index(f), f.result()) for f in as_completed(futures)]

    loss = 0.0
    logits = None
    grads = None
    for i, (shard_loss, shard_logits, shard_grads) in results:
        for stats in views[i].buffers.values():
            stats.flush()
        loss += shard_loss * len(parts[i]) / float(len(labels))
        if logits is None:
            logits = np.zeros((len(labels), shard_logits.shape[1]), dtype=shard_logits.dtype)
            grads = OrderedDict((k, np.zeros_like(g)) for k, g in shard_grads.items())
        logits[parts[i]] = shard_logits
        for k, g in shard_grads.items():
            grads[k] += g
    return loss, logits, grads


def fit(train, val, model_config, train_config, aug_config=None, params=None, quiet=False):
    """Train on ``train``, select the epoch with the best voted accuracy on ``val``.

    Augmentation touches training batches only. Without validation windows the
    training accuracy drives scheduling and early stopping.
    """
    if len(train) == 0:
        raise ConfigError('empty training set')
    model_config.validate()
    train_config.validate()
    aug_config = aug_config or AugmentationConfig.disabled()
    init_rng, shuffle_rng, aug_rng, dropout_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(train_config.seed).spawn(4)]
    if params is None:
        params = init_params(model_config, init_rng)
    if train_config.class_weighting:
        weights = compute_class_weights(train.labels, model_config.n_classes)
    else:
        weights = np.ones(model_config.n_classes)
    train = expand_minority(train, aug_config, aug_rng)
    if len(train) < 2:
        raise ConfigError('need at least 2 training windows for batch statistics')

    state = OptimizerState(params, train_config.beta1, train_config.beta2, train_config.eps)
    plateau = PlateauState(train_config.lr, train_config.scheduler_factor,
                           train_config.scheduler_patience, train_config.min_lr)
    stopper = EarlyStopState(train_config.early_stop_patience)
    rows = []
    stop_epoch = train_config.max_epochs

    bar = u.progress_bar('Training: ', train_config.max_epochs, quiet)
    bar.start()
    for epoch in range(1, train_config.max_epochs + 1):
        lr = plateau.lr
        order = shuffle_rng.permutation(len(train))
        loss_sum, correct, seen = 0.0, 0, 0
        for a, e in u.batch_iteration_indices(len(order), train_config.batch_size):
            idx = np.sort(order[a:e])
            if len(idx) < 2:
                log.debug('skipping a trailing batch of %d window', len(idx))
                continue
            data = augment_batch(train.data[idx], aug_config, aug_rng)
            loss, logits, grads = batch_gradients(params, data, train.labels[idx], weights,
                                                  train_config, dropout_rng)
            adam_step(params, grads, state, lr, train_config.weight_decay)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == train.labels[idx]).sum())
            seen += len(idx)
        train_loss, train_acc = loss_sum / seen, correct / float(seen)

        if len(val):
            out = evaluate_windows(params, val, train_config.batch_size, weights)
            val_loss, val_acc = out.loss, voted_accuracy(val.block_keys(), out.probs, val.labels)
        else:
            val_loss, val_acc = float('nan'), train_acc
        rows.append(OrderedDict([('epoch', epoch), ('train_loss', train_loss), ('train_acc', train_acc),
                                 ('val_loss', val_loss), ('val_acc', val_acc), ('lr', lr)]))
        log.debug('epoch %d: train loss %.4f acc %.4f, val loss %.4f acc %.4f, lr %.3g',
                  epoch, train_loss, train_acc, val_loss, val_acc, lr)

        plateau_schedule(plateau, val_acc)
        decision = early_stop(stopper, val_acc, epoch, params)
        bar.update(epoch)
        if decision == STOP:
            stop_epoch = epoch
            break
    bar.finish()

    params.assign(stopper.snapshot)
    log.info('restored parameters of epoch %d (val acc %.4f)', stopper.best_epoch, stopper.best_metric)
    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    return FitResult(params, history, stopper.best_epoch, stop_epoch, stopper.best_metric)


def write_history(history, path):
    history.to_csv(path, index=False, float_format='%.8g')
    return path


def save_predictions(path, windows, out):
    np.savez(path, probs=out.probs, alpha=out.alpha if out.alpha is not None else np.zeros((0, 3)),
             labels=windows.labels, recordings=windows.recordings.astype(str),
             epochs=windows.epochs, chunks=windows.chunks, subjects=windows.subjects.astype(str))
    return path


def run_fold(job):
    """Train one fold and write its checkpoint, history, validation predictions and manifest."""
    fold, windows, plan, model_config, train_config, aug_config, outdir, manifest = job
    train, val = split_by_fold(windows, plan, fold)
    log.info('fold %d: %d train / %d validation windows', fold, len(train), len(val))
    fold_config = train_config.replace(seed=train_config.seed + fold)
    result = fit(train, val, model_config, fold_config, aug_config, quiet=True)

    fold_dir = u.get_fold_dir(outdir, fold)
    if not os.path.exists(fold_dir):
        os.makedirs(fold_dir)
    save_checkpoint(result.params, u.get_checkpoint_basefilename(fold_dir))
    write_history(result.history, os.path.join(fold_dir, 'history.csv'))
    if len(val):
        out = evaluate_windows(result.params, val, train_config.batch_size)
        save_predictions(os.path.join(fold_dir, 'predictions.npz'), val, out)
    if manifest is not None:
        manifest.for_fold(fold).mark_finished().write(os.path.join(fold_dir, 'manifest.json'))
    return result


def cross_validate(windows, plan, model_config, train_config, aug_config, outdir,
                   folds=None, manifest=None, workers=None):
    """Run every fold of ``plan``; folds train in separate processes when workers > 1.

    :return: list of FitResult in fold order
    """
    folds = list(range(plan.k)) if folds is None else list(folds)
    jobs = [(f, windows, plan, model_config, train_config, aug_config, outdir, manifest) for f in folds]
    workers = min(len(jobs), workers or u.worker_cap())
    if workers <= 1:
        return [run_fold(job) for job in jobs]
    log.info('training %d folds in %d processes', len(jobs), workers)
    with multiprocessing.get_context('spawn').Pool(workers) as pool:
        return pool.map(run_fold, jobs)
