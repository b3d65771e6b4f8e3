import os
import os.path as osp
import sys
cur_dir = osp.dirname(osp.abspath(__file__))
sys.path.insert(0, osp.join(cur_dir, '..'))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hypnogrid.errors import ConfigError, DataError, DimensionError
from hypnogrid.tensor import Tensor, backward, reset_graph
from hypnogrid.tensor.gradcheck import grad_check
from hypnogrid.stage import training
from hypnogrid.stage.augment import AugmentationConfig
from hypnogrid.stage.checkpoint import load_checkpoint
from hypnogrid.stage.dataset import WindowSet
from hypnogrid.stage.folds import stratified_group_kfold
from hypnogrid.stage.params import ModelConfig, ModelParams, init_params
from hypnogrid.stage.training import (TrainConfig, weighted_ce_loss, OptimizerState, adam_step, PlateauState,
                                      plateau_schedule, EarlyStopState, early_stop, evaluate_windows,
                                      batch_gradients, fit, cross_validate, CONTINUE, STOP, HISTORY_COLUMNS)


def setup_function(function):
    reset_graph()


def toy_windows(n, seed=0, n_subjects=1, chunk_len=200):
    """Class k is a sinusoid of k+1 cycles per 40 samples plus noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(chunk_len)
    data, labels, subjects, epochs = [], [], [], []
    for i in range(n):
        label = i % 5
        wave = np.sin(2 * np.pi * (label + 1) * t / 40.0 + rng.uniform(0, 2 * np.pi))
        data.append(np.tile(wave, (3, 1)) + 0.3 * rng.standard_normal((3, chunk_len)))
        labels.append(label)
        subjects.append('S%02d' % (i % n_subjects))
        epochs.append(i)
    return WindowSet(data, labels, subjects, ['%sE0' % s for s in subjects], epochs, [0] * n)


def _single(name, value):
    params = ModelParams(None)
    params.add(name, np.asarray(value, dtype=np.float64))
    return params


# loss

def test_uniform_logits_give_log_k():
    loss = weighted_ce_loss(Tensor(np.zeros((4, 5))), [0, 1, 2, 3], np.ones(5))
    assert_allclose(float(loss.data), np.log(5.0))


def test_confident_correct_logits_give_zero_loss():
    logits = np.full((5, 5), -20.0)
    logits[np.arange(5), np.arange(5)] = 20.0
    assert float(weighted_ce_loss(Tensor(logits), np.arange(5), np.ones(5)).data) < 1e-6


def test_weighted_loss_by_hand():
    logits = np.array([[1.0, 2.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 3.0, 1.0]])
    weights = np.array([1.0, 2.0, 1.0, 0.5, 1.0])
    nll = [np.log(np.exp(row).sum()) - row[y] for row, y in zip(logits, (1, 3))]
    expected = (2.0 * nll[0] + 0.5 * nll[1]) / 2.0
    assert_allclose(float(weighted_ce_loss(Tensor(logits), [1, 3], weights).data), expected, rtol=1e-12)


def test_scaling_weights_scales_the_loss():
    rng = np.random.default_rng(0)
    logits, labels, weights = rng.standard_normal((8, 5)), rng.integers(0, 5, 8), rng.uniform(0.5, 2.0, 5)
    base = float(weighted_ce_loss(Tensor(logits), labels, weights).data)
    assert float(weighted_ce_loss(Tensor(logits), labels, 2.0 * weights).data) == 2.0 * base
    assert_allclose(float(weighted_ce_loss(Tensor(logits), labels, 3.0 * weights).data), 3.0 * base, rtol=1e-12)


def test_loss_gradient():
    rng = np.random.default_rng(1)
    labels, weights = rng.integers(0, 5, 6), rng.uniform(0.5, 2.0, 5)
    assert grad_check(lambda x: weighted_ce_loss(x, labels, weights), rng.standard_normal((6, 5))) < 1e-6


def test_loss_rejects_bad_inputs():
    with pytest.raises(DataError):
        weighted_ce_loss(Tensor(np.zeros((2, 5))), [0, 5], np.ones(5))
    with pytest.raises(ConfigError):
        weighted_ce_loss(Tensor(np.zeros((2, 5))), [0, 1], np.ones(4))
    with pytest.raises(DimensionError):
        weighted_ce_loss(Tensor(np.zeros((2, 5))), [0, 1, 2], np.ones(5))


# optimizer

def test_first_adam_step_moves_by_lr():
    g = np.array([0.3, -2.0, 1e-3])
    params = _single('w', [1.0, 1.0, 1.0])
    adam_step(params, {'w': g}, OptimizerState(params), lr=1e-3)
    assert_allclose(params['w'].data, 1.0 - 1e-3 * np.sign(g), rtol=1e-6)


def test_zero_gradients_without_decay_leave_weights():
    params = _single('w', [1.0, -2.0])
    adam_step(params, {'w': np.zeros(2)}, OptimizerState(params), lr=1e-2)
    assert_allclose(params['w'].data, [1.0, -2.0])


def test_decoupled_decay_skips_norm_parameters_but_not_biases():
    params = _single('fc.weight', [1.0, -2.0])
    params.add('bn.gain', np.ones(2))
    params.add('fc.bias', np.full(2, 2.0))
    adam_step(params, {}, OptimizerState(params), lr=0.1, weight_decay=0.5)
    assert_allclose(params['fc.weight'].data, [0.95, -1.9])
    assert_allclose(params['bn.gain'].data, [1.0, 1.0])
    assert_allclose(params['fc.bias'].data, [1.9, 1.9])


def test_adam_shape_mismatch():
    params = _single('w', [1.0, 1.0])
    with pytest.raises(ConfigError):
        adam_step(params, {'w': np.zeros(3)}, OptimizerState(params), lr=1e-3)
    assert_allclose(params['w'].data, [1.0, 1.0])


def test_adam_minimises_a_quadratic():
    params = _single('w', [3.0, -4.0])
    state = OptimizerState(params)
    for _ in range(200):
        adam_step(params, {'w': 2.0 * params['w'].data}, state, lr=0.1)
    assert np.abs(params['w'].data).max() < 0.5


# schedules

def test_plateau_halves_after_patience():
    state = PlateauState(1e-4, 0.5, 7, 1e-6)
    lrs = [plateau_schedule(state, 0.5) for _ in range(16)]
    assert lrs[6] == 1e-4
    assert lrs[7] == 5e-5
    assert lrs[13] == 5e-5
    assert lrs[14] == 2.5e-5


def test_plateau_keeps_lr_while_improving_and_respects_floor():
    state = PlateauState(1e-4, 0.5, 7, 1e-6)
    assert [plateau_schedule(state, m) for m in np.linspace(0.1, 0.9, 20)] == [1e-4] * 20
    state = PlateauState(2e-6, 0.5, 1, 1e-6)
    assert [plateau_schedule(state, 0.5) for _ in range(4)] == [2e-6, 1e-6, 1e-6, 1e-6]


def test_early_stop_on_a_flat_metric():
    state = EarlyStopState(30)
    decisions = [early_stop(state, 0.7, epoch) for epoch in range(1, 40)]
    assert decisions.index(STOP) + 1 == 31
    assert state.best_epoch == 1


def test_early_stop_never_fires_while_improving():
    state = EarlyStopState(30)
    assert all(early_stop(state, m, i + 1) == CONTINUE for i, m in enumerate(np.linspace(0, 1, 100)))


def test_early_stop_snapshot_is_a_copy():
    params = _single('w', [1.0, 2.0])
    state = EarlyStopState(3)
    early_stop(state, 0.5, 1, params)
    params['w'].data[...] = 9.0
    early_stop(state, 0.4, 2, params)
    assert_allclose(state.snapshot['w'], [1.0, 2.0])


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(scheduler_factor=1.0)
    with pytest.raises(ConfigError):
        TrainConfig().replace(momentum=0.9)
    assert TrainConfig().replace(seed=4).seed == 4


# training loop

def _small_train_config(**kw):
    options = dict(lr=1e-3, weight_decay=0.0, batch_size=16, max_epochs=2, class_weighting=True, seed=0)
    options.update(kw)
    return TrainConfig(**options)


def test_fit_smoke():
    result = fit(toy_windows(40), toy_windows(10, seed=1), ModelConfig.miniature(), _small_train_config(), quiet=True)
    assert list(result.history.columns) == HISTORY_COLUMNS
    assert list(result.history['epoch']) == [1, 2]
    assert np.isfinite(result.history[['train_loss', 'val_loss']].values).all()
    assert result.best_epoch in (1, 2)
    out = evaluate_windows(result.params, toy_windows(10, seed=1))
    assert_allclose(out.probs.sum(axis=1), 1.0)
    assert_allclose(out.alpha.sum(axis=1), 1.0, atol=1e-5)


def test_batches_need_two_windows():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig().replace(batch_size=1)


def test_fit_skips_trailing_singleton_batch():
    config = _small_train_config(batch_size=4, max_epochs=1)
    result = fit(toy_windows(9), toy_windows(5, seed=1), ModelConfig.miniature(), config,
                 AugmentationConfig.disabled(), quiet=True)
    assert np.isfinite(result.history['train_loss'].values).all()
    assert 0.0 <= result.history['train_acc'].iloc[0] <= 1.0


def test_fit_is_deterministic_for_a_seed():
    runs = [fit(toy_windows(32), toy_windows(10, seed=1), ModelConfig.miniature(), _small_train_config(), quiet=True)
            for _ in range(2)]
    assert runs[0].history.equals(runs[1].history)
    for name, array in runs[0].params.state_arrays().items():
        assert np.array_equal(array, runs[1].params.state_arrays()[name])


def test_sharded_fit_is_deterministic():
    config = _small_train_config(shards=2, deterministic=True)
    runs = [fit(toy_windows(32), toy_windows(10, seed=1), ModelConfig.miniature(), config, quiet=True)
            for _ in range(2)]
    assert runs[0].history.equals(runs[1].history)


def test_sharded_gradients_cover_every_parameter():
    params = init_params(ModelConfig.miniature(), np.random.default_rng(0), dtype=np.float64)
    windows = toy_windows(8)
    config = _small_train_config(shards=2)
    loss, logits, grads = batch_gradients(params, windows.data.astype(np.float64), windows.labels, np.ones(5),
                                          config, np.random.default_rng(1))
    assert logits.shape == (8, 5)
    assert np.isfinite(loss)
    assert set(grads) == set(params.names())


def test_validation_windows_are_never_augmented(monkeypatch):
    seen = []
    original = training.augment_batch

    def spy(data, config, rng):
        seen.append(len(data))
        return original(data, config, rng)
    monkeypatch.setattr(training, 'augment_batch', spy)
    aug = AugmentationConfig(minority_boost=0, chunk_len=200)
    fit(toy_windows(32), toy_windows(10, seed=1), ModelConfig.miniature(), _small_train_config(), aug, quiet=True)
    assert sum(seen) == 2 * 32


def test_fit_without_validation_uses_training_accuracy():
    result = fit(toy_windows(20), WindowSet.empty(200), ModelConfig.miniature(),
                 _small_train_config(max_epochs=1), quiet=True)
    history = result.history
    assert np.isnan(history['val_loss'][0])
    assert history['val_acc'][0] == history['train_acc'][0]


def test_cross_validate_writes_fold_outputs(tmp_path):
    windows = toy_windows(40, n_subjects=4)
    plan = stratified_group_kfold(windows, 2, seed=0)
    results = cross_validate(windows, plan, ModelConfig.miniature(), _small_train_config(max_epochs=1),
                             AugmentationConfig.disabled(), str(tmp_path), workers=1)
    assert len(results) == 2
    for fold in range(2):
        fold_dir = tmp_path / 'folds' / ('fold_%d' % fold)
        for name in ('history.csv', 'predictions.npz', os.path.join('checkpoints', 'chkpt.manifest')):
            assert (fold_dir / name).exists(), name
        assert load_checkpoint(str(fold_dir / 'checkpoints' / 'chkpt')).config == ModelConfig.miniature()


@pytest.mark.slow
def test_loss_decreases_on_separable_data():
    for seed in (0, 1, 2):
        config = _small_train_config(max_epochs=6, seed=seed, lr=3e-3)
        history = fit(toy_windows(80, seed=seed), WindowSet.empty(200), ModelConfig.miniature(), config,
                      quiet=True).history
        assert history['train_loss'].values[-2:].mean() < history['train_loss'].values[0]


@pytest.mark.slow
def test_memorises_five_windows():
    config = _small_train_config(lr=1e-2, batch_size=5, max_epochs=150, early_stop_patience=150,
                                 class_weighting=False)
    result = fit(toy_windows(5), WindowSet.empty(200), ModelConfig.miniature(), config, quiet=True)
    assert result.history['train_acc'].max() == 1.0


if __name__ == "__main__":
    pytest.main([__file__])
