import os
import os.path as osp
import sys
cur_dir = osp.dirname(osp.abspath(__file__))
sys.path.insert(0, osp.join(cur_dir, '..'))

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hypnogrid.errors import ConfigError, DataError
from hypnogrid.stage.dataset import WindowSet
from hypnogrid.stage.params import ModelConfig, init_params
from hypnogrid.eval.voting import aggregate_epoch_votes, vote_windows, voted_accuracy
from hypnogrid.eval.metrics import ConfusionMatrix, cohen_kappa, confusion_and_metrics, auroc
from hypnogrid.eval.calibration import ReliabilityBins, reliability_bins, calibration_ece, class_calibration_ece
from hypnogrid.eval.importance import (occlusion_importance, epoch_importance_maps, importance_table,
                                       export_attention, hypnogram_compare, hypnogram_table)
from hypnogrid.eval.stage_eval import score_predictions, evaluate_checkpoint, load_predictions
from hypnogrid.eval.eval_utils import write_report
from hypnogrid.eval.eval_plots import learning_curve_summary, emit_plots
from hypnogrid.stage.training import save_predictions, EvalOutput


def _windows(labels, epochs, chunk_len=200, seed=0):
    n = len(labels)
    data = np.random.default_rng(seed).standard_normal((n, 3, chunk_len))
    return WindowSet(data, labels, ['S00'] * n, ['S00E0'] * n, epochs, list(range(n)))


# voting

def test_vote_averages_chunks():
    votes = aggregate_epoch_votes([('a', [0.6, 0.4]), ('a', [0.2, 0.8]), ('b', [0.9, 0.1])])
    assert_allclose(votes['a'][0], [0.4, 0.6])
    assert votes['a'][1] == 1 and votes['b'][1] == 0
    assert list(votes) == ['a', 'b']


def test_vote_ties_go_to_the_lower_class():
    assert aggregate_epoch_votes([('a', [0.5, 0.5])])['a'][1] == 0


def test_vote_skips_empty_blocks_and_rejects_bad_rows():
    votes = aggregate_epoch_votes([('a', []), ('b', [1.0, 0.0])])
    assert list(votes) == ['b']
    with pytest.raises(DataError):
        aggregate_epoch_votes([('a', [0.7, 0.7])])


def test_voted_mean_stays_inside_chunk_range():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(5), size=6)
    mean = aggregate_epoch_votes([('e', p) for p in probs])['e'][0]
    assert (mean >= probs.min(axis=0) - 1e-12).all() and (mean <= probs.max(axis=0) + 1e-12).all()


def test_vote_windows_and_accuracy():
    keys = [('r', 0), ('r', 0), ('r', 1), ('r', 1)]
    probs = np.array([[0.9, 0.1], [0.3, 0.7], [0.2, 0.8], [0.4, 0.6]])
    block_ids, mean, pred, true = vote_windows(keys, probs, [0, 0, 0, 0])
    assert block_ids == [('r', 0), ('r', 1)]
    assert_array_equal(pred, [0, 1])
    assert voted_accuracy(keys, probs, [0, 0, 0, 0]) == 0.5


# metrics

def test_perfect_predictions():
    labels = np.array([0, 1, 2, 3, 4, 2, 2])
    report = confusion_and_metrics(labels, labels)
    assert report.accuracy == 1.0 and report.macro_f1 == 1.0 and report.kappa == 1.0


def test_kappa_of_a_known_table():
    counts = np.array([[40, 10], [10, 40]])
    assert_allclose(cohen_kappa(counts), 0.6)
    pred = [0] * 40 + [1] * 10 + [0] * 10 + [1] * 40
    true = [0] * 50 + [1] * 50
    report = confusion_and_metrics(pred, true, n_classes=2)
    assert_allclose(report.kappa, 0.6)
    assert_array_equal(report.confusion.counts, counts)


def test_kappa_of_independent_rows_is_zero():
    assert abs(cohen_kappa(np.outer([10, 20, 30], [1, 2, 3]))) < 1e-12


def test_kappa_single_class():
    assert cohen_kappa([[5, 0], [0, 0]]) == 1.0


def test_absent_class_is_undefined_and_left_out():
    report = confusion_and_metrics([0, 1, 1, 0], [0, 1, 0, 0])
    assert report.per_class['f1'][4] is None
    assert_allclose(report.macro_f1, np.mean([0.8, 2.0 / 3]))


def test_macro_f1_is_invariant_to_class_relabelling():
    rng = np.random.default_rng(1)
    pred, true = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
    perm = rng.permutation(5)
    a = confusion_and_metrics(pred, true)
    b = confusion_and_metrics(perm[pred], perm[true])
    assert_allclose(a.macro_f1, b.macro_f1)
    assert_allclose(a.kappa, b.kappa)


def _naive_rates(pred, true, k):
    tp = sum(1 for p, t in zip(pred, true) if p == k and t == k)
    fp = sum(1 for p, t in zip(pred, true) if p == k and t != k)
    fn = sum(1 for p, t in zip(pred, true) if p != k and t == k)
    tn = len(true) - tp - fp - fn
    if tp + fp + fn == 0:
        return None
    precision = tp / float(tp + fp) if tp + fp else 0.0
    recall = tp / float(tp + fn) if tp + fn else 0.0
    specificity = tn / float(tn + fp) if tn + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {'precision': precision, 'sensitivity': recall, 'specificity': specificity, 'f1': f1}


def _naive_kappa(pred, true):
    n = float(len(true))
    p_o = sum(1 for p, t in zip(pred, true) if p == t) / n
    p_e = sum((sum(1 for t in true if t == k) / n) * (sum(1 for p in pred if p == k) / n) for k in range(5))
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def _naive_auroc(scores, true, k):
    pos = [s[k] for s, t in zip(scores, true) if t == k]
    neg = [s[k] for s, t in zip(scores, true) if t != k]
    if not pos or not neg:
        return None
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _naive_ece(probs, true, n_bins=10):
    members = [[] for _ in range(n_bins)]
    for row, t in zip(probs, true):
        top = max(range(len(row)), key=lambda j: (row[j], -j))
        b = min(int(row[top] * n_bins), n_bins - 1)
        members[b].append((row[top], 1.0 if top == t else 0.0))
    total = 0.0
    for bucket in members:
        if bucket:
            confidence = sum(c for c, _ in bucket) / len(bucket)
            accuracy = sum(a for _, a in bucket) / len(bucket)
            total += len(bucket) * abs(accuracy - confidence)
    return total / len(true)


def test_metrics_against_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(5, 201))
        true = rng.integers(0, 5, n)
        probs = rng.dirichlet(np.ones(5), size=n)
        if rng.random() < 0.5:
            probs = np.round(probs, 1)
        pred = probs.argmax(axis=1)
        report = confusion_and_metrics(pred, true, scores=probs)
        assert abs(report.accuracy - np.mean(pred == true)) < 1e-9
        assert abs(report.kappa - _naive_kappa(pred, true)) < 1e-9
        for k in range(5):
            rates = _naive_rates(pred, true, k)
            for metric in ('precision', 'sensitivity', 'specificity', 'f1'):
                if rates is None:
                    assert report.per_class[metric][k] is None
                else:
                    assert abs(report.per_class[metric][k] - rates[metric]) < 1e-9
            expected = _naive_auroc(probs, true, k)
            if expected is None:
                assert report.per_class['auroc'][k] is None
            else:
                assert abs(report.per_class['auroc'][k] - expected) < 1e-9
        ece, _ = calibration_ece(probs, true)
        assert abs(ece - _naive_ece(probs, true)) < 1e-9


def test_metrics_against_sklearn():
    skm = pytest.importorskip('sklearn.metrics')
    rng = np.random.default_rng(3)
    for _ in range(100):
        pred, true = rng.integers(0, 5, 300), rng.integers(0, 5, 300)
        report = confusion_and_metrics(pred, true)
        assert_allclose(report.kappa, skm.cohen_kappa_score(true, pred))
        assert_allclose(report.macro_f1, skm.f1_score(true, pred, average='macro'))
        assert_array_equal(report.confusion.counts, skm.confusion_matrix(true, pred, labels=range(5)))


def test_auroc_examples():
    true = np.array([0, 0, 1, 1])
    scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.4, 0.6]])
    assert auroc(scores, true, 2) == [1.0, 1.0]
    assert auroc(1.0 - scores, true, 2) == [0.0, 0.0]
    assert auroc(np.full((4, 2), 0.5), true, 2) == [0.5, 0.5]
    assert auroc(scores[:2], true[:2], 2) == [None, None]


def test_auroc_ignores_monotone_transforms_and_matches_sklearn():
    rng = np.random.default_rng(4)
    true = rng.integers(0, 5, 400)
    scores = rng.dirichlet(np.ones(5), size=400) + 0.3 * np.eye(5)[true]
    assert_allclose(auroc(scores, true), auroc(np.exp(3 * scores), true))
    skm = pytest.importorskip('sklearn.metrics')
    for k, value in enumerate(auroc(scores, true)):
        assert_allclose(value, skm.roc_auc_score(true == k, scores[:, k]))


def test_metrics_input_errors():
    with pytest.raises(DataError):
        confusion_and_metrics([0, 1], [0])
    with pytest.raises(DataError):
        confusion_and_metrics([], [])
    with pytest.raises(DataError):
        confusion_and_metrics([5], [0])
    with pytest.raises(DataError):
        ConfusionMatrix([[1, 2, 3]])


def test_report_outputs():
    report = confusion_and_metrics([0, 1, 2, 3, 4, 0], [0, 1, 2, 3, 4, 1], scores=np.eye(5)[[0, 1, 2, 3, 4, 0]])
    d = report.to_dict()
    assert d['n_epochs'] == 6 and set(d['per_class']) == {'W', 'N1', 'N2', 'N3', 'REM'}
    assert list(report.per_class_frame().columns) == ['precision', 'sensitivity', 'specificity', 'f1', 'auroc',
                                                      'support']
    assert 'macro_f1' in report.table()


# calibration

def test_ece_of_a_perfect_oracle():
    probs = np.eye(5)[[0, 1, 2, 3, 4]]
    ece, bins = calibration_ece(probs, [0, 1, 2, 3, 4])
    assert ece == 0.0 and bins.total == 5


def test_ece_of_constant_confidence():
    ece, _ = calibration_ece(np.tile([0.7, 0.3], (10, 1)), [0] * 5 + [1] * 5)
    assert_allclose(ece, 0.2)


def test_ece_two_bins_by_hand():
    bins = reliability_bins([0.1, 0.2, 0.9, 1.0], [0, 1, 1, 1], n_bins=2)
    assert_array_equal(bins.counts, [2, 2])
    assert_allclose(bins.ece(), (2 * abs(0.5 - 0.15) + 2 * abs(1.0 - 0.95)) / 4)


def test_ece_of_a_calibrated_source():
    rng = np.random.default_rng(5)
    conf = rng.uniform(0.2, 1.0, 100000)
    assert reliability_bins(conf, rng.random(100000) < conf).ece() < 0.02


def test_reliability_round_trip_through_frames():
    bins = reliability_bins([0.05, 0.55, 0.56], [1, 0, 1], 10)
    back = ReliabilityBins.from_frame(bins.to_frame())
    assert_allclose(back.edges, bins.edges)
    assert back.ece() == bins.ece()


def test_reliability_rejects_out_of_range_confidence():
    with pytest.raises(DataError):
        reliability_bins([1.2], [1])


def test_class_calibration():
    probs = np.array([[0.2, 0.8], [0.6, 0.4]])
    ece, bins = class_calibration_ece(probs, [1, 0], 1, n_bins=5)
    assert bins.total == 2
    assert_allclose(ece, (abs(1 - 0.8) + abs(0 - 0.4)) / 2)


# importance, attention, hypnograms

def test_occlusion_of_a_constant_model_is_zero():
    params = init_params(ModelConfig.miniature(), np.random.default_rng(0), dtype=np.float64)
    params['classifier.out.weight'].data[...] = 0.0
    params['classifier.out.bias'].data[...] = 0.0
    window = np.random.default_rng(1).standard_normal((3, 200))
    values, cls = occlusion_importance(params, window, 50)
    assert values.shape == (4,)
    assert_allclose(values, 0.0)
    assert cls == 0


def test_occlusion_values_are_probability_drops():
    params = init_params(ModelConfig.miniature(), np.random.default_rng(2), dtype=np.float64)
    values, cls = occlusion_importance(params, np.random.default_rng(3).standard_normal((3, 200)), 20)
    assert values.shape == (10,)
    assert (values >= 0).all() and (values <= 1).all()
    with pytest.raises(ConfigError):
        occlusion_importance(params, np.zeros((3, 200)), 30)


def test_epoch_maps_join_chunks():
    params = init_params(ModelConfig.miniature(), np.random.default_rng(4))
    windows = _windows([2, 2, 3], [0, 0, 1])
    maps = epoch_importance_maps(params, windows, 50)
    assert [m.block_id for m in maps] == [('S00E0', 0), ('S00E0', 1)]
    assert len(maps[0].values) == 8 and len(maps[1].values) == 4
    table = importance_table(maps)
    assert list(table.columns) == ['block_id', 'segment_start_sample', 'importance', 'predicted', 'true']
    assert table['block_id'].iloc[0] == 'S00E0/0'


def test_attention_export():
    windows = _windows([0, 1], [0, 1])
    frame = export_attention(windows, [[0.2, 0.5, 0.3], [0.1, 0.1, 0.8]])
    assert_allclose(frame[['alpha_past', 'alpha_center', 'alpha_future']].sum(axis=1), 1.0)
    assert list(frame['block_id']) == ['S00E0/0', 'S00E0/1']
    with pytest.raises(DataError):
        export_attention(windows, [[0.2, 0.5, 0.3]])
    with pytest.raises(DataError):
        export_attention(windows, [[0.2, 0.5, 0.5], [0.1, 0.1, 0.8]])


def test_hypnogram_agreement_is_accuracy():
    pred, true = [0, 2, 2, 4, 1], [0, 2, 3, 4, 1]
    hypnogram = hypnogram_compare(pred, true)
    assert hypnogram.agreement == confusion_and_metrics(pred, true).accuracy == 0.8
    table = hypnogram_table([('r', i) for i in range(5)], hypnogram)
    assert list(table['agree']) == [1, 1, 0, 1, 1]
    with pytest.raises(DataError):
        hypnogram_compare([0], [0, 1])


def test_score_predictions_votes_before_scoring():
    windows = _windows([1, 1, 3, 3], [0, 0, 1, 1])
    probs = np.array([[0, 0.6, 0.4, 0, 0], [0, 0.6, 0.4, 0, 0], [0, 0, 0, 0.3, 0.7], [0, 0, 0, 0.9, 0.1]])
    evaluation = score_predictions(windows, probs)
    assert_array_equal(evaluation.predicted, [1, 3])
    assert evaluation.report.accuracy == 1.0
    assert evaluation.attention is None
    assert set(evaluation.class_reliability) == {'W', 'N1', 'N2', 'N3', 'REM'}


def test_evaluate_checkpoint_end_to_end():
    params = init_params(ModelConfig.miniature(), np.random.default_rng(5))
    windows = _windows([0, 1, 2, 3, 4, 0], [0, 0, 1, 2, 3, 4])
    evaluation = evaluate_checkpoint(params, windows, batch_size=4)
    assert evaluation.report.n_scored == 5
    assert len(evaluation.attention) == 6


def test_prediction_files_pool(tmp_path):
    windows = _windows([0, 1], [0, 1])
    probs = np.array([[0.9, 0.1, 0, 0, 0], [0.2, 0.8, 0, 0, 0]])
    out = EvalOutput(probs, np.full((2, 3), 1 / 3.0), 0.0)
    paths = [save_predictions(str(tmp_path / ('p%d.npz' % i)), windows, out) for i in range(2)]
    pooled, pooled_probs, alpha = load_predictions(paths)
    assert len(pooled) == 4 and pooled_probs.shape == (4, 5) and alpha.shape == (4, 3)
    assert pooled.block_keys()[2] == ('S00E0', 0)


# reports and figures

def test_learning_curve_summary_over_unequal_folds():
    a = pd.DataFrame({'epoch': [1, 2, 3], 'train_acc': [0.5, 0.6, 0.7], 'val_acc': [0.4, 0.5, 0.6]})
    b = pd.DataFrame({'epoch': [1, 2], 'train_acc': [0.7, 0.8], 'val_acc': [0.6, 0.7]})
    summary = learning_curve_summary([a, b])
    assert list(summary['epoch']) == [1, 2, 3]
    assert_allclose(summary['train_acc_mean'], [0.6, 0.7, 0.7])
    assert summary['val_acc_std'].iloc[2] == 0.0


def test_emit_plots_needs_inputs(tmp_path):
    with pytest.raises(DataError) as e:
        emit_plots(str(tmp_path))
    assert 'history.csv' in str(e.value)


def test_emit_plots_writes_svgs(tmp_path):
    outdir = str(tmp_path)
    fold_dir = tmp_path / 'folds' / 'fold_0'
    fold_dir.mkdir(parents=True)
    pd.DataFrame({'epoch': [1, 2], 'train_loss': [1.0, 0.8], 'train_acc': [0.5, 0.6],
                  'val_loss': [1.1, 0.9], 'val_acc': [0.4, 0.5], 'lr': [1e-4, 1e-4]}).to_csv(
        str(fold_dir / 'history.csv'), index=False)
    windows = _windows([0, 1, 2, 3, 4, 2], [0, 1, 2, 3, 4, 5])
    evaluation = score_predictions(windows, np.random.default_rng(6).dirichlet(np.ones(5), size=6))
    write_report(evaluation.report, outdir, evaluation.reliability, evaluation.class_reliability)
    hypnogram_table(evaluation.keys, evaluation.hypnogram).to_csv(
        os.path.join(outdir, 'metrics', 'hypnogram.csv'), index=False)
    written = emit_plots(outdir)
    names = sorted(os.path.basename(p) for p in written)
    assert names == ['confusion.svg', 'hypnogram.svg', 'learning_curves.svg', 'reliability.svg',
                     'reliability_N1.svg']
    assert all(os.path.getsize(p) > 0 for p in written)
    assert (tmp_path / 'figures' / 'learning_curves.csv').exists()


if __name__ == "__main__":
    pytest.main([__file__])
