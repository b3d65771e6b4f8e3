# -*- coding: utf-8 -*-
"""hypnogrid command line: synth | preprocess | train | ablate | evaluate | gradcheck | importance | plot"""
import os
import sys
import json
import argparse
import logging as log

import numpy as np

from ..errors import HypnogridError, ConfigError, DataError
from ..tensor import run_oracle_suite
from ..eval.stage_eval import score_predictions, evaluate_checkpoint, load_predictions
from ..eval.eval_utils import write_report, write_table
from ..eval.eval_plots import emit_plots
from ..eval.importance import epoch_importance_maps, importance_table, hypnogram_table
from ..eval.ablation import ablation_study, ordering_holds, n1_gain
from . import stage_factory as factory
from . import utils as u
from .checkpoint import load_checkpoint
from .dataset import build_window_dataset, list_containers, STAGES
from .folds import FoldPlan, stratified_group_kfold, split_by_fold
from .manifest import RunManifest
from .model import model_gradient_check
from .synth import synth_generate
from .training import cross_validate

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


def _makedirs(path):
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def _dataset_dir(arguments):
    return arguments.dataset or u.get_dataset_dir(arguments.outdir)


def _windows(arguments, cfg):
    return build_window_dataset(_dataset_dir(arguments), cfg, _makedirs(u.get_cache_dir(arguments.outdir)))


def _save_config(cfg, outdir):
    path = u.get_config_copy_path(outdir)
    with open(path, 'w') as f:
        cfg.write(f)
    return path


def _write_evaluation(evaluation, outdir):
    write_report(evaluation.report, outdir, evaluation.reliability, evaluation.class_reliability)
    write_table(hypnogram_table(evaluation.keys, evaluation.hypnogram), outdir, 'hypnogram.csv')
    if evaluation.attention is not None:
        write_table(evaluation.attention, outdir, 'attention.csv')
    print(evaluation.report.table())


def cmd_synth(arguments, cfg):
    spec = factory.build_synth_spec(cfg, arguments.seed)
    paths = synth_generate(spec, _makedirs(u.get_dataset_dir(arguments.outdir)))
    print('wrote %d recordings to %s' % (len(paths), u.get_dataset_dir(arguments.outdir)))


def cmd_preprocess(arguments, cfg):
    windows = _windows(arguments, cfg)
    counts = np.bincount(windows.labels, minlength=len(STAGES))
    print('%d windows from %d subjects' % (len(windows), len(windows.subject_ids())))
    for name, n in zip(STAGES, counts):
        print('  %-4s %d' % (name, n))


def cmd_train(arguments, cfg):
    model_config = factory.build_model_config(cfg)
    deterministic = arguments.deterministic == 'on'
    train_config = factory.build_train_config(cfg, arguments.seed, deterministic)
    aug_config = factory.build_augmentation_config(cfg)
    windows = _windows(arguments, cfg)
    plan = stratified_group_kfold(windows, arguments.folds, arguments.seed)
    with open(u.resolve_under(arguments.outdir, 'folds.json'), 'w') as f:
        json.dump({'k': plan.k, 'assignments': plan.assignments}, f, indent=2, sort_keys=True)

    manifest = RunManifest(u.config_hash(cfg), arguments.seed,
                           u.dataset_fingerprint(list_containers(_dataset_dir(arguments))),
                           None, deterministic=deterministic)
    folds = arguments.fold if arguments.fold else None
    results = cross_validate(windows, plan, model_config, train_config, aug_config, arguments.outdir,
                             folds=folds, manifest=manifest, workers=arguments.workers)
    for fold, result in zip(folds or range(plan.k), results):
        print('fold %d: best epoch %d, stopped at %d, voted val acc %.4f'
              % (fold, result.best_epoch, result.stop_epoch, result.best_metric))

    prediction_files = [os.path.join(u.get_fold_dir(arguments.outdir, f), 'predictions.npz')
                        for f in (folds or range(plan.k))]
    prediction_files = [p for p in prediction_files if os.path.exists(p)]
    if prediction_files:
        pooled, probs, alpha = load_predictions(prediction_files)
        _write_evaluation(score_predictions(pooled, probs, alpha), arguments.outdir)


def cmd_ablate(arguments, cfg):
    windows = _windows(arguments, cfg)
    plan = stratified_group_kfold(windows, arguments.folds, arguments.seed)
    frame = ablation_study(windows, plan, arguments.outdir, arguments.seeds, arguments.config, arguments.rows,
                           arguments.fold or None, arguments.deterministic == 'on', arguments.workers)
    path = write_table(frame, arguments.outdir, 'ablation.csv')
    print(frame.to_string(index=False, float_format='%.4f'))
    if tuple(arguments.rows) == factory.ABLATIONS:
        held = ordering_holds(frame)
        print('accuracy non-decreasing across rows in %d of %d seeds' % (int(held.sum()), len(held)))
        print('mean N1-F1 gain from class weighting and augmentation: %.4f' % n1_gain(frame).mean())
    print(path)


def _load_plan(outdir):
    path = u.resolve_under(outdir, 'folds.json')
    if not os.path.exists(path):
        raise DataError('no fold plan at %s; run train first or drop --fold' % path)
    with open(path) as f:
        d = json.load(f)
    return FoldPlan(d['k'], d['assignments'])


def _checkpoint(arguments):
    if arguments.checkpoint is None:
        if arguments.fold is None:
            raise ConfigError('--checkpoint or --fold is required')
        return u.get_checkpoint_basefilename(u.get_fold_dir(arguments.outdir, arguments.fold))
    path = arguments.checkpoint
    if os.path.isdir(path):
        return u.get_checkpoint_basefilename(path)
    return path[:-len('.manifest')] if path.endswith('.manifest') else path


def _evaluation_windows(arguments, cfg):
    windows = _windows(arguments, cfg)
    if arguments.fold is not None:
        _, windows = split_by_fold(windows, _load_plan(arguments.outdir), arguments.fold)
    return windows


def cmd_evaluate(arguments, cfg):
    params = load_checkpoint(_checkpoint(arguments))
    windows = _evaluation_windows(arguments, cfg)
    _write_evaluation(evaluate_checkpoint(params, windows, arguments.batch_size), arguments.outdir)


def cmd_gradcheck(arguments, cfg):
    errors = run_oracle_suite(arguments.seed)
    for name, err in errors.items():
        print('%-28s %.3e' % (name, err))
    model_err = model_gradient_check(arguments.seed)
    print('%-28s %.3e' % ('model (miniature)', model_err))
    worst = max(errors.values())
    print('max relative error: %.3e' % worst)
    return 0 if worst < OP_TOLERANCE and model_err < MODEL_TOLERANCE else 1


def cmd_importance(arguments, cfg):
    params = load_checkpoint(_checkpoint(arguments))
    windows = _evaluation_windows(arguments, cfg)
    keys = list(dict.fromkeys(windows.block_keys()))[:arguments.max_epochs]
    wanted = set(keys)
    subset = windows.subset([i for i, k in enumerate(windows.block_keys()) if k in wanted])
    maps = epoch_importance_maps(params, subset, arguments.segment_len, quiet=arguments.quiet)
    path = write_table(importance_table(maps), arguments.outdir, 'importance.csv')
    print('wrote occlusion maps of %d epochs to %s' % (len(maps), path))


def cmd_plot(arguments, cfg):
    for path in emit_plots(arguments.outdir):
        print(path)


COMMANDS = {
    'synth': cmd_synth,
    'preprocess': cmd_preprocess,
    'train': cmd_train,
    'ablate': cmd_ablate,
    'evaluate': cmd_evaluate,
    'gradcheck': cmd_gradcheck,
    'importance': cmd_importance,
    'plot': cmd_plot,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--outdir', default='hypnogrid_run')
    common.add_argument('--config', default=None, help='INI file read on top of the shipped template')
    common.add_argument('--deterministic', choices=['on', 'off'], default='on')
    common.add_argument('--verbose', action='store_true', default=False)
    common.add_argument('--quiet', action='store_true', default=False, help='no progress bars')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--dataset', default=None, help='directory of *.eeg containers (default: <outdir>/dataset)')

    parser = argparse.ArgumentParser(prog='hypnogrid', description='Context-aware single-channel EEG sleep staging')
    sub = parser.add_subparsers(dest='command')
    sub.required = True
    sub.add_parser('synth', parents=[common], help='generate seeded synthetic recordings')
    sub.add_parser('preprocess', parents=[common, data], help='build the context-window cache')

    train = sub.add_parser('train', parents=[common, data], help='subject-grouped cross-validated training')
    train.add_argument('--folds', type=int, default=5)
    train.add_argument('--fold', type=int, nargs='*', default=None, help='train only these folds')
    train.add_argument('--ablation', choices=factory.ABLATIONS, default=None)
    train.add_argument('--workers', type=int, default=None, help='fold processes (default: HYPNOGRID_THREADS)')

    ablate = sub.add_parser('ablate', parents=[common, data], help='train every ablation row on one fold plan')
    ablate.add_argument('--folds', type=int, default=5)
    ablate.add_argument('--fold', type=int, nargs='*', default=None, help='train only these folds')
    ablate.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2])
    ablate.add_argument('--rows', nargs='+', choices=factory.ABLATIONS, default=list(factory.ABLATIONS))
    ablate.add_argument('--workers', type=int, default=1)

    for name, text in (('evaluate', 'score a checkpoint'), ('importance', 'occlusion importance maps')):
        p = sub.add_parser(name, parents=[common, data], help=text)
        p.add_argument('--checkpoint', default=None, help='checkpoint base path or fold directory')
        p.add_argument('--fold', type=int, default=None, help='restrict to the validation subjects of this fold')
        if name == 'evaluate':
            p.add_argument('--batch-size', type=int, default=256)
        else:
            p.add_argument('--segment-len', type=int, default=50)
            p.add_argument('--max-epochs', type=int, default=8)

    sub.add_parser('gradcheck', parents=[common], help='finite-difference check of every op and the model')
    sub.add_parser('plot', parents=[common], help='SVG figures from a run directory')
    return parser


def run_command(argv=None):
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        arguments = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    log.basicConfig(level=log.DEBUG if arguments.verbose else log.INFO,
                    format='%(asctime)s %(levelname)s: %(message)s', datefmt='%m/%d|%H:%M:%S')
    try:
        _makedirs(arguments.outdir)
        overlays = []
        if getattr(arguments, 'ablation', None):
            overlays.append(factory.ablation_cfg(arguments.ablation))
        overlays.append(arguments.config)
        cfg = factory.load_config(*overlays)
        if arguments.command in ('synth', 'preprocess', 'train', 'ablate'):
            _save_config(cfg, arguments.outdir)
        code = COMMANDS[arguments.command](arguments, cfg)
    except HypnogridError as e:
        log.error('%s', e)
        return 1
    return code or 0


def main():
    sys.exit(run_command())


if __name__ == '__main__':
    main()
