import os
import sys
import hashlib
import subprocess

import numpy as np
import progressbar

from ..errors import ConfigError


def batch_iteration_indices(N, batch_size):
    end = int(np.ceil(float(N) / float(batch_size)))
    for i in range(end):
        a = i*batch_size
        e = i*batch_size+batch_size
        e = e if e <= N else N
        yield (a, e)


def worker_cap(default=None):
    value = os.environ.get('HYPNOGRID_THREADS')
    if value is None:
        return default if default is not None else (os.cpu_count() or 1)
    try:
        n = int(value)
    except ValueError:
        raise ConfigError('HYPNOGRID_THREADS must be an integer, got %r' % value)
    if n < 1:
        raise ConfigError('HYPNOGRID_THREADS must be >= 1, got %d' % n)
    return n


def config_hash(args):
    """md5 over every section/item of a ConfigParser, in file order."""
    items = [(section, list(args.items(section))) for section in args.sections()]
    return hashlib.md5(str(items).encode('utf-8')).hexdigest()


def dataset_fingerprint(file_paths):
    md5 = hashlib.md5()
    for path in sorted(file_paths):
        md5.update(os.path.basename(path).encode('utf-8'))
        with open(path, 'rb') as f:
            for block in iter(lambda: f.read(1 << 20), b''):
                md5.update(block)
    return md5.hexdigest()


def version_string():
    from .. import __version__
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(['git', 'describe', '--tags', '--always', '--dirty'],
                             cwd=here, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return 'v%s' % __version__


def resolve_under(outdir, *parts):
    """Join ``parts`` onto ``outdir`` and refuse anything that escapes it."""
    root = os.path.realpath(outdir)
    path = os.path.realpath(os.path.join(root, *parts))
    if path != root and not path.startswith(root + os.sep):
        raise ConfigError('refusing to write outside --outdir: %s' % path)
    return path


def get_dataset_dir(outdir):
    return resolve_under(
        outdir,
        'dataset'
    )


def get_cache_dir(outdir):
    return resolve_under(
        outdir,
        'tmp_windows'
    )


def get_fold_dir(outdir, fold):
    return resolve_under(
        outdir,
        'folds',
        'fold_%d' % fold
    )


def get_checkpoint_basefilename(fold_dir):
    return os.path.join(
        fold_dir,
        'checkpoints',
        'chkpt'
    )


def get_metrics_dir(outdir):
    return resolve_under(
        outdir,
        'metrics'
    )


def get_figure_dir(outdir):
    return resolve_under(
        outdir,
        'figures'
    )


def get_config_copy_path(outdir):
    return resolve_under(
        outdir,
        'hypnogrid.cfg'
    )

def progress_bar(label, num_iter, quiet=False):
    widgets = [label, progressbar.Percentage(),
         ' ', progressbar.Bar(),
         ' ', progressbar.Counter(), ' / %s' % num_iter,
         ' ', progressbar.ETA(), ' ']
    if quiet or not sys.stderr.isatty():
        return progressbar.NullBar(max_value=num_iter, widgets=widgets)
    return progressbar.ProgressBar(max_value=num_iter, widgets=widgets)
