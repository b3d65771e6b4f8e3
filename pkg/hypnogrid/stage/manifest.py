# -*- coding: utf-8 -*-
import json
import datetime
from collections import OrderedDict

from ..errors import FormatError
from . import utils as u


def _now():
    return datetime.datetime.now().isoformat(timespec='seconds')


class RunManifest(object):
    """Provenance of one fold run. Timestamps are not part of the run identity."""

    IDENTITY = ('config_hash', 'seed', 'dataset_fingerprint', 'fold', 'version', 'deterministic')

    def __init__(self, config_hash, seed, dataset_fingerprint, fold, version=None,
                 deterministic=True, started=None, finished=None):
        self.config_hash = config_hash
        self.seed = int(seed)
        self.dataset_fingerprint = dataset_fingerprint
        self.fold = fold if fold is None else int(fold)
        self.version = version or u.version_string()
        self.deterministic = bool(deterministic)
        self.started = started or _now()
        self.finished = finished

    def for_fold(self, fold):
        return RunManifest(self.config_hash, self.seed, self.dataset_fingerprint, fold,
                           self.version, self.deterministic)

    def mark_finished(self):
        self.finished = _now()
        return self

    def identity(self):
        return tuple(getattr(self, k) for k in self.IDENTITY)

    def __eq__(self, other):
        return isinstance(other, RunManifest) and self.identity() == other.identity()

    def __ne__(self, other):
        return not self == other

    def to_dict(self):
        d = OrderedDict((k, getattr(self, k)) for k in self.IDENTITY)
        d['started'] = self.started
        d['finished'] = self.finished
        return d

    def write(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                return cls(**json.load(f))
        except (ValueError, TypeError) as e:
            raise FormatError('bad run manifest %s: %s' % (path, e))
