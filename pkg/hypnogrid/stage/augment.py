# -*- coding: utf-8 -*-
"""Stochastic train-time transforms of [3, L] context windows."""
import logging as log

import numpy as np

from ..errors import ConfigError
from .dataset import WindowSet


class AugmentationConfig(object):

    def __init__(self, enabled=True,
                 noise_sigma_rel=0.05, noise_prob=0.3,
                 scale_range=(0.9, 1.1), scale_prob=0.3,
                 shift_max=50, shift_prob=0.3,
                 mask_len_range=(25, 75), mask_prob=0.3,
                 minority_boost=1, minority_class=1, chunk_len=500):
        self.enabled = bool(enabled)
        self.noise_sigma_rel = float(noise_sigma_rel)
        self.noise_prob = float(noise_prob)
        self.scale_range = tuple(float(v) for v in scale_range)
        self.scale_prob = float(scale_prob)
        self.shift_max = int(shift_max)
        self.shift_prob = float(shift_prob)
        self.mask_len_range = tuple(int(v) for v in mask_len_range)
        self.mask_prob = float(mask_prob)
        self.minority_boost = int(minority_boost)
        self.minority_class = int(minority_class)
        self.chunk_len = int(chunk_len)
        self.validate()

    @classmethod
    def disabled(cls):
        return cls(enabled=False, noise_prob=0.0, scale_prob=0.0, shift_prob=0.0,
                   mask_prob=0.0, minority_boost=0)

    def validate(self):
        for name in ('noise_prob', 'scale_prob', 'shift_prob', 'mask_prob'):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError('%s must be a probability, got %s' % (name, p))
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ConfigError('scale_range must satisfy 0 < lo <= hi, got %s' % (self.scale_range,))
        lo, hi = self.mask_len_range
        if not 0 < lo <= hi < self.chunk_len:
            raise ConfigError('mask_len_range must satisfy 0 < lo <= hi < %d, got %s'
                              % (self.chunk_len, self.mask_len_range))
        if self.noise_sigma_rel < 0 or self.shift_max < 0 or self.minority_boost < 0:
            raise ConfigError('noise_sigma_rel, shift_max and minority_boost must be >= 0')


def add_noise(x, sigma_rel, rng):
    return x + rng.normal(0.0, sigma_rel * x.std(), size=x.shape).astype(x.dtype)


def time_scale(x, factor):
    """Stretch (factor > 1) or compress every row by linear interpolation, cropped/zero-padded to length."""
    length = x.shape[-1]
    positions = np.arange(length) / factor
    grid = np.arange(length)
    return np.stack([np.interp(positions, grid, row, right=0.0) for row in x]).astype(x.dtype)


def time_shift(x, shift):
    return np.roll(x, shift, axis=-1)


def time_mask(x, start, length, row=1):
    out = x.copy()
    out[row, start:start + length] = 0.0
    return out


def augment_sample(window, config, rng):
    """Apply each enabled transform independently with its probability.

    The label is untouched and the [3, L] shape is preserved. Masking zeros a
    run inside the center row.
    """
    x = np.array(window, dtype=np.float32, copy=True)
    if rng.random() < config.noise_prob:
        x = add_noise(x, config.noise_sigma_rel, rng)
    if rng.random() < config.scale_prob:
        x = time_scale(x, rng.uniform(*config.scale_range))
    if rng.random() < config.shift_prob and config.shift_max > 0:
        x = time_shift(x, int(rng.integers(-config.shift_max, config.shift_max + 1)))
    if rng.random() < config.mask_prob:
        x = random_mask(x, config, rng)
    return x


def random_mask(x, config, rng):
    lo, hi = config.mask_len_range
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, x.shape[-1] - length + 1))
    return time_mask(x, start, length)


def augment_batch(data, config, rng):
    if not config.enabled:
        return data
    return np.stack([augment_sample(w, config, rng) for w in data])


def expand_minority(windows, config, rng):
    """Append ``minority_boost`` masked copies of every minority-class window."""
    if not config.enabled or config.minority_boost == 0:
        return windows
    idx = np.flatnonzero(windows.labels == config.minority_class)
    if idx.size == 0:
        return windows
    copies = []
    for _ in range(config.minority_boost):
        extra = windows.subset(idx)
        extra.data = np.stack([random_mask(w, config, rng) for w in extra.data])
        copies.append(extra)
    log.info('added %d masked copies of class %d windows', idx.size * config.minority_boost, config.minority_class)
    return WindowSet.concat([windows] + copies)
