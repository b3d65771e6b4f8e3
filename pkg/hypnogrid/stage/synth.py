# -*- coding: utf-8 -*-
"""Seeded synthetic single-channel sleep recordings.

Stage sequences come from a stationary Markov chain whose stationary
distribution is the requested mixture; every epoch is then drawn from a
stage-specific waveform recipe.
"""
import os
import logging as log

import numpy as np
from scipy import signal

from ..errors import ConfigError
from .container import Recording, write_container, SAMPLE_RATE
from .dataset import STAGES, EPOCH_LEN, SLEEPEDF20_COUNTS, SLEEPEDF78_COUNTS

MIXTURE_PRESETS = {
    'sleepedf20': SLEEPEDF20_COUNTS,
    'sleepedf78': SLEEPEDF78_COUNTS,
}

_T = np.arange(EPOCH_LEN) / float(SAMPLE_RATE)


def mixture_from_counts(counts):
    counts = np.asarray(counts, dtype=np.float64)
    return counts / counts.sum()


class SynthSpec(object):

    def __init__(self, n_subjects=12, epochs_per_subject=120, mixture=None,
                 self_transition=0.85, noise_uv=5.0, amplitude_scale=1.0, seed=0):
        self.n_subjects = int(n_subjects)
        self.epochs_per_subject = int(epochs_per_subject)
        if mixture is None:
            mixture = mixture_from_counts(SLEEPEDF20_COUNTS)
        elif isinstance(mixture, str):
            if mixture not in MIXTURE_PRESETS:
                raise ConfigError('unknown mixture preset %r (known: %s)' % (mixture, ', '.join(sorted(MIXTURE_PRESETS))))
            mixture = mixture_from_counts(MIXTURE_PRESETS[mixture])
        self.mixture = np.asarray(mixture, dtype=np.float64)
        self.self_transition = float(self_transition)
        self.noise_uv = float(noise_uv)
        self.amplitude_scale = float(amplitude_scale)
        self.seed = int(seed)
        self.validate()

    def validate(self):
        m = self.mixture
        if m.shape != (len(STAGES),) or (m < 0).any() or abs(m.sum() - 1.0) > 1e-6:
            raise ConfigError('mixture must be %d nonnegative proportions summing to 1, got %s'
                              % (len(STAGES), m.tolist()))
        if not 0.0 <= self.self_transition < 1.0:
            raise ConfigError('self_transition must be in [0, 1), got %s' % self.self_transition)
        if self.n_subjects < 1 or self.epochs_per_subject < 1:
            raise ConfigError('need at least one subject and one epoch')
        if self.noise_uv < 0 or self.amplitude_scale <= 0:
            raise ConfigError('noise_uv must be >= 0 and amplitude_scale > 0')


def transition_matrix(mixture, self_transition):
    """P = s*I + (1-s) * 1 pi^T, whose stationary distribution is pi."""
    k = len(mixture)
    return self_transition * np.eye(k) + (1.0 - self_transition) * np.tile(mixture, (k, 1))


def sample_stage_sequence(n_epochs, mixture, self_transition, rng):
    P = transition_matrix(mixture, self_transition)
    cumulative = np.cumsum(P, axis=1)
    states = np.empty(n_epochs, dtype=np.int64)
    state = int(rng.choice(len(mixture), p=mixture))
    for i in range(n_epochs):
        states[i] = state
        state = min(int(np.searchsorted(cumulative[state], rng.random(), side='right')), len(mixture) - 1)
    return states


def band_noise(rng, lo, hi, amplitude, n=EPOCH_LEN):
    sos = signal.butter(4, [lo, hi], btype='bandpass', fs=SAMPLE_RATE, output='sos')
    x = signal.sosfiltfilt(sos, rng.standard_normal(n + 400))[200:-200]
    return amplitude * x / x.std()


def _burst(rng, duration_range, n=EPOCH_LEN):
    """Hann envelope of random duration placed at a random onset."""
    length = int(rng.uniform(*duration_range) * SAMPLE_RATE)
    start = int(rng.integers(0, n - length))
    env = np.zeros(n)
    env[start:start + length] = np.hanning(length)
    return env


def wake_epoch(rng):
    alpha = np.zeros(EPOCH_LEN)
    for _ in range(rng.integers(2, 5)):
        f = rng.uniform(8.0, 12.0)
        alpha += 30.0 * _burst(rng, (2.0, 6.0)) * np.sin(2 * np.pi * f * _T + rng.uniform(0, 2 * np.pi))
    return alpha + band_noise(rng, 15.0, 30.0, 6.0)


def n1_epoch(rng):
    return band_noise(rng, 4.0, 8.0, 25.0) + band_noise(rng, 1.0, 30.0, 8.0)


def n2_epoch(rng):
    x = band_noise(rng, 1.0, 8.0, 18.0)
    for _ in range(rng.integers(3, 7)):
        f = rng.uniform(11.0, 16.0)
        x += 30.0 * _burst(rng, (0.5, 1.5)) * np.sin(2 * np.pi * f * _T)
    for _ in range(rng.integers(1, 3)):
        # biphasic transient: sharp negative wave followed by a slower positive one
        width = int(rng.uniform(0.6, 1.0) * SAMPLE_RATE)
        start = int(rng.integers(0, EPOCH_LEN - width))
        t = np.linspace(0.0, 1.0, width)
        x[start:start + width] += -90.0 * np.sin(2 * np.pi * t) * np.hanning(width)
    return x


def n3_epoch(rng):
    x = band_noise(rng, 0.5, 4.0, 25.0)
    for _ in range(3):
        f = rng.uniform(0.75, 2.5)
        x += rng.uniform(40.0, 70.0) * np.sin(2 * np.pi * f * _T + rng.uniform(0, 2 * np.pi))
    return x


def rem_epoch(rng):
    x = band_noise(rng, 2.0, 30.0, 10.0)
    for _ in range(rng.integers(2, 4)):
        f = rng.uniform(2.0, 3.0)
        x += 25.0 * _burst(rng, (1.0, 2.5)) * signal.sawtooth(2 * np.pi * f * _T, width=0.2)
    return x


RECIPES = (wake_epoch, n1_epoch, n2_epoch, n3_epoch, rem_epoch)


def synth_recording(subject_index, spec, rng):
    stages = sample_stage_sequence(spec.epochs_per_subject, spec.mixture, spec.self_transition, rng)
    epochs = [spec.amplitude_scale * RECIPES[s](rng) for s in stages]
    samples = np.concatenate(epochs) + rng.normal(0.0, spec.noise_uv, size=EPOCH_LEN * len(stages))
    subject_id = 'S%02d' % subject_index
    return Recording(subject_id, subject_id + 'E0', samples.astype(np.float32), [STAGES[s] for s in stages])


def synth_generate(spec, outdir):
    """Write one container per subject into ``outdir``; returns the file paths."""
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_subjects)
    paths = []
    for i, seed in enumerate(seeds):
        recording = synth_recording(i, spec, np.random.default_rng(seed))
        paths.append(write_container(recording, os.path.join(outdir, recording.recording_id + '.eeg')))
    log.info('wrote %d synthetic recordings (%d epochs each) to %s', len(paths), spec.epochs_per_subject, outdir)
    return paths
