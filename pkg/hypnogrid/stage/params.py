# -*- coding: utf-8 -*-
"""Model configuration, named parameters and the closed-form size/receptive-field calculators."""
from collections import OrderedDict

import numpy as np

from ..errors import ConfigError
from ..tensor import Tensor, RunningStats

STAGE_PREFIXES = ('multiscale', 'compression', 'intra', 'inter', 'attention', 'classifier')


class ModelConfig(object):

    def __init__(self, branch_kernels=(7, 15, 31), branch_width=32, se_reduction=8,
                 reduction_kernel=3, reduction_stride=2, block_kernel=3,
                 block_dilations=(1, 2, 4), block_strides=(2, 5, 5), block_channels=(128, 192, 256),
                 h1=64, h2=128, d_att=64, mlp_hidden=(512, 256), n_classes=5,
                 pool_dropout=0.1, mlp_dropout=0.3, chunk_len=500, context=3,
                 use_compression=True, use_sequence=True):
        self.branch_kernels = tuple(int(k) for k in branch_kernels)
        self.branch_width = int(branch_width)
        self.se_reduction = int(se_reduction)
        self.reduction_kernel = int(reduction_kernel)
        self.reduction_stride = int(reduction_stride)
        self.block_kernel = int(block_kernel)
        self.block_dilations = tuple(int(d) for d in block_dilations)
        self.block_strides = tuple(int(s) for s in block_strides)
        self.block_channels = tuple(int(c) for c in block_channels)
        self.h1 = int(h1)
        self.h2 = int(h2)
        self.d_att = int(d_att)
        self.mlp_hidden = tuple(int(h) for h in mlp_hidden)
        self.n_classes = int(n_classes)
        self.pool_dropout = float(pool_dropout)
        self.mlp_dropout = float(mlp_dropout)
        self.chunk_len = int(chunk_len)
        self.context = int(context)
        self.use_compression = bool(use_compression)
        self.use_sequence = bool(use_sequence)

    @classmethod
    def miniature(cls, **overrides):
        """A small config that keeps every stage, for finite-difference checks."""
        kw = dict(branch_kernels=(3, 5, 7), branch_width=4, se_reduction=4,
                  block_channels=(8, 12, 16), h1=4, h2=4, d_att=4, mlp_hidden=(8, 8),
                  pool_dropout=0.0, mlp_dropout=0.0, chunk_len=200)
        kw.update(overrides)
        return cls(**kw)

    @property
    def stem_channels(self):
        return len(self.branch_kernels) * self.branch_width

    @property
    def compression_factor(self):
        return self.reduction_stride * int(np.prod(self.block_strides))

    @property
    def feature_channels(self):
        return self.block_channels[-1] if self.use_compression else self.stem_channels

    @property
    def feature_length(self):
        length = self.chunk_len // self.reduction_stride
        if self.use_compression:
            for s in self.block_strides:
                length //= s
        return length

    @property
    def classifier_input(self):
        return 2 * self.h2 if self.use_sequence else self.context * self.feature_channels

    def items(self):
        return [(k, getattr(self, k)) for k in sorted(vars(self))]

    def to_dict(self):
        return OrderedDict((k, list(v) if isinstance(v, tuple) else v) for k, v in self.items())

    @classmethod
    def from_dict(cls, d):
        return cls(**dict(d))

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.items() == other.items()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return 'ModelConfig(%s)' % ', '.join('%s=%r' % kv for kv in self.items())

    def validate(self):
        if any(k % 2 == 0 or k < 1 for k in self.branch_kernels + (self.reduction_kernel, self.block_kernel)):
            raise ConfigError('kernel sizes must be odd and positive')
        if not (len(self.block_dilations) == len(self.block_strides) == len(self.block_channels)):
            raise ConfigError('block dilations, strides and channels must have the same length')
        if min((self.reduction_stride,) + self.block_strides + self.block_dilations) < 1:
            raise ConfigError('strides and dilations must be >= 1')
        r = self.se_reduction
        for c in (self.stem_channels,) + (self.block_channels if self.use_compression else ()):
            if c < r or c % r:
                raise ConfigError('SE reduction %d does not divide %d channels' % (r, c))
        factor = self.compression_factor if self.use_compression else self.reduction_stride
        if self.chunk_len % factor:
            raise ConfigError('chunk length %d is not divisible by the compression factor %d' % (self.chunk_len, factor))
        if self.context != 3:
            raise ConfigError('only (past, center, future) context windows are supported, got %d' % self.context)
        for p in (self.pool_dropout, self.mlp_dropout):
            if not 0.0 <= p < 1.0:
                raise ConfigError('dropout rates must be in [0, 1), got %s' % p)
        if min(self.h1, self.h2, self.d_att, self.n_classes, self.branch_width) < 1 or min(self.mlp_hidden) < 1:
            raise ConfigError('layer widths must be positive')
        return self


class Parameter(Tensor):

    def __init__(self, name, data):
        super(Parameter, self).__init__(data, requires_grad=True, dtype=np.asarray(data).dtype)
        self.name = name

    def __repr__(self):
        return 'Parameter(%s, shape=%s)' % (self.name, self.shape)


class ModelParams(object):
    """Ordered named parameters plus batch-norm running statistics."""

    def __init__(self, config):
        self.config = config
        self._params = OrderedDict()
        self.buffers = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise ConfigError('duplicate parameter name %s' % name)
        self._params[name] = Parameter(name, data)
        return self._params[name]

    def add_buffer(self, name, stats):
        if name in self.buffers:
            raise ConfigError('duplicate buffer name %s' % name)
        self.buffers[name] = stats

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def named_parameters(self):
        return list(self._params.items())

    @property
    def dtype(self):
        return next(iter(self._params.values())).dtype

    def state_arrays(self):
        """name -> array for every parameter and running statistic, in a fixed order."""
        arrays = OrderedDict((name, p.data) for name, p in self._params.items())
        for name, stats in self.buffers.items():
            arrays[name + '.running_mean'] = stats.mean
            arrays[name + '.running_var'] = stats.var
        return arrays

    def assign(self, arrays):
        for name, p in self._params.items():
            p.data = np.array(arrays[name], dtype=p.dtype)
        for name, stats in self.buffers.items():
            stats.mean = np.array(arrays[name + '.running_mean'], dtype=stats.mean.dtype)
            stats.var = np.array(arrays[name + '.running_var'], dtype=stats.var.dtype)

    def with_buffers(self, buffers):
        """Same Parameter objects, different running statistics."""
        view = ModelParams(self.config)
        view._params = self._params
        view.buffers = OrderedDict(buffers)
        return view

    def copy(self, dtype=None):
        other = ModelParams(self.config)
        for name, p in self._params.items():
            other.add(name, np.array(p.data, dtype=dtype or p.dtype))
        for name, stats in self.buffers.items():
            twin = RunningStats(len(stats.mean), dtype=dtype or stats.mean.dtype)
            twin.mean[...] = stats.mean
            twin.var[...] = stats.var
            other.add_buffer(name, twin)
        return other


def _bn_names(config):
    names = ['multiscale.reduce_bn']
    if config.use_compression:
        c_in = config.stem_channels
        for i, c_out in enumerate(config.block_channels):
            prefix = 'compression.block%d.' % (i + 1)
            names += [prefix + 'bn1', prefix + 'bn2']
            if c_in != c_out:
                names.append(prefix + 'proj_bn')
            c_in = c_out
    names += ['classifier.bn1', 'classifier.bn2']
    return names


def parameter_shapes(config):
    """OrderedDict name -> shape of every trainable tensor for ``config``."""
    config.validate()
    shapes = OrderedDict()

    def conv(name, c_out, c_in, k):
        shapes[name + '.weight'] = (c_out, c_in, k)
        shapes[name + '.bias'] = (c_out,)

    def dense(name, d_out, d_in):
        shapes[name + '.weight'] = (d_out, d_in)
        shapes[name + '.bias'] = (d_out,)

    def norm(name, c):
        shapes[name + '.gain'] = (c,)
        shapes[name + '.shift'] = (c,)

    def se(name, c):
        dense(name + '.fc1', c // config.se_reduction, c)
        dense(name + '.fc2', c, c // config.se_reduction)

    def lstm(name, d_in, hidden):
        for direction in ('fwd', 'bwd'):
            shapes['%s.%s.w_ih' % (name, direction)] = (4 * hidden, d_in)
            shapes['%s.%s.w_hh' % (name, direction)] = (4 * hidden, hidden)
            shapes['%s.%s.bias' % (name, direction)] = (4 * hidden,)

    c0 = config.stem_channels
    for k in config.branch_kernels:
        conv('multiscale.branch%d.dw' % k, 1, 1, k)
        conv('multiscale.branch%d.pw' % k, config.branch_width, 1, 1)
    conv('multiscale.reduce', c0, c0, config.reduction_kernel)
    norm('multiscale.reduce_bn', c0)
    se('multiscale.se', c0)

    if config.use_compression:
        c_in = c0
        for i, c_out in enumerate(config.block_channels):
            prefix = 'compression.block%d.' % (i + 1)
            conv(prefix + 'conv1', c_out, c_in, config.block_kernel)
            norm(prefix + 'bn1', c_out)
            conv(prefix + 'conv2', c_out, c_out, config.block_kernel)
            norm(prefix + 'bn2', c_out)
            if c_in != c_out:
                conv(prefix + 'proj', c_out, c_in, 1)
                norm(prefix + 'proj_bn', c_out)
            se(prefix + 'se', c_out)
            c_in = c_out

    if config.use_sequence:
        lstm('intra', config.feature_channels, config.h1)
        lstm('inter', 2 * config.h1, config.h2)
        shapes['attention.w_q'] = (2 * config.h2, config.d_att)
        shapes['attention.v'] = (config.d_att,)

    d = config.classifier_input
    h_a, h_b = config.mlp_hidden
    norm('classifier.norm', d)
    dense('classifier.fc1', h_a, d)
    norm('classifier.bn1', h_a)
    dense('classifier.fc2', h_b, h_a)
    norm('classifier.bn2', h_b)
    dense('classifier.out', config.n_classes, h_b)
    return shapes


def _fan_in(name, shape):
    if name.endswith('.w_ih') or name.endswith('.w_hh') or '.fwd.' in name or '.bwd.' in name:
        return None
    if name == 'attention.w_q':
        return shape[0]
    if len(shape) == 3:
        return shape[1] * shape[2]
    if len(shape) == 2:
        return shape[1]
    return shape[0]


def init_params(config, rng, dtype=np.float32):
    """Fan-in uniform weights, unit gains, zero shifts; LSTM forget-gate bias starts at +1."""
    shapes = parameter_shapes(config)
    params = ModelParams(config)
    last_weight_fan = {}
    for name, shape in shapes.items():
        module = name.rsplit('.', 1)[0]
        if name.endswith('.gain'):
            data = np.ones(shape)
        elif name.endswith('.shift'):
            data = np.zeros(shape)
        elif module.startswith(('intra.', 'inter.')):
            hidden = shape[0] // 4
            bound = 1.0 / np.sqrt(hidden)
            data = rng.uniform(-bound, bound, size=shape)
            if name.endswith('.bias'):
                data[hidden:2 * hidden] += 1.0
        elif name.endswith('.bias'):
            bound = 1.0 / np.sqrt(last_weight_fan[module])
            data = rng.uniform(-bound, bound, size=shape)
        else:
            fan = _fan_in(name, shape)
            last_weight_fan[module] = fan
            bound = 1.0 / np.sqrt(fan)
            data = rng.uniform(-bound, bound, size=shape)
        params.add(name, np.asarray(data, dtype=dtype))
    for name in _bn_names(config):
        params.add_buffer(name, RunningStats(shapes[name + '.gain'][0], dtype=dtype))
    return params


def count_parameters(params, stage=None):
    """Scalar trainables whose name starts with ``stage`` (all of them when None)."""
    if stage is None:
        return sum(p.size for p in params)
    prefix = stage if stage.endswith('.') else stage + '.'
    return sum(p.size for name, p in params.named_parameters() if name.startswith(prefix))


def closed_form_parameter_count(config):
    """Per-stage trainable counts from layer arithmetic alone."""
    config.validate()
    r = config.se_reduction

    def se(c):
        return 2 * c * (c // r) + c // r + c

    def bilstm(d_in, h):
        return 2 * (4 * h * d_in + 4 * h * h + 4 * h)

    c0 = config.stem_channels
    counts = OrderedDict()
    # depthwise k + pointwise Cout weights, one bias per conv output
    counts['multiscale'] = (sum(k + 1 + 2 * config.branch_width for k in config.branch_kernels)
                            + c0 * c0 * config.reduction_kernel + c0 + 2 * c0 + se(c0))
    total = 0
    if config.use_compression:
        c_in, k = c0, config.block_kernel
        for c_out in config.block_channels:
            total += c_out * c_in * k + c_out + 2 * c_out
            total += c_out * c_out * k + c_out + 2 * c_out
            if c_in != c_out:
                total += c_out * c_in + c_out + 2 * c_out
            total += se(c_out)
            c_in = c_out
    counts['compression'] = total
    if config.use_sequence:
        counts['intra'] = bilstm(config.feature_channels, config.h1)
        counts['inter'] = bilstm(2 * config.h1, config.h2)
        counts['attention'] = 2 * config.h2 * config.d_att + config.d_att
    else:
        counts['intra'] = counts['inter'] = counts['attention'] = 0
    d = config.classifier_input
    h_a, h_b = config.mlp_hidden
    counts['classifier'] = (2 * d + d * h_a + h_a + 2 * h_a + h_a * h_b + h_b + 2 * h_b
                            + h_b * config.n_classes + config.n_classes)
    return counts


def receptive_field_increments(config):
    """[(k-1)d + (k-1)d] * prod(s_j, j < i) for every block, with s_0 the reduction stride."""
    k = config.block_kernel
    stride_product = config.reduction_stride
    increments = []
    for d, s in zip(config.block_dilations, config.block_strides):
        increments.append(2 * (k - 1) * d * stride_product)
        stride_product *= s
    return increments


def receptive_field(config):
    """Receptive field in input samples after the stem and after each block.

    RF_0 = largest branch kernel + (reduction kernel - 1).
    """
    rf = [max(config.branch_kernels) + config.reduction_kernel - 1]
    for inc in receptive_field_increments(config):
        rf.append(rf[-1] + inc)
    return rf
