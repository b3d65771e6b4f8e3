# -*- coding: utf-8 -*-
"""Differentiable ops on :class:`Tensor`.

Each op computes its forward value with numpy and registers a closure that maps
the output gradient to one gradient per input.
"""
import threading

import numpy as np
from scipy import special

from ..errors import ConfigError, DimensionError, DegenerateStatsError
from .tensor import Tensor, as_tensor, make_result

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

BN_MOMENTUM = 0.1
NORM_EPS = 1e-5

_stats_lock = threading.Lock()


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# elementwise arithmetic

def add(a, b):
    a, b = _pair(a, b)

    def _backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return make_result(a.data + b.data, (a, b), 'add', _backward)


def sub(a, b):
    a, b = _pair(a, b)

    def _backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return make_result(a.data - b.data, (a, b), 'sub', _backward)


def mul(a, b):
    a, b = _pair(a, b)

    def _backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return make_result(a.data * b.data, (a, b), 'mul', _backward)


def div(a, b):
    a, b = _pair(a, b)

    def _backward(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None)
    return make_result(a.data / b.data, (a, b), 'div', _backward)


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError('matmul needs operands with at least 2 dims, got %s and %s' % (a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul inner dims differ: %s @ %s' % (a.shape, b.shape))

    def _backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return make_result(np.matmul(a.data, b.data), (a, b), 'matmul', _backward)


def exp(x):
    out = np.exp(x.data)
    return make_result(out, (x,), 'exp', lambda g: (g * out,))


def log(x):
    return make_result(np.log(x.data), (x,), 'log', lambda g: (g / x.data,))


# shape ops

def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, index):
    out = np.array(x.data[index])
    basic = _is_basic_index(index)

    def _backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] += g
        else:
            np.add.at(gx, index, g)
        return (gx,)
    return make_result(out, (x,), 'getitem', _backward)


def reshape(x, shape):
    out = x.data.reshape(shape)
    return make_result(out, (x,), 'reshape', lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), 'transpose',
                       lambda g: (np.transpose(g, inverse),))


def reduce_sum(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.ascontiguousarray(np.broadcast_to(g, x.shape)),)
    return make_result(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), 'sum', _backward)


def reduce_mean(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(reduce_sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return make_result(out, tuple(tensors), 'concat', _backward)


def stack(tensors, axis=0):
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return make_result(out, tuple(tensors), 'stack', _backward)


# activations

def gelu(x):
    cdf = 0.5 * (1.0 + special.erf(x.data / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    out = x.data * cdf
    return make_result(out.astype(x.dtype, copy=False), (x,), 'gelu',
                       lambda g: (g * (cdf + x.data * pdf),))


def sigmoid(x):
    out = special.expit(x.data)
    return make_result(out, (x,), 'sigmoid', lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return make_result(out, (x,), 'tanh', lambda g: (g * (1.0 - out * out),))


def softmax(x, axis=None):
    if axis is None:
        raise ConfigError('softmax needs an explicit axis')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return make_result(out, (x,), 'softmax', _backward)


def log_softmax(x, axis=None):
    if axis is None:
        raise ConfigError('log_softmax needs an explicit axis')
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)
    return make_result(out, (x,), 'log_softmax', _backward)


_ACTIVATIONS = {
    'gelu': gelu,
    'sigmoid': sigmoid,
    'tanh': tanh,
}


def activations(x, kind, axis=None):
    if kind == 'softmax':
        return softmax(x, axis=axis)
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigError('unknown activation %r' % kind)


# layers

def _window_index(t_out, k, stride, dilation):
    return np.arange(t_out)[:, None] * stride + np.arange(k)[None, :] * dilation


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0, groups=1):
    """Grouped 1-D cross-correlation on [B, Cin, T] inputs.

    :param weight: [Cout, Cin/groups, k]
    :return: Tensor [B, Cout, T'] with T' = (T + 2p - d(k-1) - 1) // stride + 1
    """
    if stride <= 0 or dilation <= 0 or groups <= 0 or padding < 0:
        raise ConfigError('conv1d: stride=%s dilation=%s groups=%s padding=%s' % (stride, dilation, groups, padding))
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError('conv1d expects [B,C,T] input and [Cout,Cin/g,k] weight, got %s and %s' % (x.shape, weight.shape))
    B, Cin, T = x.shape
    Cout, cg, k = weight.shape
    if Cin % groups or Cout % groups or cg * groups != Cin:
        raise DimensionError('conv1d: %d input channels do not fit weight %s with groups=%d' % (Cin, weight.shape, groups))
    if bias is not None and bias.shape != (Cout,):
        raise DimensionError('conv1d bias shape %s, expected (%d,)' % (bias.shape, Cout))
    span = dilation * (k - 1) + 1
    if T + 2 * padding < span:
        raise DimensionError('conv1d: length %d (+2*%d padding) shorter than kernel span %d' % (T, padding, span))

    t_out = (T + 2 * padding - span) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    idx = _window_index(t_out, k, stride, dilation)
    cols = xp[:, :, idx]
    w = weight.data

    if groups == 1:
        cols2 = cols.transpose(0, 2, 1, 3).reshape(B * t_out, Cin * k)
        w2 = w.reshape(Cout, Cin * k)
        out = (cols2 @ w2.T).reshape(B, t_out, Cout).transpose(0, 2, 1)
    else:
        og = Cout // groups
        cols_g = cols.reshape(B, groups, cg, t_out, k)
        w_g = w.reshape(groups, og, cg, k)
        out = np.einsum('bgctk,gock->bgot', cols_g, w_g).reshape(B, Cout, t_out)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def _backward(g):
        gx = gw = gb = None
        if groups == 1:
            g2 = g.transpose(0, 2, 1).reshape(B * t_out, Cout)
            if weight.requires_grad:
                gw = (g2.T @ cols2).reshape(w.shape)
            if x.requires_grad:
                gcols = (g2 @ w2).reshape(B, t_out, Cin, k).transpose(0, 2, 1, 3)
        else:
            g_g = g.reshape(B, groups, og, t_out)
            if weight.requires_grad:
                gw = np.einsum('bgot,bgctk->gock', g_g, cols_g).reshape(w.shape)
            if x.requires_grad:
                gcols = np.einsum('bgot,gock->bgctk', g_g, w_g).reshape(B, Cin, t_out, k)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            stop_offset = stride * (t_out - 1) + 1
            for m in range(k):
                start = m * dilation
                gxp[:, :, start:start + stop_offset:stride] += gcols[:, :, :, m]
            gx = gxp[:, :, padding:padding + T] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, 'conv1d', _backward)


def same_padding(k, dilation=1):
    if k % 2 == 0:
        raise ConfigError('same padding needs an odd kernel, got k=%d' % k)
    return dilation * (k - 1) // 2


def depthwise_separable_conv1d(x, dw_weight, pw_weight, dw_bias=None, pw_bias=None,
                               stride=1, dilation=1, padding=0):
    """Per-channel conv (groups=Cin) followed by a 1x1 channel mixer."""
    depthwise = conv1d(x, dw_weight, dw_bias, stride=stride, dilation=dilation,
                       padding=padding, groups=x.shape[1])
    return conv1d(depthwise, pw_weight, pw_bias)


def max_pool1d(x, k, stride=None):
    stride = k if stride is None else stride
    if k <= 0 or stride <= 0:
        raise ConfigError('max_pool1d: k=%s stride=%s' % (k, stride))
    B, C, T = x.shape
    if T < k:
        raise DimensionError('max_pool1d: window %d longer than sequence %d' % (k, T))
    t_out = (T - k) // stride + 1
    idx = _window_index(t_out, k, stride, 1)
    windows = x.data[:, :, idx]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def _backward(g):
        gx = np.zeros((B * C, T), dtype=x.dtype)
        pos = (arg + np.arange(t_out) * stride).reshape(B * C, t_out)
        rows = np.arange(B * C)[:, None]
        np.add.at(gx, (rows, pos), g.reshape(B * C, t_out))
        return (gx.reshape(B, C, T),)
    return make_result(out, (x,), 'max_pool1d', _backward)


def global_avg_pool(x):
    if x.ndim != 3 or x.shape[2] < 1:
        raise DimensionError('global_avg_pool expects [B,C,T>=1], got %s' % (x.shape,))
    return reduce_mean(x, axis=2)


class RunningStats(object):
    """Batch-norm running mean/variance, updated in place during training."""

    def __init__(self, n_channels, dtype=np.float32):
        self.mean = np.zeros(n_channels, dtype=dtype)
        self.var = np.ones(n_channels, dtype=dtype)

    def update(self, mean, var_unbiased, momentum=BN_MOMENTUM):
        with _stats_lock:
            self.mean[...] = (1.0 - momentum) * self.mean + momentum * mean
            self.var[...] = (1.0 - momentum) * self.var + momentum * var_unbiased

    def copy(self):
        other = RunningStats(len(self.mean), dtype=self.mean.dtype)
        other.mean[...] = self.mean
        other.var[...] = self.var
        return other


def normalize(x, mode, gain, shift, running_stats=None, training=False,
              momentum=BN_MOMENTUM, eps=NORM_EPS):
    """Batch norm (per channel over batch and time) or layer norm (per sample over features).

    :param mode: 'batch' or 'layer'
    :param running_stats: RunningStats, required for batch mode
    """
    if mode == 'batch':
        if x.ndim not in (2, 3):
            raise DimensionError('batch norm expects [B,C] or [B,C,T], got %s' % (x.shape,))
        stat_axes = (0,) if x.ndim == 2 else (0, 2)
        param_shape = (1, x.shape[1]) + ((1,) if x.ndim == 3 else ())
        param_axes = stat_axes
    elif mode == 'layer':
        stat_axes = (x.ndim - 1,)
        param_shape = (x.shape[-1],)
        param_axes = tuple(range(x.ndim - 1))
    else:
        raise ConfigError('unknown normalization mode %r' % mode)

    gain_b = gain.data.reshape(param_shape)
    n = int(np.prod([x.shape[a] for a in stat_axes]))
    use_batch_stats = mode == 'layer' or training

    if use_batch_stats:
        if mode == 'batch' and n <= 1:
            raise DegenerateStatsError('batch norm over a single value per channel (shape %s)' % (x.shape,))
        mu = x.data.mean(axis=stat_axes, keepdims=True)
        var = x.data.var(axis=stat_axes, keepdims=True)
        if mode == 'batch':
            if running_stats is None:
                raise ConfigError('batch norm needs running stats')
            running_stats.update(mu.reshape(-1), var.reshape(-1) * n / (n - 1.0), momentum)
    else:
        if running_stats is None:
            raise ConfigError('batch norm in eval mode needs running stats')
        mu = running_stats.mean.reshape(param_shape)
        var = running_stats.var.reshape(param_shape)

    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = (x.data - mu) * inv
    out = gain_b * xhat + shift.data.reshape(param_shape)

    def _backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gain_b
            if use_batch_stats:
                gx = inv / n * (n * gxhat
                                - gxhat.sum(axis=stat_axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=stat_axes, keepdims=True))
            else:
                gx = gxhat * inv
        ggain = (g * xhat).sum(axis=param_axes).reshape(gain.shape) if gain.requires_grad else None
        gshift = g.sum(axis=param_axes).reshape(shift.shape) if shift.requires_grad else None
        return gx, ggain, gshift
    return make_result(out.astype(x.dtype, copy=False), (x, gain, shift), mode + '_norm', _backward)


def linear(x, weight, bias=None):
    """y = x W^T + b over the trailing dimension."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError('linear: input features %d, weight expects %d' % (x.shape[-1], d_in))
    x2 = x.data.reshape(-1, d_in)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (d_out,))

    def _backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, 'linear', _backward)


def _lstm_direction(x, w_ih, w_hh, b, hidden, reverse):
    B, T, _ = x.shape
    projected = linear(x, w_ih, b)
    h = Tensor(np.zeros((B, hidden), dtype=x.dtype))
    c = Tensor(np.zeros((B, hidden), dtype=x.dtype))
    outputs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = add(projected[:, t, :], linear(h, w_hh))
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden:2 * hidden])
        cand = tanh(z[:, 2 * hidden:3 * hidden])
        o = sigmoid(z[:, 3 * hidden:])
        c = add(mul(f, c), mul(i, cand))
        h = mul(o, tanh(c))
        outputs[t] = h
    return stack(outputs, axis=1)


def bilstm_layer(x, params_fwd, params_bwd, hidden):
    """Bidirectional LSTM over [B, T, Din] with zero initial states.

    :param params_fwd: (w_ih [4H,Din], w_hh [4H,H], bias [4H]); gate order i, f, g, o
    :return: Tensor [B, T, 2H], forward outputs first
    """
    if x.ndim != 3:
        raise DimensionError('bilstm expects [B,T,D], got %s' % (x.shape,))
    if x.shape[1] == 0:
        raise DimensionError('bilstm over an empty sequence')
    for w_ih, w_hh, b in (params_fwd, params_bwd):
        if w_ih.shape != (4 * hidden, x.shape[2]) or w_hh.shape != (4 * hidden, hidden) or b.shape != (4 * hidden,):
            raise DimensionError('bilstm weights %s/%s/%s do not fit Din=%d H=%d'
                                 % (w_ih.shape, w_hh.shape, b.shape, x.shape[2], hidden))
    forward = _lstm_direction(x, params_fwd[0], params_fwd[1], params_fwd[2], hidden, reverse=False)
    backward = _lstm_direction(x, params_bwd[0], params_bwd[1], params_bwd[2], hidden, reverse=True)
    return concat([forward, backward], axis=2)


def dropout(x, p, training, rng):
    """Inverted dropout; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError('dropout probability must be in [0, 1), got %s' % p)
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return mul(x, Tensor(keep, dtype=x.dtype))


dropout_mask = dropout
