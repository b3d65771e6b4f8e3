# -*- coding: utf-8 -*-
"""Forward pass of the context-aware sleep stager.

[B,3,L] -> multi-scale stem -> dilated residual compression -> intra-window
BiLSTM -> inter-window BiLSTM -> additive attention -> MLP logits [B,5]
"""
import numpy as np

from ..errors import ConfigError, DimensionError
from ..tensor import Tensor
from ..tensor import functional as F
from ..tensor.gradcheck import grad_check, projected
from .params import ModelConfig, init_params


def _expect(t, shape, stage):
    if tuple(t.shape) != tuple(shape):
        raise DimensionError('%s: expected shape %s, got %s' % (stage, tuple(shape), tuple(t.shape)))
    return t


def _conv(x, params, name, **kwargs):
    return F.conv1d(x, params[name + '.weight'], params[name + '.bias'], **kwargs)


def _dense(x, params, name):
    return F.linear(x, params[name + '.weight'], params[name + '.bias'])


def _bn(x, params, name, training):
    return F.normalize(x, 'batch', params[name + '.gain'], params[name + '.shift'],
                       running_stats=params.buffers[name], training=training)


def se_recalibrate(u, w1, w2, b1=None, b2=None, reduction=None):
    """Squeeze-and-excitation: u * sigmoid(W2 gelu(W1 gap(u))) per channel.

    :param reduction: when given, C must be >= reduction and divisible by it
    """
    B, C, _ = u.shape
    if reduction is not None and (C < reduction or C % reduction):
        raise ConfigError('SE reduction %d does not fit %d channels' % (reduction, C))
    squeeze = F.global_avg_pool(u)
    gate = F.sigmoid(F.linear(F.gelu(F.linear(squeeze, w1, b1)), w2, b2))
    return F.mul(u, F.reshape(gate, (B, C, 1)))


def _se(u, params, name, config):
    return se_recalibrate(u, params[name + '.fc1.weight'], params[name + '.fc2.weight'],
                          params[name + '.fc1.bias'], params[name + '.fc2.bias'],
                          reduction=config.se_reduction)


def multi_scale_extract(x, params, training=False):
    """[N,1,L] -> [N,C0,L/s0]: parallel separable branches, GELU, strided reduction conv, BN, SE."""
    config = params.config
    if x.ndim != 3 or x.shape[1:] != (1, config.chunk_len):
        raise DimensionError('multi_scale_extract expects [N,1,%d], got %s' % (config.chunk_len, x.shape))
    branches = []
    for k in config.branch_kernels:
        name = 'multiscale.branch%d' % k
        branches.append(F.depthwise_separable_conv1d(
            x, params[name + '.dw.weight'], params[name + '.pw.weight'],
            params[name + '.dw.bias'], params[name + '.pw.bias'], padding=F.same_padding(k)))
    f = F.gelu(F.concat(branches, axis=1))
    f = _conv(f, params, 'multiscale.reduce', stride=config.reduction_stride,
              padding=F.same_padding(config.reduction_kernel))
    f = _bn(f, params, 'multiscale.reduce_bn', training)
    return _se(f, params, 'multiscale.se', config)


def residual_compress_block(x, params, index, training=False):
    """One dilated residual unit, then max-pool by the block stride and SE.

    :param index: 1-based block number; dilation, stride and width come from the config
    """
    config = params.config
    d = config.block_dilations[index - 1]
    s = config.block_strides[index - 1]
    c_out = config.block_channels[index - 1]
    prefix = 'compression.block%d.' % index
    if x.shape[2] < s:
        raise DimensionError('%s: %d timesteps cannot be pooled by %d' % (prefix[:-1], x.shape[2], s))
    pad = F.same_padding(config.block_kernel, d)
    z = F.gelu(_bn(_conv(x, params, prefix + 'conv1', dilation=d, padding=pad), params, prefix + 'bn1', training))
    z = _bn(_conv(z, params, prefix + 'conv2', dilation=d, padding=pad), params, prefix + 'bn2', training)
    if x.shape[1] == c_out:
        shortcut = x
    else:
        shortcut = _bn(_conv(x, params, prefix + 'proj'), params, prefix + 'proj_bn', training)
    y = F.gelu(F.add(z, shortcut))
    y = F.max_pool1d(y, s, s)
    return _se(y, params, prefix + 'se', config)


def temporal_compression(x, params, training=False):
    for i in range(1, len(params.config.block_channels) + 1):
        x = residual_compress_block(x, params, i, training)
    return x


def _lstm_params(params, name):
    return ((params[name + '.fwd.w_ih'], params[name + '.fwd.w_hh'], params[name + '.fwd.bias']),
            (params[name + '.bwd.w_ih'], params[name + '.bwd.w_hh'], params[name + '.bwd.bias']))


def intra_window_encode(z, params):
    """[N,C,T] -> [N,2*H1]: forward state at the last step joined with backward state at the first."""
    h = params.config.h1
    seq = F.transpose(z, (0, 2, 1))
    fwd, bwd = _lstm_params(params, 'intra')
    out = F.bilstm_layer(seq, fwd, bwd, h)
    return F.concat([out[:, -1, :h], out[:, 0, h:]], axis=1)


def inter_window_encode(h, params):
    """[B,W,2*H1] -> [B,W,2*H2] over the (past, center, future) sequence."""
    fwd, bwd = _lstm_params(params, 'inter')
    return F.bilstm_layer(h, fwd, bwd, params.config.h2)


def attention_pool(u, w_q, v):
    """Additive attention over windows.

    :return: (pooled [B,D], weights [B,W]) with e_t = v . tanh(u_t W_q)
    """
    B, W, D = u.shape
    if w_q.shape[0] != D or v.shape != (w_q.shape[1],):
        raise DimensionError('attention weights %s/%s do not fit features %d' % (w_q.shape, v.shape, D))
    scores = F.matmul(F.tanh(F.matmul(u, w_q)), F.reshape(v, (w_q.shape[1], 1)))
    alpha = F.softmax(F.reshape(scores, (B, W)), axis=1)
    pooled = F.reduce_sum(F.mul(u, F.reshape(alpha, (B, W, 1))), axis=1)
    return pooled, alpha


def mlp_classify(s, params, training=False, rng=None):
    config = params.config
    x = F.normalize(s, 'layer', params['classifier.norm.gain'], params['classifier.norm.shift'])
    x = F.dropout(x, config.pool_dropout, training, rng)
    for i in (1, 2):
        x = _dense(x, params, 'classifier.fc%d' % i)
        x = F.gelu(_bn(x, params, 'classifier.bn%d' % i, training))
        x = F.dropout(x, config.mlp_dropout, training, rng)
    return _dense(x, params, 'classifier.out')


def model_forward(batch, params, training=False, rng=None):
    """Logits for a batch of context windows.

    :param batch: [B,3,L] array or Tensor
    :param rng: numpy Generator for dropout, needed when training with dropout > 0
    :return: (logits Tensor [B,n_classes], attention Tensor [B,3] or None without sequence modeling)
    """
    config = params.config
    if training and rng is None and (config.pool_dropout > 0 or config.mlp_dropout > 0):
        raise ConfigError('training forward with dropout needs an rng')
    if not isinstance(batch, Tensor):
        batch = Tensor(np.asarray(batch, dtype=params.dtype))
    if batch.ndim != 3 or batch.shape[1:] != (config.context, config.chunk_len):
        raise DimensionError('model expects [B,%d,%d], got %s' % (config.context, config.chunk_len, batch.shape))
    B, W, L = batch.shape
    N = B * W

    t = L // config.reduction_stride
    x = multi_scale_extract(F.reshape(batch, (N, 1, L)), params, training)
    _expect(x, (N, config.stem_channels, t), 'multi_scale_extract')
    if config.use_compression:
        for i, (s, c) in enumerate(zip(config.block_strides, config.block_channels)):
            x = residual_compress_block(x, params, i + 1, training)
            t //= s
            _expect(x, (N, c, t), 'compression block %d' % (i + 1))

    if config.use_sequence:
        h = _expect(intra_window_encode(x, params), (N, 2 * config.h1), 'intra_window_encode')
        u = inter_window_encode(F.reshape(h, (B, W, 2 * config.h1)), params)
        _expect(u, (B, W, 2 * config.h2), 'inter_window_encode')
        pooled, alpha = attention_pool(u, params['attention.w_q'], params['attention.v'])
        _expect(pooled, (B, 2 * config.h2), 'attention_pool')
    else:
        pooled = F.reshape(F.global_avg_pool(x), (B, W * config.feature_channels))
        alpha = None

    logits = _expect(mlp_classify(pooled, params, training, rng), (B, config.n_classes), 'mlp_classify')
    return logits, alpha


def model_gradient_check(seed, config=None, batch_size=2, max_coords=4, eps=1e-5):
    """Finite-difference check of the whole eval-mode model on a miniature config.

    Every parameter tensor is perturbed at ``max_coords`` random coordinates.
    :return: max relative error
    """
    config = config or ModelConfig.miniature()
    rng = np.random.default_rng(seed)
    params = init_params(config, rng, dtype=np.float64)
    batch = Tensor(rng.standard_normal((batch_size, config.context, config.chunk_len)))
    weights = rng.standard_normal((batch_size, config.n_classes))

    def loss(*_):
        return projected(model_forward(batch, params, training=False)[0], weights)
    return grad_check(loss, list(params), eps=eps, max_coords=max_coords, rng=rng)
