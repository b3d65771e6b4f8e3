# -*- coding: utf-8 -*-
"""Central finite-difference checks of the analytic gradients."""
from collections import OrderedDict

import numpy as np

from . import functional as F
from .tensor import Tensor, backward, no_grad, reset_graph


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _as_leaf(point):
    if isinstance(point, Tensor):
        point.data = np.ascontiguousarray(point.data, dtype=np.float64)
        point.requires_grad = True
        point.grad = None
        return point
    return Tensor(np.array(point, dtype=np.float64), requires_grad=True)


def grad_check(f, point, eps=1e-5, max_coords=None, rng=None):
    """Compare backward() against (f(x+eps) - f(x-eps)) / 2eps coordinate-wise.

    :param f: callable taking the tensors of ``point`` and returning a scalar Tensor
    :param point: array, Tensor, or list of them; Tensors are perturbed in place
        and restored, so parameters captured by ``f`` can be checked too
    :param max_coords: check only a random subset of this many coordinates per tensor
    :return: max relative error, denominator max(|a|, |n|, 1e-8)
    """
    points = list(point) if isinstance(point, (list, tuple)) else [point]
    tensors = [_as_leaf(p) for p in points]
    rng = np.random.default_rng(0) if rng is None else rng

    reset_graph()
    loss = f(*tensors)
    grads = backward(loss, leaves=tensors, accumulate=False)

    worst = 0.0
    for t in tensors:
        analytic = grads[t].reshape(-1)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = float(f(*tensors).data)
                flat[i] = orig - eps
                f_minus = float(f(*tensors).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, relative_error(float(analytic[i]), numeric))
    return worst


def projected(out, weights):
    """sum(out * weights): a scalar whose gradient exercises every output element."""
    return F.reduce_sum(F.mul(out, Tensor(weights)))


def _oracle_cases(rng):
    def R(*shape):
        return rng.standard_normal(shape)

    def lstm_params(d_in, hidden):
        return [R(4 * hidden, d_in), R(4 * hidden, hidden), R(4 * hidden)]

    cases = OrderedDict()

    r = R(2, 4, 12)
    cases['conv1d'] = (lambda x, w, b, r=r: projected(F.conv1d(x, w, b, dilation=2), r),
                       [R(2, 3, 16), R(4, 3, 3), R(4)])
    r = R(2, 6, 10)
    cases['conv1d_grouped'] = (lambda x, w, r=r: projected(F.conv1d(x, w, padding=2, groups=3, stride=2), r),
                               [R(2, 3, 20), R(6, 1, 5)])
    r = R(2, 5, 12)
    cases['depthwise_separable_conv1d'] = (
        lambda x, dw, pw, db, pb, r=r: projected(F.depthwise_separable_conv1d(x, dw, pw, db, pb, padding=1), r),
        [R(2, 3, 12), R(3, 1, 3), R(5, 3, 1), R(3), R(5)])
    r = R(2, 2, 5)
    cases['max_pool1d'] = (lambda x, r=r: projected(F.max_pool1d(x, 2, 2), r), [R(2, 2, 10)])
    r = R(4, 3, 8)
    cases['batch_norm'] = (
        lambda x, g, s, r=r: projected(F.normalize(x, 'batch', g, s, F.RunningStats(3, np.float64), training=True), r),
        [R(4, 3, 8), 1.0 + 0.1 * R(3), R(3)])
    r = R(4, 3, 8)
    cases['layer_norm'] = (lambda x, g, s, r=r: projected(F.normalize(x, 'layer', g, s), r),
                           [R(4, 3, 8), 1.0 + 0.1 * R(8), R(8)])
    for kind in ('gelu', 'sigmoid', 'tanh'):
        r = R(12)
        cases[kind] = (lambda x, kind=kind, r=r: projected(F.activations(x, kind), r), [R(12)])
    r = R(3, 5)
    cases['softmax'] = (lambda x, r=r: projected(F.softmax(x, axis=1), r), [R(3, 5)])
    r = R(3, 5)
    cases['log_softmax'] = (lambda x, r=r: projected(F.log_softmax(x, axis=1), r), [R(3, 5)])
    r = R(3, 2, 5)
    cases['linear'] = (lambda x, w, b, r=r: projected(F.linear(x, w, b), r), [R(3, 2, 4), R(5, 4), R(5)])
    r = R(1, 3, 4)
    cases['bilstm'] = (
        lambda x, a, b, c, d, e, f, r=r: projected(F.bilstm_layer(x, (a, b, c), (d, e, f), 2), r),
        [R(1, 3, 2)] + lstm_params(2, 2) + lstm_params(2, 2))
    r = R(2, 3)
    cases['global_avg_pool'] = (lambda x, r=r: projected(F.global_avg_pool(x), r), [R(2, 3, 7)])
    r = R(1, 3, 4)
    cases['conv1d_bilstm'] = (
        lambda x, w, a, b, c, d, e, f, r=r: projected(
            F.bilstm_layer(F.transpose(F.conv1d(x, w, stride=2), (0, 2, 1)), (a, b, c), (d, e, f), 2), r),
        [R(1, 1, 7), R(2, 1, 3)] + lstm_params(2, 2) + lstm_params(2, 2))
    return cases


def run_oracle_suite(seed, eps=1e-5):
    """Gradient-check every differentiable op on random double-precision inputs.

    :return: OrderedDict op name -> max relative error
    """
    rng = np.random.default_rng(seed)
    errors = OrderedDict()
    for name, (f, point) in _oracle_cases(rng).items():
        errors[name] = grad_check(f, point, eps=eps)
    return errors
