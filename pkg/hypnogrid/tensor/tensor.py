# -*- coding: utf-8 -*-
"""Dense numpy tensors with a tape-based reverse-mode autodiff.

Every op that involves a tensor with ``requires_grad`` appends a node to the
graph of the calling thread. :func:`backward` walks that tape in reverse
insertion order and clears it afterwards, so one graph belongs to one thread
and concurrent shards never share state.
"""
import threading

import numpy as np

from ..errors import ConfigError

_state = threading.local()


class Node(object):
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Graph(object):

    def __init__(self):
        self.nodes = []

    def record(self, op, inputs, output, backward):
        node = Node(op, inputs, output, backward)
        self.nodes.append(node)
        return node

    def clear(self):
        for node in self.nodes:
            node.output._node = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


def current_graph():
    graph = getattr(_state, 'graph', None)
    if graph is None:
        graph = _state.graph = Graph()
    return graph


def reset_graph():
    current_graph().clear()


def is_grad_enabled():
    return getattr(_state, 'enabled', True)


class no_grad(object):
    """Context manager that stops recording ops on the current thread."""

    def __enter__(self):
        self._prev = is_grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Tensor(object):

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != 'f':
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        return 'Tensor(shape=%s, dtype=%s, requires_grad=%s)' % (
            self.shape, self.dtype, self.requires_grad)

    # operators forward to functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def make_result(data, parents, op, backward_fn):
    """Wrap ``data`` and record ``backward_fn`` if any parent needs a gradient.

    ``backward_fn(g)`` returns one gradient (or None) per parent.
    """
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out._node = current_graph().record(op, parents, out, backward_fn)
    return out


def backward(loss, leaves=(), accumulate=True):
    """Back-propagate a scalar loss through the current thread's graph.

    :param loss: scalar Tensor produced by recorded ops
    :param leaves: extra leaves (e.g. all model parameters) that get a zero
        gradient when the loss does not depend on them
    :param accumulate: add into ``leaf.grad``; when False the leaves are left
        untouched and only the returned map carries the gradients
    :return: dict mapping every requires_grad leaf to its gradient array
    """
    if loss.data.size != 1:
        raise ConfigError('backward needs a scalar loss, got shape %s' % (loss.shape,))
    graph = current_graph()
    pending = {id(loss): np.ones_like(loss.data)}
    grads = {}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        parent_grads = node.backward(g)
        for parent, pg in zip(node.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                if parent in grads:
                    grads[parent] = grads[parent] + pg
                else:
                    grads[parent] = pg
            else:
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
    if loss.is_leaf and loss.requires_grad:
        grads[loss] = np.ones_like(loss.data)

    for node in graph.nodes:
        for parent in node.inputs:
            if parent.requires_grad and parent.is_leaf and parent not in grads:
                grads[parent] = np.zeros_like(parent.data)
    for leaf in leaves:
        if leaf.requires_grad and leaf not in grads:
            grads[leaf] = np.zeros_like(leaf.data)
    graph.clear()

    for leaf, g in grads.items():
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
        grads[leaf] = g
        if accumulate:
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return grads
