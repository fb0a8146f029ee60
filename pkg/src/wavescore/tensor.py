"""Minimal reverse-mode engine over numpy arrays.

Only the layer set needed by the bias-free denoisers is provided: same-padded
bias-free convolution, ReLU, and RMS batch normalization (no mean
subtraction, no shift), plus a handful of scalar ops for losses.

Values are plain ``numpy.ndarray``; a :class:`Node` wraps one together with
the closure that propagates gradients to its parents. Nodes whose parents do
not require gradients keep no closure, so inference holds no activations.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, GraphError, NumericError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Node:
    __slots__ = ("value", "parents", "backward", "requires_grad", "name")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=None):
        self.value = value
        self.parents = tuple(parents)
        self.backward = backward
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Node{tag} shape={self.value.shape} grad={self.requires_grad}>"


def parameter(value, name=None):
    return Node(np.asarray(value), requires_grad=True, name=name)


def constant(value, name=None):
    return Node(np.asarray(value), requires_grad=False, name=name)


def _check_finite(a, op):
    # A reduction propagates any NaN/Inf; cheaper than an elementwise mask.
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.add.reduce(a, axis=None)
    if not np.isfinite(total):
        raise NumericError(f"non-finite values produced by {op}")
    return a


def _make(value, parents, backward, op):
    value = _check_finite(value, op)
    needs = any(p.requires_grad for p in parents)
    return Node(value, parents, backward if needs else None, needs, name=op)


def conv2d(x, w):
    """Bias-free same-size cross-correlation.

    ``x`` is (B, C, H, W), ``w`` is (O, C, k, k) with odd k; zero padding of
    (k - 1) / 2 keeps the spatial size.
    """
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {xv.shape}, {wv.shape}")
    B, C, H, W = xv.shape
    O, Cw, k, k2 = wv.shape
    if Cw != C:
        raise DimensionError(f"kernel expects {Cw} input channels, input has {C}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"kernel must be square and odd-sized, got {k}x{k2}")
    if k == 1:
        cols = xv.reshape(B, C, H * W)
    else:
        cols = kernels.im2col(xv, k)
    w2 = wv.reshape(O, C * k * k)
    out = np.matmul(w2, cols).reshape(B, O, H, W)

    def backward(g):
        g2 = g.reshape(B, O, H * W)
        gw = None
        gx = None
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wv.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            if k == 1:
                gx = gcols.reshape(B, C, H, W)
            else:
                gx = kernels.col2im(gcols, (B, C, H, W), k)
        return gx, gw

    return _make(out, (x, w), backward, "conv2d")


def relu(x):
    xv = x.value
    out = np.maximum(xv, np.zeros((), dtype=xv.dtype))

    def backward(g):
        # subgradient 0 at 0
        return (g * (out > 0),)

    return _make(out, (x,), backward, "relu")


@dataclass
class BatchNormState:
    """Running mean-square per channel, updated in training mode."""

    running_ms: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS


def batchnorm(x, scale, state, train=False):
    """Bias-free batch normalization: ``y = scale * x / sqrt(ms + eps)``.

    ``ms`` is the per-channel mean of x**2 over batch and space in training
    mode (and folded into ``state.running_ms``), or the stored running value
    in evaluation mode. There is no mean subtraction and no additive shift.
    """
    xv, sv = x.value, scale.value
    if xv.ndim != 4 or xv.shape[1] == 0:
        raise DimensionError(f"batchnorm expects (B, C>0, H, W), got {xv.shape}")
    C = xv.shape[1]
    if sv.shape != (C,):
        raise DimensionError(f"scale has shape {sv.shape}, expected ({C},)")
    dt = xv.dtype
    if train:
        n = xv.shape[0] * xv.shape[2] * xv.shape[3]
        ms = np.einsum("bchw,bchw->c", xv, xv) / n
        state.running_ms = (
            (1.0 - state.momentum) * state.running_ms + state.momentum * ms
        ).astype(state.running_ms.dtype)
    else:
        ms = state.running_ms
    r = (1.0 / np.sqrt(ms + state.eps)).astype(dt)
    sr = (sv * r).astype(dt)
    out = xv * sr[None, :, None, None]

    def backward(g):
        gx = gs = None
        gxx = np.einsum("bchw,bchw->c", g, xv)
        if scale.requires_grad:
            gs = (gxx * r).astype(dt)
        if x.requires_grad:
            gx = g * sr[None, :, None, None]
            if train:
                coef = (sv * r ** 3 * gxx / n).astype(dt)
                gx = gx - xv * coef[None, :, None, None]
        return gx, gs

    return _make(out, (x, scale), backward, "batchnorm")


def take_channels(x, n):
    """First ``n`` channels of a (B, C, H, W) node."""
    xv = x.value
    out = np.ascontiguousarray(xv[:, :n])

    def backward(g):
        gx = np.zeros_like(xv)
        gx[:, :n] = g
        return (gx,)

    return _make(out, (x,), backward, "take_channels")


def add(a, b):
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    av, bv = a.value, b.value

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, (a, b), backward, "mul")


def square(a):
    av = a.value
    return _make(av * av, (a,), lambda g: (2 * g * av,), "square")


def sum_all(a):
    av = a.value
    out = np.asarray(av.sum(), dtype=av.dtype)
    return _make(out, (a,), lambda g: (np.broadcast_to(g, av.shape).astype(av.dtype),), "sum")


def mse(pred, target):
    """Mean squared error over all elements."""
    d = pred.value - target.value
    n = d.size
    out = np.asarray(np.sum(d * d) / n, dtype=d.dtype)

    def backward(g):
        gp = (2.0 / n) * g * d
        return gp.astype(d.dtype), (-gp).astype(d.dtype)

    return _make(out, (pred, target), backward, "mse")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _topological(root):
    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise GraphError(f"computation graph has a cycle through {node!r}")
        state[key] = 1
        stack.append((node, True))
        for p in node.parents:
            ps = state.get(id(p))
            if ps == 1:
                raise GraphError(f"computation graph has a cycle through {p!r}")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backprop(loss, wrt, seed=None):
    """Reverse-mode gradients of ``loss`` with respect to each node in ``wrt``.

    ``loss`` must be scalar unless ``seed`` (the output cotangent) is given,
    which is how single Jacobian rows are extracted. Nodes in ``wrt`` that do
    not influence ``loss`` get zero gradients.
    """
    if seed is None:
        if loss.value.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}")
        seed = np.ones_like(loss.value)
    order = _topological(loss)
    grads = {id(loss): np.asarray(seed, dtype=loss.value.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.backward is None or g is None:
            if g is not None:
                grads[id(node)] = g
            continue
        if any(n is node for n in wrt):
            grads[id(node)] = g
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(n), np.zeros_like(n.value)) for n in wrt]


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state differ in length")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append((p - step).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return new_p, AdamState(new_m, new_v, t)
