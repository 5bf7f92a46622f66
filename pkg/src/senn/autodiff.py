"""Reverse-mode automatic differentiation on a dynamically built tape.

Gradients are built out of the same primitives they differentiate, so a
gradient obtained with ``create_graph=True`` is itself on-tape and can be
differentiated again (needed for training objectives that contain input
gradients).

All storage is float64. Non-differentiable kinks use subgradient 0
(relu at 0, abs at 0).
"""

from __future__ import annotations

import threading
from contextlib import nullcontext

import numpy as np

__all__ = [
    "Tensor", "Tape", "no_grad", "grad", "jacobian", "finite_difference_check",
    "add", "sub", "neg", "mul", "div", "matmul", "bmatmul", "transpose",
    "permute", "reshape",
    "relu", "tanh", "sigmoid", "exp", "log", "sqrt", "absolute",
    "tensor_sum", "tensor_mean", "norm_sq", "broadcast_to",
    "softmax", "logsumexp", "concat", "slice_", "embed",
]


class _State(threading.local):
    def __init__(self):
        self.recording = True
        self.tape = None


_state = _State()


class Tape:
    """Append-only record of operations; insertion order is topological.

    A tape is single-threaded. Entering a ``Tape`` as a context manager makes
    it the active registry on the current thread; a default tape is created
    lazily otherwise. Graph connectivity for backward passes lives on the
    tensors themselves, so dropping a tape frees nothing that live tensors
    still need.
    """

    def __init__(self):
        self.nodes = []  # (kind, parent_ids)

    def register(self, kind, parent_ids):
        self.nodes.append((kind, parent_ids))
        return len(self.nodes) - 1

    def __enter__(self):
        self._prev = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False


def _active_tape():
    if _state.tape is None:
        _state.tape = Tape()
    return _state.tape


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prev = _state.recording
        _state.recording = False
        return self

    def __exit__(self, *exc):
        _state.recording = self._prev
        return False


class _Node:
    __slots__ = ("kind", "parents", "vjps")

    def __init__(self, kind, parents, vjps):
        self.kind = kind
        self.parents = parents
        self.vjps = vjps


class Tensor:
    """Dense float64 n-d array, optionally recorded on the active tape."""

    __slots__ = ("data", "requires_grad", "node", "tape_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._item_err()

    def _item_err(self):
        raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")

    def detach(self):
        return Tensor(self.data)

    def numpy(self):
        return self.data

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(kind, data, parents, vjps):
    out = Tensor(data)
    if _state.recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = _Node(kind, tuple(parents), tuple(vjps))
        tape = _active_tape()
        for p in parents:
            if p.requires_grad and p.tape_id is None:
                p.tape_id = tape.register("leaf", ())
        out.tape_id = tape.register(kind, tuple(p.tape_id for p in parents))
    return out


def _shape_err(kind, a, b):
    raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to `shape` (differentiably)."""
    if tuple(g.shape) == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tensor_sum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = tensor_sum(g, axis=axes, keepdims=True)
    if tuple(g.shape) != tuple(shape):
        g = reshape(g, tuple(shape))
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        _shape_err("add", a, b)
    return _make("add", data, (a, b), (
        lambda g: _reduce_to(g, a.shape),
        lambda g: _reduce_to(g, b.shape),
    ))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        _shape_err("sub", a, b)
    return _make("sub", data, (a, b), (
        lambda g: _reduce_to(g, a.shape),
        lambda g: _reduce_to(neg(g), b.shape),
    ))


def neg(a):
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), (lambda g: neg(g),))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        _shape_err("mul", a, b)
    return _make("mul", data, (a, b), (
        lambda g: _reduce_to(mul(g, b), a.shape),
        lambda g: _reduce_to(mul(g, a), b.shape),
    ))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        _shape_err("div", a, b)
    return _make("div", data, (a, b), (
        lambda g: _reduce_to(div(g, b), a.shape),
        lambda g: _reduce_to(neg(div(mul(g, a), mul(b, b))), b.shape),
    ))


def _matmul2d(a, b):
    if a.shape[1] != b.shape[0]:
        _shape_err("matmul", a, b)
    data = a.data @ b.data
    return _make("matmul", data, (a, b), (
        lambda g: matmul(g, transpose(b)),
        lambda g: matmul(transpose(a), g),
    ))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul: only 1-D/2-D operands supported, got {a.shape} @ {b.shape}")
    a2 = reshape(a, (1, a.shape[0])) if a.ndim == 1 else a
    b2 = reshape(b, (b.shape[0], 1)) if b.ndim == 1 else b
    out = _matmul2d(a2, b2)
    if a.ndim == 1 and b.ndim == 1:
        return reshape(out, ())
    if a.ndim == 1:
        return reshape(out, (out.shape[1],))
    if b.ndim == 1:
        return reshape(out, (out.shape[0],))
    return out


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    data = np.transpose(a.data, axes).copy()
    return _make("permute", data, (a,), (lambda g: permute(g, inv),))


def bmatmul(a, b):
    """Batched matrix product over a leading batch axis: (B,p,q) @ (B,q,r)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        _shape_err("bmatmul", a, b)
    data = a.data @ b.data
    return _make("bmatmul", data, (a, b), (
        lambda g: bmatmul(g, permute(b, (0, 2, 1))),
        lambda g: bmatmul(permute(a, (0, 2, 1)), g),
    ))


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2-D tensor, got shape {a.shape}")
    return _make("transpose", a.data.T.copy(), (a,), (lambda g: transpose(g),))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    data = a.data.reshape(shape)
    return _make("reshape", data, (a,), (lambda g: reshape(g, old),))


def relu(a):
    a = _as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return _make("relu", a.data * mask.data, (a,), (lambda g: mul(g, mask),))


def tanh(a):
    a = _as_tensor(a)
    out = _make("tanh", np.tanh(a.data), (a,), ())
    if out.requires_grad:
        out.node = _Node("tanh", (a,), (lambda g: mul(g, sub(1.0, mul(out, out))),))
    return out


def sigmoid(a):
    a = _as_tensor(a)
    # stable for large |x|
    data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                    np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out = _make("sigmoid", data, (a,), ())
    if out.requires_grad:
        out.node = _Node("sigmoid", (a,), (lambda g: mul(g, mul(out, sub(1.0, out))),))
    return out


def exp(a):
    a = _as_tensor(a)
    out = _make("exp", np.exp(a.data), (a,), ())
    if out.requires_grad:
        out.node = _Node("exp", (a,), (lambda g: mul(g, out),))
    return out


def log(a):
    a = _as_tensor(a)
    return _make("log", np.log(a.data), (a,), (lambda g: div(g, a),))


def sqrt(a):
    a = _as_tensor(a)
    out = _make("sqrt", np.sqrt(a.data), (a,), ())
    if out.requires_grad:
        out.node = _Node("sqrt", (a,), (lambda g: div(mul(g, 0.5), out),))
    return out


def absolute(a):
    a = _as_tensor(a)
    sign = Tensor(np.sign(a.data))
    return _make("abs", np.abs(a.data), (a,), (lambda g: mul(g, sign),))


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def vjp(g):
        if axis is None:
            kd_shape = (1,) * len(in_shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(in_shape) for ax in axes)
            kd_shape = tuple(1 if i in axes else d for i, d in enumerate(in_shape))
        if not keepdims:
            g = reshape(g, kd_shape)
        return broadcast_to(g, in_shape)

    return _make("sum", data, (a,), (vjp,))


def tensor_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax % a.ndim] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape):
    a = _as_tensor(a)
    data = np.broadcast_to(a.data, shape).copy()
    return _make("broadcast_to", data, (a,), (lambda g: _reduce_to(g, a.shape),))


def norm_sq(a):
    """Sum of squared entries (squared L2 / Frobenius norm)."""
    a = _as_tensor(a)
    return tensor_sum(mul(a, a))


def logsumexp(a, axis=-1, keepdims=False):
    a = _as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    s = log(tensor_sum(exp(sub(a, shift)), axis=axis, keepdims=True))
    out = add(s, shift)
    if not keepdims:
        ax = axis % a.ndim
        out = reshape(out, tuple(d for i, d in enumerate(a.shape) if i != ax))
    return out


def softmax(a, axis=-1):
    a = _as_tensor(a)
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % data.ndim
    offsets = np.cumsum([0] + [t.shape[ax] for t in tensors])
    vjps = []
    for i, t in enumerate(tensors):
        key = tuple(slice(None) if d != ax else slice(int(offsets[i]), int(offsets[i + 1]))
                    for d in range(data.ndim))
        vjps.append(lambda g, key=key: slice_(g, key))
    return _make("concat", data, tuple(tensors), tuple(vjps))


def slice_(a, key):
    a = _as_tensor(a)
    data = a.data[key]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data)
    in_shape = a.shape
    return _make("slice", data.copy(), (a,), (lambda g: embed(g, in_shape, key),))


def embed(a, shape, key):
    """Place `a` into a zero tensor of `shape` at basic-slicing `key`."""
    a = _as_tensor(a)
    data = np.zeros(shape)
    data[key] = a.data
    return _make("embed", data, (a,), (lambda g: slice_(g, key),))


# ---------------------------------------------------------------------------
# differentiation


def _topo_from(output):
    order, seen, stack = [], set(), [(output, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def grad(output, wrt, create_graph=False):
    """Gradients of a scalar `output` w.r.t. one or more tensors.

    Tensors in `wrt` that the output does not depend on get a zero gradient
    of matching shape. With ``create_graph=True`` the returned tensors are
    on-tape and can be differentiated again.
    """
    single = isinstance(wrt, Tensor)
    wrt_list = [wrt] if single else list(wrt)
    if output.size != 1:
        raise ValueError(f"grad: output must be scalar, got shape {output.shape}")
    for w in wrt_list:
        if not isinstance(w, Tensor):
            raise TypeError("grad: wrt must be Tensor(s)")

    order = _topo_from(output)
    grads = {id(output): Tensor(np.ones(output.shape))}
    ctx = nullcontext() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            g = grads.get(id(t))
            if g is None or t.node is None:
                continue
            for p, vjp in zip(t.node.parents, t.node.vjps):
                if not p.requires_grad:
                    continue
                contrib = vjp(g)
                prev = grads.get(id(p))
                grads[id(p)] = contrib if prev is None else add(prev, contrib)
        # `grads` may still hold entries for the wrt leaves
        results = []
        for w in wrt_list:
            gw = grads.get(id(w))
            if gw is None:
                gw = Tensor(np.zeros(w.shape))
            results.append(gw if create_graph else gw.detach())
    return results[0] if single else results


def jacobian(f, x, create_graph=False):
    """Jacobian of a vector-valued function of a single tensor.

    Row i is the gradient of the i-th output component, computed by repeated
    backward passes. Returns a matrix of shape (output_size, x.size).
    """
    y = f(x)
    y_flat = reshape(y, (y.size,))
    rows = []
    for i in range(y.size):
        gi = grad(y_flat[i], x, create_graph=create_graph)
        rows.append(reshape(gi, (1, x.size)))
    return concat(rows, axis=0)


def finite_difference_check(fn, point, step=1e-5):
    """Max relative error between autodiff and central-difference gradients.

    `fn` maps a Tensor to a scalar Tensor. Error per coordinate is
    |ad - fd| / max(|ad|, |fd|, 1e-8).
    """
    p = Tensor(point.data.copy(), requires_grad=True)
    ad = grad(fn(p), p).data
    fd = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    fd_flat = fd.reshape(-1)
    for i in range(flat.size):
        # recording stays on: fn may itself take gradients internally
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(p).item()
        flat[i] = orig - step
        lo = fn(p).item()
        flat[i] = orig
        fd_flat[i] = (hi - lo) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(ad - fd) / denom))
