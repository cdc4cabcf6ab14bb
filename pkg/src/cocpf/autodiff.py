"""Small reverse-mode autodiff over dense numpy arrays.

Only the operations needed to train the projection field are provided.
There is no general broadcasting: binary ops require equal shapes, with two
exceptions (a Python/0-d scalar operand, and a 1-d bias added along the last
axis of a 2-d matrix).
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "no_grad",
    "Tensor",
    "Tape",
    "backward",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "sigmoid",
    "sin",
    "cos",
    "exp",
    "square",
    "clamp",
    "concat",
    "cumsum",
    "tsum",
    "mean",
    "reshape",
    "take_along_axis",
]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


_RECORDING = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording: results never require gradients."""
    prev = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = prev


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _RECORDING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _is_scalar(t):
    return t.data.ndim == 0


def _binary_shapes(a, b, op):
    """Classify operands: 'same', 'scalar_a', 'scalar_b' or 'bias'."""
    if a.shape == b.shape:
        return "same"
    if _is_scalar(a):
        return "scalar_a"
    if _is_scalar(b):
        return "scalar_b"
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return "bias"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


# ---------------------------------------------------------------- primitives


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def add(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    kind = _binary_shapes(a, b, "add")

    def bw(g):
        if kind == "same":
            _accumulate(a, g)
            _accumulate(b, g)
        elif kind == "scalar_a":
            _accumulate(a, np.asarray(g.sum(), dtype=a.dtype))
            _accumulate(b, g)
        elif kind == "scalar_b":
            _accumulate(a, g)
            _accumulate(b, np.asarray(g.sum(), dtype=b.dtype))
        else:
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    return add(a, neg(_as_tensor(b, a)))


def mul(a, b):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    kind = _binary_shapes(a, b, "mul")
    if kind == "bias":
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        if a.requires_grad:
            ga = g * b.data
            _accumulate(a, np.asarray(ga.sum(), dtype=a.dtype) if kind == "scalar_a" else ga)
        if b.requires_grad:
            gb = g * a.data
            _accumulate(b, np.asarray(gb.sum(), dtype=b.dtype) if kind == "scalar_b" else gb)

    return _result(a.data * b.data, (a, b), bw)


def neg(a):
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accumulate(a, -g))


def square(a):
    a = _as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: _accumulate(a, 2.0 * a.data * g))


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)
    return _result(out, (a,), lambda g: _accumulate(a, g * (out > 0)))


def sigmoid(a):
    a = _as_tensor(a)
    # split on sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _result(out, (a,), lambda g: _accumulate(a, g * out * (1.0 - out)))


def sin(a):
    a = _as_tensor(a)
    return _result(np.sin(a.data), (a,), lambda g: _accumulate(a, g * np.cos(a.data)))


def cos(a):
    a = _as_tensor(a)
    return _result(np.cos(a.data), (a,), lambda g: _accumulate(a, -g * np.sin(a.data)))


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: _accumulate(a, g * out))


def clamp(a, lo=None, hi=None):
    """Clip values; gradient passes only where the input was inside [lo, hi]."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return _result(out, (a,), lambda g: _accumulate(a, g * mask))


def concat(tensors, axis=-1):
    ts = [_as_tensor(t) for t in tensors]
    ref = ts[0].data
    ax = axis % ref.ndim
    for t in ts[1:]:
        if t.data.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: shapes {ref.shape} and {t.shape} do not conform on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, splits, axis=ax)):
            _accumulate(t, piece)

    return _result(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw)


def cumsum(a, axis=-1):
    a = _as_tensor(a)

    def bw(g):
        # reverse cumulative sum
        _accumulate(a, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _result(np.cumsum(a.data, axis=axis), (a,), bw)


def tsum(a, axis=None):
    a = _as_tensor(a)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(np.asarray(a.data.sum(axis=axis), dtype=a.dtype), (a,), bw)


def mean(a, axis=None):
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: _accumulate(a, g.reshape(a.shape)))


def getitem(a, idx):
    a = _as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _result(np.array(a.data[idx]), (a,), bw)


def take_along_axis(a, indices, axis=-1):
    """Gather by a precomputed integer index (e.g. an argsort permutation)."""
    a = _as_tensor(a)
    indices = np.asarray(indices)
    if indices.ndim != a.data.ndim:
        raise ShapeError(f"take_along_axis: index shape {indices.shape} vs tensor shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        if _is_permutation(indices, a.shape, axis):
            np.put_along_axis(full, indices, g, axis)
        else:
            ax = axis % a.data.ndim
            grids = list(np.indices(indices.shape, sparse=True))
            grids[ax] = indices
            np.add.at(full, tuple(grids), g)
        _accumulate(a, full)

    return _result(np.take_along_axis(a.data, indices, axis), (a,), bw)


def _is_permutation(indices, shape, axis):
    if indices.shape != tuple(shape):
        return False
    ax = axis % len(shape)
    s = np.sort(indices, axis=ax)
    ref = np.arange(shape[ax]).reshape([-1 if i == ax else 1 for i in range(len(shape))])
    return bool(np.all(s == ref))


# ---------------------------------------------------------------- tape


class Tape:
    """Ordered record of the operations reachable from a root.

    ``nodes`` is in topological order (inputs before outputs); ``run`` walks it
    backwards.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def run(self, root, seed_grad):
        root.grad = seed_grad
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # intermediate buffers are not kept after use
            node.grad = None


def backward(root):
    """Populate ``.grad`` on every leaf tensor reachable from scalar ``root``.

    Gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if not isinstance(root, Tensor):
        raise TypeError("backward expects a Tensor")
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    seed = np.ones(root.shape, dtype=root.dtype)
    if root._backward is None:
        _accumulate(root, seed)
        return
    Tape.from_root(root).run(root, seed)
