"""Reverse-mode automatic differentiation on float64 numpy arrays.

A Tensor wraps an ndarray and records the operation that produced it; calling
backward() on a scalar loss walks the recorded graph in reverse topological
order and accumulates gradients into every reachable node. Every primitive
registers its local adjoint at the moment it runs. There is no fallback:
an operation without a registered adjoint cannot produce a Tensor, and
implicit conversions that would silently detach a Tensor from the graph
(numpy ufuncs, float()/bool() coercion) raise instead of returning data.

Discrete choices (neighbor sampling, pruning) are made on raw values via
`.data` or `.item()`; both are explicit detachment points.

Most helpers in this module dispatch on input type: handed plain ndarrays
they compute with numpy directly (no graph, no overhead), handed Tensors they
record the operation. The reasoning engine is written once against these
helpers and runs in either mode.
"""

from __future__ import annotations

import numpy as np

from . import segments as _seg


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Node in the computation graph.

    `data` is always a float64 ndarray. `grad` is populated by backward()
    and has exactly the same shape as `data`; it stays None for nodes the
    loss does not depend on.
    """

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    # Tell numpy to defer all ufunc dispatch to this class, so expressions
    # like ndarray * Tensor reach our operators instead of silently
    # converting, and np.exp(Tensor) raises.
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward

    # -- explicit detachment ------------------------------------------------

    def item(self):
        """Extract a Python float. Detaches from the graph."""
        return float(self.data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # -- refuse silent detachment -------------------------------------------

    def __array__(self, *_args, **_kwargs):
        raise TypeError(
            "implicit ndarray conversion would drop gradients; "
            "use .data (stop-gradient) or .item() explicitly"
        )

    def __float__(self):
        raise TypeError("use .item() to read a Tensor value explicitly")

    def __bool__(self):
        raise TypeError("Tensor truth value is undefined; compare .data instead")

    def __iter__(self):
        raise TypeError("iterating a Tensor would drop gradients; use .data")

    # -- arithmetic -----------------------------------------------------------

    def _accum(self, g):
        g = np.asarray(g, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, (self, other), op="add")

        def backward():
            self._accum(_unbroadcast(out.grad, self.data.shape))
            other._accum(_unbroadcast(out.grad, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,), op="neg")
        out._backward = lambda: self._accum(-out.grad)
        return out

    def __sub__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data - other.data, (self, other), op="sub")

        def backward():
            self._accum(_unbroadcast(out.grad, self.data.shape))
            other._accum(_unbroadcast(-out.grad, other.data.shape))

        out._backward = backward
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, (self, other), op="mul")

        def backward():
            self._accum(_unbroadcast(out.grad * other.data, self.data.shape))
            other._accum(_unbroadcast(out.grad * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, (self, other), op="div")

        def backward():
            self._accum(_unbroadcast(out.grad / other.data, self.data.shape))
            other._accum(
                _unbroadcast(-out.grad * self.data / other.data**2, other.data.shape)
            )

        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul is defined for 2-d tensors only")
        out = Tensor(self.data @ other.data, (self, other), op="matmul")

        def backward():
            self._accum(out.grad @ other.data.T)
            other._accum(self.data.T @ out.grad)

        out._backward = backward
        return out

    # -- reductions and elementwise -------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), (self,), op="sum")

        def backward():
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._backward = backward
        return out

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- backward pass ----------------------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones(())
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def is_tensor(x):
    return isinstance(x, Tensor)


def _any_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


# ---------------------------------------------------------------------------
# Dual-mode helpers: Tensor inputs record adjoints, ndarray inputs use numpy.
# ---------------------------------------------------------------------------


def exp(x):
    if not is_tensor(x):
        return np.exp(x)
    out = Tensor(np.exp(x.data), (x,), op="exp")
    out._backward = lambda: x._accum(out.grad * out.data)
    return out


def log(x):
    if not is_tensor(x):
        return np.log(x)
    out = Tensor(np.log(x.data), (x,), op="log")
    out._backward = lambda: x._accum(out.grad / x.data)
    return out


def leaky_relu(x, slope):
    if not is_tensor(x):
        return np.where(x >= 0, x, slope * x)
    factor = np.where(x.data >= 0, 1.0, slope)
    out = Tensor(x.data * factor, (x,), op="leaky_relu")
    out._backward = lambda: x._accum(out.grad * factor)
    return out


def clamp(x, lo, hi):
    """Clip to [lo, hi]; the gradient passes through inside the interval."""
    if not is_tensor(x):
        return np.clip(x, lo, hi)
    inside = ((x.data >= lo) & (x.data <= hi)).astype(np.float64)
    out = Tensor(np.clip(x.data, lo, hi), (x,), op="clamp")
    out._backward = lambda: x._accum(out.grad * inside)
    return out


def matmul(a, b):
    if _any_tensor(a, b):
        return as_tensor(a) @ as_tensor(b)
    return a @ b


def tsum(x, axis=None):
    if not is_tensor(x):
        return x.sum(axis=axis)
    return x.sum(axis=axis)


def concat(parts, axis=0):
    if not _any_tensor(*parts):
        return np.concatenate(parts, axis=axis)
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), op="concat")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(a, b)
            p._accum(out.grad[tuple(sl)])

    out._backward = backward
    return out


def gather_rows(x, idx):
    """Select rows (or elements of a vector) by index; duplicates allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    if not is_tensor(x):
        return x[idx]
    out = Tensor(x.data[idx], (x,), op="gather_rows")

    def backward():
        g = np.zeros_like(x.data)
        np.add.at(g, idx, out.grad)
        x._accum(g)

    out._backward = backward
    return out


def row_update(x, idx, rows):
    """Functional write: copy of x with x[idx] replaced by `rows`.

    The indices must be distinct; the gradient splits between the overwritten
    source rows (zeroed) and the replacement rows.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if not _any_tensor(x, rows):
        out = x.copy()
        out[idx] = rows
        return out
    x, rows = as_tensor(x), as_tensor(rows)
    data = x.data.copy()
    data[idx] = rows.data
    out = Tensor(data, (x, rows), op="row_update")

    def backward():
        g = out.grad.copy()
        g[idx] = 0.0
        x._accum(g)
        rows._accum(out.grad[idx])

    out._backward = backward
    return out


def segment_sum(values, segment_ids, n_segments):
    if not is_tensor(values):
        return _seg.segment_sum(values, segment_ids, n_segments)
    seg = np.asarray(segment_ids, dtype=np.int64)
    out = Tensor(_seg.segment_sum(values.data, seg, n_segments),
                 (values,), op="segment_sum")
    out._backward = lambda: values._accum(out.grad[seg])
    return out


def segment_softmax(values, segment_ids, n_segments):
    if not is_tensor(values):
        return _seg.segment_softmax(values, segment_ids, n_segments)
    seg = np.asarray(segment_ids, dtype=np.int64)
    y = _seg.segment_softmax(values.data, seg, n_segments)
    out = Tensor(y, (values,), op="segment_softmax")

    def backward():
        gy = out.grad * y
        inner = _seg.segment_sum(gy, seg, n_segments)
        values._accum(gy - y * inner[seg])

    out._backward = backward
    return out


def time_encode(freq, phase, timestamps):
    """Bounded periodic time features: sqrt(1/d) * cos(t * freq + phase).

    `timestamps` is a plain integer/float array of shape (m,); the output has
    one row per timestamp and one column per frequency.
    """
    t = np.asarray(timestamps, dtype=np.float64).reshape(-1, 1)
    if not _any_tensor(freq, phase):
        d = freq.shape[0]
        return np.sqrt(1.0 / d) * np.cos(t * freq + phase)
    freq, phase = as_tensor(freq), as_tensor(phase)
    d = freq.data.shape[0]
    scale = np.sqrt(1.0 / d)
    arg = t * freq.data + phase.data
    out = Tensor(scale * np.cos(arg), (freq, phase), op="time_encode")

    def backward():
        common = -scale * np.sin(arg) * out.grad
        freq._accum((common * t).sum(axis=0))
        phase._accum(common.sum(axis=0))

    out._backward = backward
    return out


def as_col(x):
    """Reshape a vector (m,) to a column (m, 1) so it scales row matrices."""
    if not is_tensor(x):
        return np.reshape(x, (-1, 1))
    out = Tensor(x.data.reshape(-1, 1), (x,), op="as_col")
    out._backward = lambda: x._accum(out.grad.reshape(x.data.shape))
    return out


def values_of(x):
    """Raw float array of either a Tensor (stop-gradient) or an ndarray."""
    return x.data if is_tensor(x) else np.asarray(x)
