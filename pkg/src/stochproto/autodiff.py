"""Reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps a numpy array and records the operation that produced it.
Calling `backward` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every node's `.grad`.
The graph is rebuilt on every forward pass, so episode sizes may vary
freely between steps.

Every public op is also available as a module-level function that accepts
either a `Tensor` or a plain numpy array / float and returns the same kind.
Downstream modules write their math once against these functions; passing
plain arrays gives an untracked (and slightly faster) evaluation path with
identical numerics.
"""

import numpy as np


class AutodiffError(Exception):
    """Base class for errors raised by the differentiation engine."""


class NonFiniteError(AutodiffError):
    """An operation produced NaN or Inf; the result is unusable."""


class TapeError(AutodiffError):
    """Backward was called on an invalid or already-consumed graph."""


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced a non-finite value")
    return arr


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    `parents` and the `_backward` closure form the tape; leaves have
    neither. Gradients accumulate (sum) into `.grad`, which is `None`
    until a backward pass reaches the node.
    """

    __slots__ = ("data", "grad", "_parents", "_backward", "_op", "_visited")

    # Keep numpy from absorbing `ndarray <op> Tensor` into an object array;
    # with this unset to None, numpy defers to our reflected operators.
    __array_ufunc__ = None

    def __init__(self, data, _parents=(), _op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op
        self._visited = False

    # -- basic introspection ------------------------------------------------

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
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r})"

    def __len__(self):
        return len(self.data)

    @staticmethod
    def _wrap(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic operators -----------------------------------------------

    def __add__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.data + other.data, (self, other), "add")

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.data - other.data, (self, other), "sub")

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(-g, other.shape))

        out._backward = backward
        return out

    def __rsub__(self, other):
        return Tensor._wrap(other) - self

    def __mul__(self, other):
        other = Tensor._wrap(other)
        out = Tensor(self.data * other.data, (self, other), "mul")

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * reciprocal(Tensor._wrap(other))

    def __rtruediv__(self, other):
        return Tensor._wrap(other) * reciprocal(self)

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out = Tensor(self.data[key], (self,), "slice")

        def backward(g):
            full = np.zeros_like(self.data)
            full[key] = g
            self._accumulate(full)

        out._backward = backward
        return out

    # -- elementwise methods --------------------------------------------------

    def exp(self):
        with np.errstate(over="ignore"):
            out = Tensor(np.exp(self.data), (self,), "exp")

        def backward(g):
            self._accumulate(g * out.data)

        out._backward = backward
        return out

    def log(self):
        if np.any(self.data <= 0.0):
            raise AutodiffError("log of non-positive input")
        out = Tensor(np.log(self.data), (self,), "log")

        def backward(g):
            self._accumulate(g / self.data)

        out._backward = backward
        return out

    def reciprocal(self):
        if np.any(self.data == 0.0):
            raise AutodiffError("reciprocal of zero input")
        out = Tensor(1.0 / self.data, (self,), "reciprocal")

        def backward(g):
            self._accumulate(-g * out.data * out.data)

        out._backward = backward
        return out

    def sqrt(self):
        if np.any(self.data < 0.0):
            raise AutodiffError("sqrt of negative input")
        out = Tensor(np.sqrt(self.data), (self,), "sqrt")

        def backward(g):
            self._accumulate(g * 0.5 / out.data)

        out._backward = backward
        return out

    def square(self):
        with np.errstate(over="ignore"):
            out = Tensor(self.data * self.data, (self,), "square")

        def backward(g):
            self._accumulate(g * 2.0 * self.data)

        out._backward = backward
        return out

    def softplus(self):
        out = Tensor(np.logaddexp(0.0, self.data), (self,), "softplus")

        def backward(g):
            self._accumulate(g * _sigmoid(self.data))

        out._backward = backward
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), (self,), "relu")

        def backward(g):
            self._accumulate(g * (self.data > 0.0))

        out._backward = backward
        return out

    def clip_min(self, lo):
        out = Tensor(np.maximum(self.data, lo), (self,), "clip_min")

        def backward(g):
            self._accumulate(g * (self.data > lo))

        out._backward = backward
        return out

    # -- reductions and shape ops ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def log_sum_exp(self, axis=None, keepdims=False):
        m = self.data.max(axis=axis, keepdims=True)
        val_keep = m + np.log(np.sum(np.exp(self.data - m), axis=axis, keepdims=True))
        val = val_keep
        if not keepdims:
            val = val.squeeze() if axis is None else val.squeeze(axis=axis)
        out = Tensor(val, (self,), "log_sum_exp")
        data = self.data

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            # softmax over the reduced axis is exactly the local gradient
            self._accumulate(g * np.exp(data - val_keep))

        out._backward = backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), (self,), "reshape")

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        out._backward = backward
        return out

    def broadcast_to(self, shape):
        out = Tensor(np.broadcast_to(self.data, shape).copy(), (self,), "broadcast")

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))

        out._backward = backward
        return out

    # -- backward pass ----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(node) into `.grad` for every reachable node.

        `self` must be scalar; each graph may be traversed once.
        """
        if self.data.shape != ():
            raise TapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._visited:
            raise TapeError("tape already consumed; rebuild the graph to differentiate again")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._visited = True
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Binary / n-ary ops that do not fit naturally as single-tensor methods.
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a, b = Tensor._wrap(a), Tensor._wrap(b)
        if a.ndim != 2 or b.ndim != 2:
            raise AutodiffError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            out = Tensor(a.data @ b.data, (a, b), "matmul")

        def backward(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        out._backward = backward
        return out
    return np.asarray(a) @ np.asarray(b)


def concat(parts, axis=0):
    """Concatenate along `axis`; gradient splits back to each part."""
    if any(isinstance(p, Tensor) for p in parts):
        parts = [Tensor._wrap(p) for p in parts]
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat")
        sizes = [p.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

        out._backward = backward
        return out
    return np.concatenate(parts, axis=axis)


# ---------------------------------------------------------------------------
# Generic functional interface: Tensor in -> Tensor out, array in -> array out.
# ---------------------------------------------------------------------------


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Tensor) else np.sqrt(x)


def square(x):
    return x.square() if isinstance(x, Tensor) else np.square(x)


def reciprocal(x):
    return x.reciprocal() if isinstance(x, Tensor) else 1.0 / np.asarray(x, dtype=np.float64)


def softplus(x):
    return x.softplus() if isinstance(x, Tensor) else np.logaddexp(0.0, x)


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def clip_min(x, lo):
    return x.clip_min(lo) if isinstance(x, Tensor) else np.maximum(x, lo)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy's own naming
    if isinstance(x, Tensor):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def log_sum_exp(x, axis=None, keepdims=False):
    if isinstance(x, Tensor):
        return x.log_sum_exp(axis=axis, keepdims=keepdims)
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=axis, keepdims=True)
    val = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    if not keepdims:
        val = val.squeeze() if axis is None else val.squeeze(axis=axis)
    return val


def reshape(x, shape):
    return x.reshape(shape) if isinstance(x, Tensor) else np.reshape(x, shape)


def broadcast_to(x, shape):
    if isinstance(x, Tensor):
        return x.broadcast_to(shape)
    return np.broadcast_to(x, shape).copy()


def value_of(x):
    """Plain float64 array behind `x`, whether tracked or not."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


_FORWARD_OPS = {
    "add": lambda a, b: Tensor._wrap(a) + b,
    "sub": lambda a, b: Tensor._wrap(a) - b,
    "mul": lambda a, b: Tensor._wrap(a) * b,
    "hadamard": lambda a, b: Tensor._wrap(a) * b,
    "reciprocal": lambda a: Tensor._wrap(a).reciprocal(),
    "matmul": matmul,
    "exp": lambda a: Tensor._wrap(a).exp(),
    "log": lambda a: Tensor._wrap(a).log(),
    "softplus": lambda a: Tensor._wrap(a).softplus(),
    "sum": lambda a, **kw: Tensor._wrap(a).sum(**kw),
    "square": lambda a: Tensor._wrap(a).square(),
    "broadcast": lambda a, shape: Tensor._wrap(a).broadcast_to(shape),
    "concat": concat,
    "slice": lambda a, key: Tensor._wrap(a)[key],
    "log_sum_exp": lambda a, **kw: Tensor._wrap(a).log_sum_exp(**kw),
    "relu": lambda a: Tensor._wrap(a).relu(),
    "sqrt": lambda a: Tensor._wrap(a).sqrt(),
}


def forward_op(op, *inputs, **kwargs):
    """Apply a primitive by name, recording it on the tape.

    Accepts the core primitive set plus `relu` and `sqrt`, which the
    encoder and reparameterized sampling need.
    """
    if op not in _FORWARD_OPS:
        raise AutodiffError(f"unknown op {op!r}")
    return _FORWARD_OPS[op](*inputs, **kwargs)


def backward(loss):
    """Run a backward pass from a scalar loss tensor."""
    if not isinstance(loss, Tensor):
        raise TapeError("backward requires a Tensor produced by recorded ops")
    loss.backward()
