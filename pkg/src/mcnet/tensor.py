"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the segmentation network needs are provided. There is
no general broadcasting: elementwise ops require equal shapes, and the one
broadcast the network uses (adding a per-channel bias) has its own op.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. :func:`backward`
orders the reachable graph topologically (by creation counter, which is a
valid topological order because an op's inputs always exist before its
output) and runs each closure exactly once.
"""

import contextlib
import itertools

import numpy as np

from .errors import ContractError, DimensionError, EmptyNeighborhoodError, NumericError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._order = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


class Tape:
    """Topologically ordered record of the operations reachable from a loss."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss):
        seen = {id(loss)}
        stack = [loss]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append(parent)
        nodes.sort(key=lambda n: n._order)
        return cls(nodes)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def run(self, loss):
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        grads = {}
        for node in self.nodes:
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                grads[node] = node.grad
            else:
                node.grad = None
        return grads


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients are reset first, so calling this twice on the same graph
    gives the same result. Returns a ``{leaf: grad}`` map.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")
    return Tape.from_loss(loss).run(loss)


def sgd_step(params, lr):
    """In-place ``p <- p - lr * p.grad``; refuses to apply a non-finite gradient."""
    if not lr > 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    params = list(params)
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {p.name or p!r}; step aborted")
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), _bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")

    def _bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), _bw)


def scale(a, factor):
    def _bw(g):
        _accumulate(a, g * factor)

    return _result(a.data * factor, (a,), _bw)


def add_bias(x, bias):
    """``x[..., c] + bias[c]``."""
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: bias {list(bias.shape)} does not match {list(x.shape)}")

    def _bw(g):
        _accumulate(x, g)
        _accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _result(x.data + bias.data, (x, bias), _bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")

    def _bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), _bw)


def reshape(x, shape):
    shape = tuple(shape)
    old = x.shape

    def _bw(g):
        _accumulate(x, g.reshape(old))

    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {list(old)} as {list(shape)}") from exc
    return _result(data, (x,), _bw)


def concat(arrays, axis=-1):
    arrays = [as_tensor(a) for a in arrays]
    if not arrays:
        raise ContractError("concat needs at least one array")
    ndim = arrays[0].data.ndim
    ax = axis % ndim
    for a in arrays[1:]:
        if a.data.ndim != ndim or any(
            a.shape[d] != arrays[0].shape[d] for d in range(ndim) if d != ax
        ):
            shapes = [list(t.shape) for t in arrays]
            raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}")
    offsets = np.cumsum([0] + [a.shape[ax] for a in arrays])

    def _bw(g):
        for a, lo, hi in zip(arrays, offsets[:-1], offsets[1:]):
            if a.requires_grad:
                sl = [slice(None)] * ndim
                sl[ax] = slice(lo, hi)
                _accumulate(a, g[tuple(sl)])

    return _result(np.concatenate([a.data for a in arrays], axis=ax), arrays, _bw)


def split(x, sizes, axis=-1):
    """Inverse of :func:`concat`: cut ``x`` into consecutive pieces of ``sizes``."""
    ax = axis % x.data.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[ax]}")
    pieces = []
    lo = 0
    for size in sizes:
        sl = [slice(None)] * x.data.ndim
        sl[ax] = slice(lo, lo + size)
        sl = tuple(sl)

        def _bw(g, sl=sl):
            full = np.zeros_like(x.data)
            full[sl] = g
            _accumulate(x, full)

        pieces.append(_result(x.data[sl], (x,), _bw))
        lo += size
    return pieces


def _check_index(index, n):
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= n):
        bad = index[(index < 0) | (index >= n)].flat[0]
        raise IndexError(f"neighbor index {int(bad)} out of range for {n} points")
    return index.astype(np.intp, copy=False)


def _scatter_rows(n, index, rows):
    # Fixed-order accumulation: np.add.at visits entries in index order.
    out = np.zeros((n, rows.shape[-1]))
    np.add.at(out, index.ravel(), rows.reshape(-1, rows.shape[-1]))
    return out


def gather_neighbors(features, index):
    """``out[i, j, :] = features[index[i, j], :]``; backward scatter-adds."""
    if features.data.ndim != 2:
        raise DimensionError(f"gather_neighbors expects [N,C] features, got {list(features.shape)}")
    n = features.shape[0]
    index = _check_index(index, n)
    if index.ndim != 2:
        raise DimensionError(f"gather_neighbors expects an [M,K] index, got {list(index.shape)}")

    def _bw(g):
        _accumulate(features, _scatter_rows(n, index, g))

    return _result(features.data[index], (features,), _bw)


def take_rows(features, ids):
    """``features[ids]`` for a 1-D id array."""
    n = features.shape[0]
    ids = _check_index(ids, n)

    def _bw(g):
        _accumulate(features, _scatter_rows(n, ids, g))

    return _result(features.data[ids], (features,), _bw)


def max_over_neighbors(x):
    """Max over axis 1 of ``[N,K,C]``; the gradient goes to the first argmax."""
    if x.data.ndim != 3:
        raise DimensionError(f"max_over_neighbors expects [N,K,C], got {list(x.shape)}")
    if x.shape[1] == 0:
        raise EmptyNeighborhoodError("cannot max-pool over an empty neighborhood (K = 0)")
    arg = np.argmax(x.data, axis=1)
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def _bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        _accumulate(x, full)

    return _result(out, (x,), _bw)


def mean_over_neighbors(x):
    if x.data.ndim != 3:
        raise DimensionError(f"mean_over_neighbors expects [N,K,C], got {list(x.shape)}")
    k = x.shape[1]
    if k == 0:
        raise EmptyNeighborhoodError("cannot average over an empty neighborhood (K = 0)")

    def _bw(g):
        _accumulate(x, np.repeat(g[:, None, :] / k, k, axis=1))

    return _result(x.data.mean(axis=1), (x,), _bw)


def softmax(x, axis=-1):
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _result(s, (x,), _bw)


def weighted_sum_over_neighbors(x, s):
    """``out[i, c] = sum_k x[i, k, c] * s[i, k, c]``."""
    _check_same_shape(x, s, "weighted_sum_over_neighbors")
    if x.data.ndim != 3:
        raise DimensionError(f"weighted_sum_over_neighbors expects [N,K,C], got {list(x.shape)}")

    def _bw(g):
        _accumulate(x, g[:, None, :] * s.data)
        _accumulate(s, g[:, None, :] * x.data)

    return _result((x.data * s.data).sum(axis=1), (x, s), _bw)


def leaky_relu(x, slope=0.2):
    neg = x.data < 0

    def _bw(g):
        _accumulate(x, np.where(neg, slope * g, g))

    return _result(np.where(neg, slope * x.data, x.data), (x,), _bw)


def batch_norm(x, gamma, beta, mean, var, eps):
    """Normalize ``[N,C]`` with the given per-channel statistics.

    ``mean`` / ``var`` are either plain arrays (inference: treated as
    constants) or ``None``, in which case batch statistics are used and
    differentiated through.
    """
    if mean is None:
        mu = x.data.mean(axis=0)
        centered = x.data - mu
        batch_var = (centered * centered).mean(axis=0)
        inv = 1.0 / np.sqrt(batch_var + eps)
        xhat = centered * inv
        n = x.shape[0]

        def _bw(g):
            _accumulate(gamma, (g * xhat).sum(axis=0))
            _accumulate(beta, g.sum(axis=0))
            if x.requires_grad:
                gx = g * gamma.data
                _accumulate(
                    x, inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
                )

        out = _result(xhat * gamma.data + beta.data, (x, gamma, beta), _bw)
        return out, mu, batch_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv

    def _bw_eval(g):
        _accumulate(gamma, (g * xhat).sum(axis=0))
        _accumulate(beta, g.sum(axis=0))
        _accumulate(x, g * gamma.data * inv)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), _bw_eval), mean, var


def sum_all(x):
    def _bw(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _result(np.array(x.data.sum()), (x,), _bw)


def mean_all(x):
    n = x.data.size

    def _bw(g):
        _accumulate(x, np.full_like(x.data, float(g) / n))

    return _result(np.array(x.data.mean()), (x,), _bw)


def stack_scalars(scalars):
    """Sum of scalar tensors divided by their count (batch-mean of losses)."""
    scalars = list(scalars)
    n = len(scalars)

    def _bw(g):
        for s in scalars:
            _accumulate(s, np.asarray(g) / n)

    return _result(np.array(sum(float(s.data) for s in scalars) / n), scalars, _bw)
