"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Implements exactly the operations the matching network and its loss need:
broadcasting arithmetic, batched matmul, shape ops, row gathering, reductions
and a handful of stable nonlinearities. Graphs are built eagerly; calling
``backward()`` on a scalar runs a topological sweep. The ``no_grad()``
context skips graph construction entirely, which keeps inference and
finite-difference probing cheap.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(parent: Tensor, grad: np.ndarray) -> None:
    if parent.grad is None:
        parent.grad = np.array(grad, dtype=np.float64)
    else:
        parent.grad += grad


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_factory) -> Tensor:
    """Create an op result; builds the graph only when gradients can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_factory(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------- arithmetic -----------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor):
        def run():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad, b.data.shape))

        return run

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor):
        def run():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-out.grad, b.data.shape))

        return run

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor):
        def run():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

        return run

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(out: Tensor):
        def run():
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(
                    b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape)
                )

        return run

    return _node(a.data / b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    if a.data.ndim > 2 and b.data.ndim == 2:
        # Flatten the batch axes into one GEMM instead of a gufunc loop of
        # small ones; same arithmetic, far less dispatch overhead.
        shape = a.data.shape
        a2 = a.data.reshape(-1, shape[-1])
        value = (a2 @ b.data).reshape(shape[:-1] + (b.data.shape[1],))

        def backward_flat(out: Tensor):
            def run():
                g2 = out.grad.reshape(-1, out.grad.shape[-1])
                if a.requires_grad:
                    _accumulate(a, (g2 @ b.data.T).reshape(shape))
                if b.requires_grad:
                    _accumulate(b, a2.T @ g2)

            return run

        return _node(value, (a, b), backward_flat)

    def backward(out: Tensor):
        def run():
            if a.requires_grad:
                grad_a = out.grad @ np.swapaxes(b.data, -1, -2)
                _accumulate(a, _unbroadcast(grad_a, a.data.shape))
            if b.requires_grad:
                grad_b = np.swapaxes(a.data, -1, -2) @ out.grad
                _accumulate(b, _unbroadcast(grad_b, b.data.shape))

        return run

    return _node(a.data @ b.data, (a, b), backward)


# ----------------------------- elementwise ----------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * value)

        return run

    return _node(value, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        value = np.log(a.data)

    def backward(out: Tensor):
        def run():
            # A zero upstream gradient contributes zero even where the input
            # is zero (log -> -inf); guard against 0/0 = nan in that case.
            with np.errstate(divide="ignore", invalid="ignore"):
                raw = out.grad / a.data
            _accumulate(a, np.where(out.grad == 0.0, 0.0, raw))

        return run

    return _node(value, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    value = np.sqrt(a.data)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * 0.5 / value)

        return run

    return _node(value, (a,), backward)


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * 2.0 * a.data)

        return run

    return _node(a.data * a.data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * (a.data > 0.0))

        return run

    return _node(np.maximum(a.data, 0.0), (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated stably for large |x|."""
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * _sigmoid(a.data))

        return run

    return _node(np.logaddexp(0.0, a.data), (a,), backward)


def clip_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor) against a constant floor."""
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * (a.data > floor))

        return run

    return _node(np.maximum(a.data, floor), (a,), backward)


def where_const(mask: np.ndarray, a, fill: float) -> Tensor:
    """a where mask, constant fill elsewhere; gradient flows only via mask."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad * mask)

        return run

    return _node(np.where(mask, a.data, fill), (a,), backward)


# ----------------------------- shape ops ------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad.reshape(a.data.shape))

        return run

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(out: Tensor):
        def run():
            _accumulate(a, out.grad.transpose(inverse))

        return run

    return _node(a.data.transpose(axes), (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))

        return run

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(out: Tensor):
        def run():
            for part, t in zip(np.split(out.grad, splits, axis=axis), tensors):
                if t.requires_grad:
                    _accumulate(t, part)

        return run

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take_rows(a, indices) -> Tensor:
    """a[indices] along axis 0; indices may have any shape."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(out: Tensor):
        def run():
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, out.grad)
            _accumulate(a, buf)

        return run

    return _node(a.data[idx], (a,), backward)


# ----------------------------- reductions -----------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(out: Tensor):
        def run():
            grad = out.grad
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            _accumulate(a, np.broadcast_to(grad, a.data.shape).copy())

        return run

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the first argmax."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    value = np.take_along_axis(a.data, idx, axis=axis)

    def backward(out: Tensor):
        def run():
            grad = out.grad
            if not keepdims:
                grad = np.expand_dims(grad, axis)
            buf = np.zeros_like(a.data)
            np.put_along_axis(buf, idx, grad, axis=axis)
            _accumulate(a, buf)

        return run

    return _node(value if keepdims else np.squeeze(value, axis=axis), (a,), backward)


# ----------------------------- composites -----------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along an axis, shifted by a detached max for stability."""
    a = as_tensor(a)
    shift = Tensor(np.max(a.data, axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm; zero rows stay zero (norm floored)."""
    a = as_tensor(a)
    norms = sqrt(sum_(square(a), axis=axis, keepdims=True))
    return div(a, clip_min(norms, eps))


def masked_logsumexp(a, mask: np.ndarray, axis: int) -> Tensor:
    """log sum exp over entries where mask is True; -inf where none are.

    The shift constant is detached, which leaves values and gradients exact.
    """
    a = as_tensor(a)
    masked = where_const(mask, a, -np.inf)
    shift = np.max(masked.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    total = sum_(exp(sub(masked, Tensor(shift))), axis=axis)
    return add(log(total), Tensor(np.squeeze(shift, axis=axis)))
