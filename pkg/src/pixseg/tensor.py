"""Dense float64 tensors with a reverse-mode automatic differentiation tape.

A :class:`Tensor` wraps a NumPy ``float64`` array.  Every operation applied to
tensors that require a gradient records its parents and a backward function
mapping the upstream gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order.

Only *leaf* tensors (parameters and inputs created directly by the user)
store gradients in ``.grad``; intermediate gradients live in a scratch table
for the duration of one backward call.  This is what makes repeated
``backward()`` calls accumulate exactly once per call into the leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from pixseg.errors import NumericError, PixsegError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the ``with`` block (inference mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _ensure_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values produced by {what}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after NumPy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus an optional gradient slot."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        array = np.array(data, dtype=np.float64)
        _ensure_finite(array, "tensor construction")
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._backward_fn: Optional[BackwardFn] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Build the result of an operation and record it on the tape if needed."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        _ensure_finite(out.data, op)
        out.grad = None
        out.op = op
        track = _GRAD_ENABLED and any(parent.requires_grad for parent in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward_fn = backward_fn if track else None
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------
    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate ``.grad`` of every leaf this scalar depends on."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise PixsegError("loss does not depend on any tensor that requires a gradient")

        order = self._topological_order()
        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            upstream = pending.pop(id(node), None)
            if upstream is None:
                continue
            if node._backward_fn is None:
                _ensure_finite(upstream, "backward pass")
                node.grad = upstream.copy() if node.grad is None else node.grad + upstream
                continue
            parent_grads = node._backward_fn(upstream)
            for parent, grad in zip(node._parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad

    # ------------------------------------------------------------------
    # Elementwise arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor.from_op(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other: Union["Tensor", float]) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor.from_op(a * b, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {self.shape} and {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul inner dimension mismatch: {self.shape[1]} != {other.shape[0]}"
            )
        a, b = self.data, other.data

        def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return g @ b.T, a.T @ g

        return Tensor.from_op(a @ b, (self, other), backward, "matmul")

    # ------------------------------------------------------------------
    # Reductions and reshaping
    # ------------------------------------------------------------------
    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor.from_op(
            np.sum(self.data), (self,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
        )

    def mean(self) -> "Tensor":
        shape, count = self.shape, max(self.size, 1)
        return Tensor.from_op(
            np.mean(self.data),
            (self,),
            lambda g: (np.broadcast_to(g / count, shape).copy(),),
            "mean",
        )

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor.from_op(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),), "reshape"
        )

    def rows(self, index: np.ndarray) -> "Tensor":
        """Gather rows along axis 0 (duplicate indices are allowed)."""
        index = np.asarray(index, dtype=np.int64)
        shape = self.shape

        def backward(g: np.ndarray) -> Tuple[np.ndarray]:
            full = np.zeros(shape, dtype=np.float64)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward, "rows")


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis``; gradients are split back in order."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return list(np.split(g, boundaries, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(data, tuple(tensors), backward, "concat")


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "zeros",
    "no_grad",
    "is_grad_enabled",
]
