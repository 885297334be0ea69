"""
`hieraseg` dense tensors with reverse-mode gradients.

Every value is a float64 numpy array. Ops are `Function` subclasses: calling
`SomeOp.apply(*tensors, **params)` runs `forward` on the raw arrays and, when
any input requires a gradient, records the op on the result so that
`Tensor.backward()` can replay it in reverse topological order.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Iterator, Optional, Sequence, Union

import numpy as np

from hieraseg.exceptions import NumericalError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """
    A float64 array plus an optional gradient buffer and the op that made it.

    Leaf tensors created with `requires_grad=True` (parameters, inputs under
    test) accumulate into `.grad` on every backward pass; call `zero_grad()`
    between passes. Intermediate results never keep a `.grad`.
    """

    __array_priority__ = 1000  # numpy defers to our reflected operators

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _ctx: Optional["Function"] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    # -- array protocol ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return _ops.scale(self, other)
        return _ops.mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return _ops.scale(self, other)
        return _ops.mul(other, self)

    def __neg__(self):
        return _ops.scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Tensors only support division by a scalar")
        return _ops.scale(self, 1.0 / other)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops.transpose(self, axes)

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """
        Propagate `grad` (default 1 for a scalar) to every leaf that requires
        a gradient, adding into its `.grad`.
        """
        if not self.requires_grad:
            raise NumericalError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward (implicit seed needs a scalar)", self.shape, ())
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError("backward", self.shape, grad.shape)

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(_topological_order(self)):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            if node._ctx is None:
                node.grad = node_grad.copy() if node.grad is None else node.grad + node_grad
                continue
            parent_grads = node._ctx.backward(node_grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """
    Base class of differentiable ops.

    Subclasses implement `forward(*arrays) -> array` and
    `backward(grad) -> tuple` with one entry (array or None) per input, and
    may stash whatever they need on `self` during `forward`. Non-tensor
    arguments arrive as keyword `params`.

    Piecewise ops (max pooling, relu) also override `branch()` to return the
    selection their forward pass made, which `trace_branches` collects.
    """

    name = "op"

    def __init__(self, *parents: Tensor, **params):
        self.parents = parents
        self.params = params

    @classmethod
    def apply(cls, *inputs, **params) -> Tensor:
        tensors = tuple(as_tensor(t) for t in inputs)
        ctx = cls(*tensors, **params)
        data = ctx.forward(*(t.data for t in tensors))
        if _branch_trace is not None:
            taken = ctx.branch()
            if taken is not None:
                _branch_trace.append(taken)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(data, requires_grad=requires_grad, _ctx=ctx if requires_grad else None)

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    def branch(self) -> Optional[np.ndarray]:
        return None


_branch_trace: Optional[list[np.ndarray]] = None


@contextmanager
def trace_branches() -> Iterator[list[np.ndarray]]:
    """Collect, in call order, the branch every piecewise op takes inside the block."""
    global _branch_trace
    outer, _branch_trace = _branch_trace, []
    try:
        yield _branch_trace
    finally:
        _branch_trace = outer


from . import ops as _ops  # noqa: E402  (operators above resolve lazily)
