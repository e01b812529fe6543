"""Define-by-run tensor with reverse-mode differentiation.

Every forward op builds a fresh node holding its value, its parents and a
closure that maps the output gradient to parent gradients. The graph is
discarded after use; nothing is cached between forward passes.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from advfilter.errors import ContractError, DimensionError, NumericalError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A float64 array node in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        parents: tuple["Tensor", ...] = (),
        backward: BackwardFn | None = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value produced by {op!r}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from advfilter.gradcore import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from advfilter.gradcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from advfilter.gradcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from advfilter.gradcore import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from advfilter.gradcore import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from advfilter.gradcore import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from advfilter.gradcore import ops
        return ops.matmul(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(node) into ``.grad`` of every requires-grad node.

    Gradients from any earlier call are discarded first. Returns a mapping
    from each requires-grad leaf to its gradient.
    """
    if root.size != 1:
        raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match value shape {parent.shape} in {node.op!r}"
                )
            parent.grad = g if parent.grad is None else parent.grad + g
    leaves = {}
    for node in order:
        if node.requires_grad and not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            leaves[node] = node.grad
    return leaves


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
