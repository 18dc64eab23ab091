"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable primitive records a node on the calling thread's tape.
``backward`` replays the tape in reverse creation order, which is a valid
reverse topological order because a node can only consume tensors created
before it. The tape is cleared afterwards, so a second ``backward`` without a
fresh forward pass raises.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "current_tape",
    "as_tensor",
]


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape (e.g. a repeated backward)."""


class Node:
    __slots__ = ("out", "inputs", "backward_fn", "generation")

    def __init__(self, out, inputs, backward_fn, generation):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.generation = generation


class Tape:
    """Ordered record of primitive operations for one forward/backward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.generation = 0

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference, constants)."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """N-D float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)

    # -- operator sugar; implementations live in ops -------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap ``data`` as the output of a primitive and record it on the tape.

    ``backward_fn`` maps the output cotangent to one cotangent per input
    (``None`` for inputs that receive no gradient).
    """
    needs = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = current_tape()
        node = Node(out, tuple(inputs), backward_fn, tape.generation)
        out._node = node
        tape.record(node)
    return out


def backward(root: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not root.requires_grad:
        raise TapeError("backward on a tensor that does not require grad")
    if grad is None:
        if root.size != 1:
            raise TapeError("grad must be given for a non-scalar root")
        grad = np.ones(root.shape)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != root.shape:
        raise TapeError(f"grad shape {grad.shape} != root shape {root.shape}")

    if root._node is None:
        root.grad = grad.copy() if root.grad is None else root.grad + grad
        return

    tape = current_tape()
    if root._node.generation != tape.generation or not tape.nodes:
        raise TapeError("tape already consumed; run a new forward pass before backward")

    pending: dict[int, np.ndarray] = {id(root): grad}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = np.array(gi, dtype=np.float64) if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    tape.clear()
