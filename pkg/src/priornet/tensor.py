"""Dense tensors with reverse-mode differentiation.

Every op in :mod:`priornet.ops` produces a new :class:`Tensor` carrying a
:class:`Node` that records its inputs and a vector-Jacobian closure. Nodes
are stamped with a global, monotonically increasing sequence number as
they are created, so the set of nodes reachable from a loss, sorted by that
number, is exactly the forward tape. :func:`backward` replays it in reverse.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterator, Sequence

import numpy as np

from priornet.errors import ShapeError

DEFAULT_DTYPE = np.float32

_sequence = itertools.count()


class Node:
    __slots__ = ("seq", "inputs", "vjp")

    def __init__(self, inputs: Sequence["Tensor"], vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.seq = next(_sequence)
        self.inputs = tuple(inputs)
        self.vjp = vjp


class Tensor:
    """N-dimensional array with an optional accumulated gradient.

    Image tensors are channel-major (C, H, W), with a batch axis prepended
    when batched. Storage is float32 unless a float64 array is passed
    explicitly, which is how the finite-difference checks get a 64-bit path.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float64 else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node: Node | None = None

    @classmethod
    def from_op(cls, data: np.ndarray, inputs: Sequence["Tensor"], vjp) -> "Tensor":
        out = cls(data, dtype=data.dtype)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.node = Node(inputs, vjp)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # Operator sugar; the ops module holds the real implementations.
    def __add__(self, other):
        from priornet import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from priornet import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from priornet import ops

        return ops.sub(self, other)

    def __neg__(self):
        from priornet import ops

        return ops.mul(self, -1.0)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate results never hold gradients; only leaves created with
    ``requires_grad=True`` do. Calling twice without ``zero_grad`` adds.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    tape: dict[int, Node] = {}
    owners: dict[int, Tensor] = {}
    stack = [loss]
    seen: set[int] = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            tape[t.node.seq] = t.node
            owners[t.node.seq] = t
            stack.extend(i for i in t.node.inputs if i.requires_grad)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for seq in sorted(tape, reverse=True):
        node = tape[seq]
        out = owners[seq]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
                else:
                    inp.grad += gi
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = gi
    # A leaf loss (no node) is its own gradient target.
    if loss.node is None:
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g


class ParamRegistry:
    """Ordered, uniquely named collection of learnable tensors."""

    def __init__(self, items: Sequence[tuple[str, Tensor]] = ()):
        self._params: dict[str, Tensor] = {}
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.name = name
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype) -> "ParamRegistry":
        return ParamRegistry([(n, t.astype(dtype)) for n, t in self])

    def copy(self) -> "ParamRegistry":
        return ParamRegistry([(n, Tensor(t.data.copy(), dtype=t.dtype)) for n, t in self])
