"""Dense float64 tensors with a recorded reverse-mode tape.

Gradients are only tracked while a :class:`Tape` is active.  Every primitive
op appends one node to the active tape; :meth:`Tape.backward` walks the tape
in reverse creation order, which is a valid topological order by
construction.
"""

from __future__ import annotations

import numpy as np

from ..errors import PreconditionError

_ACTIVE_TAPES: list["Tape"] = []


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Context manager that records differentiable ops for one backward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, node: Tensor):
        self.nodes.append(node)

    def backward(self, output: Tensor, seed: np.ndarray | None = None):
        """Accumulate d(output)/d(leaf) into every leaf's ``grad``.

        Leaf gradients accumulate across calls (gradient accumulation);
        intermediate gradients are discarded and the tape is cleared.
        """
        if not output.requires_grad:
            raise PreconditionError("backward() called on a tensor that does not require grad")
        if seed is None:
            seed = np.ones_like(output.data)
        grads: dict[int, np.ndarray] = {id(output): _as_array(seed)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg
        self.clear()

    def clear(self):
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def make_node(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; records it on the active tape when any parent needs grad.

    ``backward(g)`` must return one gradient (or None) per parent, each with
    the parent's shape.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


class ParameterSet:
    """Named trainable tensors, iterated in lexicographic name order."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def __iter__(self):
        return iter(self.names())

    def items(self):
        return [(n, self._tensors[n]) for n in self.names()]

    def values(self):
        return [self._tensors[n] for n in self.names()]

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def num_scalars(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._tensors) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for n, t in self._tensors.items():
            arr = _as_array(state[n])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {t.shape}")
            t.data = arr.copy()

    def subset(self, prefix: str) -> "ParameterSet":
        """View of the parameters under ``prefix.`` with the prefix stripped."""
        view = ParameterSet()
        cut = len(prefix) + 1
        for n, t in self._tensors.items():
            if n.startswith(prefix + "."):
                view._tensors[n[cut:]] = t
        return view
