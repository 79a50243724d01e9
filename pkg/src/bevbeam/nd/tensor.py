"""Dense tensors with reverse-mode differentiation on an explicit tape.

A ``Tensor`` wraps a numpy array (f32, f64, u8 or complex64).  Differentiable
operations record themselves on the innermost active ``Tape``; replaying the
tape in reverse accumulates gradients into every leaf that requires them.
Complex tensors never participate in gradient tracking.

Typical use::

    with Tape() as tape:
        loss = some_ops(params, inputs)
        tape.backward(loss)
    # params now hold .grad

Forward passes outside any ``Tape`` context record nothing (inference mode).
Tensors are value-semantic; independent tapes may run on separate threads
(the active-tape stack is thread-local).
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ContractError, DimensionError

SUPPORTED_DTYPES = (np.float32, np.float64, np.uint8, np.complex64)
FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A numpy-backed dense array with optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_is_leaf")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(d) for d in SUPPORTED_DTYPES):
            # integers and python floats land here; default to f32
            if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
                arr = arr.astype(np.float32)
            else:
                raise ContractError(f"unsupported tensor dtype {arr.dtype}")
        if requires_grad and arr.dtype not in FLOAT_DTYPES:
            raise ContractError(f"gradient tracking requires a float dtype, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._is_leaf = True

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient buffer ------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)


def tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    """Build a tensor; shorthand constructor."""
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def parameter(data, dtype=np.float32) -> Tensor:
    """Build a trainable leaf tensor."""
    return Tensor(data, dtype=dtype, requires_grad=True)


# -- tape ----------------------------------------------------------------

_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed differentiable operations.

    Backward replays the record in exact reverse execution order, summing
    gradient contributions into shared inputs.  Leaf tensors receive the
    result in ``.grad``.
    """

    def __init__(self):
        self._nodes = []  # (output Tensor, backward fn)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, loss: Tensor):
        """Populate ``.grad`` on every requires-grad leaf reachable from loss."""
        if loss.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
        if not self._nodes:
            raise ContractError("backward on an empty tape")
        # pending[id] is a list of contributions; summed only when consumed,
        # so single-contributor arrays pass through without a copy
        pending: dict[int, list] = {id(loss): [np.ones_like(loss.data)]}

        def accumulate(t: Tensor, g: np.ndarray):
            if not t.requires_grad:
                return
            if g.shape != t.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} does not match tensor shape {t.data.shape}"
                )
            if t._is_leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
            else:
                pending.setdefault(id(t), []).append(g)

        for out, backward_fn in reversed(self._nodes):
            contribs = pending.pop(id(out), None)
            if contribs is None:
                continue
            if len(contribs) == 1:
                g = contribs[0]
            else:
                g = contribs[0].copy()
                for extra in contribs[1:]:
                    g += extra
            backward_fn(g, accumulate)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
