"""Small define-by-run reverse-mode differentiation over dense 2-D float64 arrays.

Every primitive takes :class:`Tensor` operands (plain numbers and arrays are
wrapped as constants), computes its value eagerly and, when any operand needs a
gradient, appends a node to the active :class:`Tape`.  ``Tape.backward`` walks
the recorded nodes in reverse and accumulates into the ``grad`` slot of every
leaf with ``requires_grad=True``.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = total(hadamard(w, w))
    >>> tape.backward(loss)
    >>> w.grad
    array([[2., 2.],
           [2., 2.]])
"""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "_node")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward", "info")

    def __init__(self, op, inputs, output, backward, info=""):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.info = info


class Tape:
    """Ordered record of the primitives evaluated while the tape is active.

    Tapes nest; operations are recorded on the innermost one.  A tape is meant
    for a single forward/backward pass and should be discarded afterwards.
    """

    def __init__(self, debug: bool = False):
        self.nodes: list[_Node] = []
        self.debug = debug
        self._used = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, node: _Node) -> None:
        node.output._node = node
        self.nodes.append(node)
        if self.debug:
            logger.debug("%4d %s", len(self.nodes) - 1, self._describe(node))

    def _describe(self, node: _Node) -> str:
        ins = ", ".join("x".join(map(str, t.shape)) for t in node.inputs)
        out = "x".join(map(str, node.output.shape))
        extra = f" [{node.info}]" if node.info else ""
        return f"{node.op}({ins}) -> {out}{extra}"

    def dump(self) -> str:
        return "\n".join(f"{i:4d} {self._describe(n)}" for i, n in enumerate(self.nodes))

    def backward(self, loss: Tensor, upstream: float | np.ndarray = 1.0) -> None:
        if not self.nodes:
            raise TapeError("backward called on an empty tape; run a forward pass first")
        if self._used:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        if loss._node is None or loss._node not in self.nodes:
            raise TapeError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.full((1, 1), 1.0) * upstream}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._node is None:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
        for node in self.nodes:
            node.output._node = None
        self._used = True


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray,
          backward: Callable[[np.ndarray], Sequence], info: str = "") -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.requires_grad = needs
    out.grad = None
    out.name = None
    out._node = None
    if needs and _TAPES:
        _TAPES[-1].record(_Node(op, tuple(inputs), out, backward, info))
    elif needs:
        # not being recorded: treat as a constant downstream
        out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _emit("matmul", (a, b), av @ bv, back)


def block_matmul(blocks: np.ndarray, x) -> Tensor:
    """Multiply a constant block-diagonal matrix by ``x`` without materialising it.

    ``blocks`` has shape (B, n, n); ``x`` has B*n rows.  Only ``x`` gets a gradient.
    """
    x = _as_tensor(x)
    blocks = np.asarray(blocks, dtype=np.float64)
    nb, n, n2 = blocks.shape
    if n != n2 or x.shape[0] != nb * n:
        raise ShapeError(f"block_matmul: blocks {blocks.shape} incompatible with {x.shape}")
    f = x.shape[1]
    value = np.matmul(blocks, x.value.reshape(nb, n, f)).reshape(nb * n, f)

    def back(g):
        gx = np.matmul(blocks.transpose(0, 2, 1), g.reshape(nb, n, f))
        return (gx.reshape(nb * n, f),)

    return _emit("block_matmul", (x,), value, back, f"{nb} blocks")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", (a, b), a.value + b.value, back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit("sub", (a, b), a.value - b.value, back)


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("hadamard", a, b)
    av, bv = a.value, b.value

    def back(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return _emit("hadamard", (a, b), av * bv, back)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.value * c, lambda g: (g * c,), f"c={c:g}")


def concat_rows(*parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _emit("concat_rows", parts, np.concatenate([p.value for p in parts], axis=0), back)


def concat_cols(*parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _emit("concat_cols", parts, np.concatenate([p.value for p in parts], axis=1), back)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"slice_rows: range [{start}, {stop}) invalid for shape {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _emit("slice_rows", (a,), a.value[start:stop], back, f"{start}:{stop}")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: range [{start}, {stop}) invalid for shape {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _emit("slice_cols", (a,), a.value[:, start:stop], back, f"{start}:{stop}")


def reshape(a, rows: int, cols: int) -> Tensor:
    """Row-major reshape."""
    a = _as_tensor(a)
    if rows * cols != a.value.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")
    shape = a.shape
    return _emit("reshape", (a,), a.value.reshape(rows, cols), lambda g: (g.reshape(shape),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("transpose", (a,), a.value.T.copy(), lambda g: (g.T,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    on = a.value > 0
    return _emit("relu", (a,), np.where(on, a.value, 0.0), lambda g: (g * on,))


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    slope = np.where(a.value > 0, 1.0, alpha)
    return _emit("leaky_relu", (a,), a.value * slope, lambda g: (g * slope,), f"alpha={alpha:g}")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # split by sign so exp never overflows
    x = a.value
    ex = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _emit("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.value)
    return _emit("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


def identity(a) -> Tensor:
    a = _as_tensor(a)
    return _emit("identity", (a,), a.value.copy(), lambda g: (g,))


def dropout(a, p: float, training: bool, seed=None) -> Tensor:
    """Inverted dropout.  In eval mode the input tensor itself is returned."""
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    rng = np.random.default_rng(seed)
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _emit("dropout", (a,), a.value * mask, lambda g: (g * mask,), f"p={p:g}")


def masked_softmax_rows(a, mask: np.ndarray) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is true; others are 0.

    Every row must allow at least one entry.
    """
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_softmax_rows: mask {mask.shape} vs input {a.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("masked_softmax_rows: every row needs at least one allowed entry")
    x = np.where(mask, a.value, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(x), 0.0)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _emit("masked_softmax_rows", (a,), s, back)


def total(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _emit("sum", (a,), np.array([[a.value.sum()]]),
                 lambda g: (np.full(shape, g[0, 0]),))


def mean(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.value.size
    return _emit("mean", (a,), np.array([[a.value.mean()]]),
                 lambda g: (np.full(shape, g[0, 0] / n),))


def square(a) -> Tensor:
    a = _as_tensor(a)
    v = a.value
    return _emit("square", (a,), v * v, lambda g: (2.0 * v * g,))


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5,
               entries: Sequence[tuple[int, int]] | None = None,
               analytic: np.ndarray | None = None) -> float:
    """Largest relative gap between the tape gradient and central differences.

    The error for an entry is ``|analytic - numeric| / max(1, |numeric|)``.
    ``f`` must build its result from ``point`` with the primitives above.
    ``entries`` restricts the comparison to a subset of coordinates.
    ``analytic`` substitutes a precomputed gradient (used to test the harness).
    """
    if analytic is None:
        saved = point.requires_grad, point.grad
        point.requires_grad, point.grad = True, None
        try:
            with Tape() as tape:
                out = f(point)
            tape.backward(out)
            analytic = point.grad if point.grad is not None else np.zeros(point.shape)
        finally:
            point.requires_grad, point.grad = saved

    if entries is None:
        entries = list(np.ndindex(*point.shape))
    worst = 0.0
    x = point.value
    for idx in entries:
        orig = x[idx]
        x[idx] = orig + step
        hi = f(point).item()
        x[idx] = orig - step
        lo = f(point).item()
        x[idx] = orig
        numeric = (hi - lo) / (2.0 * step)
        err = abs(analytic[idx] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
