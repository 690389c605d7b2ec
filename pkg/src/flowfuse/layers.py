"""Neural building blocks on top of the autodiff primitives.

Graph layers work on a batch of graphs stacked node-wise: node features are a
(B*M, f) tensor and graph operators are either one (M, M) matrix or a
(B, M, M) stack applied block by block.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .params import ParamStore

ACTIVATIONS = {
    "relu": ad.relu,
    "linear": ad.identity,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
}


def _blocks(op: np.ndarray) -> np.ndarray:
    op = np.asarray(op, dtype=np.float64)
    return op[None] if op.ndim == 2 else op


def propagate(op: np.ndarray, h: Tensor) -> Tensor:
    """Apply a constant (block-diagonal) graph operator to stacked node features."""
    return ad.block_matmul(_blocks(op), h)


class Dense:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.W = store.weight(f"{name}.W", n_in, n_out)
        self.b = store.bias(f"{name}.b", n_out)

    def __call__(self, x: Tensor, activation: str = "linear") -> Tensor:
        return fc_forward(x, self, activation)

    @staticmethod
    def n_params(n_in: int, n_out: int) -> int:
        return n_in * n_out + n_out


def fc_forward(x: Tensor, layer: Dense, activation: str = "linear") -> Tensor:
    if x.shape[1] != layer.n_in:
        raise ShapeError(f"fc: input width {x.shape[1]} != layer width {layer.n_in}")
    return ACTIVATIONS[activation](ad.add(ad.matmul(x, layer.W), layer.b))


class GraphConv:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.W = store.weight(f"{name}.W", n_in, n_out)
        self.b = store.bias(f"{name}.b", n_out)

    def __call__(self, norm_adj: np.ndarray, h: Tensor) -> Tensor:
        return gcn_forward(norm_adj, h, self)


def gcn_forward(norm_adj: np.ndarray, h: Tensor, layer: GraphConv) -> Tensor:
    """relu(A_hat H W + b) with A_hat from ``graphbuild.normalize_adjacency``."""
    if h.shape[1] != layer.n_in:
        raise ShapeError(f"gcn: feature width {h.shape[1]} != layer width {layer.n_in}")
    return ad.relu(ad.add(ad.matmul(propagate(norm_adj, h), layer.W), layer.b))


class ChebConv:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, order: int = 3):
        if order < 1:
            raise ValueError(f"Chebyshev order must be >= 1, got {order}")
        self.n_in, self.n_out, self.order = n_in, n_out, order
        self.W = [store.weight(f"{name}.W{k}", n_in, n_out) for k in range(order)]
        self.b = store.bias(f"{name}.b", n_out)

    def __call__(self, laplacian: np.ndarray, h: Tensor) -> Tensor:
        return cheb_forward(laplacian, h, self)


def cheb_forward(laplacian: np.ndarray, h: Tensor, layer: ChebConv) -> Tensor:
    """relu(sum_k T_k(L) H W_k + b) using the recurrence on T_k(L) H."""
    if h.shape[1] != layer.n_in:
        raise ShapeError(f"cheb: feature width {h.shape[1]} != layer width {layer.n_in}")
    lap = _blocks(laplacian)
    terms = [h]
    if layer.order > 1:
        terms.append(ad.block_matmul(lap, h))
    for _ in range(2, layer.order):
        nxt = ad.sub(ad.scale(ad.block_matmul(lap, terms[-1]), 2.0), terms[-2])
        terms.append(nxt)
    acc = ad.matmul(terms[0], layer.W[0])
    for t, w in zip(terms[1:], layer.W[1:]):
        acc = ad.add(acc, ad.matmul(t, w))
    return ad.relu(ad.add(acc, layer.b))


class GraphAttention:
    """Single-head attention over the connectivity of A + A^T plus self loops."""

    slope = 0.2

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.W = store.weight(f"{name}.W", n_in, n_out)
        self.a_src = store.weight(f"{name}.a_src", n_out, 1)
        self.a_dst = store.weight(f"{name}.a_dst", n_out, 1)

    def __call__(self, adjacency: np.ndarray, h: Tensor) -> Tensor:
        return gat_forward(adjacency, h, self)


def attention_mask(adjacency: np.ndarray) -> np.ndarray:
    a = np.asarray(adjacency)
    return ((a + a.T) > 0) | np.eye(a.shape[0], dtype=bool)


def attention_weights(adjacency: np.ndarray, z: Tensor, layer: GraphAttention) -> Tensor:
    src = ad.matmul(z, layer.a_src)
    dst = ad.transpose(ad.matmul(z, layer.a_dst))
    scores = ad.leaky_relu(ad.add(src, dst), layer.slope)
    return ad.masked_softmax_rows(scores, attention_mask(adjacency))


def gat_forward(adjacency: np.ndarray, h: Tensor, layer: GraphAttention) -> Tensor:
    if h.shape[1] != layer.n_in:
        raise ShapeError(f"gat: feature width {h.shape[1]} != layer width {layer.n_in}")
    blocks = _blocks(adjacency)
    nb, m, _ = blocks.shape
    if h.shape[0] != nb * m:
        raise ShapeError(f"gat: {nb} graphs of {m} nodes vs features {h.shape}")
    z = ad.matmul(h, layer.W)
    outs = []
    for i, adj in enumerate(blocks):
        zi = z if nb == 1 else ad.slice_rows(z, i * m, (i + 1) * m)
        outs.append(ad.matmul(attention_weights(adj, zi, layer), zi))
    out = outs[0] if nb == 1 else ad.concat_rows(*outs)
    return ad.relu(out)


# ---------------------------------------------------------------------------
# recurrent cells; state is a tuple of (B, width) tensors, hidden state first


class _Cell:
    gates: tuple[str, ...] = ()

    def __init__(self, store: ParamStore, name: str, n_in: int, width: int):
        self.n_in, self.width = n_in, width
        self.Wx = {g: store.weight(f"{name}.Wx_{g}", n_in, width) for g in self.gates}
        self.Wh = {g: store.weight(f"{name}.Wh_{g}", width, width) for g in self.gates}
        self.b = {g: store.bias(f"{name}.b_{g}", width) for g in self.gates}

    def initial_state(self, batch: int) -> tuple[Tensor, ...]:
        return (Tensor(np.zeros((batch, self.width))),)

    def _pre(self, g: str, x: Tensor, h: Tensor) -> Tensor:
        return ad.add(ad.add(ad.matmul(x, self.Wx[g]), ad.matmul(h, self.Wh[g])), self.b[g])

    def _check(self, x: Tensor, state) -> None:
        if x.shape[1] != self.n_in:
            raise ShapeError(f"{type(self).__name__}: input width {x.shape[1]} != {self.n_in}")
        for s in state:
            if s.shape[1] != self.width:
                raise ShapeError(f"{type(self).__name__}: state width {s.shape[1]} != {self.width}")

    @classmethod
    def n_params(cls, n_in: int, width: int) -> int:
        return len(cls.gates) * (n_in * width + width * width + width)

    def run(self, xs: list[Tensor]) -> Tensor:
        """Feed a sequence and return the final hidden state."""
        state = self.initial_state(xs[0].shape[0])
        for x in xs:
            state = self(x, state)
        return state[0]


class RNNCell(_Cell):
    gates = ("h",)

    def __call__(self, x: Tensor, state) -> tuple[Tensor]:
        self._check(x, state)
        return (ad.tanh(self._pre("h", x, state[0])),)


def rnn_cell(x: Tensor, state, cell: RNNCell):
    return cell(x, state)


class GRUCell(_Cell):
    gates = ("z", "r", "n")

    def __call__(self, x: Tensor, state) -> tuple[Tensor]:
        self._check(x, state)
        h = state[0]
        z = ad.sigmoid(self._pre("z", x, h))
        r = ad.sigmoid(self._pre("r", x, h))
        cand = ad.tanh(ad.add(ad.add(ad.matmul(x, self.Wx["n"]),
                                     ad.matmul(ad.hadamard(r, h), self.Wh["n"])),
                              self.b["n"]))
        # h' = (1 - z) * cand + z * h
        new_h = ad.add(cand, ad.hadamard(z, ad.sub(h, cand)))
        return (new_h,)


def gru_cell(x: Tensor, state, cell: GRUCell):
    return cell(x, state)


class LSTMCell(_Cell):
    gates = ("i", "f", "g", "o")

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        return (Tensor(np.zeros((batch, self.width))), Tensor(np.zeros((batch, self.width))))

    def __call__(self, x: Tensor, state) -> tuple[Tensor, Tensor]:
        self._check(x, state)
        h, c = state
        i = ad.sigmoid(self._pre("i", x, h))
        f = ad.sigmoid(self._pre("f", x, h))
        g = ad.tanh(self._pre("g", x, h))
        o = ad.sigmoid(self._pre("o", x, h))
        c = ad.add(ad.hadamard(f, c), ad.hadamard(i, g))
        h = ad.hadamard(o, ad.tanh(c))
        return h, c


def lstm_cell(x: Tensor, state, cell: LSTMCell):
    return cell(x, state)


CELLS = {"rnn": RNNCell, "gru": GRUCell, "lstm": LSTMCell}
