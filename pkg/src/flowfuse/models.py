"""The fused GCN -> LSTM -> FC forecaster, its ablations and the comparison baselines.

Every model consumes the same encoded batch: a sequence of interval steps
(auxiliary platform first by default, then the taxi history in time order),
each carrying normalised and raw adjacency stacks plus transformed node
features.  Outputs are (B, 2M) rows in transformed feature space laid out
channel-major (M inflow values, then M outflow values).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .graphbuild import FeatureTransform, Sample, scaled_laplacian
from .ingest import Platform
from .layers import CELLS, ChebConv, Dense, GraphAttention, GraphConv, LSTMCell
from .params import ParamStore

VARIANTS = ("full", "no_spatial", "no_temporal", "no_fusion")
BASELINES = ("gcn", "lstm", "gru", "rnn", "gat", "cgcn")

CHECKPOINT_MAGIC = b"FLOWFUSE"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    k: int = 3
    P: int = 8
    M: int = 265
    gcn_width: int = 32
    embed_width: int = 16
    lstm_width: int = 32
    # hidden FC widths; the output layer (2*M, linear) is always appended
    fc_widths: tuple[int, ...] = (32, 128)
    dropout_p: float = 0.1
    variant: str | None = "full"
    baseline: str | None = None
    aux_first: bool = True
    cheb_order: int = 3
    graph_width: int = 32
    recurrent_width: int = 32

    def __post_init__(self):
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if (self.variant is None) == (self.baseline is None):
            raise ValueError("exactly one of variant / baseline must be set")
        if self.variant is not None and self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.baseline is not None and self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}; choose from {BASELINES}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        for name in ("k", "P", "M", "gcn_width", "embed_width", "lstm_width",
                     "cheb_order", "graph_width", "recurrent_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def for_model(cls, name: str, **kw) -> "ModelConfig":
        if name in BASELINES:
            return cls(variant=None, baseline=name, **kw)
        return cls(variant=name, baseline=None, **kw)

    @property
    def name(self) -> str:
        return self.baseline or self.variant

    @property
    def uses_aux(self) -> bool:
        return self.variant != "no_fusion"

    @property
    def seq_len(self) -> int:
        return self.k + int(self.uses_aux)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_widths"] = list(self.fc_widths)
        return d

    def hash(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class Step:
    """One interval of the input sequence for a whole batch."""

    platform: Platform
    norm_adj: np.ndarray   # (B, M, M)
    raw_adj: np.ndarray    # (B, M, M)
    node_feats: np.ndarray  # (B*M, 2) node-major
    flat_feats: np.ndarray  # (B, 2M) node-major flatten

    @property
    def laplacian(self) -> np.ndarray:
        return scaled_laplacian(self.norm_adj)


@dataclass
class Batch:
    steps: list[Step]
    target: np.ndarray      # (B, 2M) transformed, channel-major
    target_index: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.target.shape[0]


def encode_batch(samples: Sequence[Sample], transforms: Mapping[Platform, FeatureTransform],
                 config: ModelConfig) -> Batch:
    """Stack samples into the step sequence the models consume."""
    if not samples:
        raise ValueError("empty batch")
    m = config.M
    seqs = []
    for s in samples:
        if len(s.history) != config.k:
            raise ShapeError(f"sample has {len(s.history)} history steps, config k={config.k}")
        hist = [(Platform.TAXI, g, n) for g, n in s.history]
        if config.uses_aux:
            aux = (Platform.AUX, *s.auxiliary)
            hist = [aux] + hist if config.aux_first else hist + [aux]
        seqs.append(hist)

    steps = []
    for pos in range(len(seqs[0])):
        platform = seqs[0][pos][0]
        graphs = [seq[pos][1] for seq in seqs]
        if graphs[0].adjacency.shape != (m, m):
            raise ShapeError(f"graph is {graphs[0].adjacency.shape}, config M={m}")
        feats = np.stack([transforms[platform].apply(seq[pos][2].features) for seq in seqs])
        node_major = feats.transpose(0, 2, 1)  # (B, M, 2)
        steps.append(Step(
            platform,
            np.stack([g.normalized for g in graphs]),
            np.stack([g.adjacency for g in graphs]),
            node_major.reshape(-1, 2),
            node_major.reshape(len(samples), 2 * m),
        ))
    target = np.stack([transforms[Platform.TAXI].apply(s.target.features).reshape(-1)
                       for s in samples])
    return Batch(steps, target, [s.target_index for s in samples])


class SpatialEmbedding:
    """Graph layer -> dropout -> linear FC for one platform.

    ``conv`` picks the graph layer: ``gcn`` (normalised adjacency), ``cheb``
    (scaled Laplacian, order ``cfg.cheb_order``) or ``gat`` (raw connectivity).
    """

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig, conv: str = "gcn"):
        if conv == "gcn":
            self.conv = GraphConv(store, f"{name}.gcn", 2, cfg.gcn_width)
            width = cfg.gcn_width
        elif conv == "cheb":
            self.conv = ChebConv(store, f"{name}.cheb", 2, cfg.graph_width, cfg.cheb_order)
            width = cfg.graph_width
        elif conv == "gat":
            self.conv = GraphAttention(store, f"{name}.gat", 2, cfg.graph_width)
            width = cfg.graph_width
        else:
            raise ValueError(f"unknown graph layer {conv!r}")
        self.kind = conv
        self.fc = Dense(store, f"{name}.fc", width, cfg.embed_width)
        self.p = cfg.dropout_p

    def operator(self, step: Step) -> np.ndarray:
        if self.kind == "gcn":
            return step.norm_adj
        return step.laplacian if self.kind == "cheb" else step.raw_adj

    def __call__(self, step: Step, training: bool, seed) -> Tensor:
        h = self.conv(self.operator(step), Tensor(step.node_feats))
        h = ad.dropout(h, self.p, training, seed)
        return self.fc(h, "linear")


def spatial_embed(step: Step, embedder: SpatialEmbedding, training: bool = False,
                  seed=None) -> Tensor:
    """Per-node embeddings of one step, shape (B*M, E)."""
    return embedder(step, training, seed)


class Forecaster:
    """Any of the ten models, selected by ``config.variant`` or ``config.baseline``."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params = ParamStore(seed)
        cfg, store = config, self.params
        kind = cfg.name
        platforms = [Platform.AUX, Platform.TAXI] if cfg.uses_aux else [Platform.TAXI]

        if kind not in ("no_spatial", "lstm", "gru", "rnn"):
            conv = {"gat": "gat", "cgcn": "cheb"}.get(kind, "gcn")
            self.embed = {p: SpatialEmbedding(store, f"embed_{p.value}", cfg, conv) for p in platforms}
            step_width = cfg.M * cfg.embed_width
        else:
            step_width = 2 * cfg.M

        if kind in ("full", "no_fusion", "no_spatial"):
            self.cell = LSTMCell(store, "lstm", step_width, cfg.lstm_width)
            head_in = cfg.lstm_width
        elif kind in ("lstm", "gru", "rnn"):
            self.cell = CELLS[kind](store, kind, step_width, cfg.recurrent_width)
            head_in = cfg.recurrent_width
        else:
            self.cell = None
            head_in = cfg.seq_len * step_width

        widths = [head_in, *cfg.fc_widths, 2 * cfg.M]
        self.head = [Dense(store, f"head{i}", a, b) for i, (a, b) in enumerate(zip(widths, widths[1:]))]

    @property
    def name(self) -> str:
        return self.config.name

    def _step_repr(self, i: int, step: Step, training: bool, seed) -> Tensor:
        cfg = self.config
        b = step.flat_feats.shape[0]
        kind = cfg.name
        if kind in ("no_spatial", "lstm", "gru", "rnn"):
            return Tensor(step.flat_feats)
        dseed = None if seed is None else (*seed, i)
        out = spatial_embed(step, self.embed[step.platform], training, dseed)
        return ad.reshape(out, b, cfg.M * cfg.embed_width)

    def forward(self, batch: Batch, training: bool = False, seed=None) -> Tensor:
        """Transformed-space predictions (B, 2M).

        ``seed`` is a tuple of ints that, extended with the step position,
        seeds each dropout mask; it only matters when ``training`` is true.
        """
        if training and seed is None:
            seed = (self.seed,)
        if len(batch.steps) != self.config.seq_len:
            raise ShapeError(f"batch has {len(batch.steps)} steps, model expects {self.config.seq_len}")
        xs = [self._step_repr(i, s, training, seed) for i, s in enumerate(batch.steps)]
        h = self.cell.run(xs) if self.cell is not None else ad.concat_cols(*xs)
        for layer in self.head[:-1]:
            h = layer(h, "relu")
        return self.head[-1](h, "linear")

    def loss(self, batch: Batch, training: bool = False, seed=None) -> Tensor:
        return mse_loss(self.forward(batch, training, seed), batch.target)

    def predict_transformed(self, samples: Sequence[Sample],
                            transforms: Mapping[Platform, FeatureTransform],
                            batch_size: int = 64) -> np.ndarray:
        out = []
        for i in range(0, len(samples), batch_size):
            batch = encode_batch(samples[i:i + batch_size], transforms, self.config)
            out.append(self.forward(batch, training=False).value)
        return np.concatenate(out).reshape(len(samples), 2, self.config.M)

    def predict(self, samples: Sequence[Sample], transforms: Mapping[Platform, FeatureTransform],
                batch_size: int = 64) -> np.ndarray:
        """Raw-count predictions (n, 2, M), clamped at zero."""
        z = self.predict_transformed(samples, transforms, batch_size)
        return np.maximum(transforms[Platform.TAXI].invert(z), 0.0)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    return ad.mean(ad.square(ad.sub(pred, target)))


@dataclass
class FlowPrediction:
    target_index: int
    values: np.ndarray  # (2, M) raw counts

    @property
    def inflow(self) -> np.ndarray:
        return self.values[0]

    @property
    def outflow(self) -> np.ndarray:
        return self.values[1]


def _single(model: Forecaster, sample: Sample, transforms, training: bool, seed) -> FlowPrediction:
    batch = encode_batch([sample], transforms, model.config)
    z = model.forward(batch, training, seed).value.reshape(2, model.config.M)
    raw = np.maximum(transforms[Platform.TAXI].invert(z), 0.0)
    return FlowPrediction(sample.target_index, raw)


def stcgef_forward(model: Forecaster, sample: Sample, transforms, training: bool = False,
                   seed=None) -> FlowPrediction:
    if model.config.variant != "full":
        raise ValueError(f"stcgef_forward needs the full model, got {model.name}")
    return _single(model, sample, transforms, training, seed)


def variant_forward(model: Forecaster, sample: Sample, transforms, training: bool = False,
                    seed=None) -> FlowPrediction:
    if model.config.variant is None:
        raise ValueError(f"{model.name} is a baseline, not an ablation variant")
    return _single(model, sample, transforms, training, seed)


def baseline_forward(model: Forecaster, sample: Sample, transforms, training: bool = False,
                     seed=None) -> FlowPrediction:
    if model.config.baseline is None:
        raise ValueError(f"{model.name} is not a baseline")
    return _single(model, sample, transforms, training, seed)


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian): 8-byte magic, u32 version, 32-byte sha256 of the
# model config, u32 parameter count, then per parameter: u32 name length,
# utf-8 name, u32 rows, u32 cols, rows*cols float64 in row-major order.


def save_checkpoint(path, params: ParamStore, config: ModelConfig) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), config.hash(),
             struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode()
        rows, cols = t.shape
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<II", rows, cols),
                  np.ascontiguousarray(t.value, dtype="<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, config: ModelConfig) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if take(32) != config.hash():
        raise CheckpointError(f"{path}: checkpoint was written for a different model config")
    (count,) = struct.unpack("<I", take(4))
    values = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        rows, cols = struct.unpack("<II", take(8))
        values[name] = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).copy()
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return values


def load_model(path, config: ModelConfig, seed: int = 0) -> Forecaster:
    model = Forecaster(config, seed)
    model.params.restore(load_checkpoint(path, config))
    return model
