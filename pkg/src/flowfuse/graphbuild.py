"""Flow graphs, node features, feature scaling and supervised sample assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import DataError, IntervalIndex, Platform, ZoneRegistry

SIGMA_FLOOR = 1e-8


@dataclass(eq=False)
class FlowGraph:
    """Trip counts between zones for one (platform, interval); entry (i, j) is i -> j."""

    interval: IntervalIndex
    platform: Platform
    adjacency: np.ndarray

    @cached_property
    def normalized(self) -> np.ndarray:
        return normalize_adjacency(self)

    @cached_property
    def features(self) -> "NodeFeatureMatrix":
        return node_features(self)


@dataclass(eq=False)
class NodeFeatureMatrix:
    """Row 0 is inflow per zone (column sums), row 1 is outflow (row sums)."""

    interval: IntervalIndex
    platform: Platform
    features: np.ndarray

    @property
    def inflow(self) -> np.ndarray:
        return self.features[0]

    @property
    def outflow(self) -> np.ndarray:
        return self.features[1]


def build_flow_graph(rows: Sequence[tuple], registry: ZoneRegistry,
                     interval: IntervalIndex | None = None,
                     platform=Platform.TAXI) -> FlowGraph:
    """Dense adjacency from the (…, origin, dest, count) rows of one interval.

    Rows may be 3-tuples (origin, dest, count) or full 4-tuple edge-list rows.
    """
    m = len(registry)
    adj = np.zeros((m, m))
    seen = set()
    for row in rows:
        o, d, c = row[-3:]
        if (o, d) in seen:
            raise DataError(f"duplicate edge {o}->{d} in interval {interval}")
        seen.add((o, d))
        try:
            adj[registry.index(o), registry.index(d)] = c
        except KeyError as exc:
            raise DataError(f"zone {exc.args[0]} not in registry") from None
    if (adj < 0).any():
        raise DataError(f"negative trip count in interval {interval}")
    return FlowGraph(interval or IntervalIndex(0, 1), Platform(platform), adj)


def node_features(g: FlowGraph) -> NodeFeatureMatrix:
    a = g.adjacency
    return NodeFeatureMatrix(g.interval, g.platform, np.stack([a.sum(axis=0), a.sum(axis=1)]))


def normalize_adjacency(g) -> np.ndarray:
    """Symmetric GCN propagation matrix D^-1/2 (A + A^T + I) D^-1/2."""
    a = g.adjacency if isinstance(g, FlowGraph) else np.asarray(g, dtype=np.float64)
    s = a + a.T + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(s.sum(axis=1))
    out = s * d[:, None] * d[None, :]
    # exact symmetry regardless of rounding order
    return 0.5 * (out + out.T)


def scaled_laplacian(norm_adj: np.ndarray) -> np.ndarray:
    """L - I with L = I - norm_adj, i.e. the Chebyshev operator for lambda_max = 2."""
    return -np.asarray(norm_adj)


@dataclass(frozen=True)
class FeatureTransform:
    """Per-channel standardisation of log(1 + x) for arrays shaped (..., 2, M)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (np.log1p(x) - self.mean[:, None]) / self.std[:, None]

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return np.expm1(z * self.std[:, None] + self.mean[:, None])

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureTransform":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_feature_transform(train: Sequence) -> FeatureTransform:
    """Fit channel means and std devs of log(1 + x) over all zones and intervals."""
    if len(train) == 0:
        raise ValueError("cannot fit a feature transform on an empty training set")
    stack = np.stack([t.features if isinstance(t, NodeFeatureMatrix) else np.asarray(t)
                      for t in train])
    logs = np.log1p(stack)
    mean = logs.mean(axis=(0, 2))
    std = np.maximum(logs.std(axis=(0, 2)), SIGMA_FLOOR)
    return FeatureTransform(mean, std)


@dataclass
class FlowSeries:
    """All flow graphs of one platform over a contiguous global timeline."""

    platform: Platform
    registry: ZoneRegistry
    P: int
    graphs: list[FlowGraph] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, t: int) -> FlowGraph:
        return self.graphs[t]

    @property
    def days(self) -> int:
        return len(self.graphs) // self.P

    def adjacency_stack(self) -> np.ndarray:
        return np.stack([g.adjacency for g in self.graphs])

    def feature_stack(self) -> np.ndarray:
        return np.stack([g.features.features for g in self.graphs])


def build_series(rows: Sequence[tuple[int, int, int, int]], registry: ZoneRegistry, P: int,
                 n_intervals: int, platform=Platform.TAXI) -> FlowSeries:
    """Group sorted edge-list rows by interval and build every graph in 0..n_intervals-1."""
    buckets: list[list] = [[] for _ in range(n_intervals)]
    for row in rows:
        t = row[0]
        if not 0 <= t < n_intervals:
            raise DataError(f"edge-list interval {t} outside 0..{n_intervals - 1}")
        buckets[t].append(row)
    platform = Platform(platform)
    graphs = [build_flow_graph(b, registry, IntervalIndex(t, P), platform)
              for t, b in enumerate(buckets)]
    return FlowSeries(platform, registry, P, graphs)


def series_from_counts(counts: np.ndarray, registry: ZoneRegistry, P: int,
                       platform=Platform.TAXI) -> FlowSeries:
    """Wrap a (T, M, M) count array without going through an edge list."""
    platform = Platform(platform)
    graphs = [FlowGraph(IntervalIndex(t, P), platform, np.asarray(a, dtype=np.float64))
              for t, a in enumerate(counts)]
    return FlowSeries(platform, registry, P, graphs)


@dataclass(eq=False)
class Sample:
    history: list[tuple[FlowGraph, NodeFeatureMatrix]]
    auxiliary: tuple[FlowGraph, NodeFeatureMatrix]
    target: NodeFeatureMatrix

    @property
    def target_index(self) -> int:
        return self.target.interval.global_index

    @property
    def slot(self) -> int:
        return self.target.interval.slot


def make_samples(taxi: FlowSeries, aux: FlowSeries, k: int, P: int) -> list[Sample]:
    """One sample per target T >= max(k, P): taxi history T-k..T-1, auxiliary at T-P."""
    if len(taxi) != len(aux):
        raise DataError(f"series lengths differ: taxi {len(taxi)} vs aux {len(aux)}")
    if k < 1:
        raise ValueError(f"history length k must be >= 1, got {k}")
    samples = []
    for T in range(max(k, P), len(taxi)):
        hist = [(taxi[t], taxi[t].features) for t in range(T - k, T)]
        a = aux[T - P]
        samples.append(Sample(hist, (a, a.features), taxi[T].features))
    return samples


def write_matrix(path, a: np.ndarray) -> None:
    """Dense text: first line the size M, then M rows of M numbers."""
    a = np.asarray(a)
    with open(path, "w") as fh:
        fh.write(f"{a.shape[0]}\n")
        np.savetxt(fh, a, fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        m = int(fh.readline())
        a = np.loadtxt(fh, ndmin=2)
    if a.shape != (m, m) and not (m == 0 and a.size == 0):
        raise DataError(f"{path}: expected {m}x{m} matrix, got {a.shape}")
    return a


def dump_series(series: FlowSeries, directory) -> None:
    """Write one adjacency file and one feature file per interval for inspection."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for g in series.graphs:
        stem = f"{series.platform.value}_{g.interval.global_index:05d}"
        write_matrix(out / f"{stem}_adj.txt", g.adjacency)
        np.savetxt(out / f"{stem}_features.txt", g.features.features, fmt="%.17g")
