"""Correlated two-platform synthetic trip counts in the edge-list format.

Intensity of trips i -> j in interval t for platform p::

    lam_p(t, i, j) = scale_p * base[i, j] * profile[t mod P]
                     * exp(z_p(t)) * max(0.05, 1 + lag * z_p(t - P))

where z_p = noise * (sqrt(rho) * u + sqrt(1 - rho) * e_p) mixes a city-wide
shock ``u`` shared by both platforms with a platform-specific one ``e_p``.
Both are unit-variance AR(1) series (coefficient ``persistence``) on the
global timeline, one value per interval.  Counts are Poisson draws made by
inverse-CDF lookup of one seeded uniform per (interval, i, j).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .graphbuild import FlowSeries, series_from_counts
from .ingest import Platform, ZoneRegistry, write_edge_list
from .params import derive_rng

FACTOR_FLOOR = 0.05


def default_profile(P: int) -> tuple[float, ...]:
    """Smooth daily curve: quiet at night, peak in the evening."""
    t = np.arange(P) / P
    return tuple(float(v) for v in 1.0 + 0.7 * np.sin(2.0 * np.pi * t - 2.0))


@dataclass(frozen=True)
class SynthConfig:
    M: int = 20
    D: int = 14
    P: int = 8
    base_mean: float = 2.0
    profile: tuple[float, ...] | None = None
    rho: float = 0.9
    lag: float = 0.5
    noise: float = 0.5
    persistence: float = 0.6
    aux_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "D", "P"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"synth.{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"synth.rho must lie in [0, 1], got {self.rho}")
        if self.base_mean < 0:
            raise ValueError(f"synth.base_mean must be >= 0, got {self.base_mean}")
        if self.aux_scale < 0:
            raise ValueError(f"synth.aux_scale must be >= 0, got {self.aux_scale}")
        if self.noise < 0:
            raise ValueError(f"synth.noise must be >= 0, got {self.noise}")
        if not 0.0 <= self.persistence < 1.0:
            raise ValueError(f"synth.persistence must lie in [0, 1), got {self.persistence}")
        prof = default_profile(self.P) if self.profile is None else tuple(float(v) for v in self.profile)
        if len(prof) != self.P:
            raise ValueError(f"synth.profile has {len(prof)} entries, expected P={self.P}")
        if min(prof) < 0:
            raise ValueError("synth.profile entries must be >= 0")
        object.__setattr__(self, "profile", prof)

    @property
    def n_intervals(self) -> int:
        return self.D * self.P

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profile"] = list(self.profile)
        return d


@dataclass
class SynthTrace:
    config: SynthConfig
    taxi: np.ndarray         # (T, M, M) counts
    aux: np.ndarray
    taxi_intensity: np.ndarray
    aux_intensity: np.ndarray
    registry: ZoneRegistry = field(init=False)

    def __post_init__(self):
        self.registry = ZoneRegistry(range(1, self.config.M + 1))

    def series(self) -> tuple[FlowSeries, FlowSeries]:
        P = self.config.P
        return (series_from_counts(self.taxi, self.registry, P, Platform.TAXI),
                series_from_counts(self.aux, self.registry, P, Platform.AUX))


def _ar1(rng: np.random.Generator, n: int, m: int, phi: float) -> np.ndarray:
    eps = rng.standard_normal((n, m))
    out = np.empty((n, m))
    out[0] = eps[0]
    c = np.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + c * eps[t]
    return out


def intensities(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Latent (T, M, M) intensities for taxi and auxiliary platforms."""
    T, M, P = cfg.n_intervals, cfg.M, cfg.P
    base = derive_rng(cfg.seed, "base").gamma(1.0, cfg.base_mean, size=(M, M))
    # shocks start one day early so the lag term exists from t = 0
    shared = _ar1(derive_rng(cfg.seed, "shared"), T + P, 1, cfg.persistence)
    own = {p: _ar1(derive_rng(cfg.seed, p.value), T + P, 1, cfg.persistence) for p in Platform}
    profile = np.asarray(cfg.profile)[np.arange(T) % P]

    out = []
    for p, scale in ((Platform.TAXI, 1.0), (Platform.AUX, cfg.aux_scale)):
        z = cfg.noise * (np.sqrt(cfg.rho) * shared + np.sqrt(1.0 - cfg.rho) * own[p])
        now = np.exp(z[P:])
        lagged = np.maximum(FACTOR_FLOOR, 1.0 + cfg.lag * z[:T])
        level = scale * profile[:, None] * now * lagged          # (T, 1)
        out.append(level[:, :, None] * base[None])
    return out[0], out[1]


def sample_counts(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(lam.shape)
    counts = np.where(lam > 0, poisson.ppf(u, np.where(lam > 0, lam, 1.0)), 0.0)
    return np.maximum(counts, 0.0).astype(np.int64)


def simulate(cfg: SynthConfig) -> SynthTrace:
    lam_t, lam_a = intensities(cfg)
    taxi = sample_counts(lam_t, derive_rng(cfg.seed, "counts", Platform.TAXI.value))
    aux = sample_counts(lam_a, derive_rng(cfg.seed, "counts", Platform.AUX.value))
    return SynthTrace(cfg, taxi, aux, lam_t, lam_a)


def to_edge_list(counts: np.ndarray, registry: ZoneRegistry) -> list[tuple[int, int, int, int]]:
    t, i, j = np.nonzero(counts)
    ids = registry.zone_ids
    return [(int(a), ids[b], ids[c], int(counts[a, b, c])) for a, b, c in zip(t, i, j)]


def generate(cfg: SynthConfig, out_dir) -> tuple[Path, Path]:
    """Write ``taxi_edges.csv`` and ``aux_edges.csv`` under ``out_dir``."""
    trace = simulate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = out / "taxi_edges.csv", out / "aux_edges.csv"
    write_edge_list(paths[0], to_edge_list(trace.taxi, trace.registry))
    write_edge_list(paths[1], to_edge_list(trace.aux, trace.registry))
    return paths


def interval_totals(counts: np.ndarray) -> np.ndarray:
    return counts.reshape(counts.shape[0], -1).sum(axis=1).astype(np.float64)


def deseasonalize(totals: np.ndarray, P: int) -> np.ndarray:
    """Relative deviation of each interval total from its slot-of-day mean."""
    totals = np.asarray(totals, dtype=np.float64)
    slots = np.arange(len(totals)) % P
    means = np.array([totals[slots == s].mean() for s in range(P)])
    return totals / np.where(means[slots] > 0, means[slots], 1.0) - 1.0


def cross_platform_correlation(taxi: np.ndarray, aux: np.ndarray, P: int) -> float:
    """Pearson correlation of the two platforms' deseasonalised interval totals."""
    a = deseasonalize(interval_totals(taxi), P)
    b = deseasonalize(interval_totals(aux), P)
    return float(np.corrcoef(a, b)[0, 1])


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    denom = (x * x).sum()
    return np.array([(x[:len(x) - L] * x[L:]).sum() / denom for L in range(max_lag + 1)])
