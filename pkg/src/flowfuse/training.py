"""Splitting, Adam, the mini-batch training loop and MAE/MSE evaluation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tape
from .graphbuild import FeatureTransform, FlowSeries, Sample, fit_feature_transform, make_samples
from .ingest import Platform
from .models import Forecaster, encode_batch, mse_loss
from .params import ParamStore, derive_rng

logger = logging.getLogger(__name__)

__all__ = [
    "ParamStore", "TrainConfig", "TrainResult", "MetricsReport", "NumericalError",
    "chrono_split", "mse_loss", "adam_step", "train", "evaluate",
    "mean_predictor_baseline", "fit_transforms", "prepare", "Prepared", "fit_and_evaluate",
]


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 16
    epochs: int = 200
    patience: int = 20
    split_fraction: float = 0.7
    val_fraction: float = 0.1
    random_split: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, epochs and patience must be >= 1")


def chrono_split(samples: Sequence[Sample], fraction: float, shuffle: bool = False,
                 seed: int = 0) -> tuple[list[Sample], list[Sample]]:
    """First floor(fraction * n) samples train, the rest test.

    With ``shuffle`` the samples are permuted first (leaks neighbouring
    intervals across the boundary; kept for comparison only).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    items = list(samples)
    if shuffle:
        order = derive_rng(seed, 4).permutation(len(items))
        items = [items[i] for i in order]
    n_train = math.floor(fraction * len(items))
    return items[:n_train], items[n_train:]


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter; gradients are cleared."""
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None


def fit_transforms(taxi: FlowSeries, aux: FlowSeries, last_index: int) -> dict[Platform, FeatureTransform]:
    """Per-platform transforms fitted on intervals 0..last_index (inclusive)."""
    return {
        Platform.TAXI: fit_feature_transform([g.features for g in taxi.graphs[:last_index + 1]]),
        Platform.AUX: fit_feature_transform([g.features for g in aux.graphs[:last_index + 1]]),
    }


@dataclass
class Prepared:
    train: list[Sample]
    test: list[Sample]
    transforms: dict[Platform, FeatureTransform]
    M: int


def prepare(taxi: FlowSeries, aux: FlowSeries, k: int, P: int, cfg: TrainConfig) -> Prepared:
    """Samples, split, and transforms fitted only on data visible to training."""
    samples = make_samples(taxi, aux, k, P)
    if len(samples) < 2:
        raise ValueError(f"only {len(samples)} samples; need at least two days of data")
    train_s, test_s = chrono_split(samples, cfg.split_fraction, cfg.random_split, cfg.seed)
    if not train_s or not test_s:
        raise ValueError("split leaves an empty train or test set")
    last = max(s.target_index for s in train_s)
    return Prepared(train_s, test_s, fit_transforms(taxi, aux, last), len(taxi.registry))


@dataclass
class MetricsReport:
    model: str
    mae: float
    mse: float
    per_zone_mae: list[float]
    n_samples: int

    @property
    def frac_zones_above_mean(self) -> float:
        z = np.asarray(self.per_zone_mae)
        return float((z > self.mae).mean()) if z.size else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frac_zones_above_mean"] = self.frac_zones_above_mean
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["model"], d["mae"], d["mse"], list(d["per_zone_mae"]), d["n_samples"])


def metrics_from_arrays(name: str, pred: np.ndarray, truth: np.ndarray) -> MetricsReport:
    """MAE/MSE over every (sample, channel, zone) entry of (n, 2, M) arrays."""
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    return MetricsReport(
        name,
        float(np.abs(err).mean()),
        float((err * err).mean()),
        np.abs(err).mean(axis=(0, 1)).tolist(),
        int(err.shape[0]),
    )


def _ordered(samples: Sequence[Sample]) -> list[Sample]:
    return sorted(samples, key=lambda s: s.target_index)


def evaluate(model: Forecaster, samples: Sequence[Sample],
             transforms: Mapping[Platform, FeatureTransform]) -> MetricsReport:
    """Raw-count MAE/MSE of clamped predictions.  Sample order does not matter."""
    samples = _ordered(samples)
    pred = model.predict(samples, transforms)
    truth = np.stack([s.target.features for s in samples])
    return metrics_from_arrays(model.name, pred, truth)


def mean_predictor(train: Sequence[Sample], P: int) -> np.ndarray:
    """Training-mean target per (slot of day, channel, zone), shape (P, 2, M)."""
    truth = np.stack([s.target.features for s in train])
    slots = np.array([s.target_index % P for s in train])
    overall = truth.mean(axis=0)
    table = np.empty((P,) + overall.shape)
    for slot in range(P):
        hit = slots == slot
        table[slot] = truth[hit].mean(axis=0) if hit.any() else overall
    return table


def mean_predictor_baseline(train: Sequence[Sample], test: Sequence[Sample], P: int | None = None) -> MetricsReport:
    P = P or train[0].target.interval.P
    table = mean_predictor(train, P)
    test = _ordered(test)
    pred = np.stack([table[s.target_index % P] for s in test])
    truth = np.stack([s.target.features for s in test])
    return metrics_from_arrays("mean_predictor", pred, truth)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_curve: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield start // size, order[start:start + size]


def train(model: Forecaster, samples: Sequence[Sample],
          transforms: Mapping[Platform, FeatureTransform], cfg: TrainConfig) -> TrainResult:
    """Mini-batch Adam with early stopping on validation MAE.

    The last ``val_fraction`` of ``samples`` (by target time) is held out for
    validation when it holds at least one sample; otherwise the epoch's
    training loss is monitored.  The best-scoring parameters are restored on
    ``model`` and returned.
    """
    samples = _ordered(samples)
    n_val = math.floor(cfg.val_fraction * len(samples))
    fit, val = (samples[:-n_val], samples[-n_val:]) if n_val else (samples, [])
    if not fit:
        raise ValueError("no samples left to fit after holding out validation")

    # encode the validation set once; it never changes
    val_truth = np.stack([s.target.features for s in val]) if val else None

    best = math.inf
    best_params = model.params.snapshot()
    result = TrainResult(best_params)
    since_best = 0
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, 2, epoch).permutation(len(fit))
        losses = []
        for b, idx in _batches(len(fit), cfg.batch_size, order):
            batch = encode_batch([fit[i] for i in idx], transforms, model.config)
            with Tape() as tape:
                loss = model.loss(batch, training=True, seed=(cfg.seed, 3, epoch, b))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {b} ({model.name})")
            tape.backward(loss)
            adam_step(model.params, cfg.learning_rate)
            losses.append(value * len(idx))
        train_loss = sum(losses) / len(fit)

        if val:
            pred = model.predict(val, transforms)
            score = float(np.abs(pred - val_truth).mean())
        else:
            score = train_loss
        result.loss_curve.append({"epoch": epoch, "train_loss": train_loss, "val_mae": score})
        if score < best:
            best, since_best = score, 0
            best_params = model.params.snapshot()
            result.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                result.stopped_early = True
                break

    model.params.restore(best_params)
    result.params = best_params
    logger.info("%s: best epoch %d, monitored score %.4f", model.name, result.best_epoch, best)
    return result


def batch_loss(model: Forecaster, samples: Sequence[Sample],
               transforms: Mapping[Platform, FeatureTransform]) -> float:
    """Eval-mode transformed-space MSE over ``samples``."""
    batch = encode_batch(list(samples), transforms, model.config)
    return mse_loss(model.forward(batch, training=False), batch.target).item()


def fit_and_evaluate(model_cfg, train_cfg: TrainConfig, data: Prepared):
    """Build, train and score one model; returns (model, TrainResult, MetricsReport)."""
    model = Forecaster(model_cfg, seed=train_cfg.seed)
    result = train(model, data.train, data.transforms, train_cfg)
    return model, result, evaluate(model, data.test, data.transforms)
