"""Training loop, metrics and experiment presets."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .models import Model
from .numkit import Adam, cross_entropy_loss, mse_loss

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Loss became NaN or infinite during training."""


class DatasetRequired(RuntimeError):
    """A preset needs an external dataset that is not available."""


@dataclass
class TaskData:
    """Padded frames with either per-agent regression targets or slot labels."""

    features: np.ndarray                  # (S, N, F)
    mask: np.ndarray                      # (S, N)
    targets: Optional[np.ndarray] = None  # (S, N, T) regression
    labels: Optional[np.ndarray] = None   # (S,) classification
    ids: Optional[np.ndarray] = None      # (S,) example ids for leakage checks

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def is_classification(self) -> bool:
        return self.labels is not None

    def subset(self, idx) -> "TaskData":
        idx = np.asarray(idx)
        return TaskData(self.features[idx], self.mask[idx],
                        None if self.targets is None else self.targets[idx],
                        None if self.labels is None else self.labels[idx],
                        None if self.ids is None else self.ids[idx])


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    lr_halving_period: int = 10
    seed: int = 0
    task: str = "BALLS"
    metric: str = "rms"          # rms | accuracy | euclid
    scale_targets: bool = True
    eval_batch: int = 512

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    return config.lr * 2.0 ** -(epoch // config.lr_halving_period)


@dataclass
class Metrics:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_metric: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    best_metric: Optional[float] = None
    final_metric: Optional[float] = None
    encoder_evals: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    metrics: Metrics
    target_scale: Optional[np.ndarray]
    best_state: list


def higher_is_better(metric: str) -> bool:
    return metric == "accuracy"


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def predict(model: Model, data: TaskData, batch: int = 512,
            target_scale: np.ndarray | None = None) -> np.ndarray:
    """Eval-mode outputs: probabilities (S, N) or unscaled targets (S, N, T)."""
    model.eval()
    outs = []
    for idx in _batches(len(data), batch, None):
        out = model.forward(data.features[idx], data.mask[idx])
        if model.spec.head == "softmax":
            outs.append(out.probs)
        else:
            y = out.per_agent
            if target_scale is not None:
                y = y * target_scale
            outs.append(np.where(data.mask[idx][..., None], y, 0.0))
    return np.concatenate(outs)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax equals the label; ties go to the lowest index."""
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


def masked_rms(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    diff = (pred - target)[mask]
    return float(np.sqrt(np.mean(diff ** 2)))


def euclid_per_horizon(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean Euclidean error per horizon; last axis holds (x, y) pairs per horizon."""
    p = pred[mask].reshape(-1, pred.shape[-1] // 2, 2)
    t = target[mask].reshape(-1, target.shape[-1] // 2, 2)
    return np.linalg.norm(p - t, axis=-1).mean(axis=0)


def evaluate_classification(model: Model, data: TaskData, batch: int = 512) -> float:
    return accuracy(predict(model, data, batch), data.labels)


def evaluate_regression(model: Model, data: TaskData, metric: str = "rms",
                        target_scale: np.ndarray | None = None, batch: int = 512):
    pred = predict(model, data, batch, target_scale)
    if metric == "rms":
        return masked_rms(pred, data.targets, data.mask)
    per_h = euclid_per_horizon(pred, data.targets, data.mask)
    return {"per_horizon": per_h.tolist(), "mean": float(per_h.mean())}


def _metric_value(metric, value) -> float:
    return value["mean"] if isinstance(value, dict) else float(value)


def _loss(model: Model, data: TaskData, idx, scale):
    out = model.forward(data.features[idx], data.mask[idx])
    mask = data.mask[idx]
    if data.is_classification:
        loss, grad = cross_entropy_loss(out.per_agent[..., 0], data.labels[idx], mask)
        return loss, grad[..., None]
    target = data.targets[idx] / scale
    loss, grad = mse_loss(out.per_agent, target, mask[..., None])
    return loss, grad


def evaluate(model: Model, data: TaskData, config: TrainConfig, scale=None):
    if data.is_classification:
        return evaluate_classification(model, data, config.eval_batch)
    return evaluate_regression(model, data, config.metric, scale, config.eval_batch)


def test_loss(model: Model, data: TaskData, config: TrainConfig, scale) -> float:
    model.eval()
    total, count = 0.0, 0
    for idx in _batches(len(data), config.eval_batch, None):
        loss, _ = _loss(model, data, idx, scale)
        total += loss * len(idx)
        count += len(idx)
    return total / max(count, 1)


def target_scale_of(data: TaskData) -> np.ndarray:
    t = data.targets[data.mask]
    s = t.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def train(model: Model, train_data: TaskData, test_data: TaskData, config: TrainConfig,
          on_epoch: Callable[[int, Metrics], None] | None = None) -> TrainResult:
    """Minibatch ADAM with step-halving schedule; keeps the best test-metric state."""
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if train_data.ids is not None and test_data.ids is not None:
        leak = np.intersect1d(train_data.ids, test_data.ids)
        if leak.size:
            raise ValueError(f"train/test leakage: {leak.size} shared example ids")
    if model.spec.batchnorm and config.batch_size < 2:
        raise ValueError("batchnorm needs batch_size >= 2")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    scale = None
    if not train_data.is_classification:
        scale = target_scale_of(train_data) if config.scale_targets else np.ones(
            train_data.targets.shape[-1])
    opt = Adam(model.parameters(), alpha=config.lr)
    metrics = Metrics()
    better = higher_is_better(config.metric)

    def record(epoch, train_loss):
        value = evaluate(model, test_data, config, scale)
        metrics.test_metric.append(value)
        metrics.test_loss.append(test_loss(model, test_data, config, scale))
        metrics.train_loss.append(train_loss)
        m = _metric_value(config.metric, value)
        best = metrics.best_metric
        if best is None or (m > best if better else m < best):
            metrics.best_metric, metrics.best_epoch = m, epoch
            return True
        return False

    best_state = model.copy_state()
    if record(-1, float("nan")):
        best_state = model.copy_state()
    model.reset_counters()
    for epoch in range(config.epochs):
        opt.alpha = lr_at(config, epoch)
        metrics.lr.append(opt.alpha)
        model.train()
        total, count = 0.0, 0
        for idx in _batches(len(train_data), config.batch_size, rng):
            if model.spec.batchnorm and len(idx) < 2:
                continue
            loss, grad = _loss(model, train_data, idx, scale)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
            count += len(idx)
        if epoch == 0:
            metrics.encoder_evals = dict(model.counters)
        if record(epoch, total / max(count, 1)):
            best_state = model.copy_state()
        log.info("epoch %d lr %.2e train %.5f test %s", epoch, opt.alpha,
                 metrics.train_loss[-1], metrics.test_metric[-1])
        if on_epoch is not None:
            on_epoch(epoch, metrics)
    metrics.final_metric = _metric_value(config.metric, metrics.test_metric[-1])
    model.load_state(best_state)
    metrics.seconds = time.perf_counter() - t0
    return TrainResult(model, metrics, scale, best_state)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(preset: str, overrides: dict | None = None, seed: int | None = None,
                   out_dir=None) -> dict:
    """Run a named preset end to end; see :mod:`vain.experiments`."""
    from .experiments import run_experiment as _run
    return _run(preset, overrides, seed, out_dir)
