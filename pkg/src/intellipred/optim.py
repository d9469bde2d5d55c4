"""Training: Huber loss, Adam, warmup + cosine schedule, best-on-dev tracking."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .data import PartitionSplit, Sample
from .errors import ConfigError, NumericError
from .model import (
    HeadConfig,
    HeadParams,
    PreparedInput,
    collate,
    head_forward,
    init_params,
    predict_prepared,
    prepare,
)
from .tensor import RngStream


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 60000
    batch_size: int = 160
    peak_lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    warmup_steps: int = 2000
    min_lr: float = 0.0
    huber_delta: float = 1.0
    dropout_p: float = 0.1
    seed: int = 0
    dev_eval_every: int = 1000
    eval_batch_size: int = 64
    dtype: str = "float32"
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.warmup_steps < 0 or (self.steps > 0 and self.warmup_steps >= self.steps):
            raise ConfigError(f"warmup_steps ({self.warmup_steps}) must be < steps ({self.steps})")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.peak_lr > 0 or self.min_lr < 0 or self.min_lr > self.peak_lr:
            raise ConfigError("need peak_lr > 0 and 0 <= min_lr <= peak_lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or not self.adam_eps > 0:
            raise ConfigError("Adam betas must lie in [0, 1) and eps must be positive")
        if not self.huber_delta > 0:
            raise ConfigError(f"huber_delta must be positive, got {self.huber_delta}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.dev_eval_every < 1:
            raise ConfigError("dev_eval_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to ``min_lr`` at ``steps``."""
    if not 0 <= step <= cfg.steps:
        raise ValueError(f"step {step} outside [0, {cfg.steps}]")
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / (cfg.steps - cfg.warmup_steps)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "AdamState":
        """Zero moments shaped like ``params``."""
        return cls({k: np.zeros_like(a) for k, a in params.items()}, {k: np.zeros_like(a) for k, a in params.items()})

    def to_blobs(self) -> dict[str, np.ndarray]:
        blobs = {f"adam/m/{k}": a for k, a in self.m.items()}
        blobs.update({f"adam/v/{k}": a for k, a in self.v.items()})
        blobs["adam/step"] = np.array([self.step], dtype=np.int64)
        return blobs

    @classmethod
    def from_blobs(cls, blobs: dict[str, np.ndarray]) -> "AdamState":
        m = {k[len("adam/m/"):]: a.copy() for k, a in blobs.items() if k.startswith("adam/m/")}
        v = {k[len("adam/v/"):]: a.copy() for k, a in blobs.items() if k.startswith("adam/v/")}
        return cls(m, v, int(blobs["adam/step"][0]) if "adam/step" in blobs else 0)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at Adam step {state.step + 1}")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(theta.dtype, copy=False)
    return params, state


@dataclass
class TrainHistory:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    best_step: int | None = None
    best_dev_rmse: float | None = None

    def log_lines(self) -> list[str]:
        dev = dict(self.evals)
        lines = []
        if 0 in dev:
            lines.append(json.dumps({"step": 0, "dev_rmse": dev[0]}))
        for step, loss, lr in zip(self.steps, self.losses, self.lrs):
            row = {"step": step, "loss": loss, "lr": lr}
            if step in dev:
                row["dev_rmse"] = dev[step]
            lines.append(json.dumps(row))
        return lines

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write("".join(line + "\n" for line in self.log_lines()))


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    history: TrainHistory


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, np.float64), np.asarray(target, np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def prepare_samples(samples: Sequence[Sample], factor: int) -> list[PreparedInput]:
    return [prepare(s.binaural_input(), factor) for s in samples]


def dataset_loss(
    params: HeadParams,
    cfg: HeadConfig,
    prepared: Sequence[PreparedInput],
    targets: np.ndarray,
    delta: float = 1.0,
    batch_size: int = 64,
) -> float:
    """Eval-mode mean Huber loss on [0, 1]-scaled predictions and targets."""
    pred = predict_prepared(prepared, params, cfg, batch_size) / 100.0
    e = np.abs(pred - np.asarray(targets, np.float64) / 100.0)
    return float(np.mean(np.where(e <= delta, 0.5 * e * e, delta * (e - 0.5 * delta))))


def _batches(n: int, batch_size: int, rng: RngStream):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def train(
    split: PartitionSplit,
    head_config: HeadConfig,
    train_config: TrainConfig,
    log_path: str | os.PathLike | None = None,
) -> TrainResult:
    """Train one head on ``split.train``, tracking dev RMSE every ``dev_eval_every`` steps.

    The returned ``best`` checkpoint is the evaluated state with the lowest dev
    RMSE (earliest on ties); without a dev set it is the final state.
    """
    tc = train_config
    if not split.train:
        raise ConfigError(f"partition {split.name}: train split is empty")
    cfg = head_config.with_(dropout_p=tc.dropout_p)
    dtype = np.dtype(tc.dtype)
    root = RngStream(tc.seed)
    params = init_params(cfg, root.child("init"), dtype)
    state = AdamState()
    batch_rng, drop_rng = root.child("shuffle"), root.child("dropout")

    train_items = prepare_samples(split.train, cfg.downsample_factor)
    train_targets = np.array([s.correctness for s in split.train]) / 100.0
    dev_items = prepare_samples(split.dev, cfg.downsample_factor)
    dev_targets = np.array([s.correctness for s in split.dev])

    history = TrainHistory()
    best_arrays: dict[str, np.ndarray] | None = None
    meta = {"partition": split.name, "seed": tc.seed, "train_config": tc.to_dict()}

    def checkpoint(arrays, kind: str, step: int, dev: float | None, extras=None) -> Checkpoint:
        return Checkpoint(cfg, arrays, dict(meta, kind=kind, step=step, dev_rmse=dev), extras or {})

    def evaluate_dev(step: int) -> None:
        nonlocal best_arrays
        if not dev_items:
            return
        score = rmse(predict_prepared(dev_items, params, cfg, tc.eval_batch_size), dev_targets)
        history.evals.append((step, score))
        if history.best_dev_rmse is None or score < history.best_dev_rmse:
            history.best_dev_rmse, history.best_step = score, step
            best_arrays = params.arrays()
            if tc.checkpoint_path:
                save_checkpoint(tc.checkpoint_path, checkpoint(best_arrays, "best", step, score))

    batches = _batches(len(train_items), tc.batch_size, batch_rng)
    live = {k: t.data for k, t in params.items()}
    for step in range(1, tc.steps + 1):
        idx = next(batches)
        batch = collate([train_items[i] for i in idx], dtype)
        params.zero_grad()
        out = head_forward(batch, params, cfg, training=True, rng=drop_rng)
        loss = T.huber_loss(out.probability, train_targets[idx].astype(dtype), tc.huber_delta)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite training loss {value} at step {step}")
        T.backward(loss)
        lr = lr_at(step, tc)
        adam_step(live, {k: t.grad for k, t in params.items()}, state, lr, tc.beta1, tc.beta2, tc.adam_eps)
        history.steps.append(step)
        history.losses.append(value)
        history.lrs.append(lr)
        if step % tc.dev_eval_every == 0 and step != tc.steps:
            evaluate_dev(step)
    evaluate_dev(tc.steps)

    final_dev = history.evals[-1][1] if history.evals else None
    final = checkpoint(params.arrays(), "final", tc.steps, final_dev, state.to_blobs())
    if best_arrays is None:
        best = checkpoint(final.params, "best", tc.steps, final_dev)
    else:
        best = checkpoint(best_arrays, "best", history.best_step, history.best_dev_rmse)
    if log_path is not None:
        history.write(log_path)
    return TrainResult(best, final, history)
