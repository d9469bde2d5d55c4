"""Samples, manifests, partitions and the synthetic feature generator.

Synthetic mapping
-----------------
Each sample draws an SNR (dB), a listener (two-ear audiogram) and an
inter-channel coherence ``rho``. Per layer ``l`` and frame ``tau`` the
shared signal component is

    s(l, tau) = w m_l + sqrt(1 - w^2) f(l, tau),   f(l, tau) = sum_k c_k(tau) B[l, k] / sqrt(K)

where ``m`` is a dataset-wide template, ``B`` a dataset-wide random basis,
``w`` the template share and each ``c_k`` a smooth zero-mean unit-variance
sum of slow random sinusoids. Features are

    left  = g s + n_left
    right = g (w m + sqrt(1 - w^2) (rho f + sqrt(1 - rho^2) f')) + n_right

with ``g = 10^(snr/20) / (1 + 10^(snr/20))``, ``f'`` an independent draw of
the fluctuation process and unit-variance white noise ``n``. The target is

    clip(100 sigmoid(alpha (snr - beta mean(audiogram) + gamma rho)) + noise, 0, 100)

SNR is visible in each channel's signal-to-noise ratio, the audiogram is a
direct input, and ``rho`` is only observable by comparing the two channels.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, ValidationError
from .model import AUDIOGRAM_SIZE, BinauralInput
from .tensor import RngStream
from .tensorfile import read_shape, read_tensor, write_tensor

AUDIOGRAM_FREQUENCIES_HZ = (250, 500, 1000, 2000, 3000, 4000, 6000, 8000)


@dataclass
class Sample:
    id: str
    left: np.ndarray
    right: np.ndarray
    audiogram_left: np.ndarray
    audiogram_right: np.ndarray
    correctness: float
    scene: str = ""
    listener: str = ""
    system: str = ""
    partition: str | None = None
    split: str | None = None
    info: dict = field(default_factory=dict)

    def problems(self) -> list[str]:
        out = []
        if not (0.0 <= self.correctness <= 100.0) or math.isnan(self.correctness):
            out.append(f"sample {self.id}: correctness {self.correctness} outside [0, 100]")
        if self.left.shape != self.right.shape:
            out.append(f"sample {self.id}: left shape {self.left.shape} != right shape {self.right.shape}")
        elif self.left.ndim != 3:
            out.append(f"sample {self.id}: features must be rank 3 [layers, time, dim], got {self.left.shape}")
        for ear, a in (("left", self.audiogram_left), ("right", self.audiogram_right)):
            a = np.asarray(a)
            if a.shape != (AUDIOGRAM_SIZE,):
                out.append(f"sample {self.id}: audiogram_{ear} needs {AUDIOGRAM_SIZE} values, got {a.shape}")
            elif np.any(a < 0) or not np.all(np.isfinite(a)):
                out.append(f"sample {self.id}: audiogram_{ear} has negative or non-finite values")
        return out

    def binaural_input(self) -> BinauralInput:
        return BinauralInput(self.left, self.right, self.audiogram_left, self.audiogram_right)


def validate_samples(samples: Sequence[Sample]) -> None:
    problems = []
    seen = set()
    for s in samples:
        if s.id in seen:
            problems.append(f"duplicate sample id {s.id}")
        seen.add(s.id)
        problems += s.problems()
    if samples and not problems:
        L, _, d = samples[0].left.shape
        for s in samples:
            if s.left.shape[0] != L or s.left.shape[2] != d:
                problems.append(f"sample {s.id}: shape {s.left.shape} inconsistent with [{L}, *, {d}]")
    if problems:
        raise ValidationError(problems)


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    num_samples: int = 200
    num_layers: int = 4
    feature_dim: int = 32
    t_min: int = 40
    t_max: int = 160
    snr_min: float = -15.0
    snr_max: float = 15.0
    coherence_min: float = 0.0
    coherence_max: float = 1.0
    seed: int = 0
    target_noise: float = 2.0
    alpha: float = 0.2
    beta: float = 0.25
    gamma: float = 3.0
    num_listeners: int = 40
    num_components: int = 4
    template_share: float = 0.7
    min_period: float = 60.0
    max_period: float = 400.0
    dtype: str = "float32"

    def __post_init__(self):
        positive = ("num_samples", "num_layers", "feature_dim", "t_min", "num_listeners", "num_components")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"SyntheticConfig.{name} must be >= 1")
        if self.t_max < self.t_min:
            raise ConfigError(f"t range [{self.t_min}, {self.t_max}] is empty")
        if self.snr_max < self.snr_min:
            raise ConfigError(f"snr range [{self.snr_min}, {self.snr_max}] is empty")
        if not 0.0 <= self.coherence_min <= self.coherence_max <= 1.0:
            raise ConfigError("coherence range must satisfy 0 <= min <= max <= 1")
        if not 0.0 <= self.template_share <= 1.0:
            raise ConfigError("template_share must lie in [0, 1]")
        if self.target_noise < 0:
            raise ConfigError("target_noise must be >= 0")
        if not 0 < self.min_period <= self.max_period:
            raise ConfigError("period range must satisfy 0 < min_period <= max_period")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown SyntheticConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "SyntheticConfig":
        return replace(self, **changes)


def signal_gain(snr_db):
    r = np.power(10.0, np.asarray(snr_db, dtype=np.float64) / 20.0)
    return r / (1.0 + r)


def synthetic_target(snr_db, audiogram_mean, coherence, alpha=0.2, beta=0.25, gamma=3.0):
    """Noise-free target in [0, 100]."""
    z = alpha * (np.asarray(snr_db, dtype=np.float64) - beta * np.asarray(audiogram_mean) + gamma * np.asarray(coherence))
    # tanh form keeps z = +-inf well defined
    return np.clip(50.0 * (1.0 + np.tanh(0.5 * z)), 0.0, 100.0)


def _smooth_process(rng: RngStream, k: int, t: int, cfg: SyntheticConfig, waves: int = 3) -> np.ndarray:
    freq = 1.0 / rng.uniform(cfg.min_period, cfg.max_period, (k, waves))
    amp = rng.normal(size=(k, waves))
    phase = rng.uniform(0.0, 2 * np.pi, (k, waves))
    tau = np.arange(t)
    waves_kt = amp[..., None] * np.cos(2 * np.pi * freq[..., None] * tau + phase[..., None])
    return waves_kt.sum(axis=1) * np.sqrt(2.0 / waves)


def _listener_audiograms(rng: RngStream, n: int) -> np.ndarray:
    """[n, 2, 8] sloping hearing-loss audiograms, dB HL in [0, 90]."""
    base = rng.uniform(0.0, 45.0, (n, 1, 1))
    slope = rng.uniform(0.0, 8.0, (n, 1, 1))
    left = base + slope * np.arange(AUDIOGRAM_SIZE) + rng.normal(0.0, 4.0, (n, 1, AUDIOGRAM_SIZE))
    right = left + rng.normal(0.0, 5.0, (n, 1, AUDIOGRAM_SIZE))
    return np.clip(np.concatenate([left, right], axis=1), 0.0, 90.0)


def generate_synthetic(cfg: SyntheticConfig) -> list[Sample]:
    """Generate ``cfg.num_samples`` binaural samples with known targets.

    ``info`` on each sample carries the latent factors (snr, coherence,
    audiogram_mean, clean_target).
    """
    root = RngStream(cfg.seed)
    L, d, K = cfg.num_layers, cfg.feature_dim, cfg.num_components
    basis = root.child("basis").normal(size=(L, K, d))
    template = root.child("template").normal(size=(L, 1, d))
    w = cfg.template_share
    listeners = _listener_audiograms(root.child("listeners"), cfg.num_listeners)
    dtype = np.dtype(cfg.dtype)
    samples = []
    for i in range(cfg.num_samples):
        rng = root.child(f"sample/{i}")
        t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        snr = float(rng.uniform(cfg.snr_min, cfg.snr_max))
        rho = float(rng.uniform(cfg.coherence_min, cfg.coherence_max))
        who = int(rng.integers(0, cfg.num_listeners))
        system = int(rng.integers(1, 6))
        c = _smooth_process(rng, K, t, cfg)
        c_other = _smooth_process(rng, K, t, cfg)
        c_right = rho * c + math.sqrt(max(0.0, 1.0 - rho * rho)) * c_other
        g = float(signal_gain(snr))
        fluct = math.sqrt(1.0 - w * w) / math.sqrt(K)
        s_left = w * template + fluct * np.einsum("kt,lkd->ltd", c, basis)
        s_right = w * template + fluct * np.einsum("kt,lkd->ltd", c_right, basis)
        left = g * s_left + rng.normal(size=(L, t, d))
        right = g * s_right + rng.normal(size=(L, t, d))
        aud = listeners[who]
        aud_mean = float(aud.mean())
        clean = float(synthetic_target(snr, aud_mean, rho, cfg.alpha, cfg.beta, cfg.gamma))
        noisy = clean + (float(rng.normal(0.0, cfg.target_noise)) if cfg.target_noise > 0 else 0.0)
        samples.append(
            Sample(
                id=f"syn{i:05d}",
                left=left.astype(dtype),
                right=right.astype(dtype),
                audiogram_left=aud[0].copy(),
                audiogram_right=aud[1].copy(),
                correctness=float(np.clip(noisy, 0.0, 100.0)),
                scene=f"S{i:05d}",
                listener=f"L{who:03d}",
                system=f"E{system:03d}",
                info={
                    "snr": snr,
                    "coherence": rho,
                    "audiogram_mean": aud_mean,
                    "clean_target": clean,
                    "difficulty": -snr,
                },
            )
        )
    return samples


# ---------------------------------------------------------------- manifests


def save_manifest(samples: Sequence[Sample], path: str | os.PathLike, tensor_dir: str = "features") -> None:
    """Write each sample's features as SFMT files plus a JSON manifest next to them."""
    path = Path(path)
    root = path.parent
    (root / tensor_dir).mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        rel_left = f"{tensor_dir}/{s.id}.left.sfmt"
        rel_right = f"{tensor_dir}/{s.id}.right.sfmt"
        write_tensor(root / rel_left, s.left)
        write_tensor(root / rel_right, s.right)
        entry = {
            "id": s.id,
            "left_path": rel_left,
            "right_path": rel_right,
            "audiogram_left": [float(v) for v in s.audiogram_left],
            "audiogram_right": [float(v) for v in s.audiogram_right],
            "correctness": float(s.correctness),
            "scene": s.scene,
            "listener": s.listener,
            "system": s.system,
        }
        if s.partition is not None:
            entry["partition"] = s.partition
        if s.split is not None:
            entry["split"] = s.split
        if s.info:
            entry["info"] = s.info
        entries.append(entry)
    path.write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")


def _entry_audiograms(entry: dict, sid: str, problems: list[str]):
    if "audiogram" in entry:
        left = right = entry["audiogram"]
    elif "audiogram_left" in entry:
        left = entry["audiogram_left"]
        right = entry.get("audiogram_right", left)
    else:
        problems.append(f"sample {sid}: no audiogram field")
        return None
    try:
        return np.asarray(left, dtype=np.float64), np.asarray(right, dtype=np.float64)
    except (TypeError, ValueError):
        problems.append(f"sample {sid}: audiogram is not numeric")
        return None


def load_manifest(path: str | os.PathLike) -> list[Sample]:
    """Load and validate every sample of a manifest; all problems are reported together."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError([f"manifest {path} does not exist"]) from None
    except json.JSONDecodeError as exc:
        raise ValidationError([f"manifest {path} is not valid JSON: {exc}"]) from None
    if not isinstance(entries, list):
        raise ValidationError([f"manifest {path} must be a JSON array of sample objects"])
    root = path.parent
    problems: list[str] = []
    samples: list[Sample] = []
    seen: set[str] = set()
    for n, entry in enumerate(entries):
        sid = str(entry.get("id", f"#{n}")) if isinstance(entry, dict) else f"#{n}"
        if not isinstance(entry, dict):
            problems.append(f"entry {sid}: not an object")
            continue
        if sid in seen:
            problems.append(f"duplicate sample id {sid}")
            continue
        seen.add(sid)
        missing = [k for k in ("id", "left_path", "right_path", "correctness") if k not in entry]
        if missing:
            problems.append(f"sample {sid}: missing field(s) {missing}")
            continue
        auds = _entry_audiograms(entry, sid, problems)
        feats = []
        for ear in ("left", "right"):
            fpath = root / entry[f"{ear}_path"]
            if not fpath.exists():
                problems.append(f"sample {sid}: {ear} feature file {fpath} not found")
                continue
            try:
                shape, _ = read_shape(fpath)
                if len(shape) != 3:
                    problems.append(f"sample {sid}: {ear} features have rank {len(shape)}, need 3")
                    continue
                feats.append(read_tensor(fpath))
            except FormatError as exc:
                problems.append(f"sample {sid}: {exc}")
        if auds is None or len(feats) != 2:
            continue
        try:
            correctness = float(entry["correctness"])
        except (TypeError, ValueError):
            problems.append(f"sample {sid}: correctness is not a number")
            continue
        sample = Sample(
            id=sid,
            left=feats[0],
            right=feats[1],
            audiogram_left=auds[0],
            audiogram_right=auds[1],
            correctness=correctness,
            scene=str(entry.get("scene", "")),
            listener=str(entry.get("listener", "")),
            system=str(entry.get("system", "")),
            partition=None if entry.get("partition") is None else str(entry["partition"]),
            split=entry.get("split"),
            info=dict(entry.get("info", {})),
        )
        problems += sample.problems()
        samples.append(sample)
    if problems:
        raise ValidationError(problems)
    validate_samples(samples)
    return samples


# ---------------------------------------------------------------- partitions


@dataclass
class PartitionSplit:
    name: str
    train: list[Sample]
    dev: list[Sample]
    test: list[Sample]
    dev_source: str


@dataclass
class PartitionSet:
    scheme: str
    partitions: list[PartitionSplit]

    def __iter__(self):
        return iter(self.partitions)

    def __len__(self) -> int:
        return len(self.partitions)

    def __getitem__(self, i: int) -> PartitionSplit:
        return self.partitions[i]


def _random_groups(samples: Sequence[Sample], rng: RngStream, test_fraction: float):
    order = rng.permutation(len(samples))
    groups = np.array_split(order, 3)
    out = []
    for g in groups:
        members = [samples[i] for i in g]
        n_test = int(round(test_fraction * len(members)))
        out.append((str(len(out) + 1), members[n_test:], members[:n_test]))
    return out


def _tagged_groups(samples: Sequence[Sample]):
    tags = sorted({s.partition for s in samples if s.partition is not None})
    if len(tags) < 3 or any(s.partition is None for s in samples):
        raise ConfigError(
            f"tagged partitioning needs every sample tagged and at least 3 partition tags, found {tags}"
        )
    out = []
    for tag in tags:
        members = [s for s in samples if s.partition == tag]
        bad = [s.id for s in members if s.split not in ("train", "test")]
        if bad:
            raise ConfigError(f"partition {tag}: samples without split 'train'/'test': {bad[:5]}")
        out.append((tag, [s for s in members if s.split == "train"], [s for s in members if s.split == "test"]))
    return out


def make_partitions(
    samples: Sequence[Sample],
    scheme: str = "auto",
    seed: int = 0,
    test_fraction: float = 0.2,
    dev_fraction: float = 0.15,
    dev_filter: Callable[[Sample], bool] | None = None,
) -> PartitionSet:
    """Build the three-partition train/dev/test scheme.

    ``tags`` follows each sample's ``partition``/``split`` fields; ``random``
    deals samples into three seeded groups and splits each into train and
    test; ``auto`` picks ``tags`` when every sample is tagged. Each
    partition's dev set is drawn from the next partition's samples, excluding
    its own train/test ids, optionally restricted by ``dev_filter``.
    """
    if scheme == "auto":
        scheme = "tags" if samples and all(s.partition is not None for s in samples) else "random"
    if scheme not in ("tags", "random"):
        raise ConfigError(f"unknown partition scheme {scheme!r}")
    if not 0.0 < test_fraction < 1.0 or not 0.0 < dev_fraction <= 1.0:
        raise ConfigError("test_fraction must be in (0, 1) and dev_fraction in (0, 1]")
    if scheme == "random" and len(samples) < 3:
        raise ConfigError(f"random partitioning needs at least 3 samples, got {len(samples)}")
    rng = RngStream(seed).child("partitions")
    groups = _random_groups(samples, rng, test_fraction) if scheme == "random" else _tagged_groups(samples)
    parts = []
    for i, (name, train, test) in enumerate(groups):
        if not train:
            raise ConfigError(f"partition {name} has an empty train split")
        src_name, src_train, src_test = groups[(i + 1) % len(groups)]
        own = {s.id for s in train} | {s.id for s in test}
        pool = [s for s in src_train + src_test if s.id not in own]
        if dev_filter is not None:
            pool = [s for s in pool if dev_filter(s)]
        n_dev = min(len(pool), max(1, int(round(dev_fraction * len(train)))))
        picked = sorted(rng.child(f"dev/{name}").choice(len(pool), n_dev)) if n_dev else []
        parts.append(PartitionSplit(name, list(train), [pool[j] for j in picked], list(test), src_name))
    return PartitionSet(scheme, parts)
