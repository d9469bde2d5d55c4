"""Named presets and the experiment configuration file.

An experiment file is JSON::

    {
      "preset": "desk",
      "seed": 0,
      "output_dir": "runs/desk",
      "head": {"proj_dim": 32, ...},            # HeadConfig fields; layers/dim default to the data's
      "train": {"steps": 3000, ...},            # TrainConfig fields
      "data": {"synthetic": {...}} | {"manifest": "path/to/manifest.json"},
      "partitions": {"scheme": "auto", "test_fraction": 0.2, "dev_fraction": 0.15, "seed": 0}
    }

The partition seed defaults to the experiment seed; pin it to train several
seeds on identical partitions (needed for ensembles).

Values come from the preset first, then the file, then command-line flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .data import SyntheticConfig
from .model import HeadConfig
from .optim import TrainConfig

# num_layers / feature_dim are filled in from the data
HEAD_PRESETS: dict[str, dict] = {
    "paper": {},
    "desk": dict(proj_dim=32, heads=4, ffn_dim=64, temporal_blocks=2, layer_blocks=1),
    "tiny": dict(proj_dim=16, heads=2, ffn_dim=32, temporal_blocks=2, layer_blocks=1, max_positions=64),
}

TRAIN_PRESETS: dict[str, dict] = {
    "paper": {},
    "desk": dict(steps=3000, batch_size=16, warmup_steps=100, peak_lr=1e-3, dev_eval_every=250),
    "tiny": dict(steps=200, batch_size=16, warmup_steps=20, peak_lr=1e-3, dev_eval_every=50),
}

SYNTHETIC_PRESETS: dict[str, dict] = {
    "paper": dict(num_samples=100, num_layers=25, feature_dim=1024),
    "desk": dict(num_samples=2000, num_layers=4, feature_dim=32),
    "tiny": dict(num_samples=200, num_layers=4, feature_dim=32),
    # coherence is the only varying cue: one listener, fixed snr, no shared template
    "binaural": dict(
        num_samples=1500, num_layers=2, feature_dim=16, num_components=16, t_min=20, t_max=39,
        snr_min=15.0, snr_max=15.0, template_share=0.0, gamma=30.0, alpha=0.15, beta=0.75,
        num_listeners=1, target_noise=1.0,
    ),
}

PRESETS = ("paper", "desk", "tiny")


def _check_preset(name: str, table: dict) -> dict:
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return dict(table[name])


def synthetic_preset(name: str, **overrides) -> SyntheticConfig:
    return SyntheticConfig(**{**_check_preset(name, SYNTHETIC_PRESETS), **overrides})


def head_preset(name: str, num_layers: int, feature_dim: int, **overrides) -> HeadConfig:
    values = {**_check_preset(name, HEAD_PRESETS), **overrides}
    return HeadConfig(num_layers=num_layers, feature_dim=feature_dim, **values)


def train_preset(name: str, **overrides) -> TrainConfig:
    return TrainConfig(**{**_check_preset(name, TRAIN_PRESETS), **overrides})


@dataclass
class ExperimentConfig:
    preset: str = "desk"
    seed: int = 0
    output_dir: str = "runs/experiment"
    head: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synthetic: dict | None = None
    manifest: str | None = None
    partitions: dict = field(default_factory=lambda: {"scheme": "auto", "test_fraction": 0.2, "dev_fraction": 0.15})

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        known = {"preset", "seed", "output_dir", "head", "train", "data", "partitions"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown experiment field(s): {sorted(unknown)}")
        cfg = cls(preset=raw.get("preset", "desk"))
        if cfg.preset not in PRESETS:
            raise ConfigError(f"unknown preset {cfg.preset!r}; choose from {list(PRESETS)}")
        cfg.seed = int(raw.get("seed", 0))
        cfg.output_dir = str(raw.get("output_dir", cfg.output_dir))
        cfg.head = dict(raw.get("head", {}))
        cfg.train = dict(raw.get("train", {}))
        data = raw.get("data", {})
        if "manifest" in data and "synthetic" in data:
            raise ConfigError("data must name either a manifest or a synthetic config, not both")
        if "manifest" in data:
            path = Path(data["manifest"])
            cfg.manifest = str(path if path.is_absolute() else Path(base_dir) / path)
        else:
            cfg.synthetic = dict(data.get("synthetic", {}))
        parts = dict(raw.get("partitions", {}))
        unknown = set(parts) - {"scheme", "test_fraction", "dev_fraction", "seed"}
        if unknown:
            raise ConfigError(f"unknown partitions field(s): {sorted(unknown)}")
        cfg.partitions = {**cfg.partitions, **parts}
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def synthetic_config(self) -> SyntheticConfig:
        if self.synthetic is None:
            raise ConfigError("experiment uses a manifest, not synthetic data")
        preset = self.preset if self.preset in SYNTHETIC_PRESETS else "desk"
        return synthetic_preset(preset, **self.synthetic)

    def head_config(self, num_layers: int, feature_dim: int) -> HeadConfig:
        values = dict(self.head)
        values.setdefault("num_layers", num_layers)
        values.setdefault("feature_dim", feature_dim)
        if (values["num_layers"], values["feature_dim"]) != (num_layers, feature_dim):
            raise ConfigError(
                f"head expects {values['num_layers']} layers x {values['feature_dim']} dims, "
                f"data has {num_layers} x {feature_dim}"
            )
        return head_preset(self.preset, **values)

    def train_config(self) -> TrainConfig:
        return train_preset(self.preset, **self.train)

    def resolved(self, num_layers: int, feature_dim: int) -> dict:
        """Fully explicit form; loading it back reproduces the same run."""
        data = {"manifest": self.manifest} if self.manifest else {"synthetic": self.synthetic_config().to_dict()}
        head = self.head_config(num_layers, feature_dim).to_dict()
        return {
            "preset": self.preset,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "head": head,
            "train": self.train_config().to_dict(),
            "data": data,
            "partitions": dict(self.partitions),
        }
