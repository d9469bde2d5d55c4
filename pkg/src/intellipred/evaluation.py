"""RMSE reports, prediction ensembles, best-on-dev selection and significance rankings."""

from __future__ import annotations

import csv
import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data import PartitionSet
from .errors import ConfigError, DataError
from .model import predict_prepared
from .optim import prepare_samples
from .stats import wilcoxon_signed_rank

RECORD_FIELDS = ("sample_id", "model_id", "partition", "prediction", "target")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    model_id: str
    prediction: float
    target: float
    partition: str = ""


def check_records(records: Sequence[PredictionRecord]) -> None:
    seen = set()
    problems = []
    for r in records:
        key = (r.sample_id, r.model_id, r.partition)
        if key in seen:
            problems.append(f"duplicate record for sample {r.sample_id}, model {r.model_id}")
        seen.add(key)
        if not 0.0 <= r.prediction <= 100.0 or not 0.0 <= r.target <= 100.0:
            problems.append(f"sample {r.sample_id}: prediction/target outside [0, 100]")
    if problems:
        raise DataError("; ".join(problems[:10]))


def write_records(path: str | os.PathLike, records: Iterable[PredictionRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.sample_id, r.model_id, r.partition, repr(float(r.prediction)), repr(float(r.target))])


def read_records(path: str | os.PathLike) -> list[PredictionRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(RECORD_FIELDS) - set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {', '.join(RECORD_FIELDS)}")
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append(
                    PredictionRecord(
                        row["sample_id"], row["model_id"], float(row["prediction"]),
                        float(row["target"]), row["partition"],
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    return out


# ---------------------------------------------------------------- RMSE


def rmse(records: Sequence[PredictionRecord]) -> float:
    if not records:
        raise ValueError("rmse of an empty record set")
    p = np.array([r.prediction for r in records], dtype=np.float64)
    t = np.array([r.target for r in records], dtype=np.float64)
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class EvalReport:
    model_id: str
    per_partition: dict[str, float]
    mean_rmse: float
    run_min: float | None = None
    run_mean: float | None = None
    run_max: float | None = None
    best_on_dev: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [f"model {self.model_id}"]
        for name, value in self.per_partition.items():
            lines.append(f"  partition {name:<8} test RMSE {value:8.4f}")
        lines.append(f"  mean test RMSE       {self.mean_rmse:8.4f}")
        if self.run_min is not None:
            lines.append(f"  runs min/mean/max    {self.run_min:.4f} / {self.run_mean:.4f} / {self.run_max:.4f}")
        if self.best_on_dev is not None:
            lines.append(f"  best on dev          {self.best_on_dev:8.4f}")
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def report_from_records(records: Sequence[PredictionRecord], model_id: str | None = None) -> EvalReport:
    """Per-partition RMSE of one model's records; the headline is their arithmetic mean."""
    if not records:
        raise DataError("no prediction records")
    models = {r.model_id for r in records}
    if model_id is None:
        if len(models) != 1:
            raise DataError(f"records mix several models {sorted(models)}; choose one")
        model_id = models.pop()
    by_part: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in records:
        if r.model_id == model_id:
            by_part[r.partition].append(r)
    if not by_part:
        raise DataError(f"no records for model {model_id}")
    per = {name: rmse(by_part[name]) for name in sorted(by_part)}
    return EvalReport(model_id, per, float(np.mean(list(per.values()))))


def predict_records(ckpt: Checkpoint, samples, model_id: str, partition: str = "") -> list[PredictionRecord]:
    params = ckpt.head_params()
    preds = predict_prepared(prepare_samples(samples, ckpt.config.downsample_factor), params, ckpt.config)
    return [
        PredictionRecord(s.id, model_id, float(p), float(s.correctness), partition or (s.partition or ""))
        for s, p in zip(samples, preds)
    ]


def evaluate(
    checkpoints: Mapping[str, Checkpoint],
    partitions: PartitionSet,
    model_id: str = "model",
) -> tuple[EvalReport, list[PredictionRecord]]:
    """Score each partition's checkpoint on that partition's test split."""
    names = [p.name for p in partitions]
    if sorted(checkpoints) != sorted(names):
        raise ConfigError(f"need one checkpoint per partition {names}, got {sorted(checkpoints)}")
    records = []
    for part in partitions:
        records += predict_records(checkpoints[part.name], part.test, model_id, part.name)
    return report_from_records(records, model_id), records


def constant_baseline(partitions: PartitionSet) -> EvalReport:
    """Predict each partition's mean train target for every test sample."""
    per = {}
    for part in partitions:
        mean = float(np.mean([s.correctness for s in part.train]))
        t = np.array([s.correctness for s in part.test])
        per[part.name] = float(np.sqrt(np.mean((t - mean) ** 2)))
    return EvalReport("constant-mean", per, float(np.mean(list(per.values()))))


def summarize_runs(run_rmses: Sequence[float]) -> tuple[float, float, float]:
    """(min, mean, max) over independent runs."""
    if not run_rmses:
        raise ValueError("no runs")
    v = np.asarray(run_rmses, dtype=np.float64)
    return float(v.min()), float(v.mean()), float(v.max())


def select_best_on_dev(runs: Sequence[tuple[object, float]]):
    """Return the run with the lowest dev RMSE; the earliest wins ties."""
    if not runs:
        raise ValueError("no runs to select from")
    best = 0
    for i, (_, score) in enumerate(runs):
        if score < runs[best][1]:
            best = i
    return runs[best][0]


# ---------------------------------------------------------------- ensembles


def ensemble(prediction_sets: Sequence[Sequence[PredictionRecord]], model_id: str = "ensemble") -> list[PredictionRecord]:
    """Average the members' predictions per (partition, sample id)."""
    if not prediction_sets:
        raise ValueError("ensemble needs at least one prediction set")
    keyed = []
    for records in prediction_sets:
        table = {}
        for r in records:
            key = (r.partition, r.sample_id)
            if key in table:
                raise DataError(f"prediction set has duplicate sample {r.sample_id}")
            table[key] = r
        keyed.append(table)
    reference = keyed[0]
    problems = []
    for i, table in enumerate(keyed[1:], start=1):
        missing = sorted(set(reference) - set(table))
        extra = sorted(set(table) - set(reference))
        if missing or extra:
            problems.append(
                f"member {i}: missing {[k[1] for k in missing[:10]]}, unexpected {[k[1] for k in extra[:10]]}"
            )
    if problems:
        raise DataError("ensemble members cover different samples: " + "; ".join(problems))
    out = []
    for key, ref in reference.items():
        preds = [table[key].prediction for table in keyed]
        out.append(PredictionRecord(ref.sample_id, model_id, float(np.mean(preds)), ref.target, ref.partition))
    return out


# ---------------------------------------------------------------- significance ranking


def per_sample_errors(records: Sequence[PredictionRecord], kind: str = "squared") -> dict[str, dict[tuple, float]]:
    """{model_id: {(partition, sample_id): error}} with squared or absolute errors."""
    if kind not in ("squared", "absolute"):
        raise ConfigError(f"error kind must be 'squared' or 'absolute', got {kind!r}")
    out: dict[str, dict[tuple, float]] = defaultdict(dict)
    for r in records:
        e = r.prediction - r.target
        out[r.model_id][(r.partition, r.sample_id)] = e * e if kind == "squared" else abs(e)
    return dict(out)


@dataclass(frozen=True)
class RankingRow:
    model: str
    p_value: float
    n: int
    statistic: float
    method: str


@dataclass
class RankingTable:
    baseline: str
    rows: list[RankingRow]
    pairing: str = "per-sample squared error"

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "pairing": self.pairing, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        width = max([len("model")] + [len(r.model) for r in self.rows])
        head = f"{'model':<{width}}  p(err > err[{self.baseline}])  n     method"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.model:<{width}}  {r.p_value:>24.6f}  {r.n:<5} {r.method}")
        lines.append(f"pairing: {self.pairing}")
        return "\n".join(lines)


def ranking_table(
    errors: Mapping[str, Mapping[object, float]],
    baseline: str,
    pairing: str = "per-sample squared error",
) -> RankingTable:
    """One-sided Wilcoxon test of each model's errors exceeding the baseline's.

    ``errors`` maps model -> {pairing key -> error}; keys may be sample ids or
    run indices. Rows are sorted by descending p-value.
    """
    if baseline not in errors:
        raise DataError(f"baseline model {baseline!r} not among {sorted(errors)}")
    keys = sorted(errors[baseline], key=str)
    rows = []
    for model in sorted(errors):
        table = errors[model]
        missing = sorted(set(keys) ^ set(table), key=str)
        if missing:
            raise DataError(f"model {model} and baseline {baseline} are not paired; offending keys {missing[:10]}")
        a = np.array([table[k] for k in keys])
        b = np.array([errors[baseline][k] for k in keys])
        if np.array_equal(a, b):
            res_p, n, stat, method = 1.0, 0, 0.0, "degenerate"
        else:
            res = wilcoxon_signed_rank(a, b, alternative="greater")
            res_p, n, stat, method = res.p_value, res.n, res.statistic, res.method
        rows.append(RankingRow(model, res_p, n, stat, method))
    rows.sort(key=lambda r: -r.p_value)
    return RankingTable(baseline, rows, pairing)
