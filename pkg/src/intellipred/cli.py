"""Command-line entry point: ``intellipred {gen-data,train,predict,eval}``.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import SYNTHETIC_PRESETS, ExperimentConfig, synthetic_preset
from .data import SyntheticConfig, generate_synthetic, load_manifest, make_partitions, save_manifest
from .errors import ConfigError, DataError, IntellipredError, ShapeError
from .evaluation import (
    check_records,
    constant_baseline,
    ensemble,
    evaluate,
    per_sample_errors,
    predict_records,
    ranking_table,
    read_records,
    report_from_records,
    write_records,
)
from .optim import train

log = logging.getLogger("intellipred")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synthetic config {args.config}: {exc}") from None
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["num_samples"] = args.samples
    cfg = synthetic_preset(args.preset, **overrides) if args.preset else SyntheticConfig.from_dict(overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "synthetic_config.json", cfg.to_dict())
    samples = generate_synthetic(cfg)
    save_manifest(samples, out / "manifest.json")
    log.info("wrote %d samples to %s", len(samples), out)
    print(f"{out / 'manifest.json'} sha256={file_digest(out / 'manifest.json')}")
    return 0


# ---------------------------------------------------------------- train


def _load_experiment(args) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.preset:
        exp.preset = args.preset
    if args.seed is not None:
        exp.seed = args.seed
    if args.out:
        exp.output_dir = args.out
    if args.manifest:
        exp.manifest, exp.synthetic = args.manifest, None
    elif exp.manifest is None and exp.synthetic is None:
        exp.synthetic = {}
    if args.no_binaural_cross_attention:
        exp.head["binaural_cross_attention"] = False
    return exp


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    if exp.manifest:
        samples = load_manifest(exp.manifest)
    else:
        samples = generate_synthetic(exp.synthetic_config())
    if not samples:
        raise DataError("dataset is empty")
    L, _, d = samples[0].left.shape
    head = exp.head_config(L, d)
    base_train = exp.train_config()
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", exp.resolved(L, d))

    parts = make_partitions(
        samples,
        scheme=exp.partitions.get("scheme", "auto"),
        seed=int(exp.partitions.get("seed", exp.seed)),
        test_fraction=exp.partitions.get("test_fraction", 0.2),
        dev_fraction=exp.partitions.get("dev_fraction", 0.15),
    )
    _write_json(
        out / "partitions.json",
        {p.name: {"train": [s.id for s in p.train], "dev": [s.id for s in p.dev], "test": [s.id for s in p.test]}
         for p in parts},
    )
    model_id = args.model_id or f"{exp.preset}-seed{exp.seed}"
    best = {}
    summary = {"model_id": model_id, "partitions": {}}
    for i, part in enumerate(parts):
        pdir = out / f"partition_{part.name}"
        pdir.mkdir(exist_ok=True)
        tc = base_train.with_(seed=exp.seed + i, checkpoint_path=None)
        log.info("training partition %s (%d train / %d dev / %d test)", part.name, len(part.train), len(part.dev), len(part.test))
        result = train(part, head, tc, log_path=pdir / "history.jsonl")
        result.best.meta["model_id"] = result.final.meta["model_id"] = model_id
        save_checkpoint(pdir / "best.ckpt", result.best)
        save_checkpoint(pdir / "final.ckpt", result.final)
        best[part.name] = result.best
        summary["partitions"][part.name] = {
            "best_step": result.best.meta["step"],
            "best_dev_rmse": result.best.meta["dev_rmse"],
        }
    report, records = evaluate(best, parts, model_id)
    write_records(out / "test_predictions.csv", records)
    summary["test"] = report.to_dict()
    summary["constant_baseline"] = constant_baseline(parts).to_dict()
    _write_json(out / "summary.json", summary)
    print(report.to_text())
    return 0


# ---------------------------------------------------------------- predict


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    samples = load_manifest(args.manifest)
    if samples:
        L, _, d = samples[0].left.shape
        if (L, d) != (ckpt.config.num_layers, ckpt.config.feature_dim):
            raise ShapeError(
                f"manifest features are {L} layers x {d} dims; checkpoint expects "
                f"{ckpt.config.num_layers} x {ckpt.config.feature_dim}"
            )
    model_id = args.model_id or ckpt.meta.get("model_id", Path(args.checkpoint).stem)
    partition = args.partition if args.partition is not None else str(ckpt.meta.get("partition", ""))
    records = predict_records(ckpt, samples, model_id, partition)
    write_records(args.out, records)
    print(f"wrote {len(records)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------- eval


def _read_all(paths) -> list:
    sets = []
    for p in paths:
        records = read_records(p)
        check_records(records)
        sets.append(records)
    return sets


def per_run_rmse(sets) -> dict[str, dict[int, float]]:
    """{model: {run index: mean test RMSE}}; the k-th file holding a model is its run k."""
    out: dict[str, dict[int, float]] = {}
    for records in sets:
        for model in sorted({r.model_id for r in records}):
            runs = out.setdefault(model, {})
            runs[len(runs)] = report_from_records(records, model).mean_rmse
    return out


def cmd_eval(args) -> int:
    sets = _read_all(args.predictions)
    if args.mode == "single":
        reports = []
        for records in sets:
            for model in sorted({r.model_id for r in records}):
                reports.append(report_from_records(records, model))
        print("\n".join(r.to_text() for r in reports))
        payload = [r.to_dict() for r in reports]
    elif args.mode == "ensemble":
        merged = ensemble(sets, model_id=args.model_id or "ensemble")
        report = report_from_records(merged)
        if args.records_out:
            write_records(args.records_out, merged)
        print(report.to_text())
        payload = report.to_dict()
    else:
        if not args.baseline:
            raise ConfigError("stats mode needs --baseline MODEL_ID")
        if args.pairing == "sample":
            errors = per_sample_errors([r for s in sets for r in s], args.errors)
            pairing = f"per-sample {args.errors} error"
        else:
            errors = per_run_rmse(sets)
            pairing = "per-run mean test RMSE (one file per run)"
        table = ranking_table(errors, args.baseline, pairing=pairing)
        print(table.to_text())
        payload = table.to_dict()
    if args.out:
        _write_json(Path(args.out), payload)
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intellipred", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset (SFMT tensors + manifest)")
    g.add_argument("--preset", choices=sorted(SYNTHETIC_PRESETS), default=None)
    g.add_argument("--config", help="JSON file of SyntheticConfig fields")
    g.add_argument("--seed", type=int)
    g.add_argument("--samples", type=int, help="override the number of samples")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one head per partition")
    t.add_argument("--config", help="experiment JSON file")
    t.add_argument("--preset", choices=["paper", "desk", "tiny"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--manifest", help="train on a manifest instead of synthetic data")
    t.add_argument("--model-id")
    t.add_argument("--no-binaural-cross-attention", action="store_true")
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="eval-mode predictions for every manifest sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-id")
    p.add_argument("--partition")
    p.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="RMSE reports, ensembles and Wilcoxon rankings")
    e.add_argument("mode", choices=["single", "ensemble", "stats"])
    e.add_argument("predictions", nargs="+")
    e.add_argument("--baseline")
    e.add_argument("--errors", choices=["squared", "absolute"], default="squared")
    e.add_argument("--pairing", choices=["sample", "run"], default="sample",
                   help="stats mode: pair per-sample errors, or per-run RMSEs across files")
    e.add_argument("--model-id")
    e.add_argument("--records-out")
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="[log %(asctime)s] %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except IntellipredError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
