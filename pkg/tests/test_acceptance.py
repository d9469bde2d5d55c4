"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
The desk-scale training runs (criteria 5, 6 and 8) take several minutes on one
CPU core.
"""

import json
import math
import time

import numpy as np
import pytest

from intellipred import tensor as T
from intellipred.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from intellipred.cli import main as cli_main
from intellipred.config import head_preset, synthetic_preset, train_preset
from intellipred.data import generate_synthetic, make_partitions
from intellipred.errors import FormatError
from intellipred.evaluation import ensemble, read_records, report_from_records
from intellipred.model import (
    BinauralInput,
    ForwardProbe,
    HeadConfig,
    collate,
    head_forward,
    init_params,
    layer_pool,
    predict,
    predict_prepared,
    prepare,
    temporal_pool,
)
from intellipred.optim import AdamState, lr_at, prepare_samples, train
from intellipred.stats import wilcoxon_signed_rank
from intellipred.tensor import RngStream
from intellipred.tensorfile import decode_tensor, encode_tensor

from conftest import ACCEPTANCE, autodiff_grad, brute_force_wilcoxon_p, meet_in_middle_upper_p, numeric_grad
from test_tensor import OPS

pytestmark = pytest.mark.slow


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def rel_errors(got, want, floor=1e-6):
    got, want = np.asarray(got, np.float64), np.asarray(want, np.float64)
    return np.abs(got - want) / np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)


def _randomize(params, rng, scale=0.3):
    for name in params:
        params[name].data[:] = rng.normal(scale=scale, size=params[name].shape).astype(params.dtype)
        if name.endswith(".gain"):
            params[name].data[:] += 1.0


# ---------------------------------------------------------------- 1. gradients


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for name, (build, make) in sorted(OPS.items()):
        arrays = [np.asarray(a, np.float64) for a in make(rng)]
        weights = rng.normal(size=build(*[T.Tensor(a) for a in arrays]).shape)

        def scalar(*xs):
            return float(np.sum(build(*[T.Tensor(x) for x in xs]).data * weights))

        got = autodiff_grad(build, arrays, weights)
        want = numeric_grad(scalar, [a.copy() for a in arrays])
        worst[name] = max(float(rel_errors(g, w).max()) for g, w in zip(got, want))

    cfg = HeadConfig(num_layers=2, feature_dim=8, proj_dim=8, heads=2, ffn_dim=16,
                     temporal_blocks=2, layer_blocks=1, max_positions=8)
    params = init_params(cfg, RngStream(1), np.float64)
    _randomize(params, rng)
    inp = BinauralInput(rng.normal(size=(2, 25, 8)), rng.normal(size=(2, 25, 8)), rng.uniform(0, 90, 8),
                        rng.uniform(0, 90, 8))
    batch = collate([prepare(inp, cfg.downsample_factor)], np.float64)

    def loss():
        return T.huber_loss(head_forward(batch, params, cfg).probability, np.array([0.3]))

    params.zero_grad()
    T.backward(loss())
    head_worst = 0.0
    for name, p in params.items():
        analytic = p.grad
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-6
            hi = loss().item()
            flat[i] = old - 1e-6
            lo = loss().item()
            flat[i] = old
            numeric.reshape(-1)[i] = (hi - lo) / 2e-6
        head_worst = max(head_worst, float(rel_errors(analytic, numeric).max()))
    elapsed = time.perf_counter() - start
    op_worst = max(worst.values())
    ok = op_worst < 1e-3 and head_worst < 1e-3 and elapsed < 60
    record(1, ok, f"{len(OPS)} ops max rel err {op_worst:.2e}, full head ({params.num_parameters()} params) "
                  f"max rel err {head_worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2. shapes


def test_criterion_2_shape_chain():
    rng = np.random.default_rng(2)
    failures = []
    checked = 0
    for L, d in ((4, 32), (25, 1024), (33, 1280)):
        cfg = HeadConfig(num_layers=L, feature_dim=d)
        params = init_params(cfg, RngStream(L))
        for t in (1, 19, 20, 45, 300):
            inp = BinauralInput(rng.normal(size=(L, t, d)).astype(np.float32),
                                rng.normal(size=(L, t, d)).astype(np.float32), rng.uniform(0, 90, 8))
            probe = ForwardProbe()
            y = predict(inp, params, cfg, probe=probe)
            tp = math.ceil(t / 20)
            want = {"projected": (L, tp, 384), "temporal_pooled": (L, 384),
                    "with_audiogram": (L + 1, 384), "layer_pooled": (384,)}
            got = {k: probe.shapes[k] for k in want}
            if got != want or not (0.0 < y < 100.0) or not isinstance(y, float):
                failures.append((L, d, t, got, y))
            checked += 1
    record(2, not failures, f"{checked} (L, d, t) cases, shape-chain mismatches: {failures or 'none'}")


# ---------------------------------------------------------------- 3. channel swap


def test_criterion_3_channel_swap():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        L, d, t = int(rng.integers(1, 5)), int(rng.integers(2, 17)), int(rng.integers(1, 90))
        heads = int(rng.choice([1, 2, 4]))
        cfg = HeadConfig(num_layers=L, feature_dim=d, proj_dim=16, heads=heads,
                         temporal_blocks=2, layer_blocks=int(rng.integers(1, 3)), max_positions=8)
        params = init_params(cfg, RngStream(k), np.float32)
        _randomize(params, rng, scale=float(rng.uniform(0.02, 0.5)))
        inp = BinauralInput(rng.normal(size=(L, t, d)), rng.normal(size=(L, t, d)),
                            rng.uniform(0, 90, 8), rng.uniform(0, 90, 8))
        worst = max(worst, abs(predict(inp, params, cfg) - predict(inp.swapped(), params, cfg)))
    record(3, worst <= 1e-4, f"100 random pairs in 32-bit, max |swap difference| {worst:.2e}")


# ---------------------------------------------------------------- 4. ablation contract


def test_criterion_4_ablation_contract():
    rng = np.random.default_rng(4)
    max_change = 0.0
    control_changes = 0
    channel_change = 0.0
    trials = 20
    for k in range(trials):
        L, d, t = int(rng.integers(1, 4)), 8, int(rng.integers(5, 80))
        inp = BinauralInput(rng.normal(size=(L, t, d)), rng.normal(size=(L, t, d)), rng.uniform(0, 90, 8))

        def scramble(stage, index, other):
            return T.Tensor(other.data + rng.normal(scale=10.0, size=other.shape).astype(other.dtype))

        for cross in (False, True):
            cfg = HeadConfig(num_layers=L, feature_dim=d, proj_dim=8, heads=2, temporal_blocks=2,
                             layer_blocks=2, max_positions=8, binaural_cross_attention=cross)
            params = init_params(cfg, RngStream(k), np.float64)
            _randomize(params, rng)
            base = predict(inp, params, cfg)
            perturbed = predict(inp, params, cfg, probe=ForwardProbe(cross_source=scramble))
            if cross:
                control_changes += perturbed != base
            else:
                max_change = max(max_change, abs(perturbed - base))
                # each channel's pooled output ignores the other channel entirely
                x = rng.normal(size=(L, 3, 8))
                a, _ = temporal_pool(x, rng.normal(size=(L, 3, 8)), params, cfg)
                b, _ = temporal_pool(x, 100 * rng.normal(size=(L, 3, 8)), params, cfg)
                z = rng.normal(size=(L + 1, 8))
                c, _ = layer_pool(z, rng.normal(size=(L + 1, 8)), params, cfg)
                e, _ = layer_pool(z, rng.normal(size=(L + 1, 8)), params, cfg)
                channel_change = max(channel_change, float(np.abs(a.data - b.data).max()),
                                     float(np.abs(c.data - e.data).max()))
    ok = max_change == 0.0 and channel_change == 0.0 and control_changes == trials
    record(4, ok, f"ablated max change {max_change} (per-channel {channel_change}); "
                  f"cross-enabled control changed {control_changes}/{trials}")


# ---------------------------------------------------------------- 5 and 8. desk-scale training


DESK_SAMPLES = 2000


def _desk_run(tmp, seed, partition_seed=0):
    cfg = tmp / f"exp_seed{seed}.json"
    cfg.write_text(json.dumps({
        "preset": "desk",
        "seed": seed,
        "data": {"synthetic": {"num_samples": DESK_SAMPLES, "num_layers": 4, "feature_dim": 32, "seed": 0}},
        "train": {"steps": 3000, "batch_size": 16},
        "partitions": {"seed": partition_seed},
    }))
    out = tmp / f"run_seed{seed}_{time.monotonic_ns()}"
    start = time.perf_counter()
    assert cli_main(["train", "--config", str(cfg), "--out", str(out), "--model-id", f"desk-seed{seed}"]) == 0
    return out, time.perf_counter() - start


def _run_bytes(out):
    names = ["test_predictions.csv", "partitions.json", "summary.json"]
    for part in ("1", "2", "3"):
        names += [f"partition_{part}/{f}" for f in ("best.ckpt", "final.ckpt", "history.jsonl")]
    return {n: (out / n).read_bytes() for n in names}


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("desk")
    out, seconds = _desk_run(tmp, seed=0)
    return tmp, out, seconds


def test_criterion_5_learnability(desk_run):
    tmp, out, seconds = desk_run
    summary = json.loads((out / "summary.json").read_text())
    model, const = summary["test"]["mean_rmse"], summary["constant_baseline"]["mean_rmse"]
    repeat, _ = _desk_run(tmp, seed=0)
    identical = _run_bytes(out) == _run_bytes(repeat)
    ratio = model / const
    ok = ratio <= 0.7 and seconds < 15 * 60 and identical
    record(5, ok, f"{DESK_SAMPLES} samples, 3000 steps, batch 16: test RMSE {model:.3f} vs constant {const:.3f} "
                  f"(ratio {ratio:.3f}), {seconds / 60:.1f} min on 1 core, repeat bit-identical: {identical}")


# ---------------------------------------------------------------- 6. binaural benefit

# coherence-dominant preset; the schedule is longer than desk so the cross path has time to engage
BINAURAL_SEEDS = range(5)
BINAURAL_TRAIN = dict(steps=6000, warmup_steps=200, dev_eval_every=600)


def _binaural_rmse(seed: int, cross: bool) -> float:
    samples = generate_synthetic(synthetic_preset("binaural", seed=seed))
    L, _, d = samples[0].left.shape
    split = make_partitions(samples, seed=seed)[0]
    head = head_preset("desk", L, d, binaural_cross_attention=cross)
    result = train(split, head, train_preset("desk", seed=seed, **BINAURAL_TRAIN))
    best = result.best
    pred = predict_prepared(prepare_samples(split.test, head.downsample_factor), best.head_params(), best.config)
    target = np.array([s.correctness for s in split.test])
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def test_criterion_6_binaural_benefit():
    rows = []
    for seed in BINAURAL_SEEDS:
        rows.append((seed, _binaural_rmse(seed, True), _binaural_rmse(seed, False)))
    wins = sum(c < a for _, c, a in rows)
    detail = ", ".join(f"seed {s}: {c:.2f} vs {a:.2f}" for s, c, a in rows)
    record(6, wins >= 4, f"cross beats ablated in {wins}/5 seeds ({detail})")


# ---------------------------------------------------------------- 7. Wilcoxon


def test_criterion_7_wilcoxon():
    r = np.random.default_rng(7)
    mismatches = 0
    cases = 0
    for n in range(1, 13):
        for d in (r.normal(size=n), np.round(r.normal(size=n), 1), r.integers(-3, 4, size=n).astype(float)):
            if not np.any(d != 0):
                continue
            for alt in ("greater", "less", "two-sided"):
                cases += 1
                mismatches += wilcoxon_signed_rank(d, alternative=alt).p_value != brute_force_wilcoxon_p(d, alt)
    five = wilcoxon_signed_rank([1, 2, 3, 4, 5]).p_value
    from scipy.stats import rankdata

    approx_err = 0.0
    for _ in range(5):
        d = r.normal(loc=0.3, size=30)
        ranks = rankdata(np.abs(d))
        exact = meet_in_middle_upper_p(ranks, ranks[d > 0].sum())
        approx_err = max(approx_err, abs(wilcoxon_signed_rank(d).p_value - exact))
    ok = mismatches == 0 and five == 0.03125 and approx_err <= 0.01
    record(7, ok, f"{cases} exact cases with {mismatches} mismatches, [1..5] p = {five}, "
                  f"n=30 approximation error {approx_err:.4f}")


# ---------------------------------------------------------------- 8. ensembles


def test_criterion_8_ensemble_convexity(desk_run):
    r = np.random.default_rng(8)
    violations = 0
    for _ in range(1000):
        n = int(r.integers(1, 50))
        t = r.uniform(0, 100, n)
        a, b = r.uniform(0, 100, n), r.uniform(0, 100, n)
        ens = np.mean(((a + b) / 2 - t) ** 2)
        violations += ens > (np.mean((a - t) ** 2) + np.mean((b - t) ** 2)) / 2
    tmp, out_a, _ = desk_run
    out_b, _ = _desk_run(tmp, seed=1, partition_seed=0)
    sets = [read_records(out_a / "test_predictions.csv"), read_records(out_b / "test_predictions.csv")]
    members = [report_from_records(s).mean_rmse for s in sets]
    merged = report_from_records(ensemble(sets)).mean_rmse
    ok = violations == 0 and merged <= max(members)
    record(8, ok, f"1000 fixtures, {violations} Jensen violations; desk ensemble RMSE {merged:.3f} "
                  f"vs members {members[0]:.3f} / {members[1]:.3f}")


# ---------------------------------------------------------------- 9. schedule


def test_criterion_9_schedule():
    cfg = train_preset("paper")
    pins = (lr_at(0, cfg), lr_at(2000, cfg), lr_at(60000, cfg))
    grid = np.linspace(2000, 60000, 600).round().astype(int)
    lrs = [lr_at(int(s), cfg) for s in grid]
    monotone = all(a >= b for a, b in zip(lrs, lrs[1:]))
    ok = pins == (0.0, 3e-5, cfg.min_lr) and monotone
    record(9, ok, f"lr_at(0, 2000, 60000) = {pins}, monotone after warmup on 600 points: {monotone}")


# ---------------------------------------------------------------- 10. formats


def test_criterion_10_format_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    exact = 0
    for dtype in (np.float32, np.float64):
        for shape in ((3, 7, 5), (1,), (2, 1, 4, 3)):
            arr = rng.normal(size=shape).astype(dtype)
            back = decode_tensor(encode_tensor(arr))
            exact += back.dtype == arr.dtype and back.tobytes() == arr.tobytes()
        cfg = HeadConfig(num_layers=2, feature_dim=8, proj_dim=8, heads=2, max_positions=8)
        params = init_params(cfg, RngStream(0), dtype).arrays()
        ck = Checkpoint(cfg, params, {"step": 1}, AdamState.fresh(params).to_blobs())
        save_checkpoint(tmp_path / "c.ckpt", ck)
        loaded = load_checkpoint(tmp_path / "c.ckpt")
        exact += all(loaded.params[k].tobytes() == params[k].tobytes() and loaded.params[k].dtype == dtype
                     for k in params)
    buf = encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    ckbuf = encode_checkpoint(ck)
    corrupt = [
        (decode_tensor, b"XXXX" + buf[4:], "bad magic"),
        (decode_tensor, buf[:-4], "truncated while reading payload: expected 48 bytes, file has 44"),
        (decode_tensor, buf[:8] + (0).to_bytes(4, "little") + buf[12:], "rank 0"),
        (decode_tensor, buf + b"\0", "trailing"),
        (decode_checkpoint, b"XXXX" + ckbuf[4:], "bad magic"),
        (decode_checkpoint, ckbuf[:-1] + bytes([ckbuf[-1] ^ 1]), "checksum"),
        (decode_checkpoint, ckbuf[:50], "truncated"),
    ]
    caught = 0
    for fn, data, pattern in corrupt:
        try:
            fn(data)
        except FormatError as exc:
            caught += pattern in str(exc) and exc.offset is not None
    ok = exact == 8 and caught == len(corrupt)
    record(10, ok, f"{exact}/8 bit-exact round trips (SFMT and checkpoints, 32/64-bit); "
                   f"{caught}/{len(corrupt)} corrupted fixtures rejected with the expected error")
