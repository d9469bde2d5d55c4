import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intellipred.config import synthetic_preset
from intellipred.data import (
    Sample,
    SyntheticConfig,
    generate_synthetic,
    load_manifest,
    make_partitions,
    save_manifest,
    signal_gain,
    synthetic_target,
)
from intellipred.errors import ConfigError, ValidationError
from intellipred.tensorfile import write_tensor

GOLDEN = Path(__file__).parent / "fixtures" / "golden"


def small_cfg(**kw):
    base = dict(num_samples=12, num_layers=2, feature_dim=4, t_min=5, t_max=30, num_listeners=5)
    base.update(kw)
    return SyntheticConfig(**base)


# ---------------------------------------------------------------- closed-form target


def test_target_hand_value():
    # 100 * sigmoid(0.2 * (0 - 0.25 * 40 + 3 * 0)) = 100 * sigmoid(-2)
    assert synthetic_target(0.0, 40.0, 0.0) == pytest.approx(100 / (1 + math.exp(2.0)), abs=1e-12)
    assert synthetic_target(0.0, 40.0, 0.0) == pytest.approx(11.920292, abs=1e-6)


def test_target_saturates():
    assert synthetic_target(np.inf, 0.0, 1.0) == 100.0
    assert synthetic_target(1e6, 0.0, 1.0) == 100.0
    assert synthetic_target(-np.inf, 90.0, 0.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(
    snr=st.floats(-40, 40), aud=st.floats(0, 90), rho=st.floats(0, 1),
    d_snr=st.floats(0, 10), d_aud=st.floats(0, 10),
)
def test_target_monotone(snr, aud, rho, d_snr, d_aud):
    base = synthetic_target(snr, aud, rho)
    assert synthetic_target(snr + d_snr, aud, rho) >= base
    assert synthetic_target(snr, aud + d_aud, rho) <= base
    assert 0.0 <= base <= 100.0


def test_signal_gain():
    assert signal_gain(0.0) == 0.5
    assert signal_gain(20.0) == pytest.approx(10 / 11)


# ---------------------------------------------------------------- generator


def test_generator_deterministic_and_seed_sensitive():
    a, b = generate_synthetic(small_cfg()), generate_synthetic(small_cfg())
    for x, y in zip(a, b):
        assert x.left.tobytes() == y.left.tobytes() and x.right.tobytes() == y.right.tobytes()
        assert x.correctness == y.correctness
    c = generate_synthetic(small_cfg(seed=1))
    assert a[0].left.tobytes() != c[0].left.tobytes()


def test_generator_prefix_stable():
    # per-sample streams: the first samples do not depend on how many are drawn
    a, b = generate_synthetic(small_cfg(num_samples=3)), generate_synthetic(small_cfg(num_samples=12))
    assert [s.left.tobytes() for s in a] == [s.left.tobytes() for s in b[:3]]


def test_noise_free_targets_equal_closed_form():
    cfg = small_cfg(target_noise=0.0, dtype="float64", num_samples=30)
    for s in generate_synthetic(cfg):
        i = s.info
        want = synthetic_target(i["snr"], i["audiogram_mean"], i["coherence"], cfg.alpha, cfg.beta, cfg.gamma)
        assert abs(s.correctness - want) <= 1e-9
        assert i["audiogram_mean"] == pytest.approx(np.mean([s.audiogram_left, s.audiogram_right]))


def test_generated_values_in_range():
    samples = generate_synthetic(small_cfg(num_samples=40))
    for s in samples:
        assert 0.0 <= s.correctness <= 100.0
        assert s.left.shape == s.right.shape and s.left.dtype == np.float32
        assert 5 <= s.left.shape[1] <= 30
        for a in (s.audiogram_left, s.audiogram_right):
            assert a.shape == (8,) and np.all((a >= 0) & (a <= 90))
        assert not s.problems()


def test_coherence_is_visible_between_channels():
    # high-snr signal, no template: channel correlation tracks rho
    cfg = small_cfg(num_samples=60, feature_dim=16, snr_min=30, snr_max=31, template_share=0.0, t_min=400,
                    t_max=401, num_components=8, min_period=20, max_period=60, dtype="float64")
    corr, rho = [], []
    for s in generate_synthetic(cfg):
        corr.append(np.corrcoef(s.left.ravel(), s.right.ravel())[0, 1])
        rho.append(s.info["coherence"])
    assert np.corrcoef(corr, rho)[0, 1] > 0.8


@pytest.mark.parametrize(
    "kw", [dict(num_samples=0), dict(t_min=10, t_max=5), dict(snr_min=5, snr_max=0),
           dict(coherence_min=0.5, coherence_max=0.2), dict(template_share=1.5), dict(dtype="int8")]
)
def test_synthetic_config_rejects(kw):
    with pytest.raises(ConfigError):
        small_cfg(**kw)


def test_synthetic_config_dict_round_trip():
    cfg = small_cfg()
    assert SyntheticConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SyntheticConfig.from_dict({"nope": 1})


def test_tiny_preset_dimensions():
    cfg = synthetic_preset("tiny")
    assert (cfg.num_samples, cfg.num_layers, cfg.feature_dim) == (200, 4, 32)


# ---------------------------------------------------------------- manifests


def test_golden_manifest_loads():
    (s,) = load_manifest(GOLDEN / "manifest.json")
    assert s.id == "g0" and s.correctness == 62.5 and s.partition == "1" and s.split == "train"
    assert s.left.tolist() == [[[1.0, 2.0], [3.0, 4.0]]]
    assert np.array_equal(s.audiogram_left, s.audiogram_right)


def test_manifest_round_trip(tmp_path):
    samples = generate_synthetic(small_cfg(num_samples=4))
    save_manifest(samples, tmp_path / "m.json")
    back = load_manifest(tmp_path / "m.json")
    assert [s.id for s in back] == [s.id for s in samples]
    for a, b in zip(samples, back):
        assert a.left.tobytes() == b.left.tobytes() and a.correctness == b.correctness
        assert a.info == b.info
    # one-sample manifest and a re-save round trip too
    save_manifest(back[:1], tmp_path / "one" / "m.json")
    assert len(load_manifest(tmp_path / "one" / "m.json")) == 1


def _copy_golden(tmp_path):
    for f in GOLDEN.iterdir():
        shutil.copy(f, tmp_path / f.name)
    return json.loads((tmp_path / "manifest.json").read_text())


def test_manifest_correctness_out_of_range(tmp_path):
    entries = _copy_golden(tmp_path)
    entries[0]["correctness"] = 101
    (tmp_path / "manifest.json").write_text(json.dumps(entries))
    with pytest.raises(ValidationError, match="g0.*101"):
        load_manifest(tmp_path / "manifest.json")


def test_manifest_mismatched_layers(tmp_path):
    entries = _copy_golden(tmp_path)
    write_tensor(tmp_path / "g0.right.sfmt", np.ones((2, 2, 2), dtype=np.float32))
    (tmp_path / "manifest.json").write_text(json.dumps(entries))
    with pytest.raises(ValidationError, match="left shape"):
        load_manifest(tmp_path / "manifest.json")


def test_manifest_aggregates_problems(tmp_path):
    entries = _copy_golden(tmp_path)
    bad_missing = dict(entries[0], id="g1", left_path="nope.sfmt")
    bad_aud = dict(entries[0], id="g2", audiogram=[1, 2, 3])
    bad_target = dict(entries[0], id="g3", correctness=-1)
    (tmp_path / "manifest.json").write_text(json.dumps(entries + [bad_missing, bad_aud, bad_target, entries[0]]))
    with pytest.raises(ValidationError) as info:
        load_manifest(tmp_path / "manifest.json")
    text = "\n".join(info.value.problems)
    assert "g1" in text and "g2" in text and "g3" in text and "duplicate sample id g0" in text
    assert len(info.value.problems) >= 4


def test_manifest_missing_file():
    with pytest.raises(ValidationError, match="does not exist"):
        load_manifest("/nonexistent/manifest.json")


# ---------------------------------------------------------------- partitions


def _fake(n, tagged=False):
    out = []
    for i in range(n):
        s = Sample(f"s{i:03d}", np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros(8), np.zeros(8), 50.0)
        if tagged:
            s.partition, s.split = str(i % 3 + 1), "test" if i % 5 == 0 else "train"
        out.append(s)
    return out


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 400), seed=st.integers(0, 2**31))
def test_random_partitions_disjoint_and_balanced(n, seed):
    samples = _fake(n)
    parts = make_partitions(samples, scheme="random", seed=seed)
    assert len(parts) == 3
    sizes = [len(p.train) + len(p.test) for p in parts]
    assert sum(sizes) == n and max(sizes) - min(sizes) <= 1
    for i, p in enumerate(parts):
        train, test, dev = ({s.id for s in x} for x in (p.train, p.test, p.dev))
        assert not train & test and not dev & train and not dev & test
        nxt = parts[(i + 1) % 3]
        assert dev <= {s.id for s in nxt.train + nxt.test}
        assert p.dev_source == nxt.name != p.name


def test_random_partitions_300_reproducible():
    samples = _fake(300)
    a, b = make_partitions(samples, "random", seed=4), make_partitions(samples, "random", seed=4)
    assert [len(p.train) + len(p.test) for p in a] == [100, 100, 100]
    assert [[s.id for s in p.dev] for p in a] == [[s.id for s in p.dev] for p in b]
    c = make_partitions(samples, "random", seed=5)
    assert [s.id for s in a[0].test] != [s.id for s in c[0].test]


def test_tagged_partitions_follow_tags():
    samples = _fake(30, tagged=True)
    parts = make_partitions(samples)
    assert parts.scheme == "tags"
    for p in parts:
        assert all(s.partition == p.name and s.split == "train" for s in p.train)
        assert all(s.partition == p.name and s.split == "test" for s in p.test)
        assert all(s.partition != p.name for s in p.dev)


def test_tagged_needs_three_tags():
    samples = _fake(6, tagged=True)
    for s in samples:
        s.partition = "1" if s.partition == "3" else s.partition
    with pytest.raises(ConfigError, match="at least 3"):
        make_partitions(samples, scheme="tags")


def test_dev_filter_hook():
    samples = _fake(90)
    for i, s in enumerate(samples):
        s.info["difficulty"] = float(i % 2)
    parts = make_partitions(samples, "random", dev_filter=lambda s: s.info["difficulty"] > 0.5)
    assert all(s.info["difficulty"] == 1.0 for p in parts for s in p.dev)
