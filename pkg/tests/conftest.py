import itertools

import numpy as np
import pytest

from intellipred.tensor import Tensor, backward, sum_


def numeric_grad(fn, arrays, eps=1e-6):
    """Central finite differences of scalar fn(*arrays) w.r.t. every array, in float64."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            hi = fn(*arrays)
            a[i] = old - eps
            lo = fn(*arrays)
            a[i] = old
            g[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def autodiff_grad(build, arrays, weights=None):
    """Gradients of sum(weights * build(*tensors)) by reverse mode."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    if weights is not None:
        out = out * Tensor(weights)
    backward(sum_(out))
    return [leaf.grad for leaf in leaves]


def gradient_mismatch(got, want, rel_tol=1e-4, small=1e-4, abs_tol=1e-8):
    """Indices where got/want disagree: relative error above rel_tol, or absolute error
    above abs_tol for entries whose magnitude is below ``small``."""
    got, want = np.asarray(got, np.float64), np.asarray(want, np.float64)
    err = np.abs(got - want)
    scale = np.maximum(np.abs(got), np.abs(want))
    tiny = scale < small
    bad = np.where(tiny, err > abs_tol, err > rel_tol * scale)
    return np.argwhere(bad)


def max_rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_op_gradient(build, arrays, seed=0, tol=1e-4, eps=1e-6):
    """Compare reverse-mode and finite-difference gradients of a random projection of build()."""
    arrays = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    probe = build(*[Tensor(a) for a in arrays]).data
    weights = np.random.default_rng(seed).normal(size=probe.shape)

    def scalar(*xs):
        return float(np.sum(build(*[Tensor(x) for x in xs]).data * weights))

    analytic = autodiff_grad(build, arrays, weights)
    numeric = numeric_grad(scalar, arrays, eps)
    for k, (got, want) in enumerate(zip(analytic, numeric)):
        assert got is not None and got.shape == arrays[k].shape
        bad = gradient_mismatch(got, want, rel_tol=tol)
        assert len(bad) == 0, f"input {k}: {len(bad)} mismatched entries, first {bad[:3].tolist()}"


def brute_force_wilcoxon_p(d, alternative="greater"):
    """Independent oracle: enumerate all 2^n sign patterns over average ranks of |d|.

    Zero differences are dropped first; ranks come from scipy's rankdata.
    """
    from scipy.stats import rankdata

    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    ranks = rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    hits_ge = hits_le = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = float(np.dot(signs, ranks))
        hits_ge += w >= observed - 1e-9
        hits_le += w <= observed + 1e-9
    total = 2**n
    if alternative == "greater":
        return hits_ge / total
    if alternative == "less":
        return hits_le / total
    return min(1.0, 2 * min(hits_ge, hits_le) / total)


def meet_in_middle_upper_p(ranks, observed):
    """P(W+ >= observed) over all 2^n sign patterns, by splitting the ranks in two halves."""
    ranks = np.asarray(ranks, dtype=np.float64)
    half = len(ranks) // 2

    def subset_sums(r):
        sums = np.zeros(1)
        for x in r:
            sums = np.concatenate([sums, sums + x])
        return np.sort(sums)

    left, right = subset_sums(ranks[:half]), subset_sums(ranks[half:])
    # for each left sum count right sums >= observed - left
    idx = np.searchsorted(right, observed - left - 1e-9, side="left")
    return float((len(right) - idx).sum()) / 2.0 ** len(ranks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one "PASS|FAIL criterion N: ..." line per acceptance criterion, echoed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
