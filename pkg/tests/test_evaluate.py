import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xdjdl.errors import (DegenerateInput, EmptyAfterExclusion, EmptyDataset,
                          MissingFiducials)
from xdjdl.evaluate import (Fiducials, Intervals, beat_shift, border_offset, detect_fiducials,
                            effective_rates, evaluate_batch, interval_mae, intervals, pearson,
                            rrmse, split_subwaves)
from xdjdl.preprocess import RawRecord, build_dataset
from xdjdl.synthetic import EcgTemplateParams, gen_synthetic_record

vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=40)


def test_pearson_cases(rng):
    x = rng.standard_normal(30)
    assert pearson(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)
    # value from direct evaluation of the defining formula
    assert pearson([1, 2, 3, 4], [1, 2, 3, 5]) == pytest.approx(0.9827076298239908, abs=1e-12)
    with pytest.raises(DegenerateInput):
        pearson(np.ones(5), x[:5])


def test_rrmse_cases(rng):
    x = rng.standard_normal(30)
    assert rrmse(x, x) == 0
    assert rrmse(x, np.zeros(30)) == pytest.approx(1.0)
    assert rrmse([3, 4], [0, 0]) == 1.0
    assert rrmse([3, 4], [3, 0]) == pytest.approx(0.8)
    with pytest.raises(DegenerateInput):
        rrmse(np.zeros(3), np.ones(3))


@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(50), rng.standard_normal(50)
    assert abs(pearson(a * x + b, y) - pearson(x, y)) < 1e-12
    assert abs(pearson(x, a * y + b) - pearson(x, y)) < 1e-12


@given(st.integers(0, 10_000), st.floats(0.0, 10))
def test_rrmse_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    x, e = rng.standard_normal(20) + 0.1, rng.standard_normal(20)
    assert rrmse(x, x + c * e) == pytest.approx(c * rrmse(x, x + e), rel=1e-12, abs=1e-15)


def _beats(hr=60, noise=0.0, d=300, seed=0, duration=20):
    rec = gen_synthetic_record(EcgTemplateParams(hr_bpm=hr, noise_std=noise, seed=seed), duration, 125)
    ds = build_dataset([RawRecord(rec.ppg, rec.ecg, 125)], d=d)
    return ds, effective_rates(d, ds.lengths, ds.fs)


def test_fiducials_on_raw_planted_beat():
    p = EcgTemplateParams()
    rec = gen_synthetic_record(p, 10, 125)
    # one whole beat, 40/60 around the third R peak
    r = rec.r_peaks[2]
    lo, hi = r - 50, r + 75
    f = detect_fiducials(rec.ecg[lo:hi], 125)
    for w in "pqrst":
        assert abs(getattr(f, w) + lo - rec.fiducials[w][2]) <= 2
    assert f.ordered


def test_fiducials_ramp():
    f = detect_fiducials(np.arange(100.0), 125)
    assert f.r == 99
    assert f.q is None and f.p is None and f.s is None and f.t is None
    assert not f.complete


def test_fiducials_ordering_on_r2r_views():
    ds, rates = _beats()
    for j in range(ds.n):
        c = ds.E[:, j]
        f = detect_fiducials(np.roll(c, beat_shift(c)), rates[j])
        assert f.ordered


def test_border_and_subwaves():
    assert border_offset(100) == 60
    f = Fiducials(p=20, q=35, r=40, s=45, t=70)
    parts = split_subwaves(100, f)
    assert parts == {"p": (0, 35), "qrs": (35, 46), "t": (46, 100)}
    with pytest.raises(MissingFiducials):
        split_subwaves(100, Fiducials(r=40, s=45))


@given(st.integers(20, 400), st.data())
def test_subwaves_partition(n, data):
    r = data.draw(st.integers(2, n - 3))
    q = data.draw(st.integers(max(0, r - (n - round(0.6 * n))), r))
    s = data.draw(st.integers(r, min(n - 1, r + round(0.6 * n) - 1)))
    parts = split_subwaves(n, Fiducials(q=q, r=r, s=s))
    idx = np.concatenate([np.arange(a, b) for a, b in parts.values()])
    left = max(0, r - (n - round(0.6 * n)))
    right = min(n - 1, r + round(0.6 * n) - 1)
    np.testing.assert_array_equal(idx, np.arange(left, right + 1))


def test_planted_peaks_in_their_subwaves():
    ds, rates = _beats()
    for j in range(ds.n):
        c = np.roll(ds.E[:, j], beat_shift(ds.E[:, j]))
        f = detect_fiducials(c, rates[j])
        parts = split_subwaves(ds.d, f)
        assert parts["p"][0] <= f.p < parts["p"][1]
        assert parts["t"][0] <= f.t < parts["t"][1]


def test_intervals_arithmetic():
    assert intervals(Fiducials(p=10, r=30), 125).pr == pytest.approx(0.16)
    iv = intervals(Fiducials(q=95, r=100, s=105), 125)
    assert iv.qrs == pytest.approx(0.08) and iv.pr is None and iv.qt is None
    with pytest.raises(MissingFiducials):
        intervals(Fiducials(r=3), 125)
    with pytest.raises(MissingFiducials):
        intervals(Fiducials(q=95, r=100, s=105), 125, strict=True)


def test_intervals_match_planted_defaults():
    p = EcgTemplateParams()
    ds, rates = _beats()
    got = {"pr": [], "qrs": [], "qt": []}
    for j in range(ds.n):
        c = np.roll(ds.E[:, j], beat_shift(ds.E[:, j]))
        iv = intervals(detect_fiducials(c, rates[j]), rates[j])
        for k in got:
            got[k].append(getattr(iv, k))
    for k, v in p.planted_intervals().items():
        assert abs(np.mean(got[k]) - v) <= 0.010


def test_interval_mae_cases(rng):
    a = [Intervals(0.16, 0.08, 0.4), Intervals(0.15, 0.09, 0.38)]
    out = interval_mae(a, a)
    assert out["pr"] == out["qrs"] == out["qt"] == 0
    b = [Intervals(x.pr + 0.02, x.qrs, x.qt) for x in a]
    assert interval_mae(b, a)["pr"] == pytest.approx(0.02)
    with pytest.raises(EmptyAfterExclusion):
        interval_mae([Intervals()], [Intervals(0.1, 0.1, 0.1)])


@given(st.integers(0, 10_000), st.integers(1, 20))
def test_interval_mae_loop_oracle_and_symmetry(seed, n):
    rng = np.random.default_rng(seed)
    mk = lambda: [Intervals(*(None if rng.random() < 0.2 else float(v) for v in rng.uniform(0, 0.5, 3)))
                  for _ in range(n)]
    a, b = mk(), mk()
    try:
        out = interval_mae(a, b)
    except EmptyAfterExclusion:
        return
    for k in ("pr", "qrs", "qt"):
        tot, cnt = 0.0, 0
        for x, y in zip(a, b):
            if getattr(x, k) is not None and getattr(y, k) is not None:
                tot += abs(getattr(x, k) - getattr(y, k))
                cnt += 1
        if cnt:
            assert abs(out[k] - tot / cnt) < 1e-12
        else:
            assert out[k] is None
        assert out["excluded"][k] == n - cnt
    assert interval_mae(b, a) == out


def test_evaluate_identity():
    ds, rates = _beats(noise=0.02, seed=3)
    rep = evaluate_batch(ds.E, ds.E, rates)
    assert rep.rho["mean"] == pytest.approx(1.0) and rep.rrmse["mean"] == 0
    assert all(v["mae"] == 0 for v in rep.intervals.values())
    detectable = sum(detect_fiducials(np.roll(ds.E[:, j], beat_shift(ds.E[:, j])), rates[j]).ordered
                     for j in range(ds.n))
    assert rep.effective_ratio == detectable / ds.n


def test_evaluate_degenerate_column_and_recompute(rng):
    ds, rates = _beats(noise=0.02, seed=5)
    R = ds.E + 0.2 * rng.standard_normal(ds.E.shape)
    R[:, 2] = 0.0
    rep = evaluate_batch(R, ds.E, rates)
    assert rep.excluded_degenerate == 1
    assert rep.per_cycle[2]["rho"] is None and not rep.per_cycle[2]["effective"]
    rhos = [r["rho"] for r in rep.per_cycle if r["rho"] is not None]
    errs = [r["rrmse"] for r in rep.per_cycle if r["rrmse"] is not None]
    assert abs(rep.rho["mean"] - np.mean(rhos)) < 1e-12
    assert abs(rep.rho["std"] - np.std(rhos)) < 1e-12
    assert abs(rep.rho["median"] - np.median(rhos)) < 1e-12
    assert abs(rep.rrmse["mean"] - np.mean(errs)) < 1e-12
    for block in (rep.rho, rep.rrmse):
        assert all(math.isfinite(v) for k, v in block.items())
    assert rep.to_json()


def test_evaluate_errors():
    with pytest.raises(EmptyDataset):
        evaluate_batch(np.zeros((5, 0)), np.zeros((5, 0)), 125)
    with pytest.raises(ValueError):
        evaluate_batch(np.zeros((5, 2)), np.zeros((5, 3)), 125)


def test_even_median():
    from xdjdl.evaluate import summarize
    assert summarize([1.0, 4.0, 2.0, 3.0])["median"] == 2.5
