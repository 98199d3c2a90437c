import numpy as np
import pytest
from hypothesis import given, strategies as st

from xdjdl.errors import (DegenerateCycle, EmptyDataset, InsufficientPeaks,
                          SequenceTooShort)
from xdjdl.preprocess import (CyclePairSet, RawRecord, build_dataset, chronological_split,
                              cycles_after, detect_ppg_onsets, detect_r_peaks, detrend,
                              estimate_transit_delay, normalize_cycle, resample_cycle,
                              segment_o2o, segment_r2r)
from xdjdl.synthetic import EcgTemplateParams, gen_synthetic_record

FS = 125.0


def _record(hr=60, duration=10, noise=0.0, seed=0, ppg_noise=None):
    return gen_synthetic_record(EcgTemplateParams(hr_bpm=hr, noise_std=noise, seed=seed,
                                                  ppg_noise_std=ppg_noise), duration, FS)


def _hits(detected, planted, tol):
    return sum(np.min(np.abs(detected - p)) <= tol for p in planted) if len(detected) else 0


def test_r_peaks_flat_and_short():
    assert detect_r_peaks(np.zeros(1250), FS).size == 0
    with pytest.raises(SequenceTooShort):
        detect_r_peaks(np.zeros(100), FS)


def test_r_peaks_hr60():
    rec = _record()
    peaks = detect_r_peaks(rec.ecg, FS)
    assert peaks.size >= 9
    assert all(np.min(np.abs(rec.r_peaks - p)) <= 2 for p in peaks)


def test_r_peaks_hr120_spacing():
    rec = _record(hr=120)
    peaks = detect_r_peaks(rec.ecg, FS)
    assert abs(np.median(np.diff(peaks)) - 62.5) <= 2


@pytest.mark.parametrize("hr", [50, 60, 90, 120])
@pytest.mark.parametrize("noise", [0.0, 0.02, 0.05])
def test_r_peak_hit_rate(hr, noise):
    rec = _record(hr=hr, duration=30, noise=noise, seed=7)
    peaks = detect_r_peaks(rec.ecg, FS)
    assert _hits(peaks, rec.r_peaks, 2) >= 0.9 * rec.r_peaks.size


def test_onsets_flat():
    assert detect_ppg_onsets(np.ones(1250), FS).size == 0


@pytest.mark.parametrize("ppg_noise", [0.0, 0.002])
def test_onsets_planted(ppg_noise):
    rec = _record(duration=20, noise=0.02, ppg_noise=ppg_noise)
    onsets = detect_ppg_onsets(rec.ppg, FS)
    assert _hits(onsets, rec.onsets, 3) >= 0.9 * rec.onsets.size
    # nothing spurious either
    assert onsets.size <= rec.onsets.size + 1


def test_onsets_sinusoid():
    t = np.arange(1250) / FS
    onsets = detect_ppg_onsets(np.sin(2 * np.pi * t), FS)
    minima = 93.75 + 125 * np.arange(10)
    assert 9 <= onsets.size <= 10
    assert all(np.min(np.abs(minima - o)) <= 3 for o in onsets)


def _trend_oracle(x, lam):
    n = x.size
    D2 = np.zeros((n - 2, n))
    for i in range(n - 2):
        D2[i, i:i + 3] = [1, -2, 1]
    return x - np.linalg.solve(np.eye(n) + lam ** 2 * D2.T @ D2, x)


def test_detrend_matches_dense_oracle(rng):
    x = rng.standard_normal(300)
    np.testing.assert_allclose(detrend(x, 300), _trend_oracle(x, 300), atol=1e-9)


def test_detrend_cases():
    assert not np.any(detrend(np.zeros(50), 300))
    ramp = np.linspace(0, 10, 1250)
    assert np.max(np.abs(detrend(ramp, 300))) < 1e-3 * 10
    with pytest.raises(SequenceTooShort):
        detrend(np.zeros(2), 300)


def _ramp_plus_sine():
    t = np.arange(1250) / FS
    sine = np.sin(2 * np.pi * t)
    return detrend(np.linspace(0, 10, 1250) + sine, 300), sine


@pytest.mark.xfail(strict=True, reason="boundary transients of the λ=300 smoother cap the "
                   "full-record correlation at 0.961 (same value from the dense oracle)")
def test_detrend_ramp_plus_sine_full_record():
    out, sine = _ramp_plus_sine()
    assert np.corrcoef(out, sine)[0, 1] >= 0.99


def test_detrend_ramp_plus_sine_interior():
    out, sine = _ramp_plus_sine()
    np.testing.assert_allclose(out, _trend_oracle(np.linspace(0, 10, 1250) + sine, 300), atol=1e-9)
    assert np.corrcoef(out[100:-100], sine[100:-100])[0, 1] >= 0.99


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_detrend_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(64), rng.standard_normal(64)
    lhs = detrend(a * x + b * y, 50)
    rhs = a * detrend(x, 50) + b * detrend(y, 50)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(rhs))


def test_segment_r2r_arithmetic():
    x = np.arange(500.0)
    cyc = segment_r2r(x, x, [100, 225, 350], FS)
    assert [c.ppg.size for c in cyc] == [125, 125]
    assert segment_r2r(x, x, [0, 10], FS) == []
    with pytest.raises(InsufficientPeaks):
        segment_r2r(x, x, [5], FS)


def test_segment_r2r_planted():
    rec = _record(duration=10)
    cyc = segment_r2r(rec.ppg, rec.ecg, rec.r_peaks, FS)
    assert len(cyc) == 9
    for c in cyc:
        assert c.start in rec.r_peaks
        assert c.ppg.size == c.ecg.size
        assert np.argmax(c.ecg) == 0


def test_segment_o2o():
    x = np.arange(500.0)
    assert [c.ppg.size for c in segment_o2o(x, [50, 175, 300], FS)] == [125, 125]
    with pytest.raises(InsufficientPeaks):
        segment_o2o(x, [50], FS)
    rec = _record(duration=10)
    assert len(segment_o2o(rec.ppg, rec.onsets, FS)) == rec.onsets.size - 1


def test_resample():
    x = np.random.default_rng(0).standard_normal(40)
    np.testing.assert_array_equal(resample_cycle(x, 40), x)
    np.testing.assert_array_equal(resample_cycle(np.full(17, 5.0), 33), 5.0)
    out = resample_cycle(np.arange(150.0), 300)
    assert out[0] == 0 and out[-1] == 149
    np.testing.assert_allclose(out, np.linspace(0, 149, 300), atol=1e-9)
    with pytest.raises(SequenceTooShort):
        resample_cycle([1.0], 10)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.integers(2, 80))
def test_resample_endpoints_and_monotone(values, d):
    x = np.sort(np.asarray(values))
    out = resample_cycle(x, d)
    assert out[0] == x[0] and out[-1] == x[-1]
    assert np.all(np.diff(out) >= 0)


def test_normalize():
    out = normalize_cycle([1.0, 2.0, 3.0])
    np.testing.assert_allclose(out, [-1, 0, 1])
    assert out.std(ddof=1) == 1.0
    with pytest.raises(DegenerateCycle):
        normalize_cycle(np.full(10, 3.0))


@given(st.integers(0, 10_000))
def test_normalize_postcondition(seed):
    x = np.random.default_rng(seed).standard_normal(30) * 7 + 3
    out = normalize_cycle(x)
    assert abs(out.mean()) < 1e-9 and abs(out.std(ddof=1) - 1) < 1e-6


def test_transit_delay():
    rec = _record(duration=20)
    assert estimate_transit_delay(rec.r_peaks, rec.onsets) == 25


def test_build_dataset_eleven_beats():
    rec = _record(duration=11)
    ds = build_dataset([RawRecord(rec.ppg, rec.ecg, FS)], d=300)
    assert rec.r_peaks.size == 11
    assert ds.n == 10 and ds.P.shape == ds.E.shape == (300, 10)
    for M in (ds.P, ds.E):
        assert np.all(np.abs(M.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(M.std(axis=0, ddof=1) - 1) < 1e-6)


def test_build_dataset_too_short():
    # 2.5 s at 30 bpm holds a single R peak
    rec = gen_synthetic_record(EcgTemplateParams(hr_bpm=30), 10.0, FS)
    n = int(2.5 * FS)
    with pytest.raises(EmptyDataset):
        build_dataset([RawRecord(rec.ppg[:n], rec.ecg[:n], FS)])


def test_build_dataset_labels_and_split():
    recs = [_record(duration=20, seed=s) for s in (0, 1)]
    ds = build_dataset([RawRecord(r.ppg, r.ecg, FS) for r in recs], labels=[0, 1], d=64)
    np.testing.assert_array_equal(ds.labels, ds.record_ids)
    assert ds.record_ids[0] == 0 and ds.record_ids[-1] == 1
    train, test, bounds = chronological_split(ds, 0.8)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(ds.n))
    for r in (0, 1):
        tr = ds.starts[train][ds.record_ids[train] == r]
        te = ds.starts[test][ds.record_ids[test] == r]
        assert tr.max() < te.min() == bounds[r]
    np.testing.assert_array_equal(np.sort(cycles_after(ds, bounds)), np.sort(test))


def test_o2o_dataset():
    rec = _record(duration=20)
    ds = build_dataset([RawRecord(rec.ppg, rec.ecg, FS)], mode="o2o", d=100)
    assert ds.mode == "o2o" and ds.n == rec.onsets.size - 1


def test_cycle_pair_set_validation():
    with pytest.raises(ValueError):
        CyclePairSet(P=np.zeros((3, 2)), E=np.zeros((3, 3)), fs=FS)
    with pytest.raises(ValueError):
        RawRecord(np.zeros(3), np.zeros(4), FS)
