"""Turn raw paired PPG/ECG recordings into aligned, normalized cycle matrices."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.linalg import solveh_banded
from scipy.signal import find_peaks

from .errors import DegenerateCycle, EmptyDataset, InsufficientPeaks, SequenceTooShort

logger = logging.getLogger(__name__)

MIN_CYCLE_S = 0.25
MAX_CYCLE_S = 2.0
DEFAULT_SMOOTHING = 300.0
DEFAULT_D = 300


@dataclass
class RawRecord:
    ppg: np.ndarray
    ecg: np.ndarray
    fs: float

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=float)
        self.ecg = np.asarray(self.ecg, dtype=float)
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.ppg.ndim != 1 or self.ppg.shape != self.ecg.shape:
            raise ValueError("ppg and ecg must be 1-D sequences of equal length")

    def __len__(self):
        return self.ppg.shape[0]

    def check_length(self):
        if len(self) < 2 * self.fs:
            raise SequenceTooShort(f"record has {len(self)} samples, needs >= {2 * self.fs:g}")


@dataclass
class CyclePairSet:
    """Fixed-length cycles stored column-wise.

    Besides the two ``(d, N)`` matrices each cycle carries the record it
    came from, its first raw sample index and its raw length, so that
    durations and chronological splits can be recovered later.
    """

    P: np.ndarray
    E: np.ndarray
    fs: float
    mode: str = "r2r"
    labels: Optional[np.ndarray] = None
    record_ids: Optional[np.ndarray] = None
    starts: Optional[np.ndarray] = None
    lengths: Optional[np.ndarray] = None
    skipped: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        if self.P.ndim != 2 or self.P.shape != self.E.shape:
            raise ValueError(f"P {self.P.shape} and E {self.E.shape} must share a 2-D shape")
        n = self.P.shape[1]
        if self.record_ids is None:
            self.record_ids = np.zeros(n, dtype=int)
        if self.starts is None:
            self.starts = np.arange(n, dtype=int)
        for name in ("labels", "record_ids", "starts", "lengths"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != (n,):
                    raise ValueError(f"{name} must have length N={n}")
                setattr(self, name, v.astype(int))

    @property
    def d(self):
        return self.P.shape[0]

    @property
    def n(self):
        return self.P.shape[1]

    def durations(self):
        """Original cycle durations in seconds (None when lengths are unknown)."""
        if self.lengths is None:
            return None
        return self.lengths / self.fs

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        pick = lambda v: None if v is None else v[idx]
        return CyclePairSet(P=self.P[:, idx], E=self.E[:, idx], fs=self.fs, mode=self.mode,
                            labels=pick(self.labels), record_ids=self.record_ids[idx],
                            starts=self.starts[idx], lengths=pick(self.lengths),
                            meta=dict(self.meta))


class RawCycle(NamedTuple):
    start: int
    ppg: np.ndarray
    ecg: Optional[np.ndarray]


def _require_length(x, fs):
    if not fs > 0:
        raise ValueError(f"fs must be positive, got {fs}")
    if x.shape[0] < 2 * fs:
        raise SequenceTooShort(f"need at least 2 s of signal ({2 * fs:g} samples), got {x.shape[0]}")


def _centered_average(x, width):
    width = max(1, int(width) | 1)
    return np.convolve(x, np.ones(width) / width, mode="same")


def detect_r_peaks(ecg, fs):
    """Pan-Tompkins style QRS detection returning R-peak sample indices.

    The band-pass is the classic pair of integer-coefficient difference
    equations rescaled to ``fs`` and applied as centred (zero-phase) FIR
    kernels, followed by a five-point derivative, squaring, a 150 ms moving
    window integrator and adaptive signal/noise thresholds with a 250 ms
    refractory period and search-back over long gaps.  Each detection is
    refined to the ECG maximum within 100 ms.
    """
    x = np.asarray(ecg, dtype=float)
    _require_length(x, fs)
    if np.ptp(x) < 1e-12:
        return np.zeros(0, dtype=int)
    x0 = x - np.median(x)

    m_lp = max(2, int(round(6 * fs / 200)))
    lp = np.convolve(np.ones(m_lp), np.ones(m_lp))
    y = np.convolve(x0, lp / lp.sum(), mode="same")
    y = y - _centered_average(y, round(32 * fs / 200))

    pad = np.pad(y, 2, mode="edge")
    deriv = (2 * pad[3:-1] + pad[4:] - 2 * pad[1:-3] - pad[:-4]) / 8.0
    mwi = _centered_average(deriv ** 2, round(0.15 * fs))

    refractory = int(round(0.25 * fs))
    cand, _ = find_peaks(mwi, distance=refractory)
    if cand.size == 0:
        return np.zeros(0, dtype=int)

    learn = mwi[: int(2 * fs)]
    spk = learn.max() / 3.0
    npk = learn.mean() / 2.0
    qrs = []
    for p in cand:
        thr = npk + 0.25 * (spk - npk)
        if mwi[p] > thr and (not qrs or p - qrs[-1] >= refractory):
            qrs.append(p)
            spk = 0.125 * mwi[p] + 0.875 * spk
        else:
            npk = 0.125 * mwi[p] + 0.875 * npk
    thr = npk + 0.25 * (spk - npk)

    # search-back over gaps much longer than the typical beat
    if len(qrs) >= 3:
        rr = np.median(np.diff(qrs))
        extra = []
        for a, b in zip(qrs[:-1], qrs[1:]):
            if b - a > 1.66 * rr:
                inside = cand[(cand > a + refractory) & (cand < b - refractory)]
                inside = inside[mwi[inside] > thr / 2]
                if inside.size:
                    extra.append(int(inside[np.argmax(mwi[inside])]))
        qrs = sorted(qrs + extra)

    half = int(round(0.1 * fs))
    peaks = []
    for p in qrs:
        lo, hi = max(0, p - half), min(x.shape[0], p + half + 1)
        r = lo + int(np.argmax(x0[lo:hi]))
        if not peaks or r - peaks[-1] >= refractory:
            peaks.append(r)
        elif x0[r] > x0[peaks[-1]]:
            peaks[-1] = r
    return np.asarray(peaks, dtype=int)


def detect_ppg_onsets(ppg, fs):
    """Pulse onsets: the local minimum just before each beat's steepest upslope.

    Upslopes are peaks of the derivative of a 40 ms smoothed signal that
    exceed 35 % of its 99th percentile, at least 250 ms apart.  From each
    one the smoothed signal is followed downhill backwards to its foot,
    which is then settled on the raw minimum within half a smoothing window.
    """
    x = np.asarray(ppg, dtype=float)
    _require_length(x, fs)
    if np.ptp(x) < 1e-12:
        return np.zeros(0, dtype=int)
    width = max(3, int(round(0.04 * fs)) | 1)
    half = width // 2
    s = _centered_average(x - np.median(x), width)
    ds = np.gradient(s)
    height = 0.35 * np.percentile(ds, 99)
    if not height > 0:
        return np.zeros(0, dtype=int)
    ups, _ = find_peaks(ds, height=height, distance=int(round(0.25 * fs)))
    onsets = []
    floor = 0
    for u in ups:
        j = u
        while j > floor and s[j - 1] < s[j]:
            j -= 1
        if j == 0:
            # ran into the start of the record: no foot observed
            floor = u
            continue
        # smoothing drags the foot of a sharp upstroke early; settle on the raw minimum
        lo, hi = max(0, j - half), min(x.shape[0], j + half + 1)
        j = hi - 1 - int(np.argmin(x[lo:hi][::-1]))
        if not onsets or j > onsets[-1]:
            onsets.append(j)
        floor = u
    return np.asarray(onsets, dtype=int)


def detrend(x, smoothing=DEFAULT_SMOOTHING):
    """Smoothness-priors detrending: ``x - (I + λ² D₂ᵀD₂)⁻¹ x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise SequenceTooShort(f"detrending needs at least 3 samples, got {n}")
    if not smoothing > 0:
        raise ValueError("smoothing must be positive")
    D2 = sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n))
    M = (sparse.identity(n) + smoothing ** 2 * (D2.T @ D2)).tocsr()
    # upper banded storage for the symmetric pentadiagonal system
    ab = np.zeros((3, n))
    ab[2] = M.diagonal(0)
    ab[1, 1:] = M.diagonal(1)
    ab[0, 2:] = M.diagonal(2)
    trend = solveh_banded(ab, x)
    return x - trend


def _cycle_bounds(fs):
    return MIN_CYCLE_S * fs, MAX_CYCLE_S * fs


def segment_r2r(ppg, ecg, r_peaks, fs):
    """Cut both signals at consecutive R peaks (half-open ``[r_i, r_{i+1})``).

    Cycles shorter than 0.25 s or longer than 2 s are dropped.
    """
    ppg = np.asarray(ppg, dtype=float)
    ecg = np.asarray(ecg, dtype=float)
    if ppg.shape != ecg.shape:
        raise ValueError("ppg and ecg must have equal length")
    r = np.asarray(r_peaks, dtype=int)
    if r.size < 2:
        raise InsufficientPeaks(f"need at least 2 R peaks, got {r.size}")
    lo, hi = _cycle_bounds(fs)
    out = []
    for a, b in zip(r[:-1], r[1:]):
        if lo <= b - a <= hi and b <= ppg.shape[0]:
            out.append(RawCycle(int(a), ppg[a:b], ecg[a:b]))
    return out


def segment_o2o(ppg, onsets, fs, ecg=None):
    """Cut at consecutive PPG onsets; an ECG, if given, is cut at the same indices."""
    ppg = np.asarray(ppg, dtype=float)
    o = np.asarray(onsets, dtype=int)
    if o.size < 2:
        raise InsufficientPeaks(f"need at least 2 onsets, got {o.size}")
    lo, hi = _cycle_bounds(fs)
    out = []
    for a, b in zip(o[:-1], o[1:]):
        if lo <= b - a <= hi and b <= ppg.shape[0]:
            out.append(RawCycle(int(a), ppg[a:b], None if ecg is None else np.asarray(ecg)[a:b]))
    return out


def resample_cycle(cycle, d):
    """Linear interpolation of a cycle onto ``d`` evenly spaced points."""
    cycle = np.asarray(cycle, dtype=float)
    n = cycle.shape[0]
    if n < 2:
        raise SequenceTooShort("a cycle needs at least 2 samples")
    if d < 2:
        raise ValueError("target length must be at least 2")
    if n == d:
        return cycle.copy()
    return np.interp(np.linspace(0.0, n - 1.0, d), np.arange(n, dtype=float), cycle)


def normalize_cycle(cycle):
    """Zero mean, unit sample standard deviation (ddof=1)."""
    cycle = np.asarray(cycle, dtype=float)
    sd = cycle.std(ddof=1) if cycle.shape[0] > 1 else 0.0
    if not sd > 1e-12:
        raise DegenerateCycle(f"cycle standard deviation {sd:g} is too small to normalize")
    return (cycle - cycle.mean()) / sd


def estimate_transit_delay(r_peaks, onsets):
    """Median delay (samples) from each R peak to the first onset after it.

    Onsets further than half the median R-R interval away are ignored.
    Returns 0 when no pairing is possible.
    """
    r = np.asarray(r_peaks, dtype=int)
    o = np.asarray(onsets, dtype=int)
    if r.size < 2 or o.size == 0:
        return 0
    limit = 0.5 * np.median(np.diff(r))
    pos = np.searchsorted(o, r, side="left")
    ok = pos < o.size
    lags = o[pos[ok]] - r[ok]
    lags = lags[lags <= limit]
    return int(round(np.median(lags))) if lags.size else 0


def _record_cycles(rec, mode, smoothing, align):
    ppg = detrend(rec.ppg, smoothing)
    ecg = detrend(rec.ecg, smoothing)
    delay = 0
    if mode == "r2r":
        peaks = detect_r_peaks(ecg, rec.fs)
        if align:
            delay = estimate_transit_delay(peaks, detect_ppg_onsets(ppg, rec.fs))
            if delay:
                ppg = ppg[delay:]
                ecg = ecg[:ecg.shape[0] - delay]
                peaks = peaks[peaks <= ecg.shape[0]]
        if peaks.size < 2:
            return [], delay
        return segment_r2r(ppg, ecg, peaks, rec.fs), delay
    if mode == "o2o":
        onsets = detect_ppg_onsets(ppg, rec.fs)
        if onsets.size < 2:
            return [], delay
        return segment_o2o(ppg, onsets, rec.fs, ecg=ecg), delay
    raise ValueError(f"unknown segmentation mode {mode!r}")


def build_dataset(records, mode="r2r", d=DEFAULT_D, smoothing=DEFAULT_SMOOTHING,
                  labels=None, align=True):
    """Detrend, segment, resample and normalize every record into one set.

    ``mode`` is ``"r2r"`` (cut at ECG R peaks; with ``align`` the PPG is
    first advanced by the median R-to-onset delay) or ``"o2o"`` (cut both
    signals at PPG onsets, no alignment).  Columns follow record order, then
    time order.  Cycles that cannot be normalized are skipped and counted.
    """
    mode = mode.lower()
    if labels is not None and len(labels) != len(records):
        raise ValueError("need one label per record")
    P, E, lab, rid, starts, lengths, delays = [], [], [], [], [], [], []
    skipped = 0
    fs = None
    for i, rec in enumerate(records):
        rec.check_length()
        if fs is None:
            fs = rec.fs
        elif rec.fs != fs:
            raise ValueError("all records must share one sampling rate")
        cycles, delay = _record_cycles(rec, mode, smoothing, align)
        delays.append(delay)
        for c in cycles:
            try:
                p = normalize_cycle(resample_cycle(c.ppg, d))
                e = normalize_cycle(resample_cycle(c.ecg, d))
            except DegenerateCycle:
                skipped += 1
                continue
            P.append(p)
            E.append(e)
            rid.append(i)
            starts.append(c.start)
            lengths.append(c.ppg.shape[0])
            if labels is not None:
                lab.append(int(labels[i]))
    if not P:
        raise EmptyDataset("no cycles survived preprocessing")
    if skipped:
        logger.info("skipped %d degenerate cycles", skipped)
    return CyclePairSet(P=np.column_stack(P), E=np.column_stack(E), fs=fs, mode=mode,
                        labels=np.asarray(lab) if labels is not None else None,
                        record_ids=np.asarray(rid), starts=np.asarray(starts),
                        lengths=np.asarray(lengths), skipped=skipped,
                        meta={"transit_delays": delays})


def chronological_split(cycles, train_ratio=0.8):
    """Per-record split: the first ``train_ratio`` of each record's cycles train.

    Returns ``(train_idx, test_idx, boundaries)`` where ``boundaries`` maps
    each record id to the first raw sample index of its test portion.
    """
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    train, test, bounds = [], [], {}
    for r in np.unique(cycles.record_ids):
        idx = np.flatnonzero(cycles.record_ids == r)
        idx = idx[np.argsort(cycles.starts[idx], kind="stable")]
        cut = int(np.floor(train_ratio * idx.size))
        train.extend(idx[:cut].tolist())
        test.extend(idx[cut:].tolist())
        bounds[int(r)] = int(cycles.starts[idx[cut]]) if cut < idx.size else None
    return np.asarray(train, dtype=int), np.asarray(test, dtype=int), bounds


def cycles_after(cycles, boundaries):
    """Indices of cycles starting at or after their record's split boundary."""
    keep = []
    for j, (r, s) in enumerate(zip(cycles.record_ids, cycles.starts)):
        b = boundaries.get(int(r))
        if b is not None and s >= b:
            keep.append(j)
    return np.asarray(keep, dtype=int)
