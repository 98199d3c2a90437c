"""Morphology and timing metrics for reconstructed ECG cycles."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (DegenerateInput, DimensionMismatch, EmptyAfterExclusion,
                     EmptyDataset, MissingFiducials)

DEGENERATE_TOL = 1e-12
BORDER_RATIO = 0.6
R_POSITION = 1.0 - BORDER_RATIO

# search windows, seconds
QS_WINDOW = 0.080
T_GAP = 0.040
T_WINDOW = 0.400

INTERVALS = ("pr", "qrs", "qt")
SUBWAVES = ("p", "qrs", "t")


def pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shapes {x.shape} and {y.shape} differ")
    xc, yc = x - x.mean(), y - y.mean()
    if x.std() <= DEGENERATE_TOL or y.std() <= DEGENERATE_TOL:
        raise DegenerateInput("Pearson correlation of a constant signal")
    r = float(xc @ yc / (np.linalg.norm(xc) * np.linalg.norm(yc)))
    return min(1.0, max(-1.0, r))


def rrmse(x, x_hat):
    """``||x - x_hat|| / ||x||`` with ``x`` the reference."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise DimensionMismatch(f"shapes {x.shape} and {x_hat.shape} differ")
    nx = np.linalg.norm(x)
    if nx <= DEGENERATE_TOL:
        raise DegenerateInput("reference has (near) zero norm")
    return float(np.linalg.norm(x - x_hat) / nx)


@dataclass(frozen=True)
class Fiducials:
    p: int = None
    q: int = None
    r: int = None
    s: int = None
    t: int = None

    def as_tuple(self):
        return (self.p, self.q, self.r, self.s, self.t)

    @property
    def complete(self):
        return all(v is not None for v in self.as_tuple())

    @property
    def ordered(self):
        """All five points present and strictly increasing."""
        return self.complete and self.p < self.q < self.r < self.s < self.t

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Intervals:
    pr: float = None
    qrs: float = None
    qt: float = None

    def to_dict(self):
        return asdict(self)


def _interior_extremum(x, lo, hi, fn):
    """Arg-extremum of ``x[lo:hi]``; None when the window is empty or the
    extremum sits on a window edge (no turning point inside)."""
    lo, hi = max(lo, 0), min(hi, len(x))
    if hi - lo < 3:
        return None
    j = lo + int(fn(x[lo:hi]))
    if j == lo or j == hi - 1:
        return None
    return j


def detect_fiducials(cycle, fs_effective):
    """Locate P, Q, R, S and T in one ECG cycle.

    R is the global maximum.  Q and S are the minima within 80 ms before and
    after R, P the maximum between the cycle start and Q, and T the maximum
    from 40 ms to 400 ms after S.  A point whose window is empty, or whose
    extremum lands on the window edge, is reported as absent (None), and so
    are the points whose windows depend on it.
    """
    x = np.asarray(cycle, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise DimensionMismatch("a cycle must be a non-empty vector")
    if not fs_effective > 0:
        raise ValueError("fs_effective must be positive")
    w = int(round(QS_WINDOW * fs_effective))
    r = int(np.argmax(x))
    q = _interior_extremum(x, r - w + 1, r, np.argmin)
    s = _interior_extremum(x, r + 1, r + w, np.argmin)
    p = _interior_extremum(x, 1, q, np.argmax) if q is not None else None
    t = None
    if s is not None:
        t = _interior_extremum(x, s + int(round(T_GAP * fs_effective)) + 1,
                               s + int(round(T_WINDOW * fs_effective)), np.argmax)
    return Fiducials(p=p, q=q, r=r, s=s, t=t)


def border_offset(rr_span, ratio=BORDER_RATIO):
    """Samples from an R peak to the border with the next beat."""
    return int(round(ratio * rr_span))


def split_subwaves(n, fiducials, rr_before=None, rr_after=None, ratio=BORDER_RATIO):
    """Half-open index ranges of the P wave, QRS complex and T wave.

    Beat borders split the neighbouring R-R spans ``ratio : 1 - ratio``: the
    right border is the last sample before ``R + ratio * rr_after`` and the
    left border is ``R - (1 - ratio) * rr_before``.  Both spans default to
    the cycle length ``n``, which suits a beat view with R at ``0.4 n``.
    The ranges ``[left, Q)``, ``[Q, S]`` and ``(S, right]`` are clipped to
    the cycle and partition ``[left, right]``.
    """
    f = fiducials
    if f.q is None or f.r is None or f.s is None:
        raise MissingFiducials("subwave split needs Q, R and S")
    rr_before = n if rr_before is None else rr_before
    rr_after = n if rr_after is None else rr_after
    left = max(0, f.r - (int(round(rr_before)) - border_offset(rr_before, ratio)))
    right = min(n - 1, f.r + border_offset(rr_after, ratio) - 1)
    if not left <= f.q <= f.s <= right:
        raise MissingFiducials("Q and S fall outside the beat borders")
    return {"p": (left, f.q), "qrs": (f.q, f.s + 1), "t": (f.s + 1, right + 1)}


def intervals(fiducials, fs_effective, strict=False):
    """PR, QRS and QT durations in seconds.

    Intervals whose points are missing come back as None; with ``strict`` or
    when none can be computed, :class:`MissingFiducials` is raised.
    """
    f = fiducials
    need = {"pr": (f.p, f.r), "qrs": (f.q, f.s), "qt": (f.q, f.t)}
    out = {}
    for k, (a, b) in need.items():
        out[k] = None if a is None or b is None else (b - a) / fs_effective
    missing = [k for k, v in out.items() if v is None]
    if missing and (strict or len(missing) == len(out)):
        raise MissingFiducials(f"cannot compute {', '.join(missing)}")
    return Intervals(**out)


def interval_mae(recovered, reference):
    """Per-interval mean absolute error in seconds.

    A pair is excluded from an interval type when either side lacks it;
    exclusions are counted in ``result["excluded"]``.  Types with no
    remaining pairs get None, and if every type is empty the call fails.
    """
    if len(recovered) != len(reference):
        raise DimensionMismatch("interval lists differ in length")
    out, excluded = {}, {}
    for k in INTERVALS:
        diffs = [abs(getattr(a, k) - getattr(b, k)) for a, b in zip(recovered, reference)
                 if getattr(a, k) is not None and getattr(b, k) is not None]
        excluded[k] = len(recovered) - len(diffs)
        out[k] = math.fsum(diffs) / len(diffs) if diffs else None
    if all(out[k] is None for k in INTERVALS):
        raise EmptyAfterExclusion("no cycle pair carries any interval")
    out["excluded"] = excluded
    return out


def summarize(values):
    """Mean, (population) standard deviation and median of a list."""
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "median": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()),
            "median": float(np.median(v)), "n": int(v.size)}


def beat_shift(ref_cycle, r_position=R_POSITION):
    """Circular shift that moves the reference R peak to ``r_position * d``."""
    d = len(ref_cycle)
    return int(round(r_position * d)) - int(np.argmax(ref_cycle))


def effective_rates(d, lengths, fs):
    """Sampling rate of fixed-length cycles resampled from ``lengths`` raw samples."""
    return d * float(fs) / np.asarray(lengths, dtype=float)


@dataclass
class EvalReport:
    per_cycle: list
    rho: dict
    rrmse: dict
    subwaves: dict
    intervals: dict
    effective_ratio: float
    n_cycles: int
    n_effective: int
    excluded_degenerate: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _safe(fn, a, b):
    try:
        return fn(a, b)
    except DegenerateInput:
        return None


def evaluate_batch(R_e, T_e, fs, center=True):
    """Full evaluation of reconstructions ``R_e`` against references ``T_e``.

    ``fs`` is the effective sampling rate of the cycles, either one value or
    one per column.  With ``center`` each pair is rotated by the same amount
    so that the reference R peak sits at 40 % of the cycle before fiducials
    are searched, which turns an R-to-R cycle back into a whole beat.  Pairs
    whose reconstruction or reference is constant are excluded from the
    ρ/rRMSE statistics and counted.  Subwave and interval statistics use only
    effective cycles, where both signals give five ordered fiducials; the
    subwave ranges come from the reference.
    """
    R_e = np.asarray(R_e, dtype=float)
    T_e = np.asarray(T_e, dtype=float)
    if R_e.shape != T_e.shape:
        raise DimensionMismatch(f"shapes {R_e.shape} and {T_e.shape} differ")
    if R_e.ndim != 2 or R_e.shape[1] == 0:
        raise EmptyDataset("nothing to evaluate")
    d, m = R_e.shape
    rates = np.broadcast_to(np.asarray(fs, dtype=float), (m,))

    rows = []
    sub = {w: {"rho": [], "rrmse": []} for w in SUBWAVES}
    iv_rec, iv_ref = [], []
    degenerate = 0
    for j in range(m):
        ref, rec = T_e[:, j], R_e[:, j]
        rho, err = _safe(pearson, ref, rec), _safe(rrmse, ref, rec)
        if rho is None or err is None:
            degenerate += 1
        row = {"index": j, "rho": rho, "rrmse": err, "effective": False,
               "fs_effective": float(rates[j])}
        if center:
            k = beat_shift(ref)
            ref, rec = np.roll(ref, k), np.roll(rec, k)
        f_ref = detect_fiducials(ref, rates[j])
        f_rec = detect_fiducials(rec, rates[j])
        if rho is not None and f_ref.ordered and f_rec.ordered:
            try:
                ranges = split_subwaves(d, f_ref)
            except MissingFiducials:
                ranges = None
            if ranges is not None:
                row["effective"] = True
                for w, (a, b) in ranges.items():
                    sub[w]["rho"].append(_safe(pearson, ref[a:b], rec[a:b]))
                    sub[w]["rrmse"].append(_safe(rrmse, ref[a:b], rec[a:b]))
                i_rec = intervals(f_rec, rates[j])
                i_ref = intervals(f_ref, rates[j])
                iv_rec.append(i_rec)
                iv_ref.append(i_ref)
                for k_ in INTERVALS:
                    row[f"{k_}_rec"] = getattr(i_rec, k_)
                    row[f"{k_}_ref"] = getattr(i_ref, k_)
        rows.append(row)

    n_eff = sum(r["effective"] for r in rows)
    iv = {}
    if iv_rec:
        mae = interval_mae(iv_rec, iv_ref)
        for k_ in INTERVALS:
            iv[k_] = {"rec_mean": summarize([getattr(a, k_) for a in iv_rec])["mean"],
                      "ref_mean": summarize([getattr(a, k_) for a in iv_ref])["mean"],
                      "mae": mae[k_]}
    return EvalReport(
        per_cycle=rows,
        rho=summarize([r["rho"] for r in rows]),
        rrmse=summarize([r["rrmse"] for r in rows]),
        subwaves={w: {"rho": summarize(v["rho"]), "rrmse": summarize(v["rrmse"])}
                  for w, v in sub.items()},
        intervals=iv,
        effective_ratio=n_eff / m,
        n_cycles=m,
        n_effective=n_eff,
        excluded_degenerate=degenerate,
    )
