"""Synthetic ground truth: ECG/PPG records with planted fiducials, exactly
generative dictionary models, and an exhaustive sparse-coding oracle."""

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CombinatorialGuard, InvalidParams

WAVES = ("p", "q", "r", "s", "t")


@dataclass(frozen=True)
class EcgTemplateParams:
    """Five-Gaussian ECG beat plus a fast-rise, slow-decay PPG pulse.

    Bump centers and widths are fractions of the beat period; a beat window
    runs from ``R - centers[2] * RR`` to ``R + (1 - centers[2]) * RR`` so that
    the R wave sits at the 40/60 border split of its R-R span by default.
    """

    amplitudes: tuple = (0.15, -0.15, 1.0, -0.25, 0.3)
    centers: tuple = (0.25, 0.37, 0.40, 0.43, 0.70)
    widths: tuple = (0.025, 0.008, 0.010, 0.008, 0.05)
    hr_bpm: float = 60.0
    noise_std: float = 0.0
    seed: int = 0
    rr_jitter: float = 0.0
    pulse_transit: float = 0.2
    ppg_rise: float = 0.05
    ppg_decay: float = 0.35
    ppg_noise_std: float = None

    def __post_init__(self):
        if not self.hr_bpm > 0:
            raise InvalidParams(f"hr_bpm must be positive, got {self.hr_bpm}")
        for name in ("amplitudes", "centers", "widths"):
            if len(getattr(self, name)) != 5:
                raise InvalidParams(f"{name} needs one entry per wave (P, Q, R, S, T)")
        c = np.asarray(self.centers, dtype=float)
        if not (np.all(np.diff(c) > 0) and c[0] > 0 and c[-1] < 1):
            raise InvalidParams("centers must be strictly increasing inside (0, 1)")
        if not all(w > 0 for w in self.widths):
            raise InvalidParams("widths must be positive")
        if self.noise_std < 0 or (self.ppg_noise_std is not None and self.ppg_noise_std < 0):
            raise InvalidParams("noise_std must be nonnegative")
        if not 0 <= self.rr_jitter < 0.5:
            raise InvalidParams("rr_jitter must lie in [0, 0.5)")
        if self.pulse_transit < 0 or self.ppg_rise <= 0 or self.ppg_decay <= 0:
            raise InvalidParams("PPG timing parameters must be positive")

    @property
    def rr(self):
        return 60.0 / self.hr_bpm

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("amplitudes", "centers", "widths"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def planted_intervals(self, rr=None):
        """PR, QRS and QT durations (s) implied by the template for period ``rr``."""
        rr = self.rr if rr is None else rr
        p, q, r, s, t = self.centers
        return {"pr": (r - p) * rr, "qrs": (s - q) * rr, "qt": (t - q) * rr}


@dataclass
class SyntheticRecord:
    ppg: np.ndarray
    ecg: np.ndarray
    fs: float
    r_peaks: np.ndarray
    onsets: np.ndarray
    fiducials: dict
    rr: np.ndarray
    intervals: dict = field(default_factory=dict)

    def truth(self):
        """JSON-ready planted ground truth."""
        return {
            "fs": self.fs,
            "r_peaks": self.r_peaks.tolist(),
            "onsets": self.onsets.tolist(),
            "fiducials": {k: v.tolist() for k, v in self.fiducials.items()},
            "rr": self.rr.tolist(),
            "intervals": {k: v.tolist() for k, v in self.intervals.items()},
        }


def _beat_periods(params, duration, rng):
    rr0 = params.rr
    r_frac = params.centers[2]
    periods, r_times = [], []
    t = None
    while True:
        rr = rr0
        if params.rr_jitter:
            rr = rr0 * float(np.clip(1 + params.rr_jitter * rng.standard_normal(), 0.5, 1.5))
        if t is None:
            # the first beat window starts at time zero
            t = r_frac * rr
        if t + (1 - r_frac) * rr > duration + 1e-9:
            break
        r_times.append(t)
        periods.append(rr)
        t += rr
    return np.array(r_times), np.array(periods)


def gen_synthetic_record(params, duration, fs):
    """Generate a paired ECG/PPG record with planted fiducials.

    Beats are placed back to back from time zero; only complete beats are
    kept.  R peaks and the other fiducials sit exactly on the sample grid
    of their planted indices, and each PPG onset trails its R peak by
    ``params.pulse_transit`` seconds.
    """
    if not fs > 0:
        raise InvalidParams(f"fs must be positive, got {fs}")
    if duration < 2 * params.rr:
        raise InvalidParams(f"duration {duration} s is shorter than two beats ({2 * params.rr:.3f} s)")
    rng = np.random.default_rng(params.seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    r_times, periods = _beat_periods(params, duration, rng)
    r_idx = np.round(r_times * fs).astype(int)
    r_times = r_idx / fs

    amps = np.asarray(params.amplitudes, dtype=float)
    offs = np.asarray(params.centers, dtype=float) - params.centers[2]
    wids = np.asarray(params.widths, dtype=float)

    ecg = np.zeros(n)
    fid = {w: [] for w in WAVES}
    for r, rr in zip(r_times, periods):
        for w, a, o, s in zip(WAVES, amps, offs, wids):
            c = r + o * rr
            fid[w].append(int(round(c * fs)))
            ecg += a * np.exp(-0.5 * ((t - c) / (s * rr)) ** 2)

    onsets = r_idx + int(round(params.pulse_transit * fs))
    ppg = np.zeros(n)
    for o, rr in zip(onsets / fs, periods):
        tau = t - o
        m = tau > 0
        ppg[m] += (1 - np.exp(-tau[m] / (params.ppg_rise * rr))) * np.exp(-tau[m] / (params.ppg_decay * rr))
    keep = onsets < n

    if params.noise_std:
        ecg += params.noise_std * rng.standard_normal(n)
    ppg_noise = params.noise_std if params.ppg_noise_std is None else params.ppg_noise_std
    if ppg_noise:
        ppg += ppg_noise * rng.standard_normal(n)

    intervals = {k: np.array([params.planted_intervals(rr)[k] for rr in periods])
                 for k in ("pr", "qrs", "qt")}
    return SyntheticRecord(ppg=ppg, ecg=ecg, fs=float(fs), r_peaks=r_idx,
                           onsets=onsets[keep], rr=periods,
                           fiducials={k: np.array(v) for k, v in fid.items()},
                           intervals=intervals)


@dataclass
class PlantedModel:
    D_e: np.ndarray
    D_p: np.ndarray
    W: np.ndarray
    codes: np.ndarray
    t_e: int
    t_p: int
    labels: np.ndarray = None
    pools: list = None
    H: np.ndarray = None

    @property
    def e_codes(self):
        return self.W @ self.codes


def _dictionary(rng, d, k):
    if k <= d:
        return np.linalg.qr(rng.standard_normal((d, k)))[0]
    D = rng.standard_normal((d, k))
    return D / np.linalg.norm(D, axis=0)


def gen_planted_model(d, k_e, k_p, t_e, t_p, n, class_count=None, seed=0,
                      nonnegative=False, class_spread=None, class_atom=False):
    """Exactly generative data ``X_p = D_p A_p``, ``X_e = D_e W A_p``.

    ``D_e`` and ``D_p`` have orthonormal columns when ``k <= d``; larger
    dictionaries (allowed for ``D_p`` only) use random unit-norm atoms, which
    makes the PPG-to-ECG relation nonlinear.  ``W`` has one nonzero per
    column and touches every ECG atom; each code uses ``t_p`` atoms whose
    images are distinct, capped so that ECG codes have at most ``t_e``
    nonzeros.

    With ``class_count`` the PPG atoms are split into disjoint contiguous
    pools and a column of class ``c`` only uses pool ``c``.  ``class_spread``
    makes the pools near-copies of a shared base (base plus a perturbation of
    roughly this relative size), so PPG alone hardly tells classes apart
    while their ECG images differ.  With ``class_atom`` every column of class
    ``c`` uses the first atom of pool ``c`` with coefficient exactly 1, so the
    class codes are an exact linear function of the PPG codes
    (``model.H @ codes`` equals the one-hot label matrix).

    Returns ``(model, X_e, X_p, labels)``; ``labels`` is None without classes.
    """
    for name, v in (("d", d), ("k_e", k_e), ("k_p", k_p), ("t_e", t_e), ("t_p", t_p), ("n", n)):
        if int(v) < 1:
            raise InvalidParams(f"{name} must be positive")
    if k_e > d:
        raise InvalidParams(f"k_e={k_e} > d={d}: orthonormal ECG atoms do not exist")
    if t_e > k_e or t_p > k_p:
        raise InvalidParams("sparsity bounds exceed dictionary sizes")
    C = 1 if class_count is None else int(class_count)
    if C < 1 or k_p % C:
        raise InvalidParams(f"k_p={k_p} must split into {C} equal class pools")
    pool = k_p // C
    t_eff = min(t_p, t_e)
    if t_eff > pool or t_eff > k_e:
        raise InvalidParams("class pools too small for the requested sparsity")

    rng = np.random.default_rng(seed)
    if class_spread is not None:
        if pool > d:
            raise InvalidParams("shared-base pools need k_p / class_count <= d")
        base = np.linalg.qr(rng.standard_normal((d, pool)))[0]
        D_p = np.hstack([base + class_spread * rng.standard_normal((d, pool)) / np.sqrt(d)
                         for _ in range(C)])
        D_p /= np.linalg.norm(D_p, axis=0)
    else:
        D_p = _dictionary(rng, d, k_p)
    D_e = _dictionary(rng, d, k_e)

    rows = rng.permutation(np.arange(k_p) % k_e)
    W = np.zeros((k_e, k_p))
    mags = rng.uniform(0.5, 1.5, k_p)
    W[rows, np.arange(k_p)] = mags if nonnegative else mags * rng.choice([-1.0, 1.0], k_p)

    labels = rng.integers(0, C, n) if class_count is not None else np.zeros(n, dtype=int)
    A = np.zeros((k_p, n))
    for j in range(n):
        lo = labels[j] * pool
        for _ in range(1000):
            if class_atom:
                s = lo + np.concatenate([[0], 1 + rng.choice(pool - 1, t_eff - 1, replace=False)])
            else:
                s = lo + rng.choice(pool, t_eff, replace=False)
            if len(set(rows[s])) == t_eff:
                break
        else:
            raise InvalidParams("could not draw a support with distinct ECG images")
        c = rng.uniform(0.5, 1.5, t_eff)
        A[s, j] = c if nonnegative else c * rng.choice([-1.0, 1.0], t_eff)
        if class_atom:
            A[lo, j] = 1.0

    X_p = D_p @ A
    X_e = D_e @ (W @ A)
    pools = [np.arange(c * pool, (c + 1) * pool) for c in range(C)]
    H = None
    if class_atom:
        H = np.zeros((C, k_p))
        H[np.arange(C), np.arange(C) * pool] = 1.0
    model = PlantedModel(D_e=D_e, D_p=D_p, W=W, codes=A, t_e=t_e, t_p=t_p,
                         labels=labels if class_count is not None else None, pools=pools, H=H)
    return model, X_e, X_p, model.labels


def brute_force_sparse_oracle(D, x, t, guard=10**6):
    """Globally optimal ``t``-sparse least-squares fit by exhaustive search.

    Supports are enumerated by size (``1..t``) and lexicographically within a
    size; the first support reaching the smallest residual wins, so ties go to
    the smaller, then lexicographically first, support.  Returns
    ``(support, coefficients, residual_norm)``.
    """
    D = np.asarray(D, dtype=float)
    x = np.asarray(x, dtype=float)
    k = D.shape[1]
    if t < 1 or t > k:
        raise InvalidParams(f"t={t} outside [1, {k}]")
    total = sum(math.comb(k, s) for s in range(1, t + 1))
    if total > guard:
        raise CombinatorialGuard(f"{total} supports exceed the guard of {guard}")
    best = ((), np.zeros(0), float(np.linalg.norm(x)))
    for size in range(1, t + 1):
        for support in itertools.combinations(range(k), size):
            sub = D[:, support]
            coef = np.linalg.lstsq(sub, x, rcond=None)[0]
            res = float(np.linalg.norm(x - sub @ coef))
            if res < best[2]:
                best = (support, coef, res)
    return best
