"""Test-phase ECG reconstruction from PPG cycles."""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, idct

from .dict_learning import LcXdjdlModel, build_q_matrix
from .errors import DimensionMismatch, LabelOutOfRange, SingularSystem
from .sparse_coding import omp_unnormalized


@dataclass
class ReconstructionBatch:
    R_e: np.ndarray
    source_codes: np.ndarray


@dataclass
class DctBaselineModel:
    W_dct: np.ndarray
    ridge: float = 1e-3

    def __post_init__(self):
        self.W_dct = np.asarray(self.W_dct, dtype=float)
        if self.W_dct.ndim != 2 or self.W_dct.shape[0] != self.W_dct.shape[1]:
            raise DimensionMismatch("W_dct must be square")
        if not np.all(np.isfinite(self.W_dct)):
            raise SingularSystem("W_dct has non-finite entries")

    @property
    def d(self):
        return self.W_dct.shape[0]


def _as_cycles(T_p, d):
    T_p = np.asarray(T_p, dtype=float)
    if T_p.ndim == 1:
        T_p = T_p[:, None]
    if T_p.ndim != 2 or T_p.shape[0] != d:
        raise DimensionMismatch(f"expected cycles with {d} rows, got shape {T_p.shape}")
    return T_p


def infer_ecg(model, T_p):
    """Code each PPG cycle under ``D_p``, map through ``W``, synthesize with ``D_e``."""
    T_p = _as_cycles(T_p, model.d)
    S_p = omp_unnormalized(model.D_p, T_p, model.hyper.t_p)
    return ReconstructionBatch(R_e=model.D_e @ (model.W @ S_p), source_codes=S_p)


def infer_ecg_lc(model, T_p, Q_test):
    """Label-aware reconstruction.

    Each PPG cycle is stacked with its scaled discriminative code ``√γ q``
    and coded under ``[D_p; √γ H]`` before the usual map and synthesis.
    ``Q_test`` may also be given as a vector of class labels.
    """
    if not isinstance(model, LcXdjdlModel):
        raise TypeError("infer_ecg_lc needs a label-consistent model")
    T_p = _as_cycles(T_p, model.d)
    Q_test = np.asarray(Q_test)
    if Q_test.ndim == 1:
        Q_test = build_q_matrix(Q_test, model.class_count, model.ones_per_class)
    if Q_test.shape != (model.H.shape[0], T_p.shape[1]):
        raise DimensionMismatch(
            f"Q has shape {Q_test.shape}, expected ({model.H.shape[0]}, {T_p.shape[1]})")
    if np.any((Q_test != 0) & (Q_test != 1)):
        raise LabelOutOfRange("discriminative codes must be binary")
    sg = np.sqrt(model.hyper.gamma)
    D = np.vstack([model.D_p, sg * model.H])
    S_p = omp_unnormalized(D, np.vstack([T_p, sg * Q_test]), model.hyper.t_p)
    return ReconstructionBatch(R_e=model.D_e @ (model.W @ S_p), source_codes=S_p)


def reconstruct(model, T_p, labels=None):
    """Dispatch on the model type (XDJDL, LC-XDJDL or DCT baseline)."""
    if isinstance(model, DctBaselineModel):
        return infer_dct_baseline(model, T_p)
    if isinstance(model, LcXdjdlModel):
        if labels is None:
            raise ValueError("a label-consistent model needs test labels")
        return infer_ecg_lc(model, T_p, labels).R_e
    return infer_ecg(model, T_p).R_e


def align_r_peak_offset(ref_ecg, rec_ecg):
    """Circularly shift ``rec_ecg`` so its maximum lines up with that of ``ref_ecg``."""
    ref_ecg = np.asarray(ref_ecg, dtype=float)
    rec_ecg = np.asarray(rec_ecg, dtype=float)
    if ref_ecg.shape != rec_ecg.shape or ref_ecg.ndim != 1:
        raise DimensionMismatch("reference and reconstruction must be equal-length vectors")
    return np.roll(rec_ecg, int(np.argmax(ref_ecg)) - int(np.argmax(rec_ecg)))


def align_batch(ref, rec):
    """Column-wise :func:`align_r_peak_offset`."""
    ref = np.asarray(ref, dtype=float)
    rec = np.asarray(rec, dtype=float)
    if ref.shape != rec.shape:
        raise DimensionMismatch("reference and reconstruction batches differ in shape")
    out = np.empty_like(rec)
    for j in range(rec.shape[1]):
        out[:, j] = align_r_peak_offset(ref[:, j], rec[:, j])
    return out


def dct_cycles(X):
    return dct(np.asarray(X, dtype=float), type=2, norm="ortho", axis=0)


def idct_cycles(C):
    return idct(np.asarray(C, dtype=float), type=2, norm="ortho", axis=0)


def train_dct_baseline(X_e, X_p, ridge=1e-3):
    """Ridge-regularized linear map between orthonormal DCT-II coefficients."""
    X_e = np.asarray(X_e, dtype=float)
    X_p = np.asarray(X_p, dtype=float)
    if X_e.ndim != 2 or X_e.shape != X_p.shape:
        raise DimensionMismatch("X_e and X_p must share a 2-D shape")
    if X_e.shape[1] < 1:
        raise ValueError("need at least one training cycle")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    C_e, C_p = dct_cycles(X_e), dct_cycles(X_p)
    G = C_p @ C_p.T + ridge * np.eye(C_p.shape[0])
    if ridge == 0 and np.linalg.matrix_rank(G) < G.shape[0]:
        raise SingularSystem("PPG DCT Gram matrix is rank-deficient and ridge = 0")
    W = np.linalg.solve(G, C_p @ C_e.T).T
    return DctBaselineModel(W_dct=W, ridge=float(ridge))


def infer_dct_baseline(model, T_p):
    T_p = _as_cycles(T_p, model.d)
    return idct_cycles(model.W_dct @ dct_cycles(T_p))
