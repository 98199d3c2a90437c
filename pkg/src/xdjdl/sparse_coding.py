"""Greedy L0 sparse coding.

Dictionaries are plain ``(m, k)`` arrays whose columns are atoms, and sparse
codes are dense ``(k, n)`` arrays with at most ``t`` nonzeros per column.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionMismatch, SparsityExceedsAtoms

RESIDUAL_TOL = 1e-12
TIE_TOL = 1e-12


@dataclass(frozen=True)
class JointSparsityBounds:
    """Per-block sparsity limits for codes over a stacked ``[upper; lower]`` atom set."""

    k_e: int
    t_e: int
    k_p: int
    t_p: int

    def __post_init__(self):
        if min(self.k_e, self.t_e, self.k_p, self.t_p) <= 0:
            raise ValueError("all joint sparsity bounds must be positive")
        if self.t_e > self.k_e or self.t_p > self.k_p:
            raise SparsityExceedsAtoms(
                f"t_e={self.t_e}, t_p={self.t_p} exceed block sizes "
                f"k_e={self.k_e}, k_p={self.k_p}")


def column_norms(D):
    return np.sqrt(np.einsum("ij,ij->j", D, D))


def is_normalized(D, tol=1e-9):
    D = np.asarray(D, dtype=float)
    return bool(np.all(np.isfinite(D)) and np.all(np.abs(column_norms(D) - 1.0) < tol))


def column_nnz(A):
    """Number of nonzeros in each column of a code matrix."""
    return np.count_nonzero(np.asarray(A), axis=0)


def _omp_core(D, x, t, history):
    m, k = D.shape
    code = np.zeros(k)
    residual = x.copy()
    res_norm = np.linalg.norm(residual)
    if history is not None:
        history.append(res_norm)
    if res_norm < RESIDUAL_TOL:
        return code

    Dtx = D.T @ x
    L = np.zeros((t, t))
    support = []
    coef = np.zeros(0)
    for it in range(t):
        mag = np.abs(D.T @ residual)
        mag[support] = -np.inf
        best = mag.max()
        if not best > 0:
            break
        # lowest index among near-ties
        j = int(np.flatnonzero(mag >= best - TIE_TOL)[0])
        atom = D[:, j]
        if it == 0:
            if not atom @ atom > 0:
                break
            L[0, 0] = np.sqrt(atom @ atom)
        else:
            g = D[:, support].T @ atom
            w = solve_triangular(L[:it, :it], g, lower=True, check_finite=False)
            diag2 = atom @ atom - w @ w
            if diag2 <= 1e-14 * (atom @ atom):
                # atom lies in the span of the current support
                break
            L[it, :it] = w
            L[it, it] = np.sqrt(diag2)
        support.append(j)
        n_s = it + 1
        coef = cho_solve((L[:n_s, :n_s], True), Dtx[support], check_finite=False)
        residual = x - D[:, support] @ coef
        res_norm = np.linalg.norm(residual)
        if history is not None:
            history.append(res_norm)
        if res_norm < RESIDUAL_TOL:
            break
    code[support] = coef
    return code


def _check(D, t):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[1] < 1:
        raise DimensionMismatch(f"dictionary must be a 2-D array with >= 1 atom, got shape {D.shape}")
    t = int(t)
    if t < 1:
        raise ValueError(f"sparsity bound must be positive, got {t}")
    if t > D.shape[1]:
        raise SparsityExceedsAtoms(f"t={t} exceeds the number of atoms k={D.shape[1]}")
    return D, t


def omp(D, x, t, history=None):
    """Orthogonal matching pursuit for a single signal.

    Parameters
    ----------
    D : ndarray, shape (m, k)
        Dictionary with unit-norm columns.
    x : ndarray, shape (m,)
        Signal to code.
    t : int
        Maximum number of nonzero coefficients.
    history : list, optional
        If given, residual L2 norms are appended to it (initial residual
        first, then one entry per selected atom).

    Returns
    -------
    ndarray, shape (k,)
        Code with at most ``t`` nonzeros; the nonzeros are the least-squares
        fit of ``x`` on the selected atoms.
    """
    D, t = _check(D, t)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != D.shape[0]:
        raise DimensionMismatch(f"signal shape {x.shape} incompatible with dictionary {D.shape}")
    return _omp_core(D, x, t, history)


def omp_batch(D, X, t):
    """Code every column of ``X`` independently with :func:`omp`."""
    D, t = _check(D, t)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != D.shape[0]:
        raise DimensionMismatch(f"data shape {X.shape} incompatible with dictionary {D.shape}")
    A = np.zeros((D.shape[1], X.shape[1]))
    for j in range(X.shape[1]):
        A[:, j] = _omp_core(D, X[:, j], t, None)
    return A


def omp_unnormalized(D, X, t):
    """OMP under a dictionary whose columns are not unit norm.

    Atoms are normalized for selection and fitting, and coefficients are
    rescaled so that ``D @ A`` is the fitted approximation.  Zero columns
    are never selected.
    """
    D = np.asarray(D, dtype=float)
    norms = column_norms(D)
    safe = np.where(norms > 0, norms, 1.0)
    Dn = D / safe
    # a zero atom has zero correlation with everything; keep it unselectable
    Dn[:, norms == 0] = 0.0
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    A = omp_batch(Dn, X[:, None] if single else X, t)
    A /= safe[:, None]
    return A[:, 0] if single else A


def enforce_block_sparsity(A, bounds):
    """Zero the smallest-magnitude entries of each block that exceed its bound.

    Surviving coefficients are left as they are (no refit).  Among equal
    magnitudes, higher row indices are dropped first.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.shape[0] != bounds.k_e + bounds.k_p:
        raise DimensionMismatch(f"code has {A.shape[0]} rows, expected {bounds.k_e + bounds.k_p}")
    blocks = ((slice(0, bounds.k_e), bounds.t_e),
              (slice(bounds.k_e, bounds.k_e + bounds.k_p), bounds.t_p))
    for rows, limit in blocks:
        sub = A[rows]
        for j in np.flatnonzero(np.count_nonzero(sub, axis=0) > limit):
            nz = np.flatnonzero(sub[:, j])
            # stable sort on -|c| keeps lower indices first among ties
            order = nz[np.argsort(-np.abs(sub[nz, j]), kind="stable")]
            sub[order[limit:], j] = 0.0
    return A


def joint_sparse_code(D_joint, X_joint, bounds, refit=False):
    """Code stacked signals with a global bound, then enforce per-block bounds.

    OMP runs with ``t_e + t_p`` atoms over the stacked dictionary (columns are
    normalized internally if needed); afterwards the smallest entries of each
    block beyond its own bound are zeroed.  With ``refit=True`` the surviving
    support is re-estimated by least squares.
    """
    D_joint = np.asarray(D_joint, dtype=float)
    if D_joint.ndim != 2 or D_joint.shape[1] != bounds.k_e + bounds.k_p:
        raise DimensionMismatch(
            f"joint dictionary has shape {D_joint.shape}, expected {bounds.k_e + bounds.k_p} columns")
    t = bounds.t_e + bounds.t_p
    A = omp_unnormalized(D_joint, X_joint, t)
    A = enforce_block_sparsity(A, bounds)
    if refit:
        X_joint = np.asarray(X_joint, dtype=float)
        for j in range(A.shape[1]):
            s = np.flatnonzero(A[:, j])
            if s.size:
                A[s, j] = np.linalg.lstsq(D_joint[:, s], X_joint[:, j], rcond=None)[0]
    return A
