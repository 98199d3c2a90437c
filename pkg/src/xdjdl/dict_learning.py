"""Joint dictionary learning for paired ECG/PPG cycle matrices.

The training loop alternates joint sparse coding over the stacked system

    [ X_e      ]   [ D_e        0        ] [ A_e ]
    [ √α X_p   ] ≈ [ 0          √α D_p   ] [ A_p ]
    [ 0        ]   [ -√β I      √β W     ]
    [ √γ Q     ]   [ 0          √γ H     ]   (label-consistent variant only)

with two K-SVD dictionary-update stages: one for ``D_e`` alone and one for
the column-stacked ``[√α D_p; √β W (; √γ H)]`` against
``[√α X_p; √β A_e (; √γ Q)]``.
"""

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import (DimensionMismatch, LabelOutOfRange, NonFiniteObjective,
                     SingularSystem, TooFewSamples)
from .sparse_coding import JointSparsityBounds, joint_sparse_code, omp_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    k_e: int = 320
    k_p: int = 9000
    t_e: int = 10
    t_p: int = 10
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    ridge_lambda: float = 1e-3
    max_iters: int = 30
    rel_tol: float = 1e-4
    seed: int = 0
    ones_per_class: int = 1

    def __post_init__(self):
        for name in ("k_e", "k_p", "t_e", "t_p", "max_iters", "ones_per_class"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.t_e > self.k_e:
            raise ValueError(f"t_e={self.t_e} exceeds k_e={self.k_e}")
        if self.t_p > self.k_p:
            raise ValueError(f"t_p={self.t_p} exceeds k_p={self.k_p}")
        for name in ("alpha", "beta", "gamma", "rel_tol"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.ridge_lambda >= 0:
            raise ValueError("ridge_lambda must be nonnegative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class XdjdlModel:
    D_e: np.ndarray
    D_p: np.ndarray
    W: np.ndarray
    hyper: HyperParams
    trace: list = field(default_factory=list)

    def __post_init__(self):
        k_e, k_p = self.hyper.k_e, self.hyper.k_p
        if self.D_e.shape[1] != k_e or self.D_p.shape[1] != k_p or self.W.shape != (k_e, k_p):
            raise DimensionMismatch("model matrices inconsistent with hyperparameters")
        if self.D_e.shape[0] != self.D_p.shape[0]:
            raise DimensionMismatch("D_e and D_p must have the same number of rows")
        if not np.all(np.isfinite(self.W)):
            raise NonFiniteObjective("W contains non-finite entries")

    @property
    def d(self):
        return self.D_e.shape[0]


@dataclass
class LcXdjdlModel(XdjdlModel):
    H: np.ndarray = None
    class_count: int = 1

    def __post_init__(self):
        super().__post_init__()
        r = self.class_count * self.hyper.ones_per_class
        if self.H is None or self.H.shape != (r, self.hyper.k_p):
            raise DimensionMismatch(f"H must have shape ({r}, {self.hyper.k_p})")
        if not np.all(np.isfinite(self.H)):
            raise NonFiniteObjective("H contains non-finite entries")

    @property
    def ones_per_class(self):
        return self.hyper.ones_per_class


def frob2(M):
    M = np.asarray(M)
    return float(np.einsum("ij,ij->", M, M)) if M.ndim == 2 else float(M @ M)


def init_dictionary(X, k, rng):
    """Pick ``k`` distinct training columns at random and L2-normalize them."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    if n < k:
        raise TooFewSamples(f"need at least k={k} training columns, got {n}")
    idx = rng.choice(n, size=k, replace=False)
    D = X[:, idx].copy()
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise TooFewSamples("selected an all-zero training column as an atom")
    return D / norms


def ridge_init_w(A_e, A_p, lam):
    """Closed-form ridge regression ``W = A_e A_pᵀ (A_p A_pᵀ + λI)⁻¹``."""
    A_e = np.asarray(A_e, dtype=float)
    A_p = np.asarray(A_p, dtype=float)
    if A_e.shape[1] != A_p.shape[1]:
        raise DimensionMismatch(f"A_e has {A_e.shape[1]} columns, A_p has {A_p.shape[1]}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    G = A_p @ A_p.T + lam * np.eye(A_p.shape[0])
    rhs = A_p @ A_e.T
    if lam == 0:
        if np.linalg.matrix_rank(G) < G.shape[0]:
            raise SingularSystem("A_p A_pᵀ is rank-deficient and lambda = 0")
        return np.linalg.solve(G, rhs).T
    # G is symmetric positive definite for lam > 0
    from scipy.linalg import cho_factor, cho_solve
    return cho_solve(cho_factor(G), rhs).T


def _sign_fix(u, v):
    i = int(np.argmax(np.abs(u)))
    if u[i] < 0:
        return -u, -v
    return u, v


def _replacement_column(X, D, A, skip):
    errs = np.linalg.norm(X - D @ A, axis=0)
    errs[list(skip)] = -1.0
    j = int(np.argmax(errs))
    if errs[j] <= 0 or not np.any(X[:, j]):
        return None
    return j


def ksvd_atom_update(X, D, A, k, skip=()):
    """Rank-1 refit of atom ``k`` and the nonzero entries of code row ``k``.

    Returns ``(atom, row)``.  Only columns whose code uses the atom enter
    the fit, so the zero pattern of the row is kept.  An unused atom is
    replaced by the worst-reconstructed column of ``X`` (normalized) that is
    not listed in ``skip``; its row stays zero.  A fit that would not lower
    the restricted residual is rejected in favour of the current atom.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    A = np.asarray(A, dtype=float)
    if D.shape[0] != X.shape[0] or D.shape[1] != A.shape[0] or A.shape[1] != X.shape[1]:
        raise DimensionMismatch("X, D, A have inconsistent shapes")
    row = A[k].copy()
    omega = np.flatnonzero(row)
    if omega.size == 0:
        j = _replacement_column(X, D, A, skip)
        if j is None:
            return D[:, k].copy(), row
        return X[:, j] / np.linalg.norm(X[:, j]), row

    E = X[:, omega] - D @ A[:, omega] + np.outer(D[:, k], row[omega])
    U, s, Vt = np.linalg.svd(E, full_matrices=False)
    u, v = _sign_fix(U[:, 0], s[0] * Vt[0])
    old = frob2(E - np.outer(D[:, k], row[omega]))
    new = frob2(E - np.outer(u, v))
    if new > old:
        return D[:, k].copy(), row
    row[omega] = v
    return u, row


def ksvd_dictionary_update(X, D, A):
    """Update every atom once, in ascending index order.

    Returns new ``(D, A)``; the stage objective ``‖X − DA‖²_F`` never
    increases (a stage that would raise it through rounding is discarded).
    Unused atoms are replaced by distinct training columns.
    """
    X = np.asarray(X, dtype=float)
    D = np.array(D, dtype=float, copy=True)
    A = np.array(A, dtype=float, copy=True)
    before = frob2(X - D @ A)
    D0, A0 = D.copy(), A.copy()
    taken = set()
    for k in range(D.shape[1]):
        if not np.any(A[k]):
            j = _replacement_column(X, D, A, taken)
            if j is not None:
                taken.add(j)
                D[:, k] = X[:, j] / np.linalg.norm(X[:, j])
            continue
        D[:, k], A[k] = ksvd_atom_update(X, D, A, k)
    if frob2(X - D @ A) > before:
        logger.debug("dictionary stage rejected: rounding raised the objective")
        return D0, A0
    return D, A


def stage_objective_e(X_e, D_e, A_e):
    return frob2(X_e - D_e @ A_e)


def stage_objective_p(X_p, A_e, D_p, W, A_p, alpha, beta, Q=None, H=None, gamma=0.0):
    val = alpha * frob2(X_p - D_p @ A_p) + beta * frob2(A_e - W @ A_p)
    if Q is not None:
        val += gamma * frob2(Q - H @ A_p)
    return val


def update_subproblem_e(X_e, D_e, A_e):
    """K-SVD pass over the ECG dictionary; returns ``(D_e, A_e)``."""
    return ksvd_dictionary_update(X_e, D_e, A_e)


def update_subproblem_p(X_p, A_e, D_p, W, A_p, alpha, beta, Q=None, H=None, gamma=0.0):
    """K-SVD pass over the stacked ``[√α D_p; √β W (; √γ H)]`` dictionary.

    Returns ``(D_p, W, A_p)``, plus ``H`` as a fourth element when ``Q`` is
    given.  Each stacked column has unit norm afterwards, so ``D_p`` alone
    generally does not.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive for the stacked update")
    lc = Q is not None
    if lc and gamma <= 0:
        raise ValueError("gamma must be positive for the label-consistent update")
    sa, sb = np.sqrt(alpha), np.sqrt(beta)
    d, k_e = D_p.shape[0], W.shape[0]
    Xs = [sa * X_p, sb * A_e]
    Ds = [sa * D_p, sb * W]
    if lc:
        sg = np.sqrt(gamma)
        Xs.append(sg * Q)
        Ds.append(sg * H)
    Dst, A_new = ksvd_dictionary_update(np.vstack(Xs), np.vstack(Ds), A_p)
    D_new = Dst[:d] / sa
    W_new = Dst[d:d + k_e] / sb
    if not lc:
        before = stage_objective_p(X_p, A_e, D_p, W, A_p, alpha, beta)
        after = stage_objective_p(X_p, A_e, D_new, W_new, A_new, alpha, beta)
        if after > before:
            return D_p.copy(), W.copy(), A_p.copy()
        return D_new, W_new, A_new
    H_new = Dst[d + k_e:] / sg
    before = stage_objective_p(X_p, A_e, D_p, W, A_p, alpha, beta, Q, H, gamma)
    after = stage_objective_p(X_p, A_e, D_new, W_new, A_new, alpha, beta, Q, H_new, gamma)
    if after > before:
        return D_p.copy(), W.copy(), A_p.copy(), H.copy()
    return D_new, W_new, A_new, H_new


def build_q_matrix(labels, class_count, ones_per_class=1):
    """Block one-hot discriminative codes: ``ones_per_class`` ones per column."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionMismatch("labels must be one-dimensional")
    if class_count < 1 or ones_per_class < 1:
        raise ValueError("class_count and ones_per_class must be positive")
    if labels.size and (labels.min() < 0 or labels.max() >= class_count
                        or not np.all(labels == np.round(labels))):
        raise LabelOutOfRange(f"labels must be integers in [0, {class_count})")
    labels = labels.astype(int)
    Q = np.zeros((class_count * ones_per_class, labels.size))
    for j, c in enumerate(labels):
        Q[c * ones_per_class:(c + 1) * ones_per_class, j] = 1.0
    return Q


def stacked_system(X_e, X_p, D_e, D_p, W, alpha, beta, Q=None, H=None, gamma=0.0):
    """Assemble the full stacked data and dictionary used for joint coding."""
    d, k_e = D_e.shape
    k_p = D_p.shape[1]
    sa, sb = np.sqrt(alpha), np.sqrt(beta)
    X_rows = [X_e, sa * X_p, np.zeros((k_e, X_e.shape[1]))]
    D_rows = [np.hstack([D_e, np.zeros((d, k_p))]),
              np.hstack([np.zeros((d, k_e)), sa * D_p]),
              np.hstack([-sb * np.eye(k_e), sb * W])]
    if Q is not None:
        sg = np.sqrt(gamma)
        X_rows.append(sg * Q)
        D_rows.append(np.hstack([np.zeros((Q.shape[0], k_e)), sg * H]))
    return np.vstack(X_rows), np.vstack(D_rows)


def objective(model, X_e, X_p, A_e, A_p, Q=None):
    """Total training objective, with the label term when ``Q`` is given."""
    h = model.hyper
    X_e, X_p = np.asarray(X_e, dtype=float), np.asarray(X_p, dtype=float)
    if (X_e.shape != X_p.shape or X_e.shape[0] != model.d
            or A_e.shape != (h.k_e, X_e.shape[1]) or A_p.shape != (h.k_p, X_p.shape[1])):
        raise DimensionMismatch("objective inputs have inconsistent shapes")
    val = frob2(X_e - model.D_e @ A_e)
    if h.alpha:
        val += h.alpha * frob2(X_p - model.D_p @ A_p)
    if h.beta:
        val += h.beta * frob2(A_e - model.W @ A_p)
    if Q is not None:
        H = getattr(model, "H", None)
        if H is None or Q.shape != (H.shape[0], X_e.shape[1]):
            raise DimensionMismatch("Q requires a label-consistent model with matching H")
        val += h.gamma * frob2(Q - H @ A_p)
    return val


def _check_training_inputs(X_e, X_p, hyper):
    X_e = np.asarray(X_e, dtype=float)
    X_p = np.asarray(X_p, dtype=float)
    if X_e.ndim != 2 or X_e.shape != X_p.shape:
        raise DimensionMismatch(f"X_e {X_e.shape} and X_p {X_p.shape} must share a 2-D shape")
    n = X_e.shape[1]
    if n < max(hyper.k_e, hyper.k_p):
        raise TooFewSamples(f"n={n} training cycles < max(k_e, k_p)={max(hyper.k_e, hyper.k_p)}")
    if not (np.all(np.isfinite(X_e)) and np.all(np.isfinite(X_p))):
        raise NonFiniteObjective("training data contains non-finite values")
    return X_e, X_p


def _train(X_e, X_p, hyper, Q=None, on_stage=None):
    rng = np.random.default_rng(hyper.seed)
    lc = Q is not None
    D_e = init_dictionary(X_e, hyper.k_e, rng)
    D_p = init_dictionary(X_p, hyper.k_p, rng)
    A_e = omp_batch(D_e, X_e, hyper.t_e)
    A_p = omp_batch(D_p, X_p, hyper.t_p)
    W = ridge_init_w(A_e, A_p, hyper.ridge_lambda)
    H = ridge_init_w(Q, A_p, hyper.ridge_lambda) if lc else None
    bounds = JointSparsityBounds(hyper.k_e, hyper.t_e, hyper.k_p, hyper.t_p)
    a, b, g = hyper.alpha, hyper.beta, hyper.gamma

    def total():
        val = (frob2(X_e - D_e @ A_e) + a * frob2(X_p - D_p @ A_p) + b * frob2(A_e - W @ A_p))
        if lc:
            val += g * frob2(Q - H @ A_p)
        if not np.isfinite(val):
            raise NonFiniteObjective(f"objective became {val}")
        return val

    def emit(stage, it, **arrays):
        if on_stage is not None:
            on_stage(stage, it, {k: v.copy() for k, v in arrays.items()})

    trace = [total()]
    emit("init", 0, A_e=A_e, A_p=A_p)
    for it in range(1, hyper.max_iters + 1):
        Xs, Ds = stacked_system(X_e, X_p, D_e, D_p, W, a, b, Q, H, g)
        A = joint_sparse_code(Ds, Xs, bounds)
        A_e, A_p = A[:hyper.k_e], A[hyper.k_e:]
        emit("coding", it, A_e=A_e, A_p=A_p)

        D_e_new, A_e_new = update_subproblem_e(X_e, D_e, A_e)
        emit("e", it, X_e=X_e, D_e_before=D_e, A_e_before=A_e, D_e=D_e_new, A_e=A_e_new)
        D_e, A_e = D_e_new, A_e_new

        if lc:
            out = update_subproblem_p(X_p, A_e, D_p, W, A_p, a, b, Q, H, g)
            emit("p", it, D_p_before=D_p, W_before=W, A_p_before=A_p, H_before=H,
                 A_e=A_e, D_p=out[0], W=out[1], A_p=out[2], H=out[3])
            D_p, W, A_p, H = out
        else:
            out = update_subproblem_p(X_p, A_e, D_p, W, A_p, a, b)
            emit("p", it, D_p_before=D_p, W_before=W, A_p_before=A_p,
                 A_e=A_e, D_p=out[0], W=out[1], A_p=out[2])
            D_p, W, A_p = out

        trace.append(total())
        logger.debug("iteration %d objective %.6g", it, trace[-1])
        prev = trace[-2]
        if prev > 0 and abs(prev - trace[-1]) / prev < hyper.rel_tol:
            break
        if trace[-1] == 0:
            break
    return D_e, D_p, W, H, trace


def train_xdjdl(X_e, X_p, hyper, on_stage=None):
    """Learn ``D_e``, ``D_p`` and the code map ``W`` from paired cycles.

    ``on_stage(stage, iteration, arrays)`` is called after initialization
    (``"init"``), after each joint coding pass (``"coding"``) and after each
    dictionary-update stage (``"e"``, ``"p"``) with copies of the relevant
    matrices.  ``trace[0]`` is the objective after initialization and
    ``trace[i]`` the objective at the end of iteration ``i``.
    """
    X_e, X_p = _check_training_inputs(X_e, X_p, hyper)
    D_e, D_p, W, _, trace = _train(X_e, X_p, hyper, on_stage=on_stage)
    return XdjdlModel(D_e=D_e, D_p=D_p, W=W, hyper=hyper, trace=trace)


def train_lc_xdjdl(X_e, X_p, labels, hyper, class_count=None, on_stage=None):
    """Label-consistent variant: additionally maps PPG codes to block one-hot class codes."""
    X_e, X_p = _check_training_inputs(X_e, X_p, hyper)
    labels = np.asarray(labels)
    if labels.shape != (X_e.shape[1],):
        raise DimensionMismatch(f"need one label per training column, got shape {labels.shape}")
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    if hyper.gamma <= 0:
        raise ValueError("gamma must be positive for the label-consistent model")
    Q = build_q_matrix(labels, class_count, hyper.ones_per_class)
    D_e, D_p, W, H, trace = _train(X_e, X_p, hyper, Q=Q, on_stage=on_stage)
    return LcXdjdlModel(D_e=D_e, D_p=D_p, W=W, hyper=hyper, trace=trace, H=H,
                        class_count=class_count)


def with_hyper(model, **changes):
    """Copy of a model with some hyperparameters replaced (matrices shared)."""
    return replace(model, hyper=replace(model.hyper, **changes))
