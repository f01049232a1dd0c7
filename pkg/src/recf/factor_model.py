"""Hybrid matrix factorization over ratings, like/dislike labels and item descriptions.

Ratings and labels are both modelled through shared user factors ``U`` and
item factors ``V`` joined by a bridge matrix (``R ~ U B_R V^T``,
``L ~ U B_L V^T``); description vectors are tied to the item factors through
a projection (``C ~ V W_C``). The fitted objective is

    f = 1/2 |X o (R - U B_R V^T)|^2 + lambda_L/2 |Y o (L - U B_L V^T)|^2
        + lambda_C/2 |Z o (C - V W_C)|^2

where ``X``, ``Y``, ``Z`` mask the observed cells (``Z`` is a per-item flag
applied to the whole description row). Fitting alternates guarded gradient
steps on ``V`` and ``U`` with exact ridge solves for ``B_R``, ``B_L`` and
``W_C``; the description weight follows a decreasing schedule.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .data import DataError, SparseLabels, SparseRatings, _SparseGrid, check_labels
from .embeddings import DescriptionMatrix

__all__ = [
    "FitConfig",
    "HybridModel",
    "IterationRecord",
    "FitTrace",
    "SingularSystemError",
    "init_factors",
    "objective",
    "penalized_objective",
    "grad_U",
    "grad_V",
    "update_factor",
    "solve_bridge",
    "solve_projection",
    "lambda_schedule",
    "fit",
    "predict",
    "predict_one",
    "predict_pairs",
]

logger = logging.getLogger(__name__)

DENSE_SVD_LIMIT = 4_000_000  # cells; larger matrices use a truncated sparse SVD

Schedule = Literal["linear", "nonlinear", "mutation", "constant"]
SCHEDULES = ("linear", "nonlinear", "mutation", "constant")


class SingularSystemError(np.linalg.LinAlgError):
    """Unregularized normal equations are singular."""


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of :func:`fit`.

    The Gaussian precisions of the probabilistic model (the rating/label noise
    precision, the description noise precision and the factor priors) do not
    appear separately: after taking the log-posterior they only survive as the
    ratios ``lambda_L``, ``lambda_C``, ``beta`` and ``delta``.

    ``lambda_C`` is the *initial* description weight; ``schedule`` decides how
    it evolves (see :func:`lambda_schedule`). ``k`` is the per-iteration
    decrement of the linear schedule.
    """

    d: int = 10
    lambda_L: float = 0.2
    lambda_C: float = 2.5
    schedule: Schedule = "mutation"
    k: float = 0.5
    beta: float = 0.01
    delta: float = 0.01
    gamma_U: float = 0.001
    gamma_V: float = 0.001
    backtracking: bool = True
    max_iter: int = 200
    tol: float = 1e-4
    seed: int = 0
    retract: bool = False  # QR-retract U and V after each step (keeps U^T U = I)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        for name in ("lambda_L", "lambda_C", "beta", "delta", "gamma_U", "gamma_V", "tol"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "linear" and not self.k > 0:
            raise ValueError("linear schedule needs k > 0")


@dataclass
class HybridModel:
    U: np.ndarray  # (N, d)
    V: np.ndarray  # (M, d)
    B_R: np.ndarray  # (d, d)
    B_L: np.ndarray  # (d, d)
    W_C: np.ndarray  # (d, e)
    scale: tuple[float, float] | None = None
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        d = self.U.shape[1]
        if self.V.shape[1] != d or self.B_R.shape != (d, d) or self.B_L.shape != (d, d) or self.W_C.shape[0] != d:
            raise ValueError("inconsistent factor shapes")

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def d(self) -> int:
        return self.U.shape[1]

    @property
    def e(self) -> int:
        return self.W_C.shape[1]


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    lambda_C: float
    objective: float  # f after the iteration
    penalized: float  # f plus ridge terms after the iteration
    start_penalized: float  # same quantity before the iteration, same lambda_C


@dataclass
class FitTrace:
    initial_objective: float
    records: list[IterationRecord] = field(default_factory=list)
    switch_iter: int | None = None  # iteration at which the first convergence was detected
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def n_iter(self) -> int:
        return len(self.records)


# --------------------------------------------------------------------------
# building blocks


def _check_dims(model: HybridModel, ratings: _SparseGrid, labels: _SparseGrid | None, C: DescriptionMatrix | None):
    N, M = model.shape
    if ratings.shape != (N, M):
        raise ValueError(f"ratings grid {ratings.shape} does not match factors {(N, M)}")
    if labels is not None and labels.shape != (N, M):
        raise ValueError(f"labels grid {labels.shape} does not match factors {(N, M)}")
    if C is not None and (C.n_items != M or C.dim != model.e):
        raise ValueError(f"description matrix {C.rows.shape} does not match (M={M}, e={model.e})")


def _residual(U, B, V, grid: _SparseGrid) -> np.ndarray:
    """Model minus observation on the observed cells of ``grid``."""
    UB = U @ B
    return np.einsum("ij,ij->i", UB[grid.users], V[grid.items]) - grid.values


def _scatter(index, weights, rows, n) -> np.ndarray:
    """``out[i] = sum_{t: index[t] = i} weights[t] * rows[t]``."""
    out = np.empty((n, rows.shape[1]))
    for k in range(rows.shape[1]):
        out[:, k] = np.bincount(index, weights=weights * rows[:, k], minlength=n)
    return out


def _desc_residual(V, W, C: DescriptionMatrix) -> np.ndarray:
    p = C.present
    return V[p] @ W - C.rows[p]


def _uses(weight: float, grid) -> bool:
    return weight > 0 and grid is not None and len(grid) > 0


def _uses_desc(weight: float, C) -> bool:
    return weight > 0 and C is not None and bool(C.present.any())


class _Terms:
    """Residuals and objective values of one model on one problem."""

    __slots__ = ("f", "J", "r_R", "r_L", "r_C")


class _Problem:
    """Data and fixed weights of the hybrid objective.

    Labels or descriptions with zero weight are dropped up front, so unused
    inputs cannot influence any value computed here.
    """

    def __init__(self, ratings, labels, C, lambda_L, beta=0.0, delta=0.0):
        self.ratings = ratings
        self.labels = labels if _uses(lambda_L, labels) else None
        self.C = C if C is not None and bool(C.present.any()) else None
        self.lambda_L = lambda_L
        self.beta = beta
        self.delta = delta

    def terms(self, model: HybridModel, lambda_C: float) -> _Terms:
        t = _Terms()
        U, V = model.U, model.V
        t.r_R = _residual(U, model.B_R, V, self.ratings)
        t.f = 0.5 * float(t.r_R @ t.r_R)
        t.J = 0.5 * self.beta * float(np.sum(model.B_R ** 2))
        t.r_L = t.r_C = None
        if self.labels is not None:
            t.r_L = _residual(U, model.B_L, V, self.labels)
            t.f += 0.5 * self.lambda_L * float(t.r_L @ t.r_L)
            t.J += 0.5 * self.lambda_L * self.beta * float(np.sum(model.B_L ** 2))
        if lambda_C > 0 and self.C is not None:
            t.r_C = _desc_residual(V, model.W_C, self.C)
            t.f += 0.5 * lambda_C * float(np.sum(t.r_C * t.r_C))
            t.J += 0.5 * self.delta * float(np.sum(model.W_C ** 2))
        t.J += t.f
        return t

    def grad_U(self, model: HybridModel, t: _Terms) -> np.ndarray:
        U, V = model.U, model.V
        N = U.shape[0]
        g = _scatter(self.ratings.users, t.r_R, (V @ model.B_R.T)[self.ratings.items], N)
        if t.r_L is not None:
            g += self.lambda_L * _scatter(self.labels.users, t.r_L, (V @ model.B_L.T)[self.labels.items], N)
        return g

    def grad_V(self, model: HybridModel, t: _Terms, lambda_C: float) -> np.ndarray:
        U, V = model.U, model.V
        M = V.shape[0]
        g = _scatter(self.ratings.items, t.r_R, (U @ model.B_R)[self.ratings.users], M)
        if t.r_L is not None:
            g += self.lambda_L * _scatter(self.labels.items, t.r_L, (U @ model.B_L)[self.labels.users], M)
        if t.r_C is not None:
            g[self.C.present] += lambda_C * (t.r_C @ model.W_C.T)
        return g


def objective(model: HybridModel, ratings: _SparseGrid, labels: _SparseGrid | None = None,
              C: DescriptionMatrix | None = None, lambda_L: float = 0.0, lambda_C: float = 0.0) -> float:
    """Masked squared reconstruction error of ratings, labels and descriptions."""
    _check_dims(model, ratings, labels, C)
    return _Problem(ratings, labels, C, lambda_L).terms(model, lambda_C).f


def penalized_objective(model, ratings, labels=None, C=None, lambda_L=0.0, lambda_C=0.0,
                        beta=0.0, delta=0.0) -> float:
    """:func:`objective` plus the ridge terms the closed-form steps minimize.

    ``beta/2 |B_R|^2 + lambda_L beta/2 |B_L|^2 + delta/2 |W_C|^2``, the last
    two only while their data term is active. ``B_R``, ``B_L`` and ``W_C`` are
    exact block minimizers of this function, which makes it the quantity that
    decreases monotonically during :func:`fit`.
    """
    _check_dims(model, ratings, labels, C)
    return _Problem(ratings, labels, C, lambda_L, beta, delta).terms(model, lambda_C).J


def grad_U(model: HybridModel, ratings, labels=None, lambda_L: float = 0.0) -> np.ndarray:
    """Gradient of :func:`objective` with respect to ``U``."""
    _check_dims(model, ratings, labels, None)
    prob = _Problem(ratings, labels, None, lambda_L)
    return prob.grad_U(model, prob.terms(model, 0.0))


def grad_V(model: HybridModel, ratings, labels=None, C=None, lambda_L: float = 0.0, lambda_C: float = 0.0) -> np.ndarray:
    """Gradient of :func:`objective` with respect to ``V``."""
    _check_dims(model, ratings, labels, C)
    prob = _Problem(ratings, labels, C, lambda_L)
    return prob.grad_V(model, prob.terms(model, lambda_C), lambda_C)


def update_factor(X: np.ndarray, grad: np.ndarray, gamma: float,
                  objective: Callable[[np.ndarray], float] | None = None,
                  current: float | None = None, max_halvings: int = 20) -> tuple[np.ndarray, bool]:
    """Gradient step ``X - gamma * grad``.

    With ``objective`` given, ``gamma`` is halved up to ``max_halvings`` times
    until the objective does not increase. Returns the new matrix and whether
    a step was accepted; on failure ``X`` is returned unchanged.
    """
    if X.shape != grad.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {grad.shape}")
    if objective is None:
        return X - gamma * grad, True
    if current is None:
        current = objective(X)
    for _ in range(max_halvings + 1):
        cand = X - gamma * grad
        if objective(cand) <= current:
            return cand, True
        gamma *= 0.5
    return X, False


def _normal_equations(U, V, grid: _SparseGrid, chunk: int = 65536):
    d = U.shape[1]
    A = np.zeros((d * d, d * d))
    b = np.zeros(d * d)
    for s in range(0, len(grid), chunk):
        rows, cols = grid.users[s:s + chunk], grid.items[s:s + chunk]
        # row of the design matrix: vec(U_u^T V_v) with columns stacked, i.e. kron(V_v, U_u)
        Mc = (V[cols][:, :, None] * U[rows][:, None, :]).reshape(len(rows), d * d)
        A += Mc.T @ Mc
        b += Mc.T @ grid.values[s:s + chunk]
    return A, b


def _ridge_solve(A, b, reg):
    A = A + reg * np.eye(A.shape[0])
    try:
        return scipy.linalg.solve(A, b, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("normal equations are singular; use a positive ridge weight") from exc


def solve_bridge(U: np.ndarray, V: np.ndarray, observed: _SparseGrid, beta: float) -> np.ndarray:
    """Ridge minimizer of ``1/2 sum_obs (x_uv - U_u B V_v^T)^2 + beta/2 |B|_F^2``."""
    if len(observed) == 0:
        raise DataError("solve_bridge needs at least one observed entry")
    d = U.shape[1]
    A, b = _normal_equations(U, V, observed)
    if beta == 0 and np.linalg.matrix_rank(A) < d * d:
        raise SingularSystemError("design matrix is rank deficient and beta == 0")
    return _ridge_solve(A, b, beta).reshape((d, d), order="F")


def solve_projection(V: np.ndarray, C: DescriptionMatrix, delta: float) -> np.ndarray:
    """Ridge minimizer of ``1/2 |Z o (C - V W)|^2 + delta/2 |W|^2`` over present rows."""
    if C.n_items != V.shape[0]:
        raise ValueError(f"{C.n_items} description rows for {V.shape[0]} items")
    if not C.present.any():
        raise DataError("solve_projection needs at least one present description")
    Vp, Cp = V[C.present], C.rows[C.present]
    A = Vp.T @ Vp
    if delta == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystemError("item factors of described items are rank deficient and delta == 0")
    return _ridge_solve(A, Vp.T @ Cp, delta)


def lambda_schedule(kind: Schedule, m: float, k: float, iter: int, first_convergence_seen: bool = False) -> float:
    """Description weight for iteration ``iter`` (1-based).

    ``linear``: ``m - (iter - 1) k`` until it would reach zero, then 0.
    ``nonlinear``: ``m / iter``.
    ``mutation``: ``m`` until the first convergence, 0 afterwards.
    ``constant``: always ``m``.
    """
    if iter < 1:
        raise ValueError("iter is 1-based")
    if kind == "linear":
        return m - (iter - 1) * k if iter < m / k + 1 else 0.0
    if kind == "nonlinear":
        return m / iter
    if kind == "mutation":
        return 0.0 if first_convergence_seen else m
    if kind == "constant":
        return m
    raise ValueError(f"unknown schedule {kind!r}")


def _orthonormal(A: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(A)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def _fix_signs(U, V):
    # make each column's largest-magnitude entry of U positive
    s = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def init_factors(labels: _SparseGrid, d: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Top-``d`` singular vectors of the zero-filled matrix.

    An empty or all-zero matrix has no usable spectrum; seeded uniform
    random factors are orthonormalized instead.
    """
    N, M = labels.shape
    if not 1 <= d <= min(N, M):
        raise ValueError(f"d={d} must lie in [1, min(N, M)={min(N, M)}]")
    if len(labels) and np.any(labels.values != 0):
        try:
            if N * M <= DENSE_SVD_LIMIT or d >= min(N, M):
                Uf, s, Vt = np.linalg.svd(labels.to_dense(0.0), full_matrices=False)
                U, V = Uf[:, :d], Vt[:d].T
            else:
                from scipy.sparse.linalg import svds

                X = sp.csr_matrix((labels.values, (labels.users, labels.items)), shape=(N, M))
                v0 = np.random.default_rng(seed).uniform(-1, 1, min(N, M))
                Uf, s, Vt = svds(X, k=d, v0=v0)
                order = np.argsort(-s)
                U, V = Uf[:, order], Vt[order].T
            return _fix_signs(U, V)
        except np.linalg.LinAlgError:
            logger.warning("SVD initialization failed; falling back to random factors")
    rng = np.random.default_rng(seed)
    return _orthonormal(rng.uniform(-1, 1, (N, d))), _orthonormal(rng.uniform(-1, 1, (M, d)))


# --------------------------------------------------------------------------
# fitting


def _guarded_step(prob: _Problem, model: HybridModel, cur: _Terms, lam_C: float, which: str, cfg: FitConfig):
    """One gradient step on ``U`` or ``V``; keeps the residuals of the accepted point."""
    if which == "V":
        grad, gamma = prob.grad_V(model, cur, lam_C), cfg.gamma_V
    else:
        grad, gamma = prob.grad_U(model, cur), cfg.gamma_U
    accepted = {}

    def f(X):
        cand = replace(model, **{which: _orthonormal(X) if cfg.retract else X})
        t = prob.terms(cand, lam_C)
        accepted["model"], accepted["terms"] = cand, t
        return t.J

    if not cfg.backtracking:
        f(update_factor(getattr(model, which), grad, gamma)[0])
        return accepted["model"], accepted["terms"], True
    _, ok = update_factor(getattr(model, which), grad, gamma, f, cur.J)
    if not ok:
        return model, cur, False
    return accepted["model"], accepted["terms"], True


def fit(ratings: SparseRatings, labels: SparseLabels | None = None, C: DescriptionMatrix | None = None,
        cfg: FitConfig = FitConfig()) -> tuple[HybridModel, FitTrace]:
    """Alternating minimization of the hybrid objective.

    Factors start from the SVD of the label matrix (of the ratings when
    labels are unused), then every iteration takes a gradient step on ``V``,
    one on ``U`` and re-solves ``B_R``, ``B_L`` and ``W_C`` exactly. The
    loop stops when the relative change of the penalized objective within
    an iteration drops below ``cfg.tol`` or after ``cfg.max_iter``
    iterations. Under the mutation schedule the first such event (two
    consecutive iterations below ``tol``) only switches the description
    weight to zero; fitting then continues to a second convergence.
    """
    N, M = ratings.shape
    if len(ratings) == 0:
        raise DataError("cannot fit without observed ratings")
    labels = check_labels(labels, (N, M))
    if C is not None and C.n_items != M:
        raise DataError(f"description matrix has {C.n_items} rows for {M} items")
    use_labels = cfg.lambda_L > 0 and len(labels) > 0
    has_desc = C is not None and bool(C.present.any())
    e = C.dim if C is not None else 0
    d = cfg.d

    U, V = init_factors(labels if use_labels else ratings, d, cfg.seed)
    lam_C = lambda_schedule(cfg.schedule, cfg.lambda_C, cfg.k, 1) if has_desc else 0.0
    model = HybridModel(
        U, V,
        solve_bridge(U, V, ratings, cfg.beta),
        solve_bridge(U, V, labels, cfg.beta) if use_labels else np.zeros((d, d)),
        solve_projection(V, C, cfg.delta / lam_C) if lam_C > 0 else np.zeros((d, e)),
        scale=ratings.scale, user_ids=ratings.user_ids, item_ids=ratings.item_ids,
    )

    prob = _Problem(ratings, labels, C, cfg.lambda_L, cfg.beta, cfg.delta)
    cur = prob.terms(model, lam_C)
    trace = FitTrace(cur.f)
    switched, streak = False, 0
    prev_lam = lam_C
    for it in range(1, cfg.max_iter + 1):
        lam_C = lambda_schedule(cfg.schedule, cfg.lambda_C, cfg.k, it, switched) if has_desc else 0.0
        if lam_C != prev_lam:
            cur = prob.terms(model, lam_C)
        start = cur.J

        model, cur, ok_V = _guarded_step(prob, model, cur, lam_C, "V", cfg)
        model, cur, ok_U = _guarded_step(prob, model, cur, lam_C, "U", cfg)

        model = replace(
            model,
            B_R=solve_bridge(model.U, model.V, ratings, cfg.beta),
            B_L=solve_bridge(model.U, model.V, labels, cfg.beta) if use_labels else model.B_L,
            W_C=solve_projection(model.V, C, cfg.delta / lam_C) if lam_C > 0 else model.W_C,
        )
        cur = prob.terms(model, lam_C)
        prev_lam = lam_C
        trace.records.append(IterationRecord(it, lam_C, cur.f, cur.J, start))
        hit = abs(start - cur.J) <= cfg.tol * max(abs(start), np.finfo(float).tiny) or not (ok_U or ok_V)
        logger.debug("iter %d lambda_C=%g J=%.10g", it, lam_C, cur.J)

        if cfg.schedule == "mutation" and not switched and lam_C > 0:
            streak = streak + 1 if hit else 0
            if streak >= 2:
                switched, streak = True, 0
                trace.switch_iter = it
                logger.debug("first convergence at iteration %d; description weight set to 0", it)
        elif hit:
            trace.converged = True
            break
    return model, trace


# --------------------------------------------------------------------------
# prediction


def _bilinear(U, B, V) -> np.ndarray:
    """``U B V^T`` by explicit column accumulation.

    Elementwise accumulation in a fixed order makes every entry independent
    of which rows are requested, so single-cell and full predictions agree
    bit for bit.
    """
    d = B.shape[0]
    UB = np.zeros((U.shape[0], d))
    for j in range(d):
        UB += U[:, j:j + 1] * B[j]
    out = np.zeros((U.shape[0], V.shape[0]))
    for k in range(d):
        out += UB[:, k:k + 1] * V[:, k]
    return out


def _clamp(x, clamp):
    if clamp is None:
        return x
    return np.clip(x, clamp[0], clamp[1])


def predict(model: HybridModel, clamp: tuple[float, float] | None = None) -> np.ndarray:
    """Dense ``U B_R V^T``, optionally clipped to ``clamp = (lo, hi)``."""
    return _clamp(_bilinear(model.U, model.B_R, model.V), clamp)


def predict_one(model: HybridModel, u: int, v: int, clamp: tuple[float, float] | None = None) -> float:
    N, M = model.shape
    if not (0 <= u < N and 0 <= v < M):
        raise IndexError(f"(user={u}, item={v}) outside the {N}x{M} grid")
    return float(_clamp(_bilinear(model.U[u:u + 1], model.B_R, model.V[v:v + 1])[0, 0], clamp))


def predict_pairs(model: HybridModel, users, items, clamp: tuple[float, float] | None = None) -> np.ndarray:
    """Predictions for parallel arrays of user and item indices."""
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    N, M = model.shape
    if users.size and (users.min() < 0 or users.max() >= N or items.min() < 0 or items.max() >= M):
        raise IndexError("user or item index outside the model grid")
    UB = model.U @ model.B_R
    return _clamp(np.einsum("ij,ij->i", UB[users], model.V[items]), clamp)
