"""Tikhonov-regularised least squares with and without non-negativity.

Every solver works on the stacked system::

    [  A   ]       [ b ]
    [ lam L] x  ~  [ 0 ]

whose squared residual is ``||Ax - b||^2 + lam^2 ||Lx||^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg

from .forward import DiscreteOperator

__all__ = [
    "RegKind",
    "Method",
    "Regularizer",
    "RegularizedProblem",
    "Solution",
    "build_regularizer",
    "solve_ls",
    "solve_nnls_activeset",
    "solve_nnls_sbb",
    "solve",
    "kkt_violation",
]


class RegKind(str, Enum):
    IDENTITY = "I"
    FIRST_DIFF = "L1"
    SECOND_DIFF = "L2"


class Method(str, Enum):
    LS = "ls"
    NNLS_ACTIVESET = "nnls-as"
    NNLS_SBB = "nnls-sbb"


@dataclass(frozen=True)
class Regularizer:
    kind: RegKind
    matrix: np.ndarray

    @property
    def shape(self):
        return self.matrix.shape


def build_regularizer(kind: RegKind | str, n: int) -> Regularizer:
    """Identity, or unscaled first/second difference stencils on ``n`` nodes."""
    kind = RegKind(kind)
    order = {RegKind.IDENTITY: 0, RegKind.FIRST_DIFF: 1, RegKind.SECOND_DIFF: 2}[kind]
    if n < max(1, order + 1):
        raise ValueError(f"{kind.value} needs at least {order + 1} nodes, got {n}")
    eye = np.eye(n)
    mat = eye if order == 0 else np.diff(eye, n=order, axis=0)
    mat.setflags(write=False)
    return Regularizer(kind, mat)


@dataclass(frozen=True)
class RegularizedProblem:
    """``min ||Ax - b||^2 + lam^2 ||Lx||^2``; ``operator`` may be a bare matrix."""

    operator: DiscreteOperator | np.ndarray
    data: np.ndarray
    regularizer: Regularizer
    lam: float = 0.0

    def __post_init__(self):
        b = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", b)
        a = self.matrix
        if a.ndim != 2 or b.shape != (a.shape[0],):
            raise ValueError(f"data length {b.shape} does not match operator rows {a.shape}")
        if self.regularizer.matrix.shape[1] != a.shape[1]:
            raise ValueError("regularizer columns do not match operator columns")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite non-negative number, got {self.lam}")

    @property
    def matrix(self) -> np.ndarray:
        op = self.operator
        return op.matrix if isinstance(op, DiscreteOperator) else np.asarray(op, dtype=float)

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    def with_lambda(self, lam: float) -> "RegularizedProblem":
        return RegularizedProblem(self.operator, self.data, self.regularizer, float(lam))

    def stacked(self):
        """Augmented matrix and right-hand side."""
        L = self.regularizer.matrix
        a_hat = np.vstack([self.matrix, self.lam * L])
        b_hat = np.concatenate([self.data, np.zeros(L.shape[0])])
        return a_hat, b_hat

    def objective(self, x) -> float:
        """``||Ax - b||^2 + lam^2 ||Lx||^2``."""
        r = self.matrix @ x - self.data
        lx = self.regularizer.matrix @ x
        return float(r @ r + self.lam**2 * (lx @ lx))


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    residual_norm: float
    seminorm: float
    iterations: int
    converged: bool
    method: Method
    lam: float
    rank_deficient: bool = False

    @property
    def objective(self) -> float:
        return self.residual_norm**2 + self.lam**2 * self.seminorm**2


def _finish(problem, x, iterations, converged, method, rank_deficient=False):
    x = np.asarray(x, dtype=float)
    x.setflags(write=False)
    return Solution(
        x=x,
        residual_norm=float(np.linalg.norm(problem.matrix @ x - problem.data)),
        seminorm=float(np.linalg.norm(problem.regularizer.matrix @ x)),
        iterations=int(iterations),
        converged=bool(converged),
        method=method,
        lam=problem.lam,
        rank_deficient=rank_deficient,
    )


def solve_ls(problem: RegularizedProblem) -> Solution:
    """Unconstrained Tikhonov solution via least squares on the stacked system.

    A rank-deficient stacked matrix gives the minimum-norm solution and sets
    ``rank_deficient``.
    """
    a_hat, b_hat = problem.stacked()
    x, _, rank, _ = np.linalg.lstsq(a_hat, b_hat, rcond=None)
    return _finish(problem, x, 1, True, Method.LS, rank_deficient=rank < a_hat.shape[1])


def kkt_violation(problem: RegularizedProblem, x) -> float:
    """Largest violation of the NNLS optimality conditions, relative to ``||A^T b||_inf``.

    With ``g = A^T(Ax - b)`` for the stacked system: ``|g_i|`` on the support
    and ``max(0, -g_i)`` where ``x_i = 0``.
    """
    a_hat, b_hat = problem.stacked()
    x = np.asarray(x, dtype=float)
    g = a_hat.T @ (a_hat @ x - b_hat)
    scale = np.max(np.abs(a_hat.T @ b_hat)) or 1.0
    pos = x > 0
    viol = np.where(pos, np.abs(g), np.maximum(0.0, -g))
    if np.any(x < 0):
        return math.inf
    return float(np.max(viol, initial=0.0) / scale)


# Below this reciprocal condition number of the Gram submatrix the normal
# equations lose too much accuracy and the subproblem falls back to QR.
_GRAM_RCOND_MIN = 1e-10


def _lstsq_cols(a_hat, b_hat, cols, gram=None, atb=None):
    """Least squares on the columns ``cols``.

    With a precomputed Gram matrix, well-conditioned subproblems use a
    Cholesky solve plus one refinement step (corrected semi-normal equations).
    """
    sub = a_hat[:, cols]
    if gram is not None:
        g = gram[np.ix_(cols, cols)]
        c, info = scipy.linalg.lapack.dpotrf(g, lower=False)
        if info == 0:
            rcond, info = scipy.linalg.lapack.dpocon(c, np.max(np.sum(np.abs(g), axis=0)))
            if info == 0 and rcond > _GRAM_RCOND_MIN:
                z = scipy.linalg.cho_solve((c, False), atb[cols], check_finite=False)
                r = b_hat - sub @ z
                return z + scipy.linalg.cho_solve((c, False), sub.T @ r, check_finite=False)
    return scipy.linalg.lstsq(sub, b_hat, lapack_driver="gelsy", check_finite=False)[0]


def solve_nnls_activeset(
    problem: RegularizedProblem,
    init=None,
    max_iter: int | None = None,
    tol: float | None = None,
) -> Solution:
    """Lawson-Hanson active-set NNLS on the stacked system.

    ``init`` is an optional non-negative warm start; its support seeds the
    passive set.  Ties for the entering variable go to the smallest index.
    ``max_iter`` caps the outer iterations (default ``3 N``).  A variable may
    enter while its dual value exceeds ``tol * ||A^T b||_inf``; the default
    ``tol`` is ``max(m, n)`` machine epsilons, far below the ``1e-8`` KKT
    certificate, because near-flat directions of the objective need it.
    """
    a_hat, b_hat = problem.stacked()
    n = a_hat.shape[1]
    max_iter = 3 * n if max_iter is None else int(max_iter)
    atb = a_hat.T @ b_hat
    gram = a_hat.T @ a_hat
    if tol is None:
        tol = max(a_hat.shape) * np.finfo(float).eps
    tau = tol * (np.max(np.abs(atb)) if atb.size else 0.0)
    tiny = 10 * np.finfo(float).eps

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    if init is not None:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != (n,) or np.any(x0 < 0) or not np.all(np.isfinite(x0)):
            raise ValueError("init must be a finite non-negative vector of length N")
        x = x0.copy()
        passive = x > 0

    def restore_feasibility(x, passive):
        # Move from the feasible x towards the passive-set LS solution until
        # every passive component of that solution is positive.
        while True:
            cols = np.flatnonzero(passive)
            if cols.size == 0:
                return np.zeros(n), passive
            z = np.zeros(n)
            z[cols] = _lstsq_cols(a_hat, b_hat, cols, gram, atb)
            bad = np.flatnonzero(passive & (z <= 0))
            if bad.size == 0:
                return z, passive
            denom = x[bad] - z[bad]
            ratios = np.divide(x[bad], denom, out=np.zeros(bad.size), where=denom > 0)
            k = int(np.argmin(ratios))
            x = x + ratios[k] * (z - x)
            x[bad[k]] = 0.0
            passive = passive & (x > tiny * np.max(np.abs(x), initial=1.0))
            x[~passive] = 0.0

    if passive.any():
        x, passive = restore_feasibility(x, passive)

    iterations = 0
    converged = False
    # variables whose entry made no numerical progress; cleared on progress
    blocked = np.zeros(n, dtype=bool)
    while True:
        w = atb - a_hat.T @ (a_hat @ x)
        candidates = np.where(passive | blocked, -np.inf, w)
        j = int(np.argmax(candidates))  # first maximiser: smallest index on ties
        if not candidates[j] > tau:
            converged = True
            break
        if iterations >= max_iter:
            break
        iterations += 1
        trial = passive.copy()
        trial[j] = True
        x_new, passive_new = restore_feasibility(x, trial)
        if not passive_new[j] and np.array_equal(x_new, x):
            blocked[j] = True
            continue
        blocked[:] = False
        x, passive = x_new, passive_new

    x = np.where(passive, np.maximum(x, 0.0), 0.0)
    return _finish(problem, x, iterations, converged, Method.NNLS_ACTIVESET)


def solve_nnls_sbb(
    problem: RegularizedProblem,
    init=None,
    max_iter: int = 5000,
    tol: float = 1e-6,
    window: int = 10,
) -> Solution:
    """Projected Barzilai-Borwein NNLS with subspace steps and non-monotone search.

    Steps alternate between the two Barzilai-Borwein lengths, computed on the
    free variables only (those not held at zero by a positive gradient).
    A step is accepted when the objective falls below the maximum of the last
    ``window`` objective values by an Armijo margin; otherwise it is halved.
    Success means ``||x - P(x - g)||_inf <= tol * (1 + ||g||_inf)``.  The best
    iterate seen is returned, so the exit objective never exceeds the start.
    """
    a_hat, b_hat = problem.stacked()
    n = a_hat.shape[1]
    gram = a_hat.T @ a_hat
    atb = a_hat.T @ b_hat
    if init is None:
        x = np.zeros(n)
    else:
        x = np.asarray(init, dtype=float).copy()
        if x.shape != (n,) or np.any(x < 0):
            raise ValueError("init must be a non-negative vector of length N")

    def fval(v):
        # half the stacked squared residual, without forming it
        return 0.5 * v @ (gram @ v) - atb @ v + 0.5 * b_hat @ b_hat

    def grad(v):
        return gram @ v - atb

    f = fval(x)
    g = grad(x)
    best_x, best_f = x.copy(), f
    history = [f]
    step = 1.0 / max(np.linalg.norm(gram, 2), np.finfo(float).tiny)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pg = x - np.maximum(x - g, 0.0)
        if np.max(np.abs(pg)) <= tol * (1.0 + np.max(np.abs(g))):
            converged = True
            it -= 1
            break
        free = (x > 0) | (g < 0)
        d = np.where(free, -g, 0.0)
        ref = max(history[-window:])
        alpha = step
        while True:
            x_new = np.maximum(x + alpha * d, 0.0)
            f_new = fval(x_new)
            if f_new <= ref + 1e-4 * (g @ (x_new - x)) or alpha < 1e-30:
                break
            alpha *= 0.5
        g_new = grad(x_new)
        s = x_new - x
        y = g_new - g
        mask = free
        ss, sy, yy = s[mask] @ s[mask], s[mask] @ y[mask], y[mask] @ y[mask]
        if sy > 0:
            step = ss / sy if it % 2 else sy / yy
        else:
            step = 1.0 / max(np.linalg.norm(gram, 2), np.finfo(float).tiny)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if f < best_f:
            best_x, best_f = x.copy(), f
    else:
        it = max_iter

    return _finish(problem, x if converged else best_x, it, converged, Method.NNLS_SBB)


def solve(problem: RegularizedProblem, method: Method | str = Method.NNLS_ACTIVESET, init=None, **kw):
    method = Method(method)
    if method is Method.LS:
        return solve_ls(problem)
    if method is Method.NNLS_ACTIVESET:
        return solve_nnls_activeset(problem, init=init, **kw)
    return solve_nnls_sbb(problem, init=init, **kw)
