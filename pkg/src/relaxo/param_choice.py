"""Regularisation-parameter choice over a fixed grid of lambda values.

A sweep solves one regularised problem per grid value.  Three selectors act
on the finished sweep: the L-curve corner (maximum discrete curvature of the
log-log residual/seminorm curve), the normalised cumulative periodogram (NCP)
of the residual, and an oracle that needs the true solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .regsolve import Method, RegularizedProblem, Solution, solve

__all__ = [
    "LambdaGrid",
    "SweepResult",
    "SelectionResult",
    "CornerResult",
    "sweep",
    "lcurve_corner",
    "ncp_curve",
    "ncp_deviation",
    "ncp_select",
    "oracle_select",
    "select_all",
    "geometric_mean",
]

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_RANGE = (1e-8, 1e2)
DEFAULT_LAMBDA_COUNT = 50


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly monotone positive lambda values (either direction)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0 or np.any(~(v > 0)) or not np.all(np.isfinite(v)):
            raise ValueError("lambda grid must hold positive finite values")
        d = np.diff(v)
        if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("lambda grid must be strictly monotone")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def logspace(cls, lo=DEFAULT_LAMBDA_RANGE[0], hi=DEFAULT_LAMBDA_RANGE[1], n=DEFAULT_LAMBDA_COUNT):
        return cls(np.logspace(math.log10(lo), math.log10(hi), int(n)))

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    @property
    def ascending(self) -> bool:
        return self.values.size < 2 or bool(self.values[1] > self.values[0])


@dataclass
class SweepResult:
    """Per-lambda results in grid order.

    Failed solves leave ``None`` in ``solutions`` and ``residuals`` and an
    entry in ``failures``.
    """

    grid: LambdaGrid
    solutions: list
    residuals: list
    errors: Optional[np.ndarray] = None
    failures: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> np.ndarray:
        return self.grid.values

    def _field(self, name):
        return np.array([np.nan if s is None else getattr(s, name) for s in self.solutions])

    @property
    def residual_norms(self) -> np.ndarray:
        return self._field("residual_norm")

    @property
    def seminorms(self) -> np.ndarray:
        return self._field("seminorm")

    @property
    def ok(self) -> np.ndarray:
        return np.array([s is not None for s in self.solutions])

    def ncp_deviations(self, norm: str = "l2") -> np.ndarray:
        return np.array(
            [np.nan if r is None else ncp_deviation(r, norm=norm) for r in self.residuals]
        )


@dataclass(frozen=True)
class CornerResult:
    index: int
    lam: float
    no_corner: bool
    curvature: np.ndarray


@dataclass(frozen=True)
class SelectionResult:
    lambda_lc: float
    lambda_ncp: float
    lambda_opt: Optional[float]
    solution_lc: Solution
    solution_ncp: Solution
    solution_opt: Optional[Solution]
    lc_no_corner: bool = False


def sweep(
    problem: RegularizedProblem,
    grid: LambdaGrid | Sequence[float] | None = None,
    method: Method | str = Method.NNLS_ACTIVESET,
    truth=None,
    warm_start: bool | None = None,
    **solver_kw,
) -> SweepResult:
    """Solve ``problem`` at every grid value.

    Solves always run from the largest lambda down, whatever the grid order,
    so results do not depend on how the grid is sorted.  Warm starts are on by
    default only for the exact active-set solver, whose answer does not depend
    on the start.  ``truth`` adds the s-space 2-norm error per lambda.
    """
    grid = grid if isinstance(grid, LambdaGrid) else (
        LambdaGrid.logspace() if grid is None else LambdaGrid(grid)
    )
    method = Method(method)
    if warm_start is None:
        warm_start = method is Method.NNLS_ACTIVESET
    lams = grid.values
    n = lams.size
    solutions: list = [None] * n
    residuals: list = [None] * n
    failures = {}
    prev = None
    for i in np.argsort(-lams, kind="stable"):
        i = int(i)
        try:
            init = prev if (warm_start and method is not Method.LS) else None
            sol = solve(problem.with_lambda(lams[i]), method, init=init, **solver_kw)
            if not np.all(np.isfinite(sol.x)):
                raise FloatingPointError("non-finite solution")
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures[i] = str(exc)
            log.warning("solve failed at lambda=%g: %s", lams[i], exc)
            continue
        solutions[i] = sol
        residuals[i] = problem.matrix @ sol.x - problem.data
        if method is Method.NNLS_ACTIVESET and not sol.converged:
            failures[i] = "iteration cap reached"
        prev = sol.x
    errors = None
    if truth is not None:
        xt = np.asarray(truth, dtype=float)
        errors = np.array(
            [np.nan if s is None else float(np.linalg.norm(s.x - xt)) for s in solutions]
        )
    return SweepResult(grid, solutions, residuals, errors, failures)


def _menger(x, y):
    """Signed Menger curvature at interior points of a polyline; 0 at the ends."""
    k = np.zeros(x.size)
    if x.size < 3:
        return k
    px, py = x[:-2], y[:-2]
    qx, qy = x[1:-1], y[1:-1]
    rx, ry = x[2:], y[2:]
    a = np.hypot(qx - px, qy - py)
    b = np.hypot(rx - qx, ry - qy)
    c = np.hypot(rx - px, ry - py)
    cross = (qx - px) * (ry - py) - (qy - py) * (rx - px)
    den = a * b * c
    k[1:-1] = np.divide(2.0 * cross, den, out=np.zeros_like(den), where=den > 0)
    return k


def lcurve_corner(result: SweepResult, min_separation: float = 1e-3) -> CornerResult:
    """Index of maximum curvature on the L-curve ``(log rho, log eta)``.

    Points are walked in order of increasing lambda.  A point closer than
    ``min_separation`` times the curve's diameter to the last kept point is
    dropped, since near-duplicates (the flat tail where lambda no longer
    matters) make the discrete curvature meaningless.  Only positive (convex,
    corner-like) curvature counts; ties go to the larger lambda.  Without any,
    the fallback is the largest lambda whose residual is within 1% of the
    smallest, flagged ``no_corner``.
    """
    lams = result.lambdas
    rho = result.residual_norms
    eta = result.seminorms
    valid = np.isfinite(rho) & np.isfinite(eta) & (rho > 0) & (eta > 0)
    order = [int(i) for i in np.argsort(lams, kind="stable") if valid[i]]
    if len(order) < 3:
        raise ValueError("L-curve needs at least three points with positive norms")
    x = np.log(rho[order])
    y = np.log(eta[order])
    diam = math.hypot(np.ptp(x), np.ptp(y))
    keep = [0]
    for j in range(1, len(order)):
        if math.hypot(x[j] - x[keep[-1]], y[j] - y[keep[-1]]) > min_separation * diam:
            keep.append(j)
    # the last point always closes the curve, replacing a near-duplicate
    if keep[-1] != len(order) - 1:
        keep[-1] = len(order) - 1
    curv = np.full(lams.size, np.nan)
    k = _menger(x[keep], y[keep]) if len(keep) >= 3 else np.zeros(len(keep))
    for j, kk in zip(keep, k):
        curv[order[j]] = kk
    best = np.max(k) if k.size else 0.0
    if diam > 0 and best > 1e-8 * (1.0 / diam):
        # ties toward larger lambda: the last maximiser in ascending order
        j = max(i for i, kk in enumerate(k) if kk == best)
        idx = order[keep[j]]
        return CornerResult(idx, float(lams[idx]), False, curv)
    ok = [i for i in order]
    rmin = min(rho[i] for i in ok)
    idx = max((i for i in ok if rho[i] <= 1.01 * rmin), key=lambda i: lams[i])
    return CornerResult(idx, float(lams[idx]), True, curv)


def ncp_curve(residual) -> np.ndarray:
    """Normalised cumulative periodogram ``c_1..c_q`` with ``q = len // 2``."""
    r = np.asarray(residual, dtype=float).ravel()
    if r.size < 8:
        raise ValueError("residual must have at least 8 entries")
    q = r.size // 2
    p = np.abs(np.fft.fft(r)[1 : q + 1]) ** 2
    total = p.sum()
    if not total > 0:
        return np.ones(q)
    c = np.cumsum(p) / total
    c[-1] = 1.0
    return c


def ncp_deviation(residual, norm: str = "l2") -> float:
    """Distance of the residual's NCP from the white-noise line ``j/q``.

    ``norm`` is ``"l2"`` (default) or ``"sup"``.  A zero residual gives 0.
    """
    r = np.asarray(residual, dtype=float).ravel()
    if r.size < 8:
        raise ValueError("residual must have at least 8 entries")
    if not np.any(r):
        return 0.0
    c = ncp_curve(r)
    q = c.size
    d = c - np.arange(1, q + 1) / q
    if norm == "l2":
        return float(np.linalg.norm(d))
    if norm == "sup":
        return float(np.max(np.abs(d)))
    raise ValueError(f"unknown norm {norm!r}")


def _argmin_larger_lambda(values, lams):
    """Index of the smallest finite value; ties go to the larger lambda."""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        raise ValueError("no finite values to select from")
    best = np.min(values[finite])
    hits = np.flatnonzero(finite & (values == best))
    return int(hits[np.argmax(lams[hits])])


def ncp_select(result: SweepResult, norm: str = "l2") -> int:
    """Grid index minimising the NCP deviation; ties go to the larger lambda."""
    return _argmin_larger_lambda(result.ncp_deviations(norm), result.lambdas)


def oracle_select(result: SweepResult, truth=None) -> int:
    """Grid index minimising ``||x(lambda) - x_true||_2``."""
    errors = result.errors
    if truth is not None:
        xt = np.asarray(truth, dtype=float)
        errors = np.array(
            [np.nan if s is None else float(np.linalg.norm(s.x - xt)) for s in result.solutions]
        )
    if errors is None:
        raise ValueError("oracle selection needs the true solution")
    return _argmin_larger_lambda(errors, result.lambdas)


def select_all(result: SweepResult, truth=None, ncp_norm: str = "l2") -> SelectionResult:
    corner = lcurve_corner(result)
    i_ncp = ncp_select(result, ncp_norm)
    i_opt = None
    if truth is not None or result.errors is not None:
        i_opt = oracle_select(result, truth)
    lams = result.lambdas
    return SelectionResult(
        lambda_lc=float(lams[corner.index]),
        lambda_ncp=float(lams[i_ncp]),
        lambda_opt=None if i_opt is None else float(lams[i_opt]),
        solution_lc=result.solutions[corner.index],
        solution_ncp=result.solutions[i_ncp],
        solution_opt=None if i_opt is None else result.solutions[i_opt],
        lc_no_corner=corner.no_corner,
    )


def geometric_mean(lambdas) -> float:
    """``exp(mean(log lambda))``."""
    v = np.asarray(lambdas, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("geometric mean of an empty set")
    if np.any(~(v > 0)):
        raise ValueError("geometric mean needs positive values")
    return float(np.exp(np.mean(np.log(v))))
