"""Monte-Carlo error tables and mean-error-versus-lambda curves.

One work unit is a single noise realization of one (simulation, regulariser,
noise) cell: synthesise, perturb, sweep lambda once, then score every
selection rule on that shared sweep.  Realization ``i`` uses the seed
``base_seed ^ i``, so results do not depend on scheduling, and aggregation
always folds units in index order.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from .drt import canonical_set_name, simulation_set
from .forward import Scheme, add_noise, assemble_operator, synthesize_spectrum
from .param_choice import (
    LambdaGrid,
    geometric_mean,
    lcurve_corner,
    ncp_select,
    oracle_select,
    sweep,
)
from .regsolve import Method, RegKind, RegularizedProblem, build_regularizer

__all__ = [
    "ExperimentConfig",
    "ErrorStats",
    "RealizationRecord",
    "MeanErrorCurve",
    "relative_error_percent",
    "run_realization",
    "monte_carlo",
    "mean_error_curve",
    "tabulate",
    "format_cell",
    "STATS_HEADER",
    "CURVE_HEADER",
    "SELECTION_HEADER",
    "write_csv",
    "selection_rows",
]

log = logging.getLogger(__name__)

CRITERIA = ("lc", "ncp", "opt")
STATS_HEADER = (
    "simulation",
    "family",
    "resolution",
    "method",
    "regularizer",
    "criterion",
    "noise",
    "mean",
    "std",
    "n_kept",
    "n_failed",
)
CURVE_HEADER = ("lambda", "mean_abs_error")
SELECTION_HEADER = (
    "simulation",
    "regularizer",
    "noise",
    "realization",
    "seed",
    "lambda_lc",
    "lambda_ncp",
    "lambda_opt",
    "error_lc",
    "error_ncp",
    "error_opt",
    "lc_no_corner",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One table's worth of Monte-Carlo cells.

    Every combination of ``simulations``, ``regularizers`` and
    ``noise_levels`` is a cell; each cell is scored under all ``criteria``.
    """

    simulations: tuple = ("A-RQ",)
    regularizers: tuple = ("I",)
    criteria: tuple = ("lc",)
    noise_levels: tuple = (0.001,)
    resolution: str = "A4"
    method: str = "nnls-as"
    scheme: str = "s-trapezoid"
    n_realizations: int = 100
    base_seed: int = 0
    lambda_range: tuple = (1e-8, 1e2)
    n_lambda: int = 50
    ncp_norm: str = "l2"

    def __post_init__(self):
        def as_tuple(v):
            return (v,) if isinstance(v, (str, int, float)) else tuple(v)

        object.__setattr__(
            self, "simulations", tuple(canonical_set_name(s) for s in as_tuple(self.simulations))
        )
        object.__setattr__(
            self, "regularizers", tuple(RegKind(r).value for r in as_tuple(self.regularizers))
        )
        crit = tuple(str(c).lower() for c in as_tuple(self.criteria))
        for c in crit:
            if c not in CRITERIA:
                raise ValueError(f"unknown criterion {c!r}; choose from {CRITERIA}")
        object.__setattr__(self, "criteria", crit)
        noise = tuple(float(x) for x in as_tuple(self.noise_levels))
        if any(not (x >= 0 and math.isfinite(x)) for x in noise):
            raise ValueError("noise levels must be finite and non-negative")
        object.__setattr__(self, "noise_levels", noise)
        object.__setattr__(self, "method", Method(self.method).value)
        object.__setattr__(self, "scheme", Scheme(self.scheme).value)
        if self.resolution not in ("A3", "A4"):
            raise ValueError(f"resolution must be A3 or A4, got {self.resolution!r}")
        if int(self.n_realizations) < 1:
            raise ValueError("n_realizations must be at least 1")
        object.__setattr__(self, "n_realizations", int(self.n_realizations))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        if self.ncp_norm not in ("l2", "sup"):
            raise ValueError("ncp_norm must be 'l2' or 'sup'")

    @property
    def grid(self) -> LambdaGrid:
        return LambdaGrid.logspace(*self.lambda_range, self.n_lambda)

    def seed(self, i: int) -> int:
        return self.base_seed ^ i


@dataclass(frozen=True)
class ErrorStats:
    """Mean and std of the kept percent errors (those below 100%)."""

    mean: float
    std: float
    n_kept: int
    n_failed: int
    n_total: int

    @property
    def n_rejected(self) -> int:
        return self.n_total - self.n_kept - self.n_failed

    @classmethod
    def from_errors(cls, errors: Sequence[float]) -> "ErrorStats":
        """``errors`` holds percent errors, with NaN marking a failed solve."""
        e = np.asarray(errors, dtype=float)
        failed = int(np.sum(np.isnan(e)))
        kept = e[~np.isnan(e) & (e < 100.0)]
        if kept.size == 0:
            return cls(math.nan, math.nan, 0, failed, e.size)
        return cls(float(kept.mean()), float(kept.std()), int(kept.size), failed, e.size)


@dataclass(frozen=True)
class RealizationRecord:
    simulation: str
    regularizer: str
    noise: float
    realization: int
    seed: int
    lambda_lc: float
    lambda_ncp: float
    lambda_opt: float
    error_lc: float
    error_ncp: float
    error_opt: float
    lc_no_corner: bool
    abs_errors: Optional[tuple] = field(default=None, compare=False)

    def error(self, criterion: str) -> float:
        return getattr(self, f"error_{criterion}")

    def selected_lambda(self, criterion: str) -> float:
        return getattr(self, f"lambda_{criterion}")


@dataclass(frozen=True)
class MeanErrorCurve:
    lambdas: np.ndarray
    mean_abs_error: np.ndarray
    lambda_lc: float
    lambda_ncp: float
    lambda_opt: float
    records: tuple = ()


def relative_error_percent(x, x_true) -> float:
    """``100 * ||x - x_true||_2 / ||x_true||_2``."""
    x = np.asarray(x, dtype=float)
    xt = np.asarray(x_true, dtype=float)
    if x.shape != xt.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xt.shape}")
    nt = np.linalg.norm(xt)
    if nt == 0:
        raise ValueError("relative error against a zero truth is undefined")
    return float(100.0 * np.linalg.norm(x - xt) / nt)


@lru_cache(maxsize=8)
def _operator(resolution, scheme):
    return assemble_operator(resolution=resolution, scheme=scheme)


@lru_cache(maxsize=32)
def _clean(simulation, resolution, scheme):
    model = simulation_set(simulation)
    op = _operator(resolution, scheme)
    return synthesize_spectrum(model, op.freq_grid), op.truth(model)


def run_realization(config: ExperimentConfig, simulation, regularizer, noise, i, keep_curve=False):
    """Score one noise realization under every selection rule.

    A failed or unconverged solve at a selected lambda gives NaN error.
    """
    op = _operator(config.resolution, config.scheme)
    clean, truth = _clean(simulation, config.resolution, config.scheme)
    seed = config.seed(i)
    noisy = add_noise(clean, noise, seed)
    problem = RegularizedProblem(op, noisy.data, build_regularizer(regularizer, op.n_nodes))
    result = sweep(problem, config.grid, config.method, truth=truth)
    lams = result.lambdas

    def err_at(idx):
        if idx is None or idx in result.failures or result.solutions[idx] is None:
            return math.nan
        return relative_error_percent(result.solutions[idx].x, truth)

    no_corner = False
    try:
        corner = lcurve_corner(result)
        i_lc, no_corner = corner.index, corner.no_corner
    except ValueError as exc:
        log.warning("L-curve failed (%s, seed %d): %s", simulation, seed, exc)
        i_lc = None
    try:
        i_ncp = ncp_select(result, config.ncp_norm)
    except ValueError:
        i_ncp = None
    try:
        i_opt = oracle_select(result)
    except ValueError:
        i_opt = None

    def lam(idx):
        return math.nan if idx is None else float(lams[idx])

    return RealizationRecord(
        simulation=simulation,
        regularizer=regularizer,
        noise=noise,
        realization=i,
        seed=seed,
        lambda_lc=lam(i_lc),
        lambda_ncp=lam(i_ncp),
        lambda_opt=lam(i_opt),
        error_lc=err_at(i_lc),
        error_ncp=err_at(i_ncp),
        error_opt=err_at(i_opt),
        lc_no_corner=no_corner,
        abs_errors=tuple(result.errors) if keep_curve else None,
    )


def _run_unit(args):
    return run_realization(*args)


def _map(units, jobs):
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(units) <= 1:
        return [_run_unit(u) for u in units]
    chunk = max(1, len(units) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_unit, units, chunksize=chunk))


def _cells(config):
    return list(itertools.product(config.simulations, config.regularizers, config.noise_levels))


def monte_carlo(config: ExperimentConfig, jobs: int | None = 1, records: list | None = None) -> dict:
    """Error statistics keyed by ``(simulation, regularizer, criterion, noise)``.

    Pass a list as ``records`` to receive every per-realization record in
    deterministic order.
    """
    units = [
        (config, sim, reg, noise, i)
        for sim, reg, noise in _cells(config)
        for i in range(config.n_realizations)
    ]
    out = _map(units, jobs)
    if records is not None:
        records.extend(out)
    table = {}
    n = config.n_realizations
    for c, (sim, reg, noise) in enumerate(_cells(config)):
        block = out[c * n : (c + 1) * n]
        for crit in config.criteria:
            table[(sim, reg, crit, noise)] = ErrorStats.from_errors([r.error(crit) for r in block])
    return table


def mean_error_curve(config: ExperimentConfig, jobs: int | None = 1) -> MeanErrorCurve:
    """Mean absolute s-space error per lambda over the realizations of one cell.

    Uses the first simulation, regulariser and noise level of ``config``.
    The selected-lambda markers are geometric means over realizations; the
    oracle marker is the minimiser of the mean curve.
    """
    if config.n_realizations < 2:
        raise ValueError("a mean error curve needs at least two realizations")
    sim, reg, noise = config.simulations[0], config.regularizers[0], config.noise_levels[0]
    units = [(config, sim, reg, noise, i, True) for i in range(config.n_realizations)]
    recs = _map(units, jobs)
    errs = np.array([r.abs_errors for r in recs], dtype=float)
    with np.errstate(invalid="ignore"):
        curve = np.nanmean(errs, axis=0)
    lams = config.grid.values
    finite = np.isfinite(curve)
    i_opt = int(np.flatnonzero(finite)[np.argmin(curve[finite])])

    def geo(name):
        vals = [getattr(r, name) for r in recs if np.isfinite(getattr(r, name))]
        return geometric_mean(vals) if vals else math.nan

    return MeanErrorCurve(
        lambdas=lams,
        mean_abs_error=curve,
        lambda_lc=geo("lambda_lc"),
        lambda_ncp=geo("lambda_ncp"),
        lambda_opt=float(lams[i_opt]),
        records=tuple(recs),
    )


def format_cell(stats: ErrorStats) -> str:
    """``"19 (2.3) 99"``; the count is left out when every realization was kept."""
    if stats.n_kept == 0:
        return "- (-) 0"
    text = f"{stats.mean:.0f} ({stats.std:.2g})"
    if stats.n_kept != stats.n_total:
        text += f" {stats.n_kept}"
    return text


def _method_label(method, reg):
    name = {"ls": "LS", "nnls-as": "NNLS", "nnls-sbb": "SBB"}[method]
    return f"{name} (L={reg})"


def tabulate(table: dict, config: ExperimentConfig | None = None) -> tuple[str, str]:
    """Text table mirroring ``mean (std) n`` cells, plus a CSV with exact values.

    Rows are (simulation, regulariser, criterion); columns are noise levels.
    """
    keys = list(table)
    noises = sorted({k[3] for k in keys})
    rows = []
    seen = set()
    for sim, reg, crit, _ in keys:
        if (sim, reg, crit) not in seen:
            seen.add((sim, reg, crit))
            rows.append((sim, reg, crit))
    method = config.method if config else "nnls-as"
    resolution = config.resolution if config else "A4"

    header = ["Simulation", "Method", "Criterion"] + [f"{100 * x:g}%" for x in noises]
    lines = [header]
    for sim, reg, crit in rows:
        cells = [format_cell(table[(sim, reg, crit, x)]) if (sim, reg, crit, x) in table else ""
                 for x in noises]
        lines.append([sim, _method_label(method, reg), crit.upper()] + cells)
    widths = [max(len(r[j]) for r in lines) for j in range(len(header))]
    text = "\n".join(
        " | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in lines
    ) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for (sim, reg, crit, noise), st in table.items():
        w.writerow(
            [sim, sim.split("-")[1], resolution, method, reg, crit, _g(noise),
             _g(st.mean), _g(st.std), st.n_kept, st.n_failed]
        )
    return text, buf.getvalue()


def _g(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path_or_buf, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with ``,`` separators, LF line ends and 17 significant digits."""
    def emit(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_g(v) if isinstance(v, (float, int, np.floating, np.integer)) else v
                        for v in r])

    if hasattr(path_or_buf, "write"):
        emit(path_or_buf)
    else:
        with open(path_or_buf, "w", newline="", encoding="utf-8") as f:
            emit(f)


def selection_rows(records):
    for r in records:
        yield [getattr(r, k) for k in SELECTION_HEADER]
