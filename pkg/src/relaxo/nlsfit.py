"""Bounded nonlinear least-squares fits of RQ or LN models to impedance data.

Each process contributes ``(t0, shape, scale)``.  The optimiser is scipy's
trust-region reflective least squares, which keeps iterates strictly inside
the bounds; ``t0`` is handled on a log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .drt import DrtModel, DrtProcess, Kind
from .forward import FrequencyGrid, ImpedanceSpectrum, add_noise, synthesize_spectrum
from .peaks import find_z2_peaks

__all__ = [
    "FitConfig",
    "FitResult",
    "DEFAULT_BOUNDS",
    "NOISE_LADDER",
    "init_from_peaks",
    "model_spectrum",
    "fit",
    "fit_table",
    "TABLE_HEADER",
]

PARAM_NAMES = ("t0", "shape", "scale")
DEFAULT_BOUNDS = ((0.0, 100.0), (0.1, 1.0), (0.0, 1.1))
DEFAULT_SHAPE_INIT = {Kind.LN: 0.69, Kind.RQ: 0.8}
NOISE_LADDER = (-6.0, -5.12, -4.25, -3.38, -2.5)
TABLE_HEADER = ("family", "noise_log10", "param_name", "true", "mean_fit", "std_fit", "n")


@dataclass(frozen=True)
class FitConfig:
    """Fit family, per-process initial ``(t0, shape, scale)`` and bounds.

    ``bounds`` holds one ``(lower, upper)`` pair per parameter name and is
    shared by all processes.
    """

    family: Kind
    init: tuple
    bounds: tuple = DEFAULT_BOUNDS
    xtol: float = 1e-10
    gtol: float = 1e-10
    max_iter: int = 500

    def __post_init__(self):
        object.__setattr__(self, "family", Kind(self.family))
        init = tuple(tuple(float(v) for v in p) for p in self.init)
        if not init or any(len(p) != 3 for p in init):
            raise ValueError("init needs one (t0, shape, scale) triple per process")
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != 3 or any(not lo < hi for lo, hi in bounds):
            raise ValueError("bounds need three increasing (lower, upper) pairs")
        for p in init:
            for v, (lo, hi), name in zip(p, bounds, PARAM_NAMES):
                if not lo < v < hi:
                    raise ValueError(f"initial {name}={v} is not strictly inside ({lo}, {hi})")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_processes(self) -> int:
        return len(self.init)


@dataclass(frozen=True)
class FitResult:
    family: Kind
    params: np.ndarray  # shape (n_processes, 3): t0, shape, scale
    residual_norm: float
    initial_residual_norm: float
    converged: bool
    iterations: int
    optimality: float
    deviation: Optional[np.ndarray] = None

    @property
    def model(self) -> DrtModel:
        procs = []
        for t0, shape, scale in self.params:
            if self.family is Kind.RQ:
                shape = min(shape, np.nextafter(1.0, 0.0))
            procs.append(DrtProcess(self.family, t0, shape, scale))
        return DrtModel(procs)


def init_from_peaks(
    spectrum: ImpedanceSpectrum, family: Kind | str, bounds=DEFAULT_BOUNDS
) -> FitConfig:
    """One process per interior Z2 peak, with ``t0 = 1/omega_peak``."""
    family = Kind(family)
    peaks = find_z2_peaks(spectrum)
    if len(peaks) == 0:
        raise ValueError("no interior Z2 peak found; supply an explicit FitConfig.init")
    shape = DEFAULT_SHAPE_INIT[family]
    init = tuple((float(t), shape, 1.0) for t in sorted(peaks.t_star))
    return FitConfig(family, init, bounds)


def model_spectrum(family: Kind | str, params, freq_grid: FrequencyGrid) -> np.ndarray:
    """Stacked ``[Z1; Z2]`` for the given parameter rows.

    RQ uses the exact closed form ``scale / (1 + (i omega t0)**beta)``, which
    stays valid at ``beta = 1``; LN goes through quadrature synthesis.
    """
    family = Kind(family)
    params = np.atleast_2d(np.asarray(params, dtype=float))
    om = freq_grid.omegas
    if family is Kind.RQ:
        z = np.zeros(om.size, dtype=complex)
        for t0, beta, scale in params:
            z += scale / (1.0 + (1j * om * t0) ** beta)
        return np.concatenate([z.real, -z.imag])
    model = DrtModel(DrtProcess(Kind.LN, t0, sig, scale) for t0, sig, scale in params)
    return synthesize_spectrum(model, freq_grid).data


def _to_internal(params):
    p = np.array(params, dtype=float)
    p[:, 0] = np.log(p[:, 0])
    return p.ravel()


def _from_internal(v):
    p = np.array(v, dtype=float).reshape(-1, 3)
    p[:, 0] = np.exp(p[:, 0])
    return p


def fit(spectrum: ImpedanceSpectrum, config: FitConfig, truth=None) -> FitResult:
    """Locally optimal bounded fit in the stacked ``(Z1, Z2)`` 2-norm.

    ``truth`` (rows of ``t0, shape, scale``) fills ``deviation`` with
    ``fitted - truth``.
    """
    b = spectrum.data
    grid = spectrum.freq_grid
    family = config.family
    n_proc = config.n_processes
    (t_lo, t_hi), (s_lo, s_hi), (c_lo, c_hi) = config.bounds
    lo = np.tile([math.log(t_lo) if t_lo > 0 else -np.inf, s_lo, c_lo], n_proc)
    hi = np.tile([math.log(t_hi), s_hi, c_hi], n_proc)

    def residual(v):
        return model_spectrum(family, _from_internal(v), grid) - b

    x0 = _to_internal(config.init)
    r0 = float(np.linalg.norm(residual(x0)))
    res = least_squares(
        residual,
        x0,
        bounds=(lo, hi),
        method="trf",
        xtol=config.xtol,
        ftol=config.xtol,
        gtol=config.gtol,
        max_nfev=config.max_iter,
        x_scale="jac",
    )
    params = _from_internal(res.x)
    rn = float(np.linalg.norm(res.fun))
    if rn > r0:
        params, rn = np.array(config.init, dtype=float), r0
    deviation = None
    if truth is not None:
        deviation = params - np.atleast_2d(np.asarray(truth, dtype=float))
    return FitResult(
        family=family,
        params=params,
        residual_norm=rn,
        initial_residual_norm=r0,
        converged=bool(res.status > 0),
        iterations=int(res.nfev),
        optimality=float(res.optimality),
        deviation=deviation,
    )


def fit_table(
    data_model: DrtModel,
    family: Kind | str,
    noise_log10: Sequence[float] = NOISE_LADDER,
    n_realizations: int = 25,
    base_seed: int = 0,
    freq_grid: FrequencyGrid | None = None,
    truth=None,
) -> list[dict]:
    """Mean and standard deviation of fitted parameters over noise realizations.

    Data come from ``data_model``; each realization gets its own
    peak-based start.  Only single-process fits are tabulated.  ``truth``
    defaults to the data model's parameters, which only makes sense for a
    same-family fit; the ``true`` column then echoes it.
    """
    family = Kind(family)
    clean = synthesize_spectrum(data_model, freq_grid)
    if truth is None:
        truth = [(p.t0, p.shape, p.scale) for p in data_model.processes]
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    rows = []
    for nl in noise_log10:
        fitted = []
        for i in range(n_realizations):
            noisy = add_noise(clean, 10.0**nl, base_seed ^ i)
            cfg = init_from_peaks(noisy, family)
            if cfg.n_processes != truth.shape[0]:
                continue
            fitted.append(fit(noisy, cfg).params)
        arr = np.array(fitted)
        for k in range(truth.shape[0]):
            for j, name in enumerate(PARAM_NAMES):
                vals = arr[:, k, j] if arr.size else np.array([])
                label = name if truth.shape[0] == 1 else f"{name}{k + 1}"
                rows.append(
                    dict(
                        family=family.value,
                        noise_log10=float(nl),
                        param_name=label,
                        true=float(truth[k, j]),
                        mean_fit=float(vals.mean()) if vals.size else math.nan,
                        std_fit=float(vals.std(ddof=1)) if vals.size > 1 else math.nan,
                        n=int(vals.size),
                    )
                )
    return rows
