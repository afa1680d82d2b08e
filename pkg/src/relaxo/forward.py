"""Discretisation of the impedance forward map.

The data are the real part ``Z1`` and the (positive) imaginary-part magnitude
``Z2`` of the impedance at angular frequencies ``omega``::

    Z1(w) = int f(s) / (1 + w^2 e^{2s}) ds
    Z2(w) = int f(s) w e^s / (1 + w^2 e^{2s}) ds

with ``f(s) = g1(e^s)``.  A :class:`DiscreteOperator` stacks the ``Z1`` rows on
top of the ``Z2`` rows, so data vectors have length ``2M``.

Three quadrature schemes are available on a uniform log-time grid:

``T_RAW``
    trapezoid in ``t``; unknowns are ``g(t_i)``.
``T_PRECONDITIONED``
    the same rule with the ``1/t_i`` factor moved into the weights,
    ``sinh(ds) * a_i``; unknowns are ``f(s_i)``.
``S_TRAPEZOID``
    trapezoid in ``s``; unknowns are ``f(s_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import erfcinv, expit

from .drt import DrtModel, DrtProcess, Kind, eval_f_s, eval_g

__all__ = [
    "FrequencyGrid",
    "LogTimeGrid",
    "Scheme",
    "Resolution",
    "QuadratureWeights",
    "DiscreteOperator",
    "ImpedanceSpectrum",
    "weights_t_space",
    "weights_preconditioned",
    "weights_s_space",
    "kernel_z1",
    "kernel_z2",
    "assemble_operator",
    "synthesize_spectrum",
    "add_noise",
    "default_frequency_grid",
    "DEFAULT_S_RANGE",
]

LN10 = math.log(10.0)
DEFAULT_OMEGA_RANGE = (1e-4, 1e4)
DEFAULT_OMEGA_PER_DECADE = 10
DEFAULT_S_RANGE = (math.log(1e-6), math.log(1e4))
NODES_PER_DECADE = {"A3": 10, "A4": 20}
# synthesis grid is this many times finer than the A4 grid
SYNTH_REFINEMENT = 8
SYNTH_TAIL_MASS = 1e-12


class Scheme(str, Enum):
    T_RAW = "t-raw"
    T_PRECONDITIONED = "t-preconditioned"
    S_TRAPEZOID = "s-trapezoid"


class Resolution(str, Enum):
    A3 = "A3"
    A4 = "A4"


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float).copy()
        if w.ndim != 1 or w.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-d array")
        if np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ValueError("angular frequencies must be positive and finite")
        if np.any(np.diff(w) <= 0):
            raise ValueError("angular frequencies must be strictly increasing")
        w.setflags(write=False)
        object.__setattr__(self, "omegas", w)

    @classmethod
    def log_spaced(cls, lo: float, hi: float, per_decade: int) -> "FrequencyGrid":
        n = int(round(math.log10(hi / lo) * per_decade)) + 1
        return cls(np.logspace(math.log10(lo), math.log10(hi), n))

    def __len__(self):
        return self.omegas.size

    @property
    def log_step(self) -> float:
        """Largest spacing in ``ln(omega)``."""
        if self.omegas.size < 2:
            return 0.0
        return float(np.max(np.diff(np.log(self.omegas))))


def default_frequency_grid() -> FrequencyGrid:
    return FrequencyGrid.log_spaced(*DEFAULT_OMEGA_RANGE, DEFAULT_OMEGA_PER_DECADE)


@dataclass(frozen=True)
class LogTimeGrid:
    """Uniform grid in ``s = ln t``."""

    s_values: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_values, dtype=float).copy()
        if s.ndim != 1 or s.size < 1:
            raise ValueError("log-time grid must be a non-empty 1-d array")
        if s.size > 1:
            d = np.diff(s)
            if np.any(d <= 0):
                raise ValueError("log-time grid must be strictly increasing")
            if np.max(np.abs(d - d.mean())) > 1e-9 * max(1.0, abs(d.mean())):
                raise ValueError("log-time grid must be uniformly spaced")
        s.setflags(write=False)
        object.__setattr__(self, "s_values", s)

    @classmethod
    def from_range(cls, s_min: float, s_max: float, n: int) -> "LogTimeGrid":
        if n < 2:
            raise ValueError("need at least two nodes")
        return cls(np.linspace(s_min, s_max, n))

    @classmethod
    def per_decade(cls, s_min: float, s_max: float, per_decade: int) -> "LogTimeGrid":
        n = int(round((s_max - s_min) / LN10 * per_decade)) + 1
        return cls.from_range(s_min, s_max, n)

    def __len__(self):
        return self.s_values.size

    @property
    def delta_s(self) -> float:
        if self.s_values.size < 2:
            return float("nan")
        return float((self.s_values[-1] - self.s_values[0]) / (self.s_values.size - 1))

    @property
    def delta_t(self) -> float:
        """Spacing in ``log10 t``."""
        return self.delta_s / LN10

    @property
    def t_values(self) -> np.ndarray:
        return np.exp(self.s_values)


@dataclass(frozen=True)
class QuadratureWeights:
    scheme: Scheme
    weights: np.ndarray

    def __len__(self):
        return self.weights.size


def weights_t_space(t) -> QuadratureWeights:
    """Trapezoid weights for an increasing grid ``t`` (any spacing)."""
    if isinstance(t, LogTimeGrid):
        t = t.t_values
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("need at least two nodes")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("nodes must be strictly increasing")
    w = np.empty_like(t)
    w[0] = dt[0] / 2
    w[-1] = dt[-1] / 2
    w[1:-1] = (dt[:-1] + dt[1:]) / 2
    return QuadratureWeights(Scheme.T_RAW, w)


def _check_spacing(delta_s, n):
    if not delta_s > 0:
        raise ValueError(f"delta_s must be positive, got {delta_s}")
    if n < 2:
        raise ValueError("need at least two nodes")


def weights_preconditioned(delta_s: float, n: int) -> QuadratureWeights:
    """``sinh(ds) * a_i`` with ``a_1 = 1/(1+e^-ds)``, ``a_N = 1/(1+e^ds)``, else 1.

    These equal the t-space trapezoid weights divided by ``t_i`` on a grid
    with constant ratio ``t_{i+1}/t_i = e^ds``.
    """
    _check_spacing(delta_s, n)
    w = np.full(n, math.sinh(delta_s))
    w[0] *= expit(delta_s)  # 1/(1+e^-ds)
    w[-1] *= expit(-delta_s)  # 1/(1+e^ds)
    return QuadratureWeights(Scheme.T_PRECONDITIONED, w)


def weights_s_space(delta_s: float, n: int) -> QuadratureWeights:
    _check_spacing(delta_s, n)
    w = np.full(n, float(delta_s))
    w[0] = w[-1] = delta_s / 2
    return QuadratureWeights(Scheme.S_TRAPEZOID, w)


def kernel_z1(omega, t):
    """``1/(1 + (omega*t)^2)``."""
    wt = np.multiply(omega, t, dtype=float)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + wt * wt)


def kernel_z2(omega, t):
    """``omega*t/(1 + (omega*t)^2)``, at most 1/2 (at ``omega*t = 1``)."""
    wt = np.multiply(omega, t, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = wt / (1.0 + wt * wt)
        # (omega*t)^2 overflow: the kernel is ~1/(omega*t)
        return np.where(np.isfinite(wt * wt), out, 1.0 / wt)


def _log_kernels(z):
    """Kernels in terms of ``z = ln(omega*t)``, stable for any ``z``."""
    h1 = expit(-2.0 * z)
    e = np.exp(-np.abs(z))
    h2 = e / (1.0 + e * e)
    return h1, h2


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: np.ndarray
    freq_grid: FrequencyGrid
    time_grid: LogTimeGrid
    weights: QuadratureWeights
    resolution: Optional[Resolution] = None

    @property
    def n_freq(self) -> int:
        return len(self.freq_grid)

    @property
    def n_nodes(self) -> int:
        return len(self.time_grid)

    @property
    def scheme(self) -> Scheme:
        return self.weights.scheme

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def truth(self, model: DrtModel) -> np.ndarray:
        """Samples of ``model`` in the unknowns this operator acts on."""
        if self.scheme is Scheme.T_RAW:
            return eval_g(model, self.time_grid.t_values)
        return eval_f_s(model, self.time_grid.s_values)

    def condition_number(self) -> float:
        """``sigma_1 / sigma_N`` over all ``N`` unknowns.

        With more unknowns than data rows the null space is non-trivial and
        the least-squares condition number is infinite.
        """
        rows, n = self.matrix.shape
        if n > rows:
            return math.inf
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        return float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf


def assemble_operator(
    freq_grid: FrequencyGrid | None = None,
    s_range: tuple[float, float] = DEFAULT_S_RANGE,
    resolution: Resolution | str = Resolution.A4,
    scheme: Scheme | str = Scheme.S_TRAPEZOID,
    *,
    time_grid: LogTimeGrid | None = None,
    weights=None,
) -> DiscreteOperator:
    """Build the ``(2M, N)`` matrix ``[w_i h1(w_m, t_i); w_i h2(w_m, t_i)]``.

    ``resolution`` fixes the node density over ``s_range`` (A3: 10 nodes per
    decade, A4: 20).  An explicit ``time_grid`` overrides both; explicit
    ``weights`` override the scheme's weights.
    """
    freq_grid = freq_grid if freq_grid is not None else default_frequency_grid()
    scheme = Scheme(scheme)
    resolution = Resolution(resolution) if resolution is not None else None
    if time_grid is None:
        if resolution is None:
            raise ValueError("either a resolution or an explicit time grid is required")
        lo, hi = s_range
        if not hi > lo:
            raise ValueError("s_range must be increasing")
        time_grid = LogTimeGrid.per_decade(lo, hi, NODES_PER_DECADE[resolution.value])

    n = len(time_grid)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"expected {n} weights, got shape {w.shape}")
        qw = QuadratureWeights(scheme, w)
    elif scheme is Scheme.T_RAW:
        qw = weights_t_space(time_grid.t_values)
    elif scheme is Scheme.T_PRECONDITIONED:
        qw = weights_preconditioned(time_grid.delta_s, n)
    else:
        qw = weights_s_space(time_grid.delta_s, n)

    t = time_grid.t_values
    h1 = kernel_z1(freq_grid.omegas[:, None], t[None, :])
    h2 = kernel_z2(freq_grid.omegas[:, None], t[None, :])
    matrix = np.vstack([h1 * qw.weights, h2 * qw.weights])
    return DiscreteOperator(matrix, freq_grid, time_grid, qw, resolution)


@dataclass(frozen=True)
class ImpedanceSpectrum:
    freq_grid: FrequencyGrid
    z1: np.ndarray
    z2: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        m = len(self.freq_grid)
        for name in ("z1", "z2"):
            v = np.asarray(getattr(self, name), dtype=float).copy()
            if v.shape != (m,):
                raise ValueError(f"{name} must have one value per frequency ({m})")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")

    @property
    def omegas(self) -> np.ndarray:
        return self.freq_grid.omegas

    @property
    def data(self) -> np.ndarray:
        """Stacked vector ``[Z1; Z2]``."""
        return np.concatenate([self.z1, self.z2])

    @classmethod
    def from_data(cls, freq_grid: FrequencyGrid, b, **kw) -> "ImpedanceSpectrum":
        b = np.asarray(b, dtype=float)
        m = len(freq_grid)
        if b.shape != (2 * m,):
            raise ValueError(f"stacked data must have length {2 * m}")
        return cls(freq_grid, b[:m], b[m:], **kw)


def _synthesis_grid(proc: DrtProcess, tail_mass: float):
    """Offsets ``u`` from the process centre and trapezoid step for synthesis."""
    step = LN10 / NODES_PER_DECADE["A4"] / SYNTH_REFINEMENT
    if proc.kind is Kind.LN:
        sig = proc.shape
        half = sig * math.sqrt(2.0) * float(erfcinv(tail_mass)) + sig
        step = min(step, sig / 8)
    else:
        b = proc.shape
        sb = math.sin(b * math.pi)
        # two-sided tail ~ 2 sin(b pi)/(pi b) e^{-b U}; one extra e-fold of margin
        half = max(math.log(2 * sb / (math.pi * b * tail_mass)), 0.0) / b + 1.0 / b
        # distance of the nearest complex singularity of f from the real axis
        step = min(step, (1.0 - b) * math.pi / b / 8)
    n = int(math.ceil(2 * half / step)) + 1
    u = np.linspace(-half, half, n)
    return u, u[1] - u[0]


def synthesize_spectrum(
    model: DrtModel, freq_grid: FrequencyGrid | None = None, *, tail_mass: float = SYNTH_TAIL_MASS
) -> ImpedanceSpectrum:
    """Noise-free ``Z1``, ``Z2`` by fine trapezoid quadrature in ``s``.

    Each process is integrated on its own uniform grid centred on its peak,
    at least eight times finer than the A4 grid, refined further for narrow
    processes, and wide enough that the neglected tail mass is below
    ``tail_mass`` per unit scale.
    """
    freq_grid = freq_grid if freq_grid is not None else default_frequency_grid()
    log_w = np.log(freq_grid.omegas)
    z1 = np.zeros(len(freq_grid))
    z2 = np.zeros(len(freq_grid))
    for proc in model.processes:
        if proc.scale == 0:
            continue
        u, du = _synthesis_grid(proc, tail_mass)
        wf = proc.f_centered(u) * du
        wf[0] *= 0.5
        wf[-1] *= 0.5
        s = u + proc.s_center
        # chunk over frequencies to bound memory for very fine grids
        chunk = max(1, 2_000_000 // u.size)
        for lo in range(0, log_w.size, chunk):
            z = log_w[lo : lo + chunk, None] + s[None, :]
            h1, h2 = _log_kernels(z)
            z1[lo : lo + chunk] += proc.scale * (h1 @ wf)
            z2[lo : lo + chunk] += proc.scale * (h2 @ wf)
    return ImpedanceSpectrum(freq_grid, z1, z2)


def add_noise(spectrum: ImpedanceSpectrum, eta: float, seed: int | None) -> ImpedanceSpectrum:
    """Componentwise proportional Gaussian noise ``b + eta*|b|*N(0, 1)``."""
    eta = float(eta)
    if not eta >= 0:
        raise ValueError(f"noise level must be non-negative, got {eta}")
    b = spectrum.data
    if eta == 0:
        noisy = b.copy()
    else:
        eps = np.random.default_rng(seed).standard_normal(b.size)
        noisy = b + eta * np.abs(b) * eps
    return ImpedanceSpectrum.from_data(spectrum.freq_grid, noisy, noise_level=eta, seed=seed)
