"""Parametric distributions of relaxation times (DRT).

Two process families are supported:

* ``RQ`` (Cole-Cole), shape parameter ``beta`` in (0, 1)::

      g(t) = sin(beta*pi) / (2*pi*t*(cosh(beta*ln(t/t0)) + cos(beta*pi)))

* ``LN`` (lognormal), shape parameter ``sigma`` > 0, written in terms of the
  t-space mode ``t0 = exp(mu - sigma**2)``::

      g(t) = exp(-(ln t - mu)**2 / (2*sigma**2)) / (t*sigma*sqrt(2*pi))

Both densities integrate to one over ``t``.  A model is the scale-weighted sum
of its processes; scales are not required to sum to one.

The s-space function used for inversion is ``f(s) = g1(exp(s))`` with
``g1(t) = t*g(t)``.  For RQ, ``g1`` is symmetric about ``ln t0``; for LN it is
a Gaussian in ``ln t`` centred on ``mu = ln t0 + sigma**2``.

Note on the RQ reparameterisation: substituting ``t = t0*exp(s)`` into ``g``
gives a factor ``exp(-s)``, not ``exp(-|s|)``.  The two agree at ``s = 0``,
which is the only point used by :func:`matched_beta`; this module always uses
the direct substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Kind",
    "DrtProcess",
    "DrtModel",
    "SIMULATION_SETS",
    "simulation_set",
    "eval_g",
    "eval_g1",
    "eval_f_s",
    "matched_beta",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class Kind(str, Enum):
    RQ = "RQ"
    LN = "LN"


@dataclass(frozen=True)
class DrtProcess:
    """One relaxation process.

    ``shape`` is ``beta`` for RQ and ``sigma`` for LN.
    """

    kind: Kind
    t0: float
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        for name in ("t0", "shape", "scale"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.t0 > 0 and math.isfinite(self.t0)):
            raise ValueError(f"t0 must be positive and finite, got {self.t0}")
        if self.kind is Kind.RQ and not (0.0 < self.shape < 1.0):
            raise ValueError(f"RQ beta must lie in (0, 1), got {self.shape}")
        if self.kind is Kind.LN and not (self.shape > 0 and math.isfinite(self.shape)):
            raise ValueError(f"LN sigma must be positive, got {self.shape}")
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be non-negative, got {self.scale}")

    @classmethod
    def rq(cls, t0: float, beta: float, scale: float = 1.0) -> "DrtProcess":
        return cls(Kind.RQ, t0, beta, scale)

    @classmethod
    def lognormal(cls, mu: float, sigma: float, scale: float = 1.0) -> "DrtProcess":
        """LN process from its log-mean ``mu`` (the ``t0`` stored is ``exp(mu - sigma**2)``)."""
        return cls(Kind.LN, math.exp(mu - sigma * sigma), sigma, scale)

    @property
    def mu(self) -> float:
        """Log-mean of an LN process, ``ln t0 + sigma**2``."""
        if self.kind is not Kind.LN:
            raise AttributeError("mu is only defined for LN processes")
        return math.log(self.t0) + self.shape**2

    @property
    def s_center(self) -> float:
        """Log-time at which ``g1`` peaks (``ln t0`` for RQ, ``mu`` for LN)."""
        return math.log(self.t0) if self.kind is Kind.RQ else self.mu

    @property
    def peak_time(self) -> float:
        """Relaxation time at which ``g1 = t*g`` peaks."""
        return math.exp(self.s_center)

    def f_centered(self, u):
        """Unit-scale ``g1`` as a function of ``u = s - s_center``."""
        u = np.asarray(u, dtype=float)
        if self.kind is Kind.LN:
            sig = self.shape
            return np.exp(-0.5 * (u / sig) ** 2) / (sig * _SQRT_2PI)
        # sin(bp) / (cosh(b u) + cos(bp)) rewritten with e = exp(-b|u|) to avoid overflow
        b = self.shape
        e = np.exp(-b * np.abs(u))
        sb, cb = math.sin(b * math.pi), math.cos(b * math.pi)
        return (sb / math.pi) * e / (1.0 + 2.0 * cb * e + e * e)

    def g1(self, t):
        t = _check_times(t)
        return self.scale * self.f_centered(np.log(t) - self.s_center)

    def g(self, t):
        t = _check_times(t)
        return self.g1(t) / t


@dataclass(frozen=True)
class DrtModel:
    processes: tuple[DrtProcess, ...]

    def __init__(self, processes: Iterable[DrtProcess]):
        procs = tuple(processes)
        if not procs:
            raise ValueError("a DrtModel needs at least one process")
        for p in procs:
            if not isinstance(p, DrtProcess):
                raise TypeError(f"expected DrtProcess, got {type(p).__name__}")
        object.__setattr__(self, "processes", procs)

    def __len__(self):
        return len(self.processes)

    def __iter__(self):
        return iter(self.processes)

    @property
    def kinds(self) -> set[Kind]:
        return {p.kind for p in self.processes}

    def with_scales(self, scales: Sequence[float]) -> "DrtModel":
        return DrtModel(
            DrtProcess(p.kind, p.t0, p.shape, s) for p, s in zip(self.processes, scales)
        )


def _check_times(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("relaxation times must be strictly positive")
    return t


def eval_g(model: DrtModel, t):
    """t-space density ``sum_k scale_k * g_k(t)``."""
    t = _check_times(t)
    return sum(p.g(t) for p in model.processes)


def eval_g1(model: DrtModel, t):
    """s-space density ``t * g(t)``."""
    t = _check_times(t)
    return sum(p.g1(t) for p in model.processes)


def eval_f_s(model: DrtModel, s_grid) -> np.ndarray:
    """Samples ``f(s_i) = g1(exp(s_i))`` on a log-time grid."""
    s = np.asarray(s_grid, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("s grid must be finite")
    return np.asarray(sum(p.scale * p.f_centered(s - p.s_center) for p in model.processes))


def matched_beta(sigma: float) -> float:
    """RQ shape whose ``g(t0)`` equals that of an LN process with width ``sigma``.

    ``beta = (2/pi) * arctan(sqrt(2*pi)/sigma * exp(-sigma**2/2))``.
    """
    sigma = float(sigma)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return 2.0 / math.pi * math.atan(_SQRT_2PI / sigma * math.exp(-0.5 * sigma * sigma))


# Table of built-in simulation sets.  LN widths log(1.7), log(1.5) are natural logs.
SIMULATION_SETS: dict[str, DrtModel] = {
    "A-RQ": DrtModel([DrtProcess.rq(math.exp(-1.5), 0.8, 1.0)]),
    "B-RQ": DrtModel([DrtProcess.rq(math.exp(-4.0), 0.7, 0.5), DrtProcess.rq(1.0, 0.5, 0.5)]),
    "C-RQ": DrtModel(
        [DrtProcess.rq(math.exp(-1.5), 0.8, 0.5), DrtProcess.rq(math.exp(-0.5), 0.6, 0.5)]
    ),
    "A-LN": DrtModel([DrtProcess.lognormal(-3.5, 0.8, 1.0)]),
    "B-LN": DrtModel(
        [
            DrtProcess.lognormal(-7.0, math.log(1.7), 0.7),
            DrtProcess.lognormal(1.0, math.log(1.5), 0.3),
        ]
    ),
    "C-LN": DrtModel(
        [
            DrtProcess.lognormal(-5.0, math.log(1.7), 0.7),
            DrtProcess.lognormal(-3.25, math.log(1.5), 0.3),
        ]
    ),
}

_NUMERIC_ALIASES = {"1": "A", "2": "B", "3": "C"}


def canonical_set_name(name: str) -> str:
    """Normalise ``"A-RQ"``, ``"RQ-A"``, ``"(1,RQ)"``, ``"rq_a"`` to ``"A-RQ"``."""
    raw = name.strip().upper().strip("()").replace("_", "-").replace(",", "-").replace(" ", "")
    parts = [p for p in raw.split("-") if p]
    if len(parts) == 2:
        fam = next((p for p in parts if p in ("RQ", "LN")), None)
        other = next((p for p in parts if p != fam), None)
        if fam and other:
            letter = _NUMERIC_ALIASES.get(other, other)
            key = f"{letter}-{fam}"
            if key in SIMULATION_SETS:
                return key
    raise KeyError(f"unknown simulation set {name!r}; known: {', '.join(SIMULATION_SETS)}")


def simulation_set(name: str) -> DrtModel:
    return SIMULATION_SETS[canonical_set_name(name)]
