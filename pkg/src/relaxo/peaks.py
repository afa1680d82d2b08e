"""Peaks of the imaginary part Z2 and their relaxation times ``t* = 1/omega``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import ImpedanceSpectrum

__all__ = ["PeakSet", "find_z2_peaks", "nyquist_curve"]


@dataclass(frozen=True)
class PeakSet:
    """Interior strict maxima of Z2, plus maxima found at the grid ends.

    ``boundary`` lists grid ends (0 or M-1) where Z2 is largest at the edge;
    they are not counted as peaks.
    """

    indices: np.ndarray
    omegas: np.ndarray
    t_star: np.ndarray
    boundary: tuple = ()

    def __len__(self):
        return self.indices.size


def _plateau_maxima(z):
    """Strict local maxima, with a run of equal values treated as one point."""
    n = z.size
    peaks, edges = [], []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and z[j + 1] == z[i]:
            j += 1
        left_lower = i > 0 and z[i - 1] < z[i]
        right_lower = j < n - 1 and z[j + 1] < z[i]
        if left_lower and right_lower:
            peaks.append((i + j) // 2)
        elif i == 0 and right_lower:
            edges.append(0)
        elif j == n - 1 and left_lower:
            edges.append(n - 1)
        i = j + 1
    return peaks, edges


def find_z2_peaks(spectrum: ImpedanceSpectrum, refine: bool = False) -> PeakSet:
    """Locate the strict interior maxima of Z2.

    With ``refine`` the peak frequency comes from a parabola through the three
    points around each maximum in ``log omega``; otherwise it is a grid point.
    """
    z = np.asarray(spectrum.z2, dtype=float)
    om = np.asarray(spectrum.omegas, dtype=float)
    if z.size < 3:
        raise ValueError("peak search needs at least three frequencies")
    idx, edges = _plateau_maxima(z)
    idx = np.asarray(idx, dtype=int)
    omegas = om[idx].copy()
    if refine:
        lw = np.log(om)
        for k, i in enumerate(idx):
            y0, y1, y2 = z[i - 1], z[i], z[i + 1]
            den = y0 - 2.0 * y1 + y2
            if den < 0:
                # vertex offset in units of the local step, clipped to the bracket
                off = float(np.clip(0.5 * (y0 - y2) / den, -1.0, 1.0))
                step = (lw[i + 1] - lw[i - 1]) / 2.0
                omegas[k] = np.exp(lw[i] + off * step)
    return PeakSet(idx, omegas, 1.0 / omegas, tuple(edges))


def nyquist_curve(spectrum: ImpedanceSpectrum) -> np.ndarray:
    """``(Z1, Z2)`` pairs in frequency order, shape ``(M, 2)``."""
    return np.column_stack([spectrum.z1, spectrum.z2])
