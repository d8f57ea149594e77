"""Precomputed tables for the banded nonlocal term on one grid."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .kernel import band_values, support_halfwidth
from .model import Couplings, ModeSpectrum, TimeGrid


@dataclass(frozen=True, eq=False)
class NonlocalOperator:
    grid: TimeGrid
    band: int
    w: np.ndarray
    fband: np.ndarray
    phase: np.ndarray
    ephase: np.ndarray
    G: np.ndarray
    delta: np.ndarray
    energy: np.ndarray
    hbar: float

    def integrals(self, C):
        return _kernels.nonlocal_integrals(C, self.w, self.fband, self.phase, self.band)

    def c_tilde(self, C, integrals=None):
        if integrals is None:
            integrals = self.integrals(C)
        # Ctilde[n, a] = sum_b G_ab C_b(n) I[n, a, b]
        return np.einsum("ab,nb,nab->na", self.G, C, integrals)

    def ri_sum(self, C):
        return _kernels.ri_sum(C, self.w, self.fband, self.ephase, self.G, self.band)

    def jacobian_blocks(self, C):
        return _kernels.jacobian_blocks(C, self.w, self.fband, self.phase, self.G, self.band)

    def moving_average(self, C):
        """sum_q w_q f(t_n - t_q) |C_a(q)|^2 for every node and mode."""
        mag2 = C.real**2 + C.imag**2
        N = mag2.shape[0]
        out = np.zeros_like(mag2)
        for d in range(-self.band, self.band + 1):
            f = self.fband[abs(d)]
            lo, hi = max(0, -d), min(N, N - d)
            if f == 0.0 or hi <= lo:
                continue
            out[lo:hi] += (self.w[lo + d : hi + d] * f)[:, None] * mag2[lo + d : hi + d]
        return out


def nonlocal_operator(spec: ModeSpectrum, couplings: Couplings, grid: TimeGrid, dense: bool = False) -> NonlocalOperator:
    """Tables for ``grid``; ``dense=True`` visits every node pair (oracle/benchmark use)."""
    return _build(spec, couplings.kernel, couplings.hbar, grid, dense)


@lru_cache(maxsize=64)
def _build(spec, kernel, hbar, grid, dense):
    band = grid.n_nodes - 1 if dense else support_halfwidth(kernel, grid)
    fband = band_values(kernel, grid, band)
    E = spec.energy_array()
    d = np.arange(-band, band + 1) * grid.dt
    omega = (E[:, None] - E[None, :]) / hbar
    phase = np.exp(-1j * d[:, None, None] * omega[None])
    ephase = np.exp(-1j * d[:, None] * (E / hbar)[None, :])
    return NonlocalOperator(
        grid=grid,
        band=band,
        w=grid.trapezoid_weights,
        fband=fband,
        phase=np.ascontiguousarray(phase),
        ephase=np.ascontiguousarray(ephase),
        G=spec.coupling_matrix(),
        delta=spec.delta_array(),
        energy=E,
        hbar=hbar,
    )
