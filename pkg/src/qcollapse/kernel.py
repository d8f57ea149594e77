"""Temporal interaction kernel f(t1 - t2) for the two-time interaction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateKernelError

FAMILIES = ("tophat", "cosine_taper", "constant")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and range.

    ``tau`` is ignored for the constant family (treated as infinite range).
    """

    family: str = "cosine_taper"
    tau: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        tau = float(self.tau)
        if math.isnan(tau) or tau < 0:
            raise ConfigError("kernel tau must be >= 0")
        if math.isinf(tau) and self.family != "constant":
            raise ConfigError("infinite tau is only allowed for the constant kernel")
        object.__setattr__(self, "tau", tau)

    @property
    def compact(self) -> bool:
        return self.family != "constant"


def _require_range(spec: KernelSpec) -> None:
    if spec.compact and spec.tau == 0.0:
        raise DegenerateKernelError(
            f"{spec.family} kernel with tau=0 vanishes identically; set nu=0 instead"
        )


def kernel_eval(spec: KernelSpec, t):
    """Evaluate f(t). Accepts scalars or arrays; even in t by construction."""
    _require_range(spec)
    a = np.abs(np.asarray(t, dtype=float))
    if spec.family == "constant":
        out = np.ones_like(a)
    elif spec.family == "tophat":
        out = np.where(a < spec.tau, 1.0, 0.0)
    else:
        c = np.cos(0.5 * np.pi * a / spec.tau)
        out = np.where(a < spec.tau, c * c, 0.0)
    return float(out) if out.ndim == 0 else out


def support_halfwidth(spec: KernelSpec, grid) -> int:
    """Largest node separation at which the kernel can be nonzero, clamped to the grid."""
    last = grid.n_nodes - 1
    if not spec.compact:
        return last
    _require_range(spec)
    return min(last, math.ceil(spec.tau / grid.dt))


def band_values(spec: KernelSpec, grid, band: int | None = None) -> np.ndarray:
    """Kernel at node separations d*dt for d = 0..band."""
    if band is None:
        band = support_halfwidth(spec, grid)
    return np.asarray(kernel_eval(spec, grid.dt * np.arange(band + 1)), dtype=float).reshape(band + 1)


def max_slope(spec: KernelSpec) -> float:
    """sup |f'(t)|; infinite for the tophat jump."""
    if spec.family == "constant":
        return 0.0
    _require_range(spec)
    if spec.family == "tophat":
        return math.inf
    # d/dt cos^2(pi t / 2 tau) = -(pi / 2 tau) sin(pi t / tau)
    return 0.5 * math.pi / spec.tau


def slow_variation_epsilon(spec: KernelSpec, energy_gap: float, hbar: float = 1.0) -> float:
    """hbar * max|f'| / (energy_gap * f_max) for the smallest nonzero energy gap."""
    if energy_gap <= 0 or not math.isfinite(energy_gap):
        return math.inf if spec.family != "constant" else 0.0
    return hbar * max_slope(spec) / energy_gap
