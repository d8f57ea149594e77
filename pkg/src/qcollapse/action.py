"""Discrete action S = S1 + S2 + SI + RI for a coefficient trajectory.

Quadrature:

* kinetic/energy part: cell-centred (midpoint) rule, C_dot = (C[n+1]-C[n])/dt and
  C = (C[n]+C[n+1])/2 on each cell. Its exact discrete variation is the compact
  central-difference evolution operator used by the solver, so residuals and
  action gradients agree to rounding rather than to O(dt^2).
* local interaction: trapezoid rule.
* nonlocal interaction: tensor trapezoid rule, visiting only node pairs inside
  the kernel support.

The kinetic integrand is the boundary-term-free form B (|C_dot|^2 + Re{2i/hbar E C* C_dot}).
Off the solution manifold it differs from the pre-integration-by-parts form
by the endpoint terms that form discards.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._operator import nonlocal_operator
from .model import Couplings, ModeSpectrum
from .trajectory import CoefficientTrajectory


@dataclass(frozen=True)
class ActionBreakdown:
    s12: float
    sI: float
    rI: float

    @property
    def total(self) -> float:
        return self.s12 + self.sI + self.rI

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def eval_s12(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> float:
    traj.check_spectrum(spec)
    C = traj.values
    dt = traj.grid.dt
    E = spec.energy_array()
    dC = np.diff(C, axis=0)
    kinetic = np.sum(dC.real**2 + dC.imag**2) / dt
    # midpoint value of Im{C* C_dot} * dt reduces to Im{C*[n] C[n+1]}
    cross = np.sum(np.imag(np.conj(C[:-1]) * C[1:]), axis=0)
    return float(couplings.B * (kinetic - 2.0 / couplings.hbar * np.dot(E, cross)))


def eval_sI(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> float:
    traj.check_spectrum(spec)
    if couplings.mu == 0.0:
        return 0.0
    C = traj.values
    d2 = spec.delta_array() ** 2
    per_node = (C.real**2 + C.imag**2) @ d2
    return float(couplings.mu * np.dot(traj.grid.trapezoid_weights, per_node))


def eval_rI(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings, dense: bool = False) -> float:
    traj.check_spectrum(spec)
    if couplings.nu == 0.0:
        return 0.0
    op = nonlocal_operator(spec, couplings, traj.grid, dense=dense)
    return float(couplings.nu * op.ri_sum(traj.values))


def evaluate(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> ActionBreakdown:
    return ActionBreakdown(
        eval_s12(traj, spec, couplings),
        eval_sI(traj, spec, couplings),
        eval_rI(traj, spec, couplings),
    )


def total_action(traj, spec, couplings) -> float:
    return evaluate(traj, spec, couplings).total


def action_gradient(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> np.ndarray:
    """Analytic dS/d(conj C) at every node and mode, shape (n_nodes, n_modes).

    With C = x + iy this equals (dS/dx + i dS/dy) / 2.
    """
    traj.check_spectrum(spec)
    C = traj.values
    dt = traj.grid.dt
    B, hbar = couplings.B, couplings.hbar
    E = spec.energy_array()
    g = np.zeros_like(C)
    # kinetic: B/dt * sum |C[n+1]-C[n]|^2
    g[:-1] += (B / dt) * (C[:-1] - C[1:])
    g[1:] += (B / dt) * (C[1:] - C[:-1])
    # energy: -(2B/hbar) E sum Im(conj(C[n]) C[n+1])
    ie = 1j * B * E / hbar
    g[:-1] += ie * C[1:]
    g[1:] -= ie * C[:-1]
    w = traj.grid.trapezoid_weights[:, None]
    if couplings.mu != 0.0:
        g += couplings.mu * spec.delta_array() ** 2 * w * C
    if couplings.nu != 0.0:
        op = nonlocal_operator(spec, couplings, traj.grid)
        g += 2.0 * couplings.nu * w * op.c_tilde(C)
    return g


def default_fd_step(traj: CoefficientTrajectory) -> float:
    return 1e-6 * max(1.0, float(np.max(np.abs(traj.values))))


def action_gradient_fd(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings, h: float | None = None, nodes=None) -> np.ndarray:
    """Central-difference gradient of the total action.

    Returns a real array of shape (n_nodes, n_modes, 2) holding dS/dRe C and
    dS/dIm C. ``nodes`` restricts which node rows are differenced (others are
    left as NaN).
    """
    if h is None:
        h = default_fd_step(traj)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    base = traj.values.copy()
    work = CoefficientTrajectory(traj.grid, base.copy())
    N, M = base.shape
    out = np.full((N, M, 2), np.nan)
    for n in range(N) if nodes is None else nodes:
        for a in range(M):
            for part, unit in ((0, 1.0), (1, 1j)):
                work.values[n, a] = base[n, a] + h * unit
                up = total_action(work, spec, couplings)
                work.values[n, a] = base[n, a] - h * unit
                down = total_action(work, spec, couplings)
                work.values[n, a] = base[n, a]
                out[n, a, part] = (up - down) / (2.0 * h)
    return out


def wirtinger_from_real(grad_real: np.ndarray) -> np.ndarray:
    """Convert (dS/dx, dS/dy) pairs into dS/d(conj C) = (dS/dx + i dS/dy)/2."""
    return 0.5 * (grad_real[..., 0] + 1j * grad_real[..., 1])
