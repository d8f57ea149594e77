"""Seeded ensembles over the measurement duration and outcome-frequency statistics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, DegenerateStateError, EnsembleError, NumericalBlowupError
from .kernel import band_values, slow_variation_epsilon, support_halfwidth
from .model import Couplings, ModeSpectrum, TimeGrid
from .solver import SolveConfig, nonlocal_coefficient, solve_bvp
from .trajectory import CoefficientTrajectory, collapse_metrics, time_derivative

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HiddenVariableDistribution:
    T_center: float
    T_halfwidth: float
    law: str = "uniform"
    initial_phase_jitter: float = 0.0

    def __post_init__(self):
        if self.law != "uniform":
            raise ConfigError(f"unsupported hidden-variable law {self.law!r}")
        if not (math.isfinite(self.T_center) and math.isfinite(self.T_halfwidth)):
            raise ConfigError("T_center and T_halfwidth must be finite")
        if self.T_halfwidth < 0:
            raise ConfigError("T_halfwidth must be >= 0")
        if self.T_center - self.T_halfwidth <= 0:
            raise ConfigError("T_center - T_halfwidth must be > 0")
        if not (self.initial_phase_jitter >= 0):
            raise ConfigError("initial_phase_jitter must be >= 0")

    def sample(self, n: int, rng: np.random.Generator, n_modes: int):
        """Durations (n,) and per-mode phase offsets (n, n_modes)."""
        T = rng.uniform(self.T_center - self.T_halfwidth, self.T_center + self.T_halfwidth, size=n)
        if self.initial_phase_jitter > 0:
            phases = rng.uniform(-self.initial_phase_jitter, self.initial_phase_jitter, size=(n, n_modes))
        else:
            phases = np.zeros((n, n_modes))
        return T, phases


def min_energy_gap(spec: ModeSpectrum) -> float:
    """Smallest nonzero |E_a - E_b| over joint modes (inf if all energies coincide)."""
    E = np.unique(spec.energy_array())
    if E.size < 2:
        return math.inf
    return float(np.min(np.diff(E)))


def default_halfwidth(spec: ModeSpectrum, hbar: float = 1.0, ratio: float = 50.0) -> float:
    """Half-width giving 2 * halfwidth * dE_min / hbar == ratio."""
    gap = min_energy_gap(spec)
    if not math.isfinite(gap):
        return 0.0
    return 0.5 * ratio * hbar / gap


@dataclass(frozen=True)
class EnsembleSetup:
    """Everything shared by the realizations of one ensemble."""

    spec: ModeSpectrum
    couplings: Couplings
    initial_C: tuple
    t_i: float = 0.0
    n_nodes: int = 201
    solve: SolveConfig = field(default_factory=SolveConfig)
    purity_min: float = 0.99
    agreement_max: float = 0.01
    retain_trajectories: bool = False

    def __post_init__(self):
        c = tuple(complex(x) for x in np.asarray(self.initial_C, dtype=np.complex128).ravel())
        if len(c) != self.spec.n_modes:
            raise ConfigError("initial state length does not match the spectrum")
        object.__setattr__(self, "initial_C", c)


@dataclass
class EnsembleReport:
    n_realizations: int
    per_realization: list
    frequencies: list
    initial_weights: list
    max_abs_deviation: float | None
    chi_square: float | None
    chi_square_dof: int
    chi_square_p: float | None
    n_collapsed: int
    n_uncollapsed: int
    n_diverged: int
    class_labels: list
    drift_bound_mean: list
    drift_bound_max: list
    phase_term_average: float | None
    window_ratio: float
    slow_variation_epsilon: float
    seed: int
    trajectories: list | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trajectories")
        return d


# ---------------------------------------------------------------- diagnostics


def moving_average(traj: CoefficientTrajectory, couplings: Couplings, node: int, mode: int) -> float:
    """Banded trapezoid of the kernel-weighted |C_mode|^2 around ``node``."""
    grid = traj.grid
    if not (0 <= node < grid.n_nodes):
        raise IndexError(f"node {node} out of range")
    band = support_halfwidth(couplings.kernel, grid)
    f = band_values(couplings.kernel, grid, band)
    lo, hi = max(0, node - band), min(grid.n_nodes - 1, node + band)
    q = np.arange(lo, hi + 1)
    c = traj.values[q, mode]
    return float(np.sum(grid.trapezoid_weights[q] * f[np.abs(q - node)] * (c.real**2 + c.imag**2)))


def moving_average_all(traj: CoefficientTrajectory, couplings: Couplings) -> np.ndarray:
    """:func:`moving_average` at every node and mode, shape (n_nodes, n_modes)."""
    grid = traj.grid
    band = support_halfwidth(couplings.kernel, grid)
    f = band_values(couplings.kernel, grid, band)
    w = grid.trapezoid_weights
    mag2 = traj.values.real**2 + traj.values.imag**2
    N = grid.n_nodes
    out = np.zeros_like(mag2)
    for d in range(-band, band + 1):
        lo, hi = max(0, -d), min(N, N - d)
        if hi <= lo or f[abs(d)] == 0.0:
            continue
        out[lo:hi] += (w[lo + d : hi + d] * f[abs(d)])[:, None] * mag2[lo + d : hi + d]
    return out


def drift_probe(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings):
    """Drift integrand p_j(t) per outcome class and the bound 2 T int |p_j| dt.

    p_j sums |C_dot|^2 + (mu/B) d^2 |C|^2 + kappa d^2 <<|C|^2>> |C|^2 over the
    modes of class j, with kappa = 2 nu / B the nonlocal coefficient of the
    evolution equation. Returns ``(p, bound)`` with shapes (n_nodes, n_classes)
    and (n_classes,).
    """
    traj.check_spectrum(spec)
    C = traj.values
    cdot = time_derivative(traj)
    d2 = spec.delta_array() ** 2
    mag2 = C.real**2 + C.imag**2
    per_mode = cdot.real**2 + cdot.imag**2 + (couplings.mu / couplings.B) * d2 * mag2
    if couplings.nu != 0.0:
        per_mode = per_mode + nonlocal_coefficient(couplings) * d2 * moving_average_all(traj, couplings) * mag2
    per_j = per_mode.reshape(-1, spec.J, spec.K).sum(axis=2)
    p = np.stack([per_j[:, idx].sum(axis=1) for idx in spec.outcome_classes()], axis=1)
    w = traj.grid.trapezoid_weights
    bound = 2.0 * traj.grid.duration * (w @ np.abs(p))
    return p, bound


def phase_term(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> float:
    """Time average of sum_a Re{(2i/hbar) E_a conj(C_a) C_dot_a} over one trajectory."""
    C = traj.values
    cdot = time_derivative(traj)
    z = np.conj(C) * cdot
    per_node = (-2.0 / couplings.hbar) * (z.imag @ spec.energy_array())
    return float(traj.grid.trapezoid_weights @ per_node / traj.grid.duration)


def phase_term_average_check(trajectories, spec: ModeSpectrum, couplings: Couplings) -> float:
    """Ensemble mean of the per-realization phase-term time average."""
    trajectories = list(trajectories)
    if len(trajectories) < 1:
        raise ValueError("need at least one trajectory")
    vals = [phase_term(t, spec, couplings) for t in trajectories]
    return float(math.fsum(vals) / len(vals))


# ---------------------------------------------------------------- ensemble


def _realize(args):
    setup, index, T, phases = args
    spec, cp = setup.spec, setup.couplings
    grid = TimeGrid(setup.t_i, setup.t_i + T, setup.n_nodes)
    c0 = np.asarray(setup.initial_C, dtype=np.complex128) * np.exp(1j * phases)
    row = {"index": index, "T": float(T), "converged": False, "dominant_j": None, "purity": None,
           "agreement_residual": None, "collapsed": False}
    try:
        res = solve_bvp(c0, spec, cp, grid, setup.solve)
    except (NumericalBlowupError, FloatingPointError) as exc:
        row["error"] = str(exc)
        return row, None, None, None
    row["converged"] = res.converged
    row["residual"] = res.final_residual_norm
    row["iterations"] = res.iterations
    if not res.converged:
        return row, None, None, None
    try:
        m = collapse_metrics(res.trajectory, spec)
    except DegenerateStateError as exc:
        row["error"] = str(exc)
        return row, None, None, None
    row.update(
        dominant_j=m.dominant_j,
        purity=m.purity,
        agreement_residual=m.agreement_residual,
        final_weight=m.final_weight,
        collapsed=m.collapsed(setup.purity_min, setup.agreement_max),
    )
    _, bound = drift_probe(res.trajectory, spec, cp)
    phase = phase_term(res.trajectory, spec, cp)
    traj = res.trajectory.values if setup.retain_trajectories else None
    return row, bound, phase, traj


def initial_class_weights(spec: ModeSpectrum, initial_C) -> np.ndarray:
    c = np.asarray(initial_C, dtype=np.complex128).reshape(spec.J, spec.K)
    P = np.sum(c.real**2 + c.imag**2, axis=1)
    cw = np.array([P[idx].sum() for idx in spec.outcome_classes()])
    return cw / cw.sum()


def chi_square(counts, weights):
    """Pearson statistic sum (n_j - n w_j)^2 / (n w_j), dof = classes - 1, and its p-value."""
    counts = np.asarray(counts, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = counts.sum()
    dof = counts.size - 1
    if n == 0:
        return None, dof, None
    if dof == 0:
        return 0.0, 0, 1.0
    expected = n * weights
    pos = expected > 0
    if np.any(counts[~pos] > 0):
        return math.inf, dof, 0.0
    if pos.sum() == 1:
        return 0.0, dof, 1.0
    stat = float(stats.chisquare(counts[pos], expected[pos]).statistic)
    # zero-weight classes with zero counts still count toward the degrees of freedom
    return stat, dof, float(stats.chi2.sf(stat, dof))


def run_ensemble(setup: EnsembleSetup, distribution: HiddenVariableDistribution, n: int, seed: int, threads: int = 1) -> EnsembleReport:
    """Solve ``n`` realizations with durations drawn from ``distribution``.

    Realizations run in a process pool when ``threads > 1``; results are
    aggregated in realization order so the report does not depend on
    scheduling.
    """
    if int(n) != n or n < 1:
        raise ConfigError("ensemble size must be an integer >= 1")
    spec = setup.spec
    rng = np.random.default_rng(seed)
    Ts, phases = distribution.sample(n, rng, spec.n_modes)
    jobs = [(setup, i, float(Ts[i]), phases[i]) for i in range(n)]
    if threads > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_realize, jobs, chunksize=max(1, n // (4 * threads))))
    else:
        results = [_realize(j) for j in jobs]

    rows = [r[0] for r in results]
    n_diverged = sum(1 for r in rows if not r["converged"])
    if n_diverged == n:
        raise EnsembleError(f"all {n} realizations diverged", diagnostics=rows)

    classes = spec.outcome_classes()
    n_cls = len(classes)
    counts = np.zeros(n_cls, dtype=np.int64)
    for r in rows:
        if r["collapsed"]:
            counts[r["dominant_j"]] += 1
    n_collapsed = int(counts.sum())
    weights = initial_class_weights(spec, setup.initial_C)
    freqs = (counts / n_collapsed).tolist() if n_collapsed else []
    max_dev = float(np.max(np.abs(np.asarray(freqs) - weights))) if n_collapsed else None
    chi2, dof, pval = chi_square(counts, weights) if n_collapsed else (None, n_cls - 1, None)

    bounds = np.array([r[1] for r in results if r[1] is not None])
    phase_vals = [r[2] for r in results if r[2] is not None]
    cp = setup.couplings
    gap = min_energy_gap(spec)
    report = EnsembleReport(
        n_realizations=n,
        per_realization=rows,
        frequencies=freqs,
        initial_weights=weights.tolist(),
        max_abs_deviation=max_dev,
        chi_square=chi2,
        chi_square_dof=dof,
        chi_square_p=pval,
        n_collapsed=n_collapsed,
        n_uncollapsed=n - n_diverged - n_collapsed,
        n_diverged=n_diverged,
        class_labels=[float(spec.sigma1[idx[0]]) for idx in classes],
        drift_bound_mean=bounds.mean(axis=0).tolist() if bounds.size else [],
        drift_bound_max=bounds.max(axis=0).tolist() if bounds.size else [],
        phase_term_average=float(math.fsum(phase_vals) / len(phase_vals)) if phase_vals else None,
        window_ratio=2.0 * distribution.T_halfwidth * gap / cp.hbar if math.isfinite(gap) else math.inf,
        slow_variation_epsilon=slow_variation_epsilon(cp.kernel, gap, cp.hbar),
        seed=int(seed),
        trajectories=[r[3] for r in results] if setup.retain_trajectories else None,
    )
    return report
