"""Evolution-equation residuals and the two-point boundary-value solve.

Discrete unknowns are C[n, a] on the uniform grid (flat mode index a = j*K + k).
For the unconstrained variant the system has one complex row per unknown node:

=========  ===============================================================
node 0     C(t_i) = prepared coefficients (eliminated, not an unknown)
node 1     one-sided second-order C_dot(t_i) = 0
2..N-2     evolution equation
N-1        natural boundary condition dS/d(conj C[N-1]) = 0  (``terminal="natural"``)
           or one-sided C_dot(t_f) = 0  (``terminal="stationary"``)
=========  ===============================================================

The evolution equation (unconstrained variant) is

    C'' = (2i/hbar) E C' + (mu/B) delta^2 C + (2 nu / B) Ctilde

where the factor 2 on the nonlocal term is the one produced by varying the
double integral in the action (the nonlocal term appears at both times).
With central differences this row is exactly -1/(B dt) times the gradient of
the discrete action with respect to conj C[n].

The constrained variant adds one real multiplier per equation row and one
weight row sum |C[n]|^2 = 1 per unknown node. Its start row is the evolution
equation at t_i with the mirror node C[-1] = C[1] (a centred zero slope), so
the discrete weight is pinned at every node.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import action
from ._operator import nonlocal_operator
from .errors import ConfigError, NumericalBlowupError
from .model import Couplings, ModeSpectrum, TimeGrid, warn_if_degenerate
from .trajectory import CoefficientTrajectory, time_derivative

log = logging.getLogger(__name__)

VARIANTS = ("unconstrained", "constrained")
STRATEGIES = ("stationarity_newton", "picard_relaxation")
GUESSES = ("constant_hold", "phase_rotating")
TERMINALS = ("natural", "stationary")

# real unknowns below which the Newton system is factored densely
DENSE_LIMIT = 200


@dataclass(frozen=True)
class SolveConfig:
    variant: str = "unconstrained"
    strategy: str = "stationarity_newton"
    max_iters: int = 50
    residual_tol: float = 1e-9
    continuation_steps_nu: int = 4
    initial_guess: str = "constant_hold"
    terminal: str = "natural"
    relaxation: float = 1.0
    max_step_halvings: int = 6

    def __post_init__(self):
        for name, allowed in (
            ("variant", VARIANTS),
            ("strategy", STRATEGIES),
            ("initial_guess", GUESSES),
            ("terminal", TERMINALS),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"solve.{name} must be one of {allowed}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("solve.max_iters must be an integer >= 1")
        if not (self.residual_tol > 0):
            raise ConfigError("solve.residual_tol must be > 0")
        if int(self.continuation_steps_nu) != self.continuation_steps_nu or self.continuation_steps_nu < 1:
            raise ConfigError("solve.continuation_steps_nu must be an integer >= 1")
        if int(self.max_step_halvings) != self.max_step_halvings or self.max_step_halvings < 0:
            raise ConfigError("solve.max_step_halvings must be an integer >= 0")
        if not (0 < self.relaxation <= 1):
            raise ConfigError("solve.relaxation must lie in (0, 1]")
        if self.variant == "constrained" and self.terminal != "natural":
            raise ConfigError("the constrained variant requires terminal='natural'")


@dataclass
class SolveResult:
    trajectory: CoefficientTrajectory
    converged: bool
    final_residual_norm: float
    iterations: int
    nbc_residual: float
    lambda_trace: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- pieces


def nonlocal_coefficient(couplings: Couplings) -> float:
    return 2.0 * couplings.nu / couplings.B


def c_tilde(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings, node: int | None = None, dense: bool = False):
    """Nonlocal term Ctilde at one node (mode vector) or all nodes (n_nodes, n_modes)."""
    traj.check_spectrum(spec)
    op = nonlocal_operator(spec, couplings, traj.grid, dense=dense)
    ct = op.c_tilde(traj.values)
    return ct if node is None else ct[node]


def _second_diff(C, dt):
    return (C[2:] - 2.0 * C[1:-1] + C[:-2]) / (dt * dt)


def _central_diff(C, dt):
    return (C[2:] - C[:-2]) / (2.0 * dt)


def _interior_rows(C, op, couplings, ct=None):
    """Unconstrained evolution residual at nodes 1..N-2."""
    dt = op.grid.dt
    R = _second_diff(C, dt)
    R -= (2j / couplings.hbar) * op.energy * _central_diff(C, dt)
    if couplings.mu != 0.0:
        R -= (couplings.mu / couplings.B) * op.delta**2 * C[1:-1]
    if couplings.nu != 0.0:
        if ct is None:
            ct = op.c_tilde(C)
        R -= nonlocal_coefficient(couplings) * ct[1:-1]
    return R


def _kinetic_sq(C, dt):
    """|C_dot|^2 per node and mode.

    Interior nodes use the mean of the two one-sided squared differences, which
    makes the constrained equation conserve the discrete total weight exactly
    (up to the start-up error); endpoints use the one-sided second-order slope.
    """
    out = np.empty(C.shape, dtype=float)
    fwd = np.diff(C, axis=0)
    f2 = fwd.real**2 + fwd.imag**2
    out[1:-1] = (f2[1:] + f2[:-1]) / (2.0 * dt * dt)
    ends = _end_slopes(C, dt)
    out[0] = np.abs(ends[0]) ** 2
    out[-1] = np.abs(ends[1]) ** 2
    return out


def _end_slopes(C, dt):
    start = (3.0 * (C[1] - C[0]) - (C[2] - C[1])) / (2.0 * dt)
    end = (3.0 * (C[-1] - C[-2]) - (C[-2] - C[-3])) / (2.0 * dt)
    return start, end


def _multiplier_sum(C, op, couplings, ct=None):
    """S(n) = sum_a (|C_dot|^2 + mu/B d^2 |C|^2 + Re{2i/hbar E C* C_dot + 2nu/B C* Ctilde}).

    Equals -2 T lambda / B.
    """
    dt = op.grid.dt
    cdot = time_derivative(CoefficientTrajectory(op.grid, C)) if C.shape[0] >= 3 else None
    mag2 = C.real**2 + C.imag**2
    S = _kinetic_sq(C, dt).sum(axis=1)
    S += (couplings.mu / couplings.B) * mag2 @ (op.delta**2)
    S += -(2.0 / couplings.hbar) * np.imag(np.conj(C) * cdot) @ op.energy
    if couplings.nu != 0.0:
        if ct is None:
            ct = op.c_tilde(C)
        S += nonlocal_coefficient(couplings) * np.sum(np.conj(C) * ct, axis=1).real
    return S


def ide_residual_unconstrained(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> np.ndarray:
    """Residual C'' - RHS at interior nodes 1..N-2, shape (n_nodes-2, n_modes)."""
    traj.check_spectrum(spec)
    op = nonlocal_operator(spec, couplings, traj.grid)
    return _interior_rows(traj.values, op, couplings)


def ide_residual_constrained(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> np.ndarray:
    """Residual of the normalization-constrained equation at nodes 1..N-2.

    The multiplier is eliminated: residual = unconstrained residual + S(n) C(n)
    with S(n) = -2 T lambda(n) / B.
    """
    traj.check_spectrum(spec)
    C = traj.values
    op = nonlocal_operator(spec, couplings, traj.grid)
    ct = op.c_tilde(C) if couplings.nu != 0.0 else None
    S = _multiplier_sum(C, op, couplings, ct)
    return _interior_rows(C, op, couplings, ct) + S[1:-1, None] * C[1:-1]


def lambda_of_t(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings, node: int | None = None):
    """Lagrange multiplier lambda(t) (real), at one node or all nodes."""
    traj.check_spectrum(spec)
    op = nonlocal_operator(spec, couplings, traj.grid)
    S = _multiplier_sum(traj.values, op, couplings)
    lam = -couplings.B * S / (2.0 * traj.grid.duration)
    return lam if node is None else float(lam[node])


def lambda_imaginary_residue(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> float:
    """max_n |Im sum_a conj(C_a) Ctilde_a|: the only multiplier term whose reality is not manifest.

    It vanishes by the conjugate-pair symmetry of the nonlocal integrand.
    """
    if couplings.nu == 0.0:
        return 0.0
    C = traj.values
    ct = c_tilde(traj, spec, couplings)
    return float(np.max(np.abs(np.sum(np.conj(C) * ct, axis=1).imag)))


def nbc_residual(traj: CoefficientTrajectory, spec: ModeSpectrum, couplings: Couplings) -> np.ndarray:
    """dS/d(conj C) at the final node: the discrete natural boundary condition."""
    return action.action_gradient(traj, spec, couplings)[-1]


def start_slope(traj: CoefficientTrajectory) -> np.ndarray:
    return _end_slopes(traj.values, traj.grid.dt)[0]


def end_slope(traj: CoefficientTrajectory) -> np.ndarray:
    return _end_slopes(traj.values, traj.grid.dt)[1]


# ---------------------------------------------------------------- system


class _System:
    """Residual and real Jacobian of the boundary-value system at fixed couplings.

    Real unknown vector ``u = [Re C[1:], Im C[1:], s]``. The multipliers
    ``s_n = -2 T lambda_n / B`` exist only for the constrained variant, which
    also appends the weight rows ``W_n - 1`` for nodes 1..N-1 and evaluates
    its start row as the evolution equation at t_i with a mirrored node
    C[-1] = C[1] (a centred C_dot(t_i) = 0).
    """

    def __init__(self, c0, spec, couplings, grid, config):
        self.c0 = c0
        self.cp = couplings
        self.grid = grid
        self.op = nonlocal_operator(spec, couplings, grid)
        self.N = N = grid.n_nodes
        self.M = spec.n_modes
        self.constrained = config.variant == "constrained"
        self.natural = config.terminal == "natural"
        if self.constrained:
            self.row_nodes = np.r_[0, 2:N]
            self.mult_nodes = self.row_nodes
            self.s_coef = np.ones(self.mult_nodes.size)
            self.s_coef[-1] = -0.5 * grid.dt * couplings.B
        else:
            self.row_nodes = np.arange(1, N)
            self.mult_nodes = np.arange(0)
            self.s_coef = np.zeros(0)
        self.n_c = (N - 1) * self.M
        self.n_s = self.mult_nodes.size

    # packing
    def pack(self, C, s):
        return np.concatenate([C[1:].real.ravel(), C[1:].imag.ravel(), s])

    def unpack(self, u):
        C = np.empty((self.N, self.M), dtype=np.complex128)
        C[0] = self.c0
        C[1:] = (u[: self.n_c] + 1j * u[self.n_c : 2 * self.n_c]).reshape(self.N - 1, self.M)
        return C, u[2 * self.n_c :]

    def initial_multipliers(self, C):
        if not self.constrained:
            return np.zeros(0)
        S = _multiplier_sum(C, self.op, self.cp)
        s = S[self.mult_nodes].copy()
        s[-1] = 0.0
        return s

    def node_multipliers(self, s):
        full = np.zeros(self.N)
        full[self.mult_nodes] = s
        return full

    # residual
    def complex_rows(self, C, s, integ=None):
        op, cp, dt = self.op, self.cp, self.grid.dt
        ct = op.c_tilde(C, integ) if cp.nu != 0.0 else None
        F = np.zeros((self.N, self.M), dtype=np.complex128)
        F[1:-1] = _interior_rows(C, op, cp, ct)
        if self.constrained:
            F[0] = 2.0 * (C[1] - C[0]) / dt**2 - (cp.mu / cp.B) * op.delta**2 * C[0]
            if ct is not None:
                F[0] -= nonlocal_coefficient(cp) * ct[0]
        else:
            F[1] = _end_slopes(C, dt)[0]
        F[-1] = self._nbc(C, ct) if self.natural else _end_slopes(C, dt)[1]
        if self.constrained:
            F[self.mult_nodes] += (self.s_coef * s)[:, None] * C[self.mult_nodes]
        return F[self.row_nodes]

    def _nbc(self, C, ct):
        cp, dt = self.cp, self.grid.dt
        E = self.op.energy
        g = (cp.B / dt) * (C[-1] - C[-2]) - (1j * cp.B / cp.hbar) * E * C[-2]
        if cp.mu != 0.0:
            g = g + 0.5 * dt * cp.mu * self.op.delta**2 * C[-1]
        if ct is not None:
            g = g + dt * cp.nu * ct[-1]
        return g

    def residual(self, u, integ=None):
        C, s = self.unpack(u)
        Fc = self.complex_rows(C, s, integ)
        parts = [Fc.real.ravel(), Fc.imag.ravel()]
        if self.constrained:
            parts.append(np.sum(C[1:].real ** 2 + C[1:].imag ** 2, axis=1) - 1.0)
        return np.concatenate(parts)

    def norms(self, u):
        C, s = self.unpack(u)
        Fc = np.abs(self.complex_rows(C, s))
        out = {
            "start": float(np.max(Fc[0])),
            "interior": float(np.max(Fc[1:-1])) if self.N > 3 else 0.0,
            "terminal": float(np.max(Fc[-1])),
        }
        if self.constrained:
            out["weight"] = float(np.max(np.abs(np.sum(np.abs(C) ** 2, axis=1) - 1.0)))
        return out

    # Jacobian
    def jacobian(self, u, integ=None):
        """Real Jacobian of :meth:`residual`; ``integ`` freezes the nonlocal integrals."""
        C, s = self.unpack(u)
        N, M = self.N, self.M
        op, cp, dt = self.op, self.cp, self.grid.dt
        B, hbar = cp.B, cp.hbar
        E, d2 = op.energy, op.delta**2
        modes = np.arange(M)
        rows, cols, vals = [], [], []
        brows, bcols, bvals = [], [], []

        def put(node_r, node_c, v):
            rows.append(node_r * M + modes)
            cols.append(node_c * M + modes)
            vals.append(np.broadcast_to(np.asarray(v, dtype=np.complex128), (M,)))

        if self.constrained:
            put(0, 1, 2.0 / dt**2)
        else:
            put(1, 1, 2.0 / dt)
            put(1, 2, -0.5 / dt)
        up = 1.0 / dt**2 - 1j * E / (hbar * dt)
        mid = -2.0 / dt**2 - (cp.mu / B) * d2
        lo = 1.0 / dt**2 + 1j * E / (hbar * dt)
        for n in range(2, N - 1):
            put(n, n + 1, up)
            put(n, n, mid)
            put(n, n - 1, lo)
        last = N - 1
        if self.natural:
            put(last, last, B / dt + 0.5 * dt * cp.mu * d2)
            put(last, last - 1, -B / dt - 1j * B * E / hbar)
        else:
            put(last, last, 1.5 / dt)
            put(last, last - 1, -2.0 / dt)
            put(last, last - 2, 0.5 / dt)
        if self.constrained:
            sn = self.s_coef * s
            for e, v in zip(self.mult_nodes, sn):
                if e > 0:
                    put(e, e, v)

        if cp.nu != 0.0:
            coef = np.zeros(N)
            coef[2 : N - 1] = -nonlocal_coefficient(cp)
            if self.constrained:
                coef[0] = -nonlocal_coefficient(cp)
            if self.natural:
                coef[last] = dt * cp.nu
            frozen = integ is not None
            if not frozen:
                integ = op.integrals(C)
            self._local_nonlocal(coef, integ, rows, cols, vals)
            if not frozen:
                anl, bnl = op.jacobian_blocks(C)
                self._offnode_nonlocal(coef, anl, bnl, rows, cols, vals, brows, bcols, bvals)

        shape = (N * M, N * M)
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()
        if brows:
            Bm = sp.coo_matrix(
                (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))), shape=shape
            ).tocsr()
        else:
            Bm = sp.csr_matrix(shape, dtype=np.complex128)
        ridx = (self.row_nodes[:, None] * M + modes).ravel()
        A = A[ridx][:, M:]
        Bm = Bm[ridx][:, M:]
        P = A + Bm
        Q = A - Bm
        blocks = [[P.real, -Q.imag], [P.imag, Q.real]]
        if not self.constrained:
            return sp.bmat(blocks, format="csc")
        # multiplier columns: d(row e)/d s_e = coef_e * C[e]
        k = np.arange(self.n_s)
        srow = (k[:, None] * M + modes).ravel()
        scol = np.repeat(k, M)
        cm = (self.s_coef[:, None] * C[self.mult_nodes]).ravel()
        Sre = sp.coo_matrix((cm.real, (srow, scol)), shape=(self.n_c, self.n_s))
        Sim = sp.coo_matrix((cm.imag, (srow, scol)), shape=(self.n_c, self.n_s))
        # weight rows: d W_n / d(Re, Im) C[n] = 2 (Re, Im) C[n]
        wrow = np.repeat(np.arange(N - 1), M)
        wcol = np.arange(self.n_c)
        Wre = sp.coo_matrix((2.0 * C[1:].real.ravel(), (wrow, wcol)), shape=(N - 1, self.n_c))
        Wim = sp.coo_matrix((2.0 * C[1:].imag.ravel(), (wrow, wcol)), shape=(N - 1, self.n_c))
        return sp.bmat(
            [blocks[0] + [Sre], blocks[1] + [Sim], [Wre, Wim, None]],
            format="csc",
        )

    def _local_nonlocal(self, coef, integ, rows, cols, vals):
        # coef_n G_ab I[n, a, b] at column (n, b)
        M = self.M
        nodes = np.nonzero(coef)[0]
        a = np.arange(M)
        loc = coef[nodes, None, None] * self.op.G[None] * integ[nodes]
        rows.append(np.repeat(nodes * M, M * M) + np.tile(np.repeat(a, M), nodes.size))
        cols.append(np.repeat(nodes * M, M * M) + np.tile(np.tile(a, M), nodes.size))
        vals.append(loc.ravel())

    def _offnode_nonlocal(self, coef, anl, bnl, rows, cols, vals, brows, bcols, bvals):
        N, M, band = self.N, self.M, self.op.band
        nodes = np.nonzero(coef)[0]
        a = np.arange(M)
        offs = np.arange(-band, band + 1)
        n_grid, d_grid = np.meshgrid(nodes, offs, indexing="ij")
        q = n_grid + d_grid
        ok = (q >= 0) & (q < N)
        nn, dd, qq = n_grid[ok], d_grid[ok] + band, q[ok]
        c = coef[nn]
        rows.append((nn[:, None] * M + a).ravel())
        cols.append((qq[:, None] * M + a).ravel())
        vals.append((anl[nn, dd] * c[:, None]).ravel())
        brows.append(np.repeat(nn[:, None] * M + a, M, axis=1).ravel())
        bcols.append(np.tile(qq[:, None] * M + a, (1, M)).ravel())
        bvals.append((bnl[nn, dd] * c[:, None, None]).ravel())


# ---------------------------------------------------------------- driver


def initial_guess(c0, spec: ModeSpectrum, couplings: Couplings, grid: TimeGrid, kind: str) -> np.ndarray:
    c0 = np.asarray(c0, dtype=np.complex128)
    if kind == "constant_hold":
        return np.tile(c0, (grid.n_nodes, 1))
    if kind == "phase_rotating":
        t = grid.times - grid.t_i
        return c0[None, :] * np.exp(2j * np.outer(t, spec.energy_array()) / couplings.hbar)
    raise ConfigError(f"unknown initial guess {kind!r}")


def _solve_linear(J, rhs):
    if J.shape[0] <= DENSE_LIMIT:
        return scipy.linalg.solve(J.toarray(), rhs, check_finite=False)
    return spla.spsolve(J, rhs)


def _max_abs(F) -> float:
    return float(np.max(np.abs(F))) if F.size else 0.0


def _newton(system: _System, u, tol, max_iters, integ=None):
    """Damped Newton on ``system.residual``; returns (u, F, iterations, history)."""
    F = system.residual(u, integ)
    norm = _max_abs(F)
    history = [norm]
    it = 0
    while norm > tol and it < max_iters:
        it += 1
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                warnings.simplefilter("ignore", spla.MatrixRankWarning)
                step = _solve_linear(system.jacobian(u, integ), -F)
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            log.debug("linear solve failed: %s", exc)
            break
        if not np.all(np.isfinite(step)):
            break
        merit = np.linalg.norm(F)
        alpha = 1.0
        best = None
        for _ in range(12):
            trial = u + alpha * step
            Ft = system.residual(trial, integ)
            if np.all(np.isfinite(Ft)):
                mt = np.linalg.norm(Ft)
                if best is None or mt < best[0]:
                    best = (mt, trial, Ft)
                if mt <= (1.0 - 1e-4 * alpha) * merit:
                    break
            alpha *= 0.5
        if best is None or best[0] >= merit:
            break
        _, u, F = best
        norm = _max_abs(F)
        history.append(norm)
        if len(history) > 8 and norm > 0.999 * history[-8]:
            break  # stagnated
    return u, F, it, history


def _picard(system: _System, u, tol, max_iters, relaxation):
    """Sweeps that freeze the nonlocal integrals and solve the remaining local problem."""
    F = system.residual(u)
    norm = _max_abs(F)
    history = [norm]
    it = 0
    while norm > tol and it < max_iters:
        it += 1
        C, _ = system.unpack(u)
        integ = system.op.integrals(C) if system.cp.nu != 0.0 else None
        new, _, _, _ = _newton(system, u, 0.1 * tol, 30, integ)
        u = (1.0 - relaxation) * u + relaxation * new
        F = system.residual(u)
        norm = _max_abs(F)
        if not math.isfinite(norm):
            raise NumericalBlowupError("residual became non-finite during Picard sweeps")
        history.append(norm)
    return u, F, it, history


def solve_bvp(initial_C, spec: ModeSpectrum, couplings: Couplings, grid: TimeGrid, config: SolveConfig | None = None) -> SolveResult:
    """Solve for the trajectory from the fixed preparation at t_i to the terminal condition at t_f.

    mu and nu are ramped together from 0 to their targets over
    ``config.continuation_steps_nu`` steps, each step starting from the
    previous solution. Non-convergence returns ``converged=False`` with
    diagnostics rather than raising.
    """
    config = config or SolveConfig()
    c0 = np.asarray(initial_C, dtype=np.complex128).ravel()
    if c0.size != spec.n_modes:
        raise ConfigError(f"initial state has {c0.size} entries, spectrum needs {spec.n_modes}")
    if not np.all(np.isfinite(c0)):
        raise ConfigError("initial state contains non-finite entries")
    weight = float(np.sum(np.abs(c0) ** 2))
    if abs(weight - 1.0) > 1e-10:
        raise ConfigError(f"initial state must be normalized (sum |C|^2 = {weight!r})")
    warn_if_degenerate(spec)

    C = initial_guess(c0, spec, couplings, grid, config.initial_guess)
    interacting = couplings.mu != 0.0 or couplings.nu != 0.0
    nominal = 1.0 / (config.continuation_steps_nu if interacting else 1)
    step = nominal
    min_step = nominal * 0.5 ** config.max_step_halvings
    done = 0.0
    total_iters = 0
    stages = []
    u = None
    while True:
        target = 1.0 if done + step >= 1.0 - 1e-12 else done + step
        cp = couplings.scaled(target) if target != 1.0 else couplings
        system = _System(c0, spec, cp, grid, config)
        start = system.pack(C, system.initial_multipliers(C)) if u is None else u
        if config.strategy == "stationarity_newton":
            trial, F, it, hist = _newton(system, start, config.residual_tol, config.max_iters)
        else:
            trial, F, it, hist = _picard(system, start, config.residual_tol, config.max_iters, config.relaxation)
        if not np.all(np.isfinite(trial)):
            raise NumericalBlowupError("non-finite coefficients during solve")
        total_iters += it
        ok = hist[-1] <= config.residual_tol
        stages.append({"scale": target, "iterations": it, "residual": hist[-1], "accepted": bool(ok)})
        log.debug("continuation to %.4g: %d iterations, residual %.3e", target, it, hist[-1])
        if ok:
            u, done = trial, target
            if done >= 1.0:
                break
            if it <= 4:
                step = min(2.0 * step, nominal)
            continue
        if step <= min_step * (1.0 + 1e-12):
            u = trial
            if target != 1.0:
                # report the residual against the requested couplings
                system = _System(c0, spec, couplings, grid, config)
                F = system.residual(u)
            break
        step *= 0.5

    C, s = system.unpack(u)
    traj = CoefficientTrajectory(grid, C)
    norms = system.norms(u)
    final = _max_abs(F)
    op = system.op
    start_eq = _interior_rows(C, op, couplings)[0]
    weights = np.sum(np.abs(C) ** 2, axis=1)
    diagnostics = {
        "residual_components": norms,
        "node1_equation_residual": float(np.max(np.abs(start_eq))),
        "cdot_ti_norm": float(np.linalg.norm(start_slope(traj))),
        "cdot_tf_norm": float(np.linalg.norm(end_slope(traj))),
        "final_weight": float(weights[-1]),
        "max_weight_deviation": float(np.max(np.abs(weights - 1.0))),
        "continuation": stages,
        "band": int(op.band),
    }
    lam = None
    if system.constrained:
        lam = lambda_of_t(traj, spec, couplings)
        solved = -couplings.B * system.node_multipliers(s) / (2.0 * grid.duration)
        diagnostics["solved_multiplier"] = solved[system.mult_nodes].tolist()
        diagnostics["lambda_imag_residue"] = lambda_imaginary_residue(traj, spec, couplings)
    converged = bool(final <= config.residual_tol)
    if not converged:
        diagnostics["message"] = (
            f"residual {final:.3e} above tolerance {config.residual_tol:.1e} after {total_iters} iterations"
        )
    return SolveResult(
        trajectory=traj,
        converged=converged,
        final_residual_norm=final,
        iterations=total_iters,
        nbc_residual=float(np.linalg.norm(nbc_residual(traj, spec, couplings))),
        lambda_trace=lam,
        diagnostics=diagnostics,
    )
