"""Two-time variational calculus for scalar functionals.

A functional is S[phi] = int int dt1 dt2 F(t1, t2, phi(t1), phi'(t1), phi(t2), phi'(t2))
over [a, b] x [a, b]. Partial derivatives of F are supplied by the caller and
every callable must broadcast over numpy arrays. Integrals over the second
time use the trapezoid rule and phi' uses second-order finite differences.

The module is deliberately independent of the coefficient solver so it can
cross-check the same discretization choices on problems with closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import TimeGrid
from .trajectory import _ddt


@dataclass(frozen=True)
class TwoTimeFunctional:
    F: Callable
    dF_dphi1: Callable
    dF_dv1: Callable
    dF_dphi2: Callable
    dF_dv2: Callable
    symmetric: bool = False

    def symmetry_defect(self, n_samples: int = 256, seed: int = 0) -> float:
        """max |F(t1,t2,a,b,c,d) - F(t2,t1,c,d,a,b)| on random samples."""
        x = np.random.default_rng(seed).normal(size=(6, n_samples))
        t1, t2, p1, v1, p2, v2 = x
        return float(np.max(np.abs(self.F(t1, t2, p1, v1, p2, v2) - self.F(t2, t1, p2, v2, p1, v1))))


@dataclass(frozen=True)
class Constraint:
    """Pointwise constraint K(t, phi) = 0 and its derivative dK/dphi."""

    K: Callable
    dK_dphi: Callable


def _state(phi, grid: TimeGrid):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (grid.n_nodes,):
        raise ValueError(f"phi must have shape ({grid.n_nodes},)")
    return phi, _ddt(phi, grid.dt)


def _check_interior(node: int, grid: TimeGrid) -> None:
    if not (1 <= node <= grid.n_nodes - 2):
        raise IndexError(f"node {node} is not interior")


def _trap_first(fn, grid, phi, v, m):
    """int dt2 fn(t_m, t2, phi_m, v_m, phi(t2), v(t2))."""
    t = grid.times
    vals = fn(t[m], t, phi[m], v[m], phi, v)
    return float(np.dot(grid.trapezoid_weights, np.broadcast_to(vals, t.shape)))


def _trap_second(fn, grid, phi, v, m):
    """int dt1 fn(t1, t_m, phi(t1), v(t1), phi_m, v_m)."""
    t = grid.times
    vals = fn(t, t[m], phi, v, phi[m], v[m])
    return float(np.dot(grid.trapezoid_weights, np.broadcast_to(vals, t.shape)))


def necessary_condition_residual(func: TwoTimeFunctional, phi, grid: TimeGrid, node: int, _sign: float = 1.0) -> float:
    """int dt2 [dF/dphi1 - d/dt1 dF/dphi1'] at t1 = t_node (central difference in t1)."""
    _check_interior(node, grid)
    phi, v = _state(phi, grid)
    direct = _trap_first(func.dF_dphi1, grid, phi, v, node)
    up = _trap_first(func.dF_dv1, grid, phi, v, node + 1)
    down = _trap_first(func.dF_dv1, grid, phi, v, node - 1)
    return direct - _sign * (up - down) / (2.0 * grid.dt)


def necessary_2(func: TwoTimeFunctional, phi, grid: TimeGrid, node: int) -> float:
    """The companion condition obtained by varying phi(t2)."""
    _check_interior(node, grid)
    phi, v = _state(phi, grid)
    direct = _trap_second(func.dF_dphi2, grid, phi, v, node)
    up = _trap_second(func.dF_dv2, grid, phi, v, node + 1)
    down = _trap_second(func.dF_dv2, grid, phi, v, node - 1)
    return direct - (up - down) / (2.0 * grid.dt)


def nbc_value(func: TwoTimeFunctional, phi, grid: TimeGrid) -> float:
    """int dt2 dF/dphi1' evaluated at t1 = b."""
    phi, v = _state(phi, grid)
    return _trap_first(func.dF_dv1, grid, phi, v, grid.n_nodes - 1)


def lagrange_condition_residual(func: TwoTimeFunctional, phi, lam, constraint: Constraint, grid: TimeGrid, node: int) -> float:
    """(b - a) lambda(t1) dK/dphi + the plain necessary-condition residual."""
    phi_arr = np.asarray(phi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    t = grid.times[node]
    reaction = grid.duration * lam[node] * float(constraint.dK_dphi(t, phi_arr[node]))
    return reaction + necessary_condition_residual(func, phi_arr, grid, node)


def residual_vector(func: TwoTimeFunctional, phi, grid: TimeGrid, _sign: float = 1.0) -> np.ndarray:
    return np.array([necessary_condition_residual(func, phi, grid, n, _sign) for n in range(1, grid.n_nodes - 1)])


def discrete_action(func: TwoTimeFunctional, phi, grid: TimeGrid) -> float:
    """Tensor-trapezoid value of the double integral."""
    phi, v = _state(phi, grid)
    w = grid.trapezoid_weights
    t = grid.times
    vals = func.F(t[:, None], t[None, :], phi[:, None], v[:, None], phi[None, :], v[None, :])
    return float(w @ np.broadcast_to(vals, (t.size, t.size)) @ w)


def solve_free_end(func: TwoTimeFunctional, phi_a: float, grid: TimeGrid, guess=None, _sign: float = 1.0) -> np.ndarray:
    """Collocate the necessary conditions at interior nodes and the NBC at b, with phi(a) fixed.

    Uses Newton with a forward-difference Jacobian; a quadratic functional
    makes the rows affine so one step suffices up to rounding.
    """
    n = grid.n_nodes
    phi = np.full(n, float(phi_a)) if guess is None else np.asarray(guess, dtype=float).copy()
    phi[0] = phi_a

    def rows(x):
        full = np.concatenate([[phi_a], x])
        return np.concatenate([residual_vector(func, full, grid, _sign), [nbc_value(func, full, grid)]])

    x = phi[1:].copy()
    for _ in range(20):
        r = rows(x)
        if np.max(np.abs(r)) < 1e-13 * max(1.0, np.max(np.abs(x))):
            break
        h = 1e-6 * max(1.0, np.max(np.abs(x)))
        J = np.empty((x.size, x.size))
        for k in range(x.size):
            e = x.copy()
            e[k] += h
            J[:, k] = (rows(e) - r) / h
        step = np.linalg.solve(J, -r)
        x = x + step
        if np.max(np.abs(step)) < 1e-14 * max(1.0, np.max(np.abs(x))):
            break
    return np.concatenate([[phi_a], x])


# ---------------------------------------------------------------- test functionals


def harmonic(omega: float, scale: float = 1.0) -> TwoTimeFunctional:
    """F = scale * (phi1'^2 - omega^2 phi1^2) / 2, independent of the second time."""
    zero = lambda t1, t2, p1, v1, p2, v2: 0.0 * p2  # noqa: E731
    return TwoTimeFunctional(
        F=lambda t1, t2, p1, v1, p2, v2: 0.5 * scale * (v1 * v1 - omega**2 * p1 * p1) + 0.0 * p2,
        dF_dphi1=lambda t1, t2, p1, v1, p2, v2: -scale * omega**2 * p1 + 0.0 * p2,
        dF_dv1=lambda t1, t2, p1, v1, p2, v2: scale * v1 + 0.0 * p2,
        dF_dphi2=zero,
        dF_dv2=zero,
    )


def factored(omega: float) -> tuple[TwoTimeFunctional, Callable, Callable]:
    """F = G(phi1, phi1') * H(phi2) with G harmonic and H = 1 + phi2^2.

    Returns the functional plus (dG/dphi, dG/dphi') for the single-time residual.
    """

    def G(p, v):
        return 0.5 * (v * v - omega**2 * p * p)

    def H(p):
        return 1.0 + p * p

    func = TwoTimeFunctional(
        F=lambda t1, t2, p1, v1, p2, v2: G(p1, v1) * H(p2),
        dF_dphi1=lambda t1, t2, p1, v1, p2, v2: -omega**2 * p1 * H(p2),
        dF_dv1=lambda t1, t2, p1, v1, p2, v2: v1 * H(p2),
        dF_dphi2=lambda t1, t2, p1, v1, p2, v2: G(p1, v1) * 2.0 * p2,
        dF_dv2=lambda t1, t2, p1, v1, p2, v2: 0.0 * v2 + 0.0 * v1,
    )
    return func, (lambda p, v: -omega**2 * p), (lambda p, v: v)


def symmetric_coupled(omega: float) -> TwoTimeFunctional:
    """F = (phi1'^2 phi2^2 + phi2'^2 phi1^2) / 2 + omega^2 phi1^2 phi2^2 / 2, invariant under 1 <-> 2."""
    return TwoTimeFunctional(
        F=lambda t1, t2, p1, v1, p2, v2: 0.5 * (v1 * v1 * p2 * p2 + v2 * v2 * p1 * p1) + 0.5 * omega**2 * p1 * p1 * p2 * p2,
        dF_dphi1=lambda t1, t2, p1, v1, p2, v2: v2 * v2 * p1 + omega**2 * p1 * p2 * p2,
        dF_dv1=lambda t1, t2, p1, v1, p2, v2: v1 * p2 * p2,
        dF_dphi2=lambda t1, t2, p1, v1, p2, v2: v1 * v1 * p2 + omega**2 * p1 * p1 * p2,
        dF_dv2=lambda t1, t2, p1, v1, p2, v2: v2 * p1 * p1,
        symmetric=True,
    )


# ---------------------------------------------------------------- battery


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


OMEGA = 1.3
A, B = 0.0, 2.0
N_DEFAULT = 101
TOL = 1e-8


def _smooth_profile(grid: TimeGrid) -> np.ndarray:
    t = grid.times
    return 0.7 + 0.4 * np.sin(1.7 * t) + 0.2 * np.cos(0.9 * t + 0.3)


def check_factored_reduction(sign: float = 1.0) -> CheckResult:
    grid = TimeGrid(A, B, N_DEFAULT)
    func, dG_dp, dG_dv = factored(OMEGA)
    phi = _smooth_profile(grid)
    v = _ddt(phi, grid.dt)
    IH = float(grid.trapezoid_weights @ (1.0 + phi * phi))
    if abs(IH) < 1e-10 * grid.duration:
        return CheckResult("factored_reduction", True, 0.0, TOL, f"declined: |int H| = {abs(IH):.3e}")
    n = np.arange(1, grid.n_nodes - 1)
    single = dG_dp(phi[n], v[n]) - (dG_dv(phi[n + 1], v[n + 1]) - dG_dv(phi[n - 1], v[n - 1])) / (2 * grid.dt)
    two = residual_vector(func, phi, grid, sign)
    err = float(np.max(np.abs(two - IH * single)) / np.max(np.abs(IH * single)))
    return CheckResult("factored_reduction", err <= TOL, err, TOL, f"int H = {IH:.6g}")


def check_symmetric_equivalence(sign: float = 1.0) -> CheckResult:
    grid = TimeGrid(A, B, N_DEFAULT)
    func = symmetric_coupled(OMEGA)
    phi = _smooth_profile(grid)
    r1 = residual_vector(func, phi, grid, sign)
    r2 = np.array([necessary_2(func, phi, grid, n) for n in range(1, grid.n_nodes - 1)])
    err = float(np.max(np.abs(r1 - r2)) / np.max(np.abs(r2)))
    defect = func.symmetry_defect()
    ok = err <= TOL and defect <= 1e-12
    return CheckResult("symmetric_equivalence", ok, err, TOL, f"symmetry defect {defect:.1e}")


def free_end_solution(t, phi_a: float, omega: float = OMEGA, a: float = A, b: float = B):
    """phi'' + omega^2 phi = 0 with phi(a) = phi_a and phi'(b) = 0."""
    return phi_a * np.cos(omega * (t - b)) / math.cos(omega * (a - b))


def check_nbc_free_end(sign: float = 1.0) -> CheckResult:
    grid = TimeGrid(A, B, N_DEFAULT)
    func = harmonic(OMEGA, 1.0 / grid.duration)
    phi = solve_free_end(func, 1.0, grid, _sign=sign)
    nbc = abs(nbc_value(func, phi, grid))
    exact_err = float(np.max(np.abs(phi - free_end_solution(grid.times, 1.0))))
    # the collocated solution must also track the closed form at O(dt^2)
    ok = nbc <= TOL and exact_err <= 50.0 * grid.dt**2
    return CheckResult("nbc_free_end", ok, nbc, TOL, f"max |phi - closed form| = {exact_err:.2e}")


def check_lagrange(sign: float = 1.0) -> CheckResult:
    grid = TimeGrid(A, B, N_DEFAULT)
    func = harmonic(OMEGA, 1.0 / grid.duration)
    c0, c1, c2 = 0.4, -0.3, 0.25
    g = lambda t: c0 + c1 * t + c2 * t * t  # noqa: E731
    constraint = Constraint(K=lambda t, p: p - g(t), dK_dphi=lambda t, p: 1.0)
    t = grid.times
    phi = g(t)
    lam = (OMEGA**2 * g(t) + 2.0 * c2) / grid.duration
    worst = 0.0
    for n in range(1, grid.n_nodes - 1):
        r = grid.duration * lam[n] * constraint.dK_dphi(t[n], phi[n]) + necessary_condition_residual(func, phi, grid, n, sign)
        worst = max(worst, abs(float(r)))
    return CheckResult("lagrange_variant", bool(worst <= TOL), float(worst), TOL, "linear constraint phi = quadratic g(t)")


def refinement_order(sign: float = 1.0, sizes=(41, 81, 161, 321)):
    """Residual at t = (a+b)/2 of the exact harmonic solution for a sequence of grids."""
    errs = []
    for n in sizes:
        grid = TimeGrid(A, B, n)
        func = harmonic(OMEGA, 1.0 / grid.duration)
        phi = np.cos(OMEGA * grid.times)
        errs.append(abs(necessary_condition_residual(func, phi, grid, (n - 1) // 2, sign)))
    errs = np.asarray(errs)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(errs[:-1] / errs[1:])
    return errs, orders


def check_refinement(sign: float = 1.0) -> CheckResult:
    errs, orders = refinement_order(sign)
    ok = bool(np.all(np.isfinite(orders)) and np.all((orders >= 1.7) & (orders <= 2.3)))
    worst = float(orders[np.argmax(np.abs(orders - 2.0))]) if orders.size else float("nan")
    return CheckResult("refinement_order", ok, worst, 0.3, "orders " + ", ".join(f"{o:.3f}" for o in orders))


CHECKS = {
    "factored_reduction": check_factored_reduction,
    "symmetric_equivalence": check_symmetric_equivalence,
    "nbc_free_end": check_nbc_free_end,
    "lagrange_variant": check_lagrange,
    "refinement_order": check_refinement,
}


def run_battery(inject_sign_error: bool = False) -> list[CheckResult]:
    """Run every check; ``inject_sign_error`` flips the sign of the d/dt term (negative control)."""
    sign = -1.0 if inject_sign_error else 1.0
    return [fn(sign) for fn in CHECKS.values()]
