"""Brute-force reference implementations written directly from the defining sums.

Nothing here calls the banded kernels or the package's assembly helpers, so
agreement with the package is an independent check.
"""

from __future__ import annotations

import numpy as np

from qcollapse.kernel import kernel_eval
from qcollapse.model import ModeSpectrum, TimeGrid


def modes(spec: ModeSpectrum):
    return [(j, k) for j in range(spec.J) for k in range(spec.K)]


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.n_nodes, grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def kernel_matrix(kernel, grid: TimeGrid) -> np.ndarray:
    t = grid.times
    return np.asarray(kernel_eval(kernel, t[:, None] - t[None, :]))


def c_tilde(C, spec, couplings, grid) -> np.ndarray:
    """Ctilde_jk(t_n) = sum_lm D_jm D_lk C_lm(t_n) int dt' conj(C_lm) C_jk f e^{-i (E_jk - E_lm)(t' - t_n)/hbar}."""
    N = grid.n_nodes
    t = grid.times
    w = trapezoid_weights(grid)
    F = kernel_matrix(couplings.kernel, grid)
    idx = modes(spec)
    out = np.zeros((N, len(idx)), dtype=complex)
    for a, (j, k) in enumerate(idx):
        Ejk = spec.e1[j] + spec.e2[k]
        for b, (l, m) in enumerate(idx):
            coef = (spec.sigma1[j] - spec.sigma2[m]) * (spec.sigma1[l] - spec.sigma2[k])
            if coef == 0.0:
                continue
            Elm = spec.e1[l] + spec.e2[m]
            for n in range(N):
                ph = np.exp(-1j * (Ejk - Elm) * (t - t[n]) / couplings.hbar)
                integral = np.sum(w * F[n] * np.conj(C[:, b]) * C[:, a] * ph)
                out[n, a] += coef * C[n, b] * integral
    return out


def r_integral(C, spec, couplings, grid) -> complex:
    """nu * sum_{n,q} w_n w_q f(t_n - t_q) r(t_n, t_q) with the paper-form integrand (complex)."""
    t = grid.times
    w = trapezoid_weights(grid)
    W = w[:, None] * w[None, :] * kernel_matrix(couplings.kernel, grid)
    idx = modes(spec)
    total = 0.0 + 0.0j
    for a, (j, k) in enumerate(idx):
        Ea = spec.e1[j] + spec.e2[k]
        for b, (l, m) in enumerate(idx):
            coef = (spec.sigma1[j] - spec.sigma2[m]) * (spec.sigma1[l] - spec.sigma2[k])
            if coef == 0.0:
                continue
            Eb = spec.e1[l] + spec.e2[m]
            # rows t1 = t_n, columns t2 = t_q
            r = (
                np.conj(C[:, a])[:, None] * np.conj(C[:, b])[None, :]
                * C[:, b][:, None] * C[:, a][None, :]
                * np.exp(-1j * (Ea - Eb) * (t[None, :] - t[:, None]) / couplings.hbar)
            )
            total += coef * np.sum(W * r)
    return couplings.nu * total


def s12(C, spec, couplings, grid) -> float:
    """Cell-midpoint rule for B sum (|C_dot|^2 - (2/hbar) E Im(conj C C_dot))."""
    dt = grid.dt
    total = 0.0
    for a, (j, k) in enumerate(modes(spec)):
        E = spec.e1[j] + spec.e2[k]
        for n in range(grid.n_nodes - 1):
            cd = (C[n + 1, a] - C[n, a]) / dt
            cm = 0.5 * (C[n + 1, a] + C[n, a])
            total += dt * (abs(cd) ** 2 - 2.0 / couplings.hbar * E * (np.conj(cm) * cd).imag)
    return couplings.B * total


def moving_average(C, couplings, grid, node, mode) -> float:
    w = trapezoid_weights(grid)
    f = np.asarray(kernel_eval(couplings.kernel, grid.times[node] - grid.times))
    return float(np.sum(w * f * np.abs(C[:, mode]) ** 2))


def multiplier_sum(C, spec, couplings, grid, ct) -> np.ndarray:
    """-2 T lambda / B at interior nodes, kinetic term as the mean of the two one-sided squares."""
    dt = grid.dt
    N = grid.n_nodes
    kappa = 2.0 * couplings.nu / couplings.B
    out = np.zeros(N - 2)
    for i, n in enumerate(range(1, N - 1)):
        s = 0.0
        for a, (j, k) in enumerate(modes(spec)):
            E = spec.e1[j] + spec.e2[k]
            d = spec.sigma1[j] - spec.sigma2[k]
            kin = (abs(C[n + 1, a] - C[n, a]) ** 2 + abs(C[n, a] - C[n - 1, a]) ** 2) / (2 * dt * dt)
            cdot = (C[n + 1, a] - C[n - 1, a]) / (2 * dt)
            s += kin + couplings.mu / couplings.B * d * d * abs(C[n, a]) ** 2
            s += (2j / couplings.hbar * E * np.conj(C[n, a]) * cdot).real
            s += (kappa * np.conj(C[n, a]) * ct[n, a]).real
        out[i] = s
    return out


def random_state(rng, n_modes):
    c = rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)
    return c / np.linalg.norm(c)


def random_trajectory(rng, grid, n_modes, scale=0.3):
    """Smooth random trajectory: a few random Fourier components around a random state."""
    t = (grid.times - grid.t_i) / grid.duration
    C = np.tile(random_state(rng, n_modes), (grid.n_nodes, 1))
    for h in range(1, 4):
        amp = scale / h * (rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes))
        C = C + amp[None, :] * np.sin(np.pi * h * t + rng.uniform(0, 2 * np.pi))[:, None]
    return C
