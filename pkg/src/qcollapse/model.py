"""Mode spectra, couplings and time grids.

All storage of joint coefficients uses the row-major flat mode index
``m = j * K + k`` where ``j`` labels the measured system and ``k`` the
apparatus pointer state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .kernel import KernelSpec


@dataclass(frozen=True)
class ModeSpectrum:
    """Eigenvalues of the measured observable and energies for both subsystems."""

    sigma1: tuple[float, ...]
    sigma2: tuple[float, ...]
    e1: tuple[float, ...]
    e2: tuple[float, ...]

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "e1", "e2"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"{name} must be non-empty")
            if not all(math.isfinite(v) for v in vals):
                raise ConfigError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, vals)
        if len(self.sigma1) != len(self.e1):
            raise ConfigError("sigma1 and e1 must have equal length")
        if len(self.sigma2) != len(self.e2):
            raise ConfigError("sigma2 and e2 must have equal length")

    @property
    def J(self) -> int:
        return len(self.sigma1)

    @property
    def K(self) -> int:
        return len(self.sigma2)

    @property
    def n_modes(self) -> int:
        return self.J * self.K

    def flat_index(self, j: int, k: int) -> int:
        _check_indices(self, j, k)
        return j * self.K + k

    def delta_array(self) -> np.ndarray:
        """Eigenvalue mismatch per flat mode, shape (J*K,)."""
        s1 = np.asarray(self.sigma1)
        s2 = np.asarray(self.sigma2)
        return (s1[:, None] - s2[None, :]).ravel()

    def energy_array(self) -> np.ndarray:
        """Combined energy per flat mode, shape (J*K,)."""
        e1 = np.asarray(self.e1)
        e2 = np.asarray(self.e2)
        return (e1[:, None] + e2[None, :]).ravel()

    def coupling_matrix(self) -> np.ndarray:
        """Real symmetric matrix G[a, b] = delta(j, m) * delta(l, k) for a=(j,k), b=(l,m).

        This is the mode coupling that appears in the nonlocal interaction.
        """
        s1 = np.asarray(self.sigma1)
        s2 = np.asarray(self.sigma2)
        d = s1[:, None] - s2[None, :]  # d[j, k]
        J, K = self.J, self.K
        # G[j, k, l, m] = d[j, m] * d[l, k]
        g = d[:, None, None, :] * np.transpose(d)[None, :, :, None]
        return g.reshape(J * K, J * K)

    def outcome_classes(self) -> list[np.ndarray]:
        """Groups of system indices j sharing one sigma1 value, in order of first appearance."""
        classes: dict[float, list[int]] = {}
        for j, s in enumerate(self.sigma1):
            classes.setdefault(s, []).append(j)
        return [np.asarray(v, dtype=np.intp) for v in classes.values()]


def _check_indices(spec: ModeSpectrum, j: int, k: int) -> None:
    if not (0 <= j < spec.J):
        raise IndexError(f"system index j={j} out of range [0, {spec.J})")
    if not (0 <= k < spec.K):
        raise IndexError(f"apparatus index k={k} out of range [0, {spec.K})")


def delta(spec: ModeSpectrum, j: int, k: int) -> float:
    """Eigenvalue mismatch sigma1[j] - sigma2[k]."""
    _check_indices(spec, j, k)
    return spec.sigma1[j] - spec.sigma2[k]


def combined_energy(spec: ModeSpectrum, j: int, k: int) -> float:
    """Joint mode energy e1[j] + e2[k]."""
    _check_indices(spec, j, k)
    return spec.e1[j] + spec.e2[k]


def validate_nondegenerate(spec: ModeSpectrum, tol_E: float = 0.0):
    """Return every pair of distinct joint modes whose energies coincide within ``tol_E``.

    Pairs are ``((j, k), (l, m))`` with the first mode preceding the second in
    flat order. An empty list means all joint energies are distinct.
    """
    if tol_E < 0:
        raise ValueError("tol_E must be non-negative")
    E = spec.energy_array()
    K = spec.K
    collisions = []
    for a in range(E.size):
        for b in range(a + 1, E.size):
            if abs(E[a] - E[b]) <= tol_E:
                collisions.append(((a // K, a % K), (b // K, b % K)))
    return collisions


def warn_if_degenerate(spec: ModeSpectrum, tol_E: float = 1e-12) -> list:
    pairs = validate_nondegenerate(spec, tol_E)
    if pairs:
        warnings.warn(
            f"{len(pairs)} degenerate joint energy pair(s), e.g. {pairs[0]}; "
            "the Born-rule drift analysis assumes distinct energies",
            RuntimeWarning,
            stacklevel=3,
        )
    return pairs


@dataclass(frozen=True)
class Couplings:
    """Interaction strengths and units. ``B`` is the summed kinetic prefactor."""

    B: float = 1.0
    mu: float = -1.0
    nu: float = -1.0
    hbar: float = 1.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("cosine_taper", 1.0))

    def __post_init__(self):
        for name in ("B", "mu", "nu", "hbar"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.B <= 0:
            raise ConfigError("B must be > 0 (it divides the evolution equation)")
        if self.hbar <= 0:
            raise ConfigError("hbar must be > 0")

    @property
    def tau(self) -> float:
        return self.kernel.tau

    def scaled(self, factor: float) -> "Couplings":
        """Copy with mu and nu multiplied by ``factor`` (used for continuation)."""
        return Couplings(self.B, self.mu * factor, self.nu * factor, self.hbar, self.kernel)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with node 0 at ``t_i`` and the last node at ``t_f``."""

    t_i: float
    t_f: float
    n_nodes: int

    def __post_init__(self):
        object.__setattr__(self, "t_i", float(self.t_i))
        object.__setattr__(self, "t_f", float(self.t_f))
        if not (math.isfinite(self.t_i) and math.isfinite(self.t_f)):
            raise ConfigError("grid endpoints must be finite")
        if not self.t_f > self.t_i:
            raise ConfigError("t_f must exceed t_i")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise ConfigError("n_nodes must be an integer >= 3")
        object.__setattr__(self, "n_nodes", int(self.n_nodes))

    @property
    def duration(self) -> float:
        return self.t_f - self.t_i

    @property
    def dt(self) -> float:
        return (self.t_f - self.t_i) / (self.n_nodes - 1)

    @cached_property
    def times(self) -> np.ndarray:
        return self.t_i + self.dt * np.arange(self.n_nodes)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w
