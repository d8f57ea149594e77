"""Coefficient trajectories C_jk(t) on a uniform grid, plus diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateStateError
from .model import ModeSpectrum, TimeGrid

CSV_FORMAT = "%.17g"


@dataclass
class CoefficientTrajectory:
    grid: TimeGrid
    values: np.ndarray  # complex, (n_nodes, J*K)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise ValueError(f"values must have shape (n_nodes={self.grid.n_nodes}, n_modes); got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains NaN or Inf")
        self.values = v

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    def check_spectrum(self, spec: ModeSpectrum) -> None:
        if self.n_modes != spec.n_modes:
            raise ValueError(f"trajectory has {self.n_modes} modes, spectrum needs {spec.n_modes}")

    def copy(self) -> "CoefficientTrajectory":
        return CoefficientTrajectory(self.grid, self.values.copy())

    def conj(self) -> "CoefficientTrajectory":
        return CoefficientTrajectory(self.grid, np.conj(self.values))

    @classmethod
    def constant(cls, grid: TimeGrid, c0) -> "CoefficientTrajectory":
        c0 = np.asarray(c0, dtype=np.complex128).ravel()
        return cls(grid, np.tile(c0, (grid.n_nodes, 1)))


def total_weight(traj: CoefficientTrajectory, node: int) -> float:
    row = traj.values[node]
    return float(np.sum(row.real**2 + row.imag**2))


def outcome_weights(traj: CoefficientTrajectory, spec: ModeSpectrum, node: int) -> np.ndarray:
    """P_j = sum_k |C_jk|^2 at one node, length J."""
    traj.check_spectrum(spec)
    row = traj.values[node].reshape(spec.J, spec.K)
    return np.sum(row.real**2 + row.imag**2, axis=1)


def class_weights(traj: CoefficientTrajectory, spec: ModeSpectrum, node: int) -> np.ndarray:
    """Outcome weights summed over system modes that share an eigenvalue."""
    P = outcome_weights(traj, spec, node)
    return np.array([P[idx].sum() for idx in spec.outcome_classes()])


def time_derivative(traj: CoefficientTrajectory) -> np.ndarray:
    """Second-order finite-difference derivative along the time axis."""
    return _ddt(traj.values, traj.grid.dt)


def _ddt(v: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    # difference form of the one-sided stencils, exact zero on constants
    out[0] = (3.0 * (v[1] - v[0]) - (v[2] - v[1])) / (2.0 * dt)
    out[-1] = (3.0 * (v[-1] - v[-2]) - (v[-2] - v[-3])) / (2.0 * dt)
    return out


@dataclass(frozen=True)
class CollapseMetrics:
    agreement_residual: float
    purity: float
    dominant_j: int
    final_weight: float

    def collapsed(self, purity_min: float = 0.99, agreement_max: float = 0.01) -> bool:
        return self.purity >= purity_min and self.agreement_residual <= agreement_max


def collapse_metrics(traj: CoefficientTrajectory, spec: ModeSpectrum) -> CollapseMetrics:
    """Agreement residual, purity and dominant outcome class at t_f.

    Weights are normalized by the final total weight. ``dominant_j`` indexes
    :meth:`ModeSpectrum.outcome_classes` (equal to j for distinct eigenvalues);
    ties go to the lowest index.
    """
    traj.check_spectrum(spec)
    last = traj.grid.n_nodes - 1
    W = total_weight(traj, last)
    if W < 1e-12:
        raise DegenerateStateError(f"total weight at t_f is {W:.3e}; cannot classify")
    c = traj.values[last]
    mag2 = c.real**2 + c.imag**2
    mismatched = spec.delta_array() != 0.0
    agreement = float(mag2[mismatched].sum() / W)
    P = class_weights(traj, spec, last)
    dominant = int(np.argmax(P))
    return CollapseMetrics(agreement, float(P[dominant] / P.sum()), dominant, W)


# ---------------------------------------------------------------- I/O


def csv_header(spec: ModeSpectrum) -> list[str]:
    cols = ["t"]
    for j in range(spec.J):
        for k in range(spec.K):
            cols += [f"Re_C_{j}_{k}", f"Im_C_{j}_{k}"]
    return cols


def write_csv(traj: CoefficientTrajectory, spec: ModeSpectrum, path) -> None:
    traj.check_spectrum(spec)
    data = np.empty((traj.grid.n_nodes, 1 + 2 * traj.n_modes))
    data[:, 0] = traj.grid.times
    data[:, 1::2] = traj.values.real
    data[:, 2::2] = traj.values.imag
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header(spec))
        for row in data:
            writer.writerow([CSV_FORMAT % x for x in row])


def read_csv(path, spec: ModeSpectrum, grid: TimeGrid | None = None) -> CoefficientTrajectory:
    """Read a trajectory CSV, checking it against the spectrum (and grid if given)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty trajectory file")
    header, body = rows[0], rows[1:]
    if header != csv_header(spec):
        raise ConfigError(f"{path}: header does not match a {spec.J}x{spec.K} mode spectrum")
    width = len(header)
    try:
        data = np.array([[float(x) for x in r] for r in body if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != width:
        raise ConfigError(f"{path}: expected >= 3 rows of {width} columns")
    t = data[:, 0]
    n = data.shape[0]
    if grid is None:
        grid = TimeGrid(t[0], t[-1], n)
    elif grid.n_nodes != n:
        raise ConfigError(f"{path}: {n} rows but grid has {grid.n_nodes} nodes")
    if not np.allclose(t, grid.times, rtol=0, atol=1e-9 * max(1.0, abs(grid.t_f))):
        raise ConfigError(f"{path}: time column is not the configured uniform grid")
    values = data[:, 1::2] + 1j * data[:, 2::2]
    return CoefficientTrajectory(grid, values)


def to_json_dict(traj: CoefficientTrajectory, spec: ModeSpectrum) -> dict:
    return {
        "J": spec.J,
        "K": spec.K,
        "t_i": traj.grid.t_i,
        "t_f": traj.grid.t_f,
        "n_nodes": traj.grid.n_nodes,
        "re": traj.values.real.tolist(),
        "im": traj.values.imag.tolist(),
    }


def from_json_dict(d: dict) -> CoefficientTrajectory:
    grid = TimeGrid(d["t_i"], d["t_f"], d["n_nodes"])
    return CoefficientTrajectory(grid, np.asarray(d["re"]) + 1j * np.asarray(d["im"]))


def write_json(traj: CoefficientTrajectory, spec: ModeSpectrum, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(traj, spec), fh)
