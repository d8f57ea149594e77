"""Strict JSON run configuration.

Unknown keys, wrong types and invalid values raise :class:`ConfigError` with
a ``source:line:`` prefix pointing at the offending key where it can be found.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .ensemble import HiddenVariableDistribution, default_halfwidth
from .errors import ConfigError
from .kernel import KernelSpec
from .model import Couplings, ModeSpectrum, TimeGrid
from .solver import SolveConfig

OUTPUT_ENV = "QCOLLAPSE_OUTPUT_DIR"

_MODEL_KEYS = {"sigma1", "sigma2", "e1", "e2", "B", "mu", "nu", "hbar", "initial_state"}
_GRID_KEYS = {"t_i", "t_f", "n_nodes"}
_KERNEL_KEYS = {"family", "tau"}
_SOLVE_KEYS = {f.name for f in fields(SolveConfig)}
_ENSEMBLE_KEYS = {
    "n", "seed", "T_center", "T_halfwidth", "law", "initial_phase_jitter",
    "purity_min", "agreement_max", "min_converged_fraction",
}
_OUTPUT_KEYS = {"directory", "retain_trajectories", "write_csv", "write_json"}
_SWEEP_KEYS = {"mu", "nu", "tau", "T"}
_SECTIONS = {"model", "grid", "kernel", "solve", "ensemble", "output", "sweep"}


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    seed: int
    distribution: HiddenVariableDistribution
    purity_min: float = 0.99
    agreement_max: float = 0.01
    min_converged_fraction: float = 0.9


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/run"
    retain_trajectories: bool = False
    write_csv: bool = True
    write_json: bool = True


@dataclass(frozen=True)
class SweepConfig:
    mu: tuple = ()
    nu: tuple = ()
    tau: tuple = ()
    T: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    spectrum: ModeSpectrum
    couplings: Couplings
    initial_state: tuple
    grid: TimeGrid
    solve: SolveConfig = field(default_factory=SolveConfig)
    ensemble: EnsembleConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig | None = None

    @property
    def initial_array(self) -> np.ndarray:
        return np.asarray(self.initial_state, dtype=np.complex128)

    def to_dict(self) -> dict:
        sp, cp = self.spectrum, self.couplings
        d = {
            "model": {
                "sigma1": list(sp.sigma1),
                "sigma2": list(sp.sigma2),
                "e1": list(sp.e1),
                "e2": list(sp.e2),
                "B": cp.B,
                "mu": cp.mu,
                "nu": cp.nu,
                "hbar": cp.hbar,
                "initial_state": [[c.real, c.imag] for c in self.initial_state],
            },
            "grid": {"t_i": self.grid.t_i, "t_f": self.grid.t_f, "n_nodes": self.grid.n_nodes},
            "kernel": {"family": cp.kernel.family, "tau": None if math.isinf(cp.kernel.tau) else cp.kernel.tau},
            "solve": {f.name: getattr(self.solve, f.name) for f in fields(SolveConfig)},
            "output": {f.name: getattr(self.output, f.name) for f in fields(OutputConfig)},
        }
        if self.ensemble is not None:
            e = self.ensemble
            dist = e.distribution
            d["ensemble"] = {
                "n": e.n,
                "seed": e.seed,
                "T_center": dist.T_center,
                "T_halfwidth": dist.T_halfwidth,
                "law": dist.law,
                "initial_phase_jitter": dist.initial_phase_jitter,
                "purity_min": e.purity_min,
                "agreement_max": e.agreement_max,
                "min_converged_fraction": e.min_converged_fraction,
            }
        if self.sweep is not None:
            d["sweep"] = {f.name: list(getattr(self.sweep, f.name)) for f in fields(SweepConfig)}
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- parsing helpers


class _Ctx:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def line_of(self, path: tuple) -> int | None:
        pos = 0
        for key in path:
            m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(self.text, pos)
            if m is None:
                return None
            pos = m.start()
        return self.text.count("\n", 0, pos) + 1

    def fail(self, path: tuple, msg: str):
        line = self.line_of(path) if path else None
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(str(p) for p in path)
        raise ConfigError(f"{where}: {dotted + ': ' if dotted else ''}{msg}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _number(ctx, sec, key, x, allow_none=False):
    if x is None and allow_none:
        return None
    if not _is_number(x) or not math.isfinite(x):
        ctx.fail((sec, key), f"expected a finite number, got {x!r}")
    return float(x)


def _integer(ctx, sec, key, x):
    if isinstance(x, bool) or not (isinstance(x, int) or (isinstance(x, float) and x.is_integer())):
        ctx.fail((sec, key), f"expected an integer, got {x!r}")
    return int(x)


def _boolean(ctx, sec, key, x):
    if not isinstance(x, bool):
        ctx.fail((sec, key), f"expected true/false, got {x!r}")
    return x


def _string(ctx, sec, key, x):
    if not isinstance(x, str):
        ctx.fail((sec, key), f"expected a string, got {x!r}")
    return x


def _number_list(ctx, sec, key, x):
    if not isinstance(x, list) or not x:
        ctx.fail((sec, key), "expected a non-empty list of numbers")
    return tuple(_number(ctx, sec, key, v) for v in x)


def _section(ctx, raw, name, allowed, required=()):
    sec = raw.get(name)
    if not isinstance(sec, dict):
        ctx.fail((name,), "section must be a JSON object")
    for k in sec:
        if k not in allowed:
            ctx.fail((name, k), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    for k in required:
        if k not in sec:
            ctx.fail((name,), f"missing required key {k!r}")
    return sec


def _guard(ctx, path, fn, *args, **kwargs):
    """Call a constructor, re-raising its ConfigError with a line anchor."""
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        ctx.fail(path, str(exc))


# ---------------------------------------------------------------- entry points


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    ctx = _Ctx(text, source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON ({exc.msg}, column {exc.colno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be a JSON object")
    for k in raw:
        if k not in _SECTIONS:
            ctx.fail((k,), f"unknown section (allowed: {', '.join(sorted(_SECTIONS))})")
    for required in ("model", "grid"):
        if required not in raw:
            raise ConfigError(f"{source}: missing required section {required!r}")

    m = _section(ctx, raw, "model", _MODEL_KEYS, ("sigma1", "sigma2", "e1", "e2", "initial_state"))
    spectrum = _guard(
        ctx, ("model",), ModeSpectrum,
        *(_number_list(ctx, "model", k, m[k]) for k in ("sigma1", "sigma2", "e1", "e2")),
    )
    k = _section(ctx, raw, "kernel", _KERNEL_KEYS) if "kernel" in raw else {}
    family = _string(ctx, "kernel", "family", k.get("family", "cosine_taper"))
    tau = _number(ctx, "kernel", "tau", k.get("tau", 1.0), allow_none=True)
    if tau is None:
        tau = math.inf
    kernel = _guard(ctx, ("kernel", "tau") if "tau" in k else ("kernel",), KernelSpec, family, tau)
    couplings = _guard(
        ctx, ("model",), Couplings,
        B=_number(ctx, "model", "B", m.get("B", 1.0)),
        mu=_number(ctx, "model", "mu", m.get("mu", -1.0)),
        nu=_number(ctx, "model", "nu", m.get("nu", -1.0)),
        hbar=_number(ctx, "model", "hbar", m.get("hbar", 1.0)),
        kernel=kernel,
    )
    for name in ("B", "hbar"):
        if name in m and m[name] <= 0:
            ctx.fail(("model", name), "must be > 0")

    init = m["initial_state"]
    if not isinstance(init, list) or len(init) != spectrum.n_modes:
        ctx.fail(("model", "initial_state"), f"expected {spectrum.n_modes} [re, im] pairs (J*K, row-major over (j, k))")
    state = []
    for pair in init:
        if not (isinstance(pair, list) and len(pair) == 2 and all(_is_number(v) for v in pair)):
            ctx.fail(("model", "initial_state"), f"entry {pair!r} is not a [re, im] pair")
        state.append(complex(float(pair[0]), float(pair[1])))
    weight = sum(abs(c) ** 2 for c in state)
    if abs(weight - 1.0) > 1e-10:
        ctx.fail(("model", "initial_state"), f"must be normalized (sum |C|^2 = {weight!r})")

    g = _section(ctx, raw, "grid", _GRID_KEYS, ("t_f", "n_nodes"))
    grid = _guard(
        ctx, ("grid",), TimeGrid,
        _number(ctx, "grid", "t_i", g.get("t_i", 0.0)),
        _number(ctx, "grid", "t_f", g["t_f"]),
        _integer(ctx, "grid", "n_nodes", g["n_nodes"]),
    )

    solve = SolveConfig()
    if "solve" in raw:
        s = _section(ctx, raw, "solve", _SOLVE_KEYS)
        kwargs = {}
        for key, val in s.items():
            default = getattr(solve, key)
            if isinstance(default, str):
                kwargs[key] = _string(ctx, "solve", key, val)
            elif isinstance(default, int):
                kwargs[key] = _integer(ctx, "solve", key, val)
            else:
                kwargs[key] = _number(ctx, "solve", key, val)
        solve = _guard(ctx, ("solve",), SolveConfig, **kwargs)

    ensemble = None
    if "ensemble" in raw:
        e = _section(ctx, raw, "ensemble", _ENSEMBLE_KEYS, ("n", "T_center"))
        hw = e.get("T_halfwidth")
        hw = default_halfwidth(spectrum, couplings.hbar) if hw is None else _number(ctx, "ensemble", "T_halfwidth", hw)
        dist = _guard(
            ctx, ("ensemble",), HiddenVariableDistribution,
            _number(ctx, "ensemble", "T_center", e["T_center"]),
            hw,
            _string(ctx, "ensemble", "law", e.get("law", "uniform")),
            _number(ctx, "ensemble", "initial_phase_jitter", e.get("initial_phase_jitter", 0.0)),
        )
        n = _integer(ctx, "ensemble", "n", e["n"])
        if n < 1:
            ctx.fail(("ensemble", "n"), "must be >= 1")
        frac = _number(ctx, "ensemble", "min_converged_fraction", e.get("min_converged_fraction", 0.9))
        if not 0.0 <= frac <= 1.0:
            ctx.fail(("ensemble", "min_converged_fraction"), "must lie in [0, 1]")
        ensemble = EnsembleConfig(
            n=n,
            seed=_integer(ctx, "ensemble", "seed", e.get("seed", 0)),
            distribution=dist,
            purity_min=_number(ctx, "ensemble", "purity_min", e.get("purity_min", 0.99)),
            agreement_max=_number(ctx, "ensemble", "agreement_max", e.get("agreement_max", 0.01)),
            min_converged_fraction=frac,
        )

    output = OutputConfig()
    if "output" in raw:
        o = _section(ctx, raw, "output", _OUTPUT_KEYS)
        output = OutputConfig(
            directory=_string(ctx, "output", "directory", o.get("directory", output.directory)),
            retain_trajectories=_boolean(ctx, "output", "retain_trajectories", o.get("retain_trajectories", False)),
            write_csv=_boolean(ctx, "output", "write_csv", o.get("write_csv", True)),
            write_json=_boolean(ctx, "output", "write_json", o.get("write_json", True)),
        )

    sweep = None
    if "sweep" in raw:
        w = _section(ctx, raw, "sweep", _SWEEP_KEYS)
        sweep = SweepConfig(**{key: _number_list(ctx, "sweep", key, val) for key, val in w.items()})

    return RunConfig(spectrum, couplings, tuple(state), grid, solve, ensemble, output, sweep)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def output_directory(cfg: RunConfig, override: str | None = None) -> Path:
    """--out beats the environment variable, which beats the config file."""
    if override:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(cfg.output.directory)
