"""qcollapse command line: solve, ensemble, action, verify-appendix, sweep.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure
(non-convergence, a failed check, or too few converged realizations).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import trajectory as trj
from .action import action_gradient, action_gradient_fd, evaluate
from .config import RunConfig, load_config, output_directory
from .ensemble import EnsembleSetup, drift_probe, min_energy_gap, run_ensemble
from .errors import ConfigError, DegenerateStateError, EnsembleError, NumericalBlowupError
from .kernel import KernelSpec, slow_variation_epsilon
from .model import TimeGrid
from .solver import solve_bvp
from .varcalc2t import CHECKS, run_battery

log = logging.getLogger("qcollapse")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        out = ""
    return f"v{__version__}-g{out}" if out and not out.startswith("v") else (out or f"v{__version__}")


def _clean(x):
    """Make values strict-JSON safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _manifest(cfg: RunConfig, command: str, seed: int, **extra) -> dict:
    m = {"command": command, "config": cfg.to_dict(), "version": version_string(), "seed": seed}
    m.update(extra)
    return m


def _epsilon(cfg: RunConfig) -> float:
    return slow_variation_epsilon(cfg.couplings.kernel, min_energy_gap(cfg.spectrum), cfg.couplings.hbar)


def _seed(cfg: RunConfig, override: int | None) -> int:
    if override is not None:
        return override
    return cfg.ensemble.seed if cfg.ensemble is not None else 0


# ---------------------------------------------------------------- solve


def _solve_summary(cfg: RunConfig, res) -> dict:
    traj = res.trajectory
    out = {
        "converged": res.converged,
        "iterations": res.iterations,
        "final_residual_norm": res.final_residual_norm,
        "nbc_residual_norm": float(np.max(np.abs(res.nbc_residual))),
        "cdot_tf_norm": res.diagnostics.get("cdot_tf_norm"),
        "slow_variation_epsilon": _epsilon(cfg),
        "diagnostics": res.diagnostics,
    }
    if np.all(np.isfinite(traj.values)):
        out["action"] = evaluate(traj, cfg.spectrum, cfg.couplings).as_dict()
        try:
            m = trj.collapse_metrics(traj, cfg.spectrum)
            out["collapse_metrics"] = {
                "agreement_residual": m.agreement_residual,
                "purity": m.purity,
                "dominant_j": m.dominant_j,
                "final_weight": m.final_weight,
            }
        except DegenerateStateError as exc:
            out["collapse_metrics"] = {"error": str(exc)}
        if res.converged:
            _, bound = drift_probe(traj, cfg.spectrum, cfg.couplings)
            out["drift_bound"] = bound.tolist()
    if res.lambda_trace is not None:
        out["lambda"] = np.asarray(res.lambda_trace).tolist()
    return out


def cmd_solve(cfg: RunConfig, out: Path, seed: int) -> int:
    res = solve_bvp(cfg.initial_array, cfg.spectrum, cfg.couplings, cfg.grid, cfg.solve)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.output.write_csv:
        trj.write_csv(res.trajectory, cfg.spectrum, out / "trajectory.csv")
    if cfg.output.write_json:
        trj.write_json(res.trajectory, cfg.spectrum, out / "trajectory.json")
    summary = _solve_summary(cfg, res)
    write_json(out / "manifest.json", _manifest(cfg, "solve", seed, result=summary))
    status = "converged" if res.converged else "NOT converged"
    print(f"solve {status}: residual {res.final_residual_norm:.3e} after {res.iterations} iterations -> {out}")
    if not res.converged:
        print(f"  {res.diagnostics.get('message', '')}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- ensemble


def cmd_ensemble(cfg: RunConfig, out: Path, seed: int, threads: int) -> int:
    if cfg.ensemble is None:
        raise ConfigError("config has no 'ensemble' section")
    e = cfg.ensemble
    setup = EnsembleSetup(
        cfg.spectrum, cfg.couplings, cfg.initial_state,
        t_i=cfg.grid.t_i, n_nodes=cfg.grid.n_nodes, solve=cfg.solve,
        purity_min=e.purity_min, agreement_max=e.agreement_max,
        retain_trajectories=cfg.output.retain_trajectories,
    )
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = run_ensemble(setup, e.distribution, e.n, seed, threads=threads)
    except EnsembleError as exc:
        write_json(out / "manifest.json", _manifest(cfg, "ensemble", seed, error=str(exc), diagnostics=exc.diagnostics))
        print(f"ensemble failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    write_json(out / "report.json", report.to_dict())
    with open(out / "frequencies.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "eigenvalue", "count", "frequency", "initial_weight"])
        counts = np.zeros(len(report.class_labels), dtype=int)
        for r in report.per_realization:
            if r["collapsed"]:
                counts[r["dominant_j"]] += 1
        for j, label in enumerate(report.class_labels):
            freq = report.frequencies[j] if report.frequencies else float("nan")
            w.writerow([j, repr(label), int(counts[j]), repr(freq), repr(report.initial_weights[j])])
    if cfg.output.retain_trajectories and report.trajectories is not None:
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        for row, values in zip(report.per_realization, report.trajectories):
            if values is None:
                continue
            grid = TimeGrid(cfg.grid.t_i, cfg.grid.t_i + row["T"], cfg.grid.n_nodes)
            trj.write_csv(trj.CoefficientTrajectory(grid, values), cfg.spectrum, tdir / f"realization_{row['index']:05d}.csv")

    converged = report.n_realizations - report.n_diverged
    frac = converged / report.n_realizations
    write_json(out / "manifest.json", _manifest(
        cfg, "ensemble", seed, threads=threads, converged_fraction=frac,
        n_collapsed=report.n_collapsed, frequencies=report.frequencies,
    ))
    print(
        f"ensemble: {converged}/{report.n_realizations} converged, {report.n_collapsed} collapsed, "
        f"frequencies {report.frequencies} (initial weights {report.initial_weights}) -> {out}"
    )
    return EXIT_OK if frac >= e.min_converged_fraction else EXIT_NUMERIC


# ---------------------------------------------------------------- action


def stationarity_report(cfg: RunConfig, traj) -> dict:
    """Action breakdown plus analytic and finite-difference gradients on the free nodes.

    Node 0 is fixed by the preparation and node 1 carries the start-slope
    condition instead of the evolution equation. The last node is stationary
    only under the natural terminal condition. Gradients at nodes the solver
    does not make stationary are reported separately.
    """
    spec, cp = cfg.spectrum, cfg.couplings
    N = traj.grid.n_nodes
    fd = np.abs(action_gradient_fd(traj, spec, cp, nodes=range(1, N))).max(axis=2)
    w = action_gradient(traj, spec, cp)
    an = 2.0 * np.maximum(np.abs(w.real), np.abs(w.imag))
    stationary = list(range(2, N - 1))
    if cfg.solve.terminal == "natural":
        stationary.append(N - 1)
    return {
        "action": evaluate(traj, spec, cp).as_dict(),
        "terminal": cfg.solve.terminal,
        "fd_gradient_max": float(fd[stationary].max()) if stationary else 0.0,
        "analytic_gradient_max": float(an[stationary].max()) if stationary else 0.0,
        "node1_fd_gradient_max": float(fd[1].max()),
        "last_node_fd_gradient_max": float(fd[N - 1].max()),
    }


def cmd_action(cfg: RunConfig, trajectory_path: str) -> int:
    try:
        traj = trj.read_csv(trajectory_path, cfg.spectrum, cfg.grid)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{trajectory_path}: {exc}") from None
    print(json.dumps(_clean(stationarity_report(cfg, traj)), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- verify-appendix


def cmd_verify_appendix(list_only: bool, inject: bool) -> int:
    if list_only:
        for name in CHECKS:
            print(name)
        return EXIT_OK
    results = run_battery(inject_sign_error=inject)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  {'status':<6}  {'value':>12}  {'tolerance':>10}  detail")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status:<6}  {r.value:>12.4e}  {r.tolerance:>10.2e}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# ---------------------------------------------------------------- sweep


def _sweep_point(args):
    cfg, point = args
    mu, nu, tau, T = point
    cp = replace(cfg.couplings, mu=mu, nu=nu, kernel=KernelSpec(cfg.couplings.kernel.family, tau))
    grid = TimeGrid(cfg.grid.t_i, cfg.grid.t_i + T, cfg.grid.n_nodes)
    row = {"mu": mu, "nu": nu, "tau": tau, "T": T}
    try:
        res = solve_bvp(cfg.initial_array, cfg.spectrum, cp, grid, cfg.solve)
    except (ConfigError, NumericalBlowupError, FloatingPointError) as exc:
        row.update(converged=False, error=str(exc))
        return row
    row.update(
        converged=res.converged,
        residual=res.final_residual_norm,
        iterations=res.iterations,
        final_weight=res.diagnostics.get("final_weight"),
        cdot_tf_norm=res.diagnostics.get("cdot_tf_norm"),
    )
    try:
        m = trj.collapse_metrics(res.trajectory, cfg.spectrum)
        row.update(purity=m.purity, dominant_j=m.dominant_j, agreement_residual=m.agreement_residual)
    except DegenerateStateError:
        pass
    return row


SWEEP_COLUMNS = ["mu", "nu", "tau", "T", "converged", "residual", "iterations", "final_weight",
                 "cdot_tf_norm", "purity", "dominant_j", "agreement_residual", "error"]


def cmd_sweep(cfg: RunConfig, out: Path, seed: int, threads: int) -> int:
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    cp, sw = cfg.couplings, cfg.sweep
    axes = (
        sw.mu or (cp.mu,),
        sw.nu or (cp.nu,),
        sw.tau or (cp.kernel.tau,),
        sw.T or (cfg.grid.duration,),
    )
    for tau in axes[2]:
        KernelSpec(cp.kernel.family, tau)
    for T in axes[3]:
        if T <= 0:
            raise ConfigError(f"sweep duration T={T} must be > 0")
    jobs = [(cfg, p) for p in itertools.product(*axes)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    n_conv = sum(1 for r in rows if r["converged"])
    write_json(out / "manifest.json", _manifest(cfg, "sweep", seed, threads=threads, n_points=len(rows), n_converged=n_conv))
    print(f"sweep: {n_conv}/{len(rows)} points converged -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcollapse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, threads=False):
        sp.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
        if out:
            sp.add_argument("--out", metavar="DIR", help="run directory (overrides config and $QCOLLAPSE_OUTPUT_DIR)")
            sp.add_argument("--seed", type=int, help="override the configured seed")
        if threads:
            sp.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")

    common(sub.add_parser("solve", help="solve one boundary value problem"))
    common(sub.add_parser("ensemble", help="run a hidden-variable ensemble"), threads=True)
    sp = sub.add_parser("action", help="evaluate the action of a stored trajectory")
    common(sp, out=False)
    sp.add_argument("--trajectory", required=True, metavar="CSV", help="trajectory CSV written by 'solve'")
    sp = sub.add_parser("verify-appendix", help="run the two-time variational check battery")
    sp.add_argument("--list", action="store_true", help="list check names and exit")
    sp.add_argument("--inject-sign-error", action="store_true", help="negative control: flip a sign in the residual")
    common(sub.add_parser("sweep", help="grid of solves over mu, nu, tau and T"), threads=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "verify-appendix":
        return cmd_verify_appendix(args.list, args.inject_sign_error)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.command == "action":
            return cmd_action(cfg, args.trajectory)
        seed = _seed(cfg, args.seed)
        out = output_directory(cfg, args.out)
        if args.command == "solve":
            return cmd_solve(cfg, out, seed)
        if args.command == "ensemble":
            return cmd_ensemble(cfg, out, seed, args.threads)
        return cmd_sweep(cfg, out, seed, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
