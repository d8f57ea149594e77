"""Acceptance checks 1 to 10.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line straight to the
terminal (bypassing capture) and then asserts the same condition. Check 9
runs the full 200-realization ensemble and takes several minutes.
"""

import contextlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

import _oracles as O
from qcollapse import _kernels
from qcollapse._operator import nonlocal_operator
from qcollapse.action import action_gradient_fd, wirtinger_from_real
from qcollapse.cli import main
from qcollapse.ensemble import (
    EnsembleSetup,
    HiddenVariableDistribution,
    phase_term,
    phase_term_average_check,
    run_ensemble,
)
from qcollapse.kernel import KernelSpec
from qcollapse.model import Couplings, ModeSpectrum, TimeGrid
from qcollapse.solver import SolveConfig, c_tilde, ide_residual_unconstrained, solve_bvp
from qcollapse.trajectory import CoefficientTrajectory

SPEC = ModeSpectrum([1.0, -1.0], [0.8, -1.0], [0.0, 1.0], [0.0, 0.35])
MATCHED = ModeSpectrum([1.0, -1.0], [1.0, -1.0], [0.0, 1.0], [0.0, 0.3])
ZERO_E = ModeSpectrum([1.0, -1.0], [1.0, -1.0], [0.0, 0.0], [0.0, 0.0])
ROOT = Path(__file__).resolve().parents[1]
C7030 = np.array([math.sqrt(0.7), 0, 0, math.sqrt(0.3)], complex)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def test_acceptance_1_no_interaction_stability(report):
    free = Couplings(1.0, 0.0, 0.0)
    grid = TimeGrid(0.0, 10.0, 201)
    rng = np.random.default_rng(101)
    worst_dev = worst_res = slowest = 0.0
    cases = [(ZERO_E, SolveConfig()), (SPEC, SolveConfig(terminal="stationary"))]
    converged = True
    for spec, cfg in cases:
        c0 = O.random_state(rng, 4)
        with pytest.warns(RuntimeWarning) if spec is ZERO_E else contextlib.nullcontext():
            t0 = time.perf_counter()
            res = solve_bvp(c0, spec, free, grid, cfg)
            slowest = max(slowest, time.perf_counter() - t0)
        converged &= res.converged
        worst_dev = max(worst_dev, float(np.max(np.abs(res.trajectory.values - c0))))
        worst_res = max(worst_res, float(np.max(np.abs(ide_residual_unconstrained(res.trajectory, spec, free)))))
    ok = converged and worst_dev <= 1e-8 and worst_res <= 1e-10 and slowest < 5.0
    report(1, ok, f"max deviation {worst_dev:.2e}, interior residual {worst_res:.2e}, slowest solve {slowest:.3f} s")
    assert ok


def test_acceptance_2_variational_consistency(report):
    cp = Couplings(1.2, -0.7, -0.9, 1.0, KernelSpec("cosine_taper", 0.6))
    grid = TimeGrid(0.0, 2.0, 101)
    rng = np.random.default_rng(202)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(20):
        tr = CoefficientTrajectory(grid, O.random_trajectory(rng, grid, 4))
        fd = wirtinger_from_real(action_gradient_fd(tr, SPEC, cp, nodes=range(1, grid.n_nodes - 1)))[1:-1]
        R = ide_residual_unconstrained(tr, SPEC, cp)
        ref = -fd / (cp.B * grid.dt)
        worst = max(worst, float(np.max(np.abs(R - ref)) / np.max(np.abs(ref))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 60.0
    report(2, ok, f"worst relative error {worst:.2e} over 20 trajectories, {elapsed:.1f} s")
    assert ok


def _best_of(fn, repeats=3):
    fn()
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def test_acceptance_3_nonlocal_oracle_and_speedup(report):
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(10):
        J, K = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        spec = ModeSpectrum(rng.normal(size=J), rng.normal(size=K), rng.normal(size=J), rng.normal(size=K))
        n = int(rng.integers(16, 257))
        T = float(rng.uniform(1.0, 6.0))
        family = ("tophat", "cosine_taper", "constant")[i % 3]
        tau = math.inf if family == "constant" else float(rng.uniform(0.1, 0.5) * T) + 1e-7
        cp = Couplings(1.0, -1.0, float(rng.uniform(-2, -0.1)), 1.0, KernelSpec(family, tau))
        grid = TimeGrid(0.0, T, n)
        tr = CoefficientTrajectory(grid, O.random_trajectory(rng, grid, spec.n_modes))
        ref = O.c_tilde(tr.values, spec, cp, grid)
        scale = max(np.max(np.abs(ref)), 1e-300)
        worst = max(worst, float(np.max(np.abs(c_tilde(tr, spec, cp) - ref)) / scale))

    grid = TimeGrid(0.0, 10.0, 2048)
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", grid.duration / 20))
    C = O.random_trajectory(rng, grid, MATCHED.n_modes)
    prev = _kernels.backend()
    name = "numba" if "numba" in _kernels._IMPLS else "numpy"
    try:
        _kernels.use_backend(name)
        banded = nonlocal_operator(MATCHED, cp, grid)
        dense = nonlocal_operator(MATCHED, cp, grid, dense=True)
        t_b = _best_of(lambda: banded.c_tilde(C))
        t_d = _best_of(lambda: dense.c_tilde(C))
    finally:
        _kernels.use_backend(prev)
    speedup = t_d / t_b
    ok = worst <= 1e-12 and speedup >= 5.0
    report(3, ok, f"worst relative error {worst:.2e} over 10 instances; banded speedup {speedup:.1f}x ({name}, N=2048, tau=T/20)")
    assert ok


def test_acceptance_4_steady_state_collapse(report):
    grid = TimeGrid(0.0, 3.0, 61)
    rng = np.random.default_rng(404)
    worst_zero = 0.0
    families = [("tophat", 0.4), ("cosine_taper", 1.3), ("constant", math.inf)]
    for family, tau in families:
        for _ in range(5):
            cp = Couplings(float(rng.uniform(0.2, 2)), float(rng.normal() * 3), float(rng.normal() * 3), 1.0, KernelSpec(family, tau))
            for a in (0, 3):
                c = np.zeros(4, complex)
                c[a] = np.exp(1j * rng.uniform(0, 2 * np.pi))
                tr = CoefficientTrajectory.constant(grid, c)
                worst_zero = max(worst_zero, float(np.max(np.abs(ide_residual_unconstrained(tr, MATCHED, cp)))))
    smallest = math.inf
    for family, tau in families:
        cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec(family, tau))
        c = np.array([math.sqrt(0.9), math.sqrt(0.1), 0, 0], complex)
        tr = CoefficientTrajectory.constant(grid, c)
        smallest = min(smallest, float(np.max(np.abs(c_tilde(tr, MATCHED, cp)))))
    ok = worst_zero == 0.0 and smallest > 1e-10
    report(4, ok, f"collapsed residual max {worst_zero:.1e} (exact zero required); off-diagonal C_tilde min {smallest:.2e}")
    assert ok


@pytest.mark.filterwarnings("ignore:.*degenerate joint energy")
def test_acceptance_5_constrained_conservation(report):
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    res = solve_bvp(C7030, ZERO_E, cp, TimeGrid(0.0, 4.0, 81), SolveConfig(variant="constrained", max_iters=100))
    w = np.sum(np.abs(res.trajectory.values) ** 2, axis=1)
    dev = float(np.max(np.abs(w - 1.0)))
    imag = float(res.diagnostics.get("lambda_imag_residue", math.inf))
    real = res.lambda_trace is not None and np.all(np.isreal(res.lambda_trace))
    ok = bool(res.converged and dev <= 1e-6 and imag <= 1e-12 and real)
    report(5, ok, f"converged={res.converged}, max |sum|C|^2 - 1| {dev:.2e}, lambda imaginary residue {imag:.2e} (zero-energy matched spectrum)")
    assert ok


def test_acceptance_6_nbc_emergence(report, tmp_path):
    cases = [
        (MATCHED, np.array([math.sqrt(0.5), 0, 0, math.sqrt(0.5)], complex), 4.0, 81),
        (MATCHED, C7030, 3.0, 61),
        (MATCHED, C7030, 5.0, 101),
        (SPEC, C7030, 2.0, 41),
    ]
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    cfg = SolveConfig(max_iters=100)
    n_conv, worst = 0, 0.0
    for spec, c0, T, n in cases:
        res = solve_bvp(c0, spec, cp, TimeGrid(0.0, T, n), cfg)
        if res.converged:
            n_conv += 1
            worst = max(worst, float(np.linalg.norm(res.nbc_residual)))
    raw = {
        "model": {"sigma1": [1.0, -1.0], "sigma2": [1.0, -1.0], "e1": [0.0, 1.0], "e2": [0.0, 0.3],
                  "initial_state": [[math.sqrt(0.5), 0], [0, 0], [0, 0], [math.sqrt(0.5), 0]]},
        "grid": {"t_i": 0.0, "t_f": 4.0, "n_nodes": 81},
        "solve": {"max_iters": 100},
    }
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(raw))
    code = main(["solve", "--config", str(cfgp), "--out", str(tmp_path / "run")])
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())["result"]
    recorded = isinstance(man.get("cdot_tf_norm"), float)
    ok = n_conv > 0 and worst <= cfg.residual_tol and code == 0 and recorded
    report(6, ok, f"{n_conv}/{len(cases)} converged, worst ||nbc|| {worst:.2e} <= {cfg.residual_tol:g}; manifest ||C_dot(t_f)|| = {man.get('cdot_tf_norm')}")
    assert ok


def test_acceptance_7_appendix_battery(report, capsys):
    from qcollapse.varcalc2t import refinement_order, run_battery

    results = run_battery()
    _, orders = refinement_order()
    negative = run_battery(inject_sign_error=True)
    ok = all(r.passed for r in results) and bool(np.all((orders >= 1.7) & (orders <= 2.3))) and not any(r.passed for r in negative)
    detail = ", ".join(f"{r.name}={'ok' if r.passed else 'FAIL'}" for r in results)
    report(7, ok, f"{detail}; orders {np.round(orders, 3).tolist()}; sign-flip control fails all")
    assert ok


def test_acceptance_8_ensemble_integrity(report):
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    spec = ModeSpectrum([1, -1], [1, -1], [0, 0.5], [0, 0.2])
    setup = EnsembleSetup(spec, cp, C7030, n_nodes=41, solve=SolveConfig(max_iters=100))
    dist = HiddenVariableDistribution(3.0, 1.0)
    a = json.dumps(run_ensemble(setup, dist, 8, seed=808).to_dict(), sort_keys=True)
    b = json.dumps(run_ensemble(setup, dist, 8, seed=808).to_dict(), sort_keys=True)
    rep = json.loads(a)
    fsum = sum(rep["frequencies"]) if rep["frequencies"] else math.nan
    single_spec = ModeSpectrum([0.5], [0.5, -1.0], [0.0], [0.0, 0.4])
    single = run_ensemble(EnsembleSetup(single_spec, cp, [1.0, 0.0], n_nodes=41), dist, 4, seed=1)
    ok = a == b and rep["n_collapsed"] > 0 and abs(fsum - 1.0) <= 1e-12 and single.frequencies == [1.0]
    report(8, ok, f"byte-identical={a == b}, collapsed {rep['n_collapsed']}/8 with frequency sum {fsum!r}; single-outcome frequencies {single.frequencies}")
    assert ok


@pytest.mark.slow
def test_acceptance_9_born_rule_instrument(report, tmp_path):
    out = tmp_path / "ens"
    t0 = time.perf_counter()
    code = main(["ensemble", "--config", str(ROOT / "configs" / "ensemble_7030.json"), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    rep = json.loads((out / "report.json").read_text())
    fields = ("frequencies", "max_abs_deviation", "chi_square", "chi_square_p", "drift_bound_mean", "drift_bound_max", "window_ratio")
    present = all(rep.get(k) is not None for k in fields) and len(rep["frequencies"]) == 2
    # the criterion is completion plus report content; the CLI exit code only reflects
    # the configured min_converged_fraction and is printed, not asserted
    ok = code in (0, 2) and rep["n_realizations"] == 200 and present and elapsed < 1800
    report(
        9, ok,
        f"{elapsed / 60:.1f} min, exit {code}; collapsed {rep['n_collapsed']}, uncollapsed {rep['n_uncollapsed']}, diverged {rep['n_diverged']}; "
        f"frequencies {np.round(rep['frequencies'], 3).tolist() if rep['frequencies'] else []} vs {rep['initial_weights']}; "
        f"max deviation {rep['max_abs_deviation']}; chi2 {rep['chi_square']} (p={rep['chi_square_p']}); "
        f"window/gap ratio {rep['window_ratio']:.2f}",
    )
    assert ok


def test_acceptance_10_phase_term_symmetry(report):
    grid = TimeGrid(0.0, 3.0, 61)
    rng = np.random.default_rng(1010)
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    trajs = [CoefficientTrajectory(grid, O.random_trajectory(rng, grid, 4)) for _ in range(20)]
    res = solve_bvp(C7030, MATCHED, cp, grid, SolveConfig(max_iters=100))
    trajs.append(res.trajectory)
    paired = [t for tr in trajs for t in (tr, tr.conj())]
    value = phase_term_average_check(paired, SPEC, cp)
    single = max(abs(phase_term(tr, SPEC, cp)) for tr in trajs)
    ok = abs(value) <= 1e-12 and single > 1e-6
    report(10, ok, f"conjugate-pair average {value:.1e} over {len(paired)} trajectories (largest single term {single:.2e})")
    assert ok
