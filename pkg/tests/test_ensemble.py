import json
import math

import numpy as np
import pytest
from scipy import stats

import _oracles as O
from qcollapse.ensemble import (
    EnsembleSetup,
    HiddenVariableDistribution,
    chi_square,
    default_halfwidth,
    drift_probe,
    initial_class_weights,
    min_energy_gap,
    moving_average,
    moving_average_all,
    phase_term,
    phase_term_average_check,
    run_ensemble,
)
from qcollapse.errors import ConfigError, EnsembleError
from qcollapse.kernel import KernelSpec
from qcollapse.model import Couplings, ModeSpectrum, TimeGrid
from qcollapse.solver import SolveConfig
from qcollapse.trajectory import CoefficientTrajectory

SPEC = ModeSpectrum([1.0, -1.0], [0.8, -1.0], [0.0, 1.0], [0.0, 0.35])
CP = Couplings(1.3, -0.7, -0.9, 1.0, KernelSpec("cosine_taper", 0.6))
GRID = TimeGrid(0.0, 2.0, 41)


def rand_traj(seed, spec=SPEC, grid=GRID):
    return CoefficientTrajectory(grid, O.random_trajectory(np.random.default_rng(seed), grid, spec.n_modes))


def test_distribution_validation_and_sampling():
    with pytest.raises(ConfigError):
        HiddenVariableDistribution(1.0, 1.0)
    with pytest.raises(ConfigError):
        HiddenVariableDistribution(5.0, 1.0, law="gaussian")
    with pytest.raises(ConfigError):
        HiddenVariableDistribution(5.0, -1.0)
    d = HiddenVariableDistribution(5.0, 2.0)
    T, ph = d.sample(1000, np.random.default_rng(0), 3)
    assert T.min() >= 3.0 and T.max() <= 7.0 and np.all(ph == 0)
    T2, _ = d.sample(1000, np.random.default_rng(0), 3)
    assert np.array_equal(T, T2)
    _, ph = HiddenVariableDistribution(5.0, 2.0, initial_phase_jitter=0.3).sample(50, np.random.default_rng(1), 3)
    assert ph.shape == (50, 3) and np.max(np.abs(ph)) <= 0.3


def test_default_halfwidth_ratio():
    spec = ModeSpectrum([1, -1], [1, -1], [0, 1], [0, 0.3])
    assert min_energy_gap(spec) == pytest.approx(0.3)
    hw = default_halfwidth(spec, 1.0)
    assert 2 * hw * 0.3 == pytest.approx(50.0)


def test_moving_average_examples():
    cp = Couplings(1.0, -1, -1, 1.0, KernelSpec("constant", math.inf))
    tr = CoefficientTrajectory.constant(GRID, [0.6j, 0.8])
    assert moving_average(tr, cp, 10, 1) == pytest.approx(0.64 * GRID.duration, rel=1e-14)
    zero = CoefficientTrajectory(GRID, np.zeros((41, 2), complex))
    assert moving_average(zero, cp, 3, 0) == 0.0


def test_moving_average_dense_oracle():
    tr = rand_traj(1)
    allv = moving_average_all(tr, CP)
    for node in (0, 7, 20, 40):
        for mode in range(4):
            ref = O.moving_average(tr.values, CP, GRID, node, mode)
            assert moving_average(tr, CP, node, mode) == pytest.approx(ref, rel=1e-12)
            assert allv[node, mode] == pytest.approx(ref, rel=1e-12)


def test_drift_probe_examples():
    tr = CoefficientTrajectory.constant(GRID, O.random_state(np.random.default_rng(2), 4))
    p, bound = drift_probe(tr, SPEC, Couplings(1.0, 0.0, 0.0))
    assert np.all(p == 0) and np.all(bound == 0)
    matched = ModeSpectrum([1, -1], [1, -1], [0, 1], [0, 0.3])
    vals = O.random_trajectory(np.random.default_rng(3), GRID, 4)
    vals[:, [1, 2]] = 0.0
    tr = CoefficientTrajectory(GRID, vals)
    p, _ = drift_probe(tr, matched, CP)
    cd = np.gradient(tr.values, GRID.dt, axis=0, edge_order=2)
    kin = (np.abs(cd) ** 2).reshape(-1, 2, 2).sum(axis=2)
    assert np.allclose(p, kin, rtol=1e-12, atol=1e-14)


def test_drift_probe_direct_summation():
    tr = rand_traj(4)
    p, bound = drift_probe(tr, SPEC, CP)
    C = tr.values
    cd = np.gradient(C, GRID.dt, axis=0, edge_order=2)
    kappa = 2 * CP.nu / CP.B
    ref = np.zeros((41, 2))
    for n in range(41):
        for j in range(2):
            for k in range(2):
                a = 2 * j + k
                d2 = (SPEC.sigma1[j] - SPEC.sigma2[k]) ** 2
                avg = O.moving_average(C, CP, GRID, n, a)
                ref[n, j] += abs(cd[n, a]) ** 2 + CP.mu / CP.B * d2 * abs(C[n, a]) ** 2 + kappa * d2 * avg * abs(C[n, a]) ** 2
    assert np.allclose(p, ref, rtol=1e-12, atol=1e-13)
    w = O.trapezoid_weights(GRID)
    assert np.allclose(bound, 2 * GRID.duration * (w @ np.abs(ref)), rtol=1e-12)
    assert np.all(bound >= 0)


def test_phase_term_examples():
    tr = CoefficientTrajectory.constant(GRID, [0.6, 0.8j, 0, 0])
    assert phase_term(tr, SPEC, CP) == 0.0
    tr = rand_traj(5)
    assert phase_term_average_check([tr, tr.conj()], SPEC, CP) == 0.0
    assert phase_term(tr, SPEC, CP) != 0.0


def test_chi_square_formula():
    counts = np.array([130, 70])
    w = np.array([0.7, 0.3])
    stat, dof, p = chi_square(counts, w)
    ref = sum((c - 200 * x) ** 2 / (200 * x) for c, x in zip(counts, w))
    assert stat == pytest.approx(ref, rel=1e-14) and dof == 1
    assert p == pytest.approx(stats.chi2.sf(ref, 1), rel=1e-12)
    assert chi_square([5], [1.0]) == (0.0, 0, 1.0)
    assert chi_square([3, 1], [1.0, 0.0])[0] == math.inf


def test_initial_class_weights():
    c = np.array([math.sqrt(0.7), 0, 0, math.sqrt(0.3)])
    assert np.allclose(initial_class_weights(SPEC, c), [0.7, 0.3])


# ---------------------------------------------------------------- run_ensemble

FREE = Couplings(1.0, 0.0, 0.0, 1.0, KernelSpec("cosine_taper", 1.0))


def test_free_realization_stays_uncollapsed():
    c = np.array([math.sqrt(0.5), 0, 0, math.sqrt(0.5)])
    setup = EnsembleSetup(SPEC, FREE, c, n_nodes=21, solve=SolveConfig(terminal="stationary"))
    rep = run_ensemble(setup, HiddenVariableDistribution(3.0, 1.0), 1, seed=0)
    assert rep.n_uncollapsed == 1 and rep.n_collapsed == 0 and rep.frequencies == []
    assert rep.max_abs_deviation is None and rep.chi_square is None


def test_single_outcome_system():
    spec = ModeSpectrum([0.5], [0.5, -1.0], [0.0], [0.0, 0.4])
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    setup = EnsembleSetup(spec, cp, [np.exp(0.2j), 0.0], n_nodes=41)
    for seed in (0, 1):
        rep = run_ensemble(setup, HiddenVariableDistribution(3.0, 1.0), 3, seed=seed)
        assert rep.frequencies == [1.0]
        assert rep.class_labels == [0.5]


@pytest.fixture(scope="module")
def small_ensemble():
    spec = ModeSpectrum([1, -1], [1, -1], [0, 0.5], [0, 0.2])
    cp = Couplings(1.0, -1.0, -1.0, 1.0, KernelSpec("cosine_taper", 1.0))
    c = np.array([math.sqrt(0.7), 0, 0, math.sqrt(0.3)])
    setup = EnsembleSetup(spec, cp, c, n_nodes=41, solve=SolveConfig(max_iters=100))
    dist = HiddenVariableDistribution(3.0, 1.0)
    return setup, dist


def test_report_integrity_and_determinism(small_ensemble):
    setup, dist = small_ensemble
    a = run_ensemble(setup, dist, 6, seed=11)
    b = run_ensemble(setup, dist, 6, seed=11)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert len(a.per_realization) == 6
    if a.n_collapsed:
        assert abs(sum(a.frequencies) - 1.0) <= 1e-12
        assert a.max_abs_deviation == pytest.approx(max(abs(f - w) for f, w in zip(a.frequencies, a.initial_weights)))
    assert a.n_collapsed + a.n_uncollapsed + a.n_diverged == 6
    c = run_ensemble(setup, dist, 6, seed=12)
    assert [r["T"] for r in c.per_realization] != [r["T"] for r in a.per_realization]


def test_parallel_pool_matches_serial(small_ensemble):
    setup, dist = small_ensemble
    a = run_ensemble(setup, dist, 4, seed=3, threads=1)
    b = run_ensemble(setup, dist, 4, seed=3, threads=2)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_all_diverged_raises():
    c = np.array([math.sqrt(0.5), 0, 0, math.sqrt(0.5)])
    spec = ModeSpectrum([1, -1], [1, -1], [0, 0.5], [0, 0.2])
    cfg = SolveConfig(max_iters=1, continuation_steps_nu=1, max_step_halvings=0)
    setup = EnsembleSetup(spec, Couplings(1.0, -1.0, -1.0), c, n_nodes=41, solve=cfg)
    with pytest.raises(EnsembleError) as exc:
        run_ensemble(setup, HiddenVariableDistribution(3.0, 1.0), 2, seed=0)
    assert len(exc.value.diagnostics) == 2


def test_setup_validation():
    with pytest.raises(ConfigError):
        EnsembleSetup(SPEC, CP, [1.0, 0.0])
    setup = EnsembleSetup(SPEC, FREE, [1.0, 0, 0, 0])
    with pytest.raises(ConfigError):
        run_ensemble(setup, HiddenVariableDistribution(3.0, 1.0), 0, seed=0)
