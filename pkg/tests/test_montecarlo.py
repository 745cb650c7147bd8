"""Path simulation, regression, and the Monte Carlo cross-check."""

import numpy as np
import pytest

import rbsdelab as rl
from rbsdelab.montecarlo import (
    MarkovDynamics,
    RegressionSpec,
    crr_sign_dynamics,
    regress_cond_exp,
    simulate_paths,
    solve_reflected_mc,
)


def put_dynamics():
    return crr_sign_dynamics(1.0, 2, 100.0, 1.2, 0.8)


def test_single_path_reproducible():
    dyn = put_dynamics()
    a = simulate_paths(dyn, 1, seed=3)
    b = simulate_paths(dyn, 1, seed=3)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.dw, b.dw)


def test_same_seed_identical_ensembles():
    dyn = put_dynamics()
    a = simulate_paths(dyn, 500, seed=11)
    b = simulate_paths(dyn, 500, seed=11)
    assert np.array_equal(a.states, b.states)
    c = simulate_paths(dyn, 500, seed=12)
    assert not np.array_equal(a.dw, c.dw)


def test_zero_intensity_means_no_jumps():
    def step_fn(k, state, dw, jumps):
        return state + dw

    dyn = MarkovDynamics(1.0, 4, 0.0, step_fn, intensities=(0.0,))
    ens = simulate_paths(dyn, 200, seed=5)
    assert np.all(ens.jumps == 0.0)


def test_jump_draws_hit_intensity():
    def step_fn(k, state, dw, jumps):
        return state

    dyn = MarkovDynamics(1.0, 4, 0.0, step_fn, intensities=(0.8,))
    ens = simulate_paths(dyn, 4000, seed=6)
    gates = ens.moment_gates()
    assert abs(gates["jump_0_mean"]) <= gates["jump_0_bound"]
    assert abs(gates["dw_mean"]) <= gates["dw_mean_bound"]


def test_regression_fixes_constants():
    dyn = put_dynamics()
    ens = simulate_paths(dyn, 400, seed=7)
    fitted = regress_cond_exp(ens, 1, np.full(400, 4.25), RegressionSpec(degree=1))
    assert np.allclose(fitted, 4.25)
    binned = regress_cond_exp(ens, 1, np.full(400, 4.25), RegressionSpec(basis="bins", bins=4))
    assert np.allclose(binned, 4.25)


def test_regression_exact_for_linear_targets():
    dyn = put_dynamics()
    ens = simulate_paths(dyn, 400, seed=8)
    target = 2.0 * ens.states[:, 1] - 7.0
    fitted = regress_cond_exp(ens, 1, target, RegressionSpec(degree=1))
    assert np.allclose(fitted, target, atol=1e-9)


def test_regression_reports_residual_for_underfit():
    # quadratic target against a linear basis leaves residual on 3+ states
    def step_fn(k, state, dw, jumps):
        return state + dw

    dyn = MarkovDynamics(1.0, 2, 0.0, step_fn)
    ens = simulate_paths(dyn, 500, seed=9)
    target = ens.states[:, 2] ** 2
    fitted = regress_cond_exp(ens, 2, target, RegressionSpec(degree=1))
    assert float(np.max(np.abs(fitted - target))) > 0.1


def test_overfit_guard():
    dyn = put_dynamics()
    ens = simulate_paths(dyn, 50, seed=10)
    with pytest.raises(rl.ConfigError):
        regress_cond_exp(ens, 1, np.zeros(50), RegressionSpec(degree=9))


def test_singular_design_without_ridge():
    dyn = put_dynamics()
    ens = simulate_paths(dyn, 200, seed=11)
    # at step 0 all states coincide, so degree-2 monomials are collinear
    with pytest.raises(rl.ModelError):
        regress_cond_exp(ens, 0, np.zeros(200), RegressionSpec(degree=2))
    fitted = regress_cond_exp(ens, 0, np.ones(200), RegressionSpec(degree=2, ridge=1e-8))
    assert np.allclose(fitted, 1.0, atol=1e-5)


def test_mc_rejects_z_dependent_drivers():
    with pytest.raises(rl.ConfigError):
        solve_reflected_mc(
            put_dynamics(),
            rl.linear_driver(z_coef=0.5),
            lambda k, s: np.maximum(100.0 - s, 0.0),
            path_count=1000,
            seed=0,
        )


def test_mc_plain_expectation_when_barrier_never_binds():
    dyn = put_dynamics()
    est = solve_reflected_mc(
        dyn,
        rl.zero_driver(),
        lambda k, s: np.where(k == dyn.step_count, np.maximum(100.0 - s, 0.0), -1e9),
        path_count=4000,
        seed=12,
        spec=RegressionSpec(basis="bins", bins=4),
    )
    # lattice European value for the same dynamics
    model = rl.build_lattice(rl.TimeGrid(1.0, 2))
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    european = rl.solve_bsde(model, rl.zero_driver(), bar.terminal)
    assert est.within(float(european.value(0)[0]))


def test_mc_put_matches_lattice():
    est = solve_reflected_mc(
        put_dynamics(),
        rl.zero_driver(),
        lambda k, s: np.maximum(100.0 - s, 0.0),
        path_count=10000,
        seed=99,
        spec=RegressionSpec(basis="bins", bins=8),
    )
    assert est.within(11.0)
    assert est.std_error < 0.5


def test_mc_discount_driver_runs():
    est = solve_reflected_mc(
        put_dynamics(),
        rl.american_discount_driver(0.3),
        lambda k, s: np.maximum(100.0 - s, 0.0),
        path_count=4000,
        seed=13,
        spec=RegressionSpec(basis="bins", bins=8),
    )
    model = rl.build_lattice(rl.TimeGrid(1.0, 2))
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    target = float(rl.solve_reflected(model, rl.american_discount_driver(0.3), bar).y.at[0][0])
    assert est.within(target)


def test_standard_error_scales_with_paths():
    values = []
    for paths in (2000, 8000):
        est = solve_reflected_mc(
            put_dynamics(),
            rl.zero_driver(),
            lambda k, s: np.maximum(100.0 - s, 0.0),
            path_count=paths,
            seed=14,
            spec=RegressionSpec(basis="bins", bins=8),
        )
        values.append(est.std_error)
    # quadrupling the paths should halve the error, within 30 percent slack
    assert values[1] <= values[0] * 0.5 * 1.3
    assert values[1] >= values[0] * 0.5 * 0.7
