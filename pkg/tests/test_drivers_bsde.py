"""Driver steps, the plain backward solver, and conditional g-expectations."""

import numpy as np
import pytest

import rbsdelab as rl
from rbsdelab.bsde import StopReward, g_expectation, path_sum_expectation
from rbsdelab.drivers import implicit_step, penalized_step
from rbsdelab.stopping import StoppingRule


@pytest.fixture
def binomial3():
    return rl.build_lattice(rl.TimeGrid(1.0, 3))


# --- implicit and penalized steps ---------------------------------------


def test_implicit_step_linear_matches_fixed_point():
    closed = rl.linear_driver(y_coef=0.5, constant=1.0)
    blind = rl.Driver(
        fn=closed.fn, lipschitz=closed.lipschitz, depends_on_y=True, name="blind"
    )
    base = np.array([2.0, -1.0, 0.3])
    z = np.zeros(3)
    l = np.zeros((3, 0))
    a = implicit_step(closed, 0.0, base, z, l, 0.25)
    b = implicit_step(blind, 0.0, base, z, l, 0.25)
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a, (base + 0.25) / (1 - 0.125))


def test_step_size_guard():
    driver = rl.linear_driver(y_coef=3.0)
    with pytest.raises(rl.StepSizeError):
        implicit_step(driver, 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 0)), 0.5)


def test_penalized_step_hand_example():
    # one step, expectation 0, g = 0, constraint 1: y = n dt / (1 + n dt)
    driver = rl.zero_driver()
    for n in (0.0, 1.0, 7.0, 4096.0):
        y = penalized_step(
            driver, 0.0, np.zeros(1), np.zeros(1), np.zeros((1, 0)), 1.0, n, np.ones(1)
        )
        assert y[0] == pytest.approx(n / (1.0 + n))


def test_penalized_step_monotone_in_weight():
    driver = rl.linear_driver(y_coef=-0.4, constant=0.2)
    base = np.array([-1.0, 0.5, 2.0])
    c = np.array([1.0, 1.0, 1.0])
    prev = None
    for n in [2.0**i for i in range(14)]:
        y = penalized_step(driver, 0.0, base, np.zeros(3), np.zeros((3, 0)), 0.5, n, c)
        if prev is not None:
            assert np.all(y >= prev)
        prev = y
    # binding nodes approach the constraint from below; the free node stays put
    assert prev[0] == pytest.approx(1.0, abs=1e-3)
    assert prev[1] == pytest.approx(1.0, abs=1e-3)
    assert prev[2] == pytest.approx(1.75)


def test_penalized_step_inactive_when_unconstrained():
    driver = rl.constant_driver(0.3)
    base = np.array([5.0])
    free = implicit_step(driver, 0.0, base, np.zeros(1), np.zeros((1, 0)), 0.5)
    pen = penalized_step(
        driver, 0.0, base, np.zeros(1), np.zeros((1, 0)), 0.5, 100.0, np.array([-1e9])
    )
    assert pen[0] == free[0]


# --- Lipschitz probe ------------------------------------------------------


def test_probe_exact_slope():
    assert rl.lipschitz_probe(rl.linear_driver(y_coef=2.0), 500, seed=1) <= 2.0 + 1e-9


def test_probe_constant_driver_zero():
    assert rl.lipschitz_probe(rl.constant_driver(5.0), 200, seed=2) == 0.0


def test_probe_sine_in_z():
    driver = rl.Driver(
        fn=lambda t, y, z, l: np.sin(z), lipschitz=1.0, depends_on_z=True, name="sin"
    )
    est = rl.lipschitz_probe(driver, 2000, seed=3)
    assert est <= 1.0 + 1e-9
    assert est > 0.5


def test_probe_flags_misdeclared_driver():
    bad = rl.Driver(fn=lambda t, y, z, l: 2.0 * y, lipschitz=0.5, depends_on_y=True)
    with pytest.raises(rl.LipschitzViolationError):
        rl.lipschitz_probe(bad, 500, seed=4)


def test_driver_config_registry():
    d = rl.driver_from_config({"type": "linear", "y": 0.3, "z": 0.2}, [])
    assert d.depends_on_y and d.depends_on_z
    with pytest.raises(rl.ConfigError):
        rl.driver_from_config({"type": "nope"}, [])
    table = rl.driver_from_config({"type": "table", "times": [0.0, 0.5], "values": [1.0, 2.0]}, [])
    assert table(0.25, np.zeros(1), np.zeros(1), np.zeros((1, 0)))[0] == 1.0
    assert table(0.75, np.zeros(1), np.zeros(1), np.zeros((1, 0)))[0] == 2.0


# --- plain backward solver ----------------------------------------------


def test_zero_driver_is_martingale(binomial3):
    rng = np.random.default_rng(0)
    terminal = rng.normal(0.0, 2.0, binomial3.node_count(3))
    sol = rl.solve_bsde(binomial3, rl.zero_driver(), terminal)
    for k in range(3):
        assert np.allclose(sol.value(k), rl.cond_exp(binomial3, k, sol.value(k + 1)))
    assert sol.value(0)[0] == pytest.approx(binomial3.expectation(3, terminal))


def test_constant_driver_adds_deterministic_integral(binomial3):
    terminal = np.full(binomial3.node_count(3), 2.0)
    sol = rl.solve_bsde(binomial3, rl.constant_driver(0.7), terminal)
    assert sol.value(0)[0] == pytest.approx(2.0 + 0.7 * 1.0)


def test_discount_driver_closed_form():
    # scalar recursion x_k = x_{k+1} / (1 + r dt) gives E[terminal] / (1 + r dt)^N
    model = rl.build_lattice(rl.TimeGrid(2.0, 4), [0.3])
    rng = np.random.default_rng(5)
    terminal = rng.normal(10.0, 1.0, model.node_count(4))
    r, dt = 0.6, 0.5
    sol = rl.solve_bsde(model, rl.american_discount_driver(r), terminal)
    expected = model.expectation(4, terminal) / (1.0 + r * dt) ** 4
    assert sol.value(0)[0] == pytest.approx(expected, abs=1e-12)


def test_translation_for_y_independent_driver(binomial3):
    rng = np.random.default_rng(6)
    terminal = rng.normal(0.0, 1.0, binomial3.node_count(3))
    driver = rl.linear_driver(z_coef=0.4, constant=-0.2)
    base = rl.solve_bsde(binomial3, driver, terminal)
    shifted = rl.solve_bsde(binomial3, driver, terminal + 3.0)
    for k in range(4):
        assert np.allclose(shifted.value(k) - base.value(k), 3.0, atol=1e-12)


def test_comparison_in_driver_and_terminal(binomial3):
    rng = np.random.default_rng(7)
    terminal = rng.normal(0.0, 1.0, binomial3.node_count(3))
    low = rl.linear_driver(y_coef=0.5, constant=-0.1)
    high = rl.linear_driver(y_coef=0.5, constant=0.4)
    sol_low = rl.solve_bsde(binomial3, low, terminal)
    sol_high = rl.solve_bsde(binomial3, high, terminal + np.abs(rng.normal(size=terminal.shape)))
    for k in range(4):
        assert np.all(sol_high.value(k) >= sol_low.value(k) - 1e-12)


def test_comparison_with_z_dependence_in_weight_regime():
    # |b| sqrt(dt) < 1 keeps the one-step weights positive
    model = rl.build_lattice(rl.TimeGrid(1.0, 4))
    rng = np.random.default_rng(8)
    terminal = rng.normal(0.0, 1.0, model.node_count(4))
    driver = rl.linear_driver(y_coef=0.3, z_coef=0.5)
    a = rl.solve_bsde(model, driver, terminal)
    b = rl.solve_bsde(model, driver, terminal + 1.0)
    for k in range(5):
        assert np.all(b.value(k) >= a.value(k) - 1e-12)


# --- conditional g-expectation along rules --------------------------------


def test_terminal_rule_reduces_to_bsde(binomial3):
    rng = np.random.default_rng(9)
    terminal = rng.normal(0.0, 1.5, binomial3.node_count(3))
    driver = rl.linear_driver(y_coef=-0.5)
    sol = rl.solve_bsde(binomial3, driver, terminal)
    reward = StopReward(
        at_layers=[np.zeros(binomial3.node_count(k)) for k in range(3)] + [terminal],
        open_layers=[np.zeros(binomial3.node_count(k)) for k in range(3)],
    )
    rule = StoppingRule.at_level(binomial3, 3)
    value = g_expectation(binomial3, driver, rule, reward)
    assert np.allclose(value, sol.value(0), atol=1e-13)


def test_immediate_stop_returns_reward(binomial3):
    rng = np.random.default_rng(10)
    reward_layers = [rng.normal(0.0, 1.0, binomial3.node_count(k)) for k in range(4)]
    reward = StopReward(at_layers=reward_layers, open_layers=reward_layers[:3])
    for level in range(4):
        rule = StoppingRule.at_level(binomial3, level)
        value = g_expectation(binomial3, rl.constant_driver(2.0), rule, reward, from_level=level)
        assert np.array_equal(value, reward_layers[level])


def test_depth_two_rule_against_path_enumeration():
    # stop at level 1 on the up branch, else run to the end
    model = rl.build_lattice(rl.TimeGrid(1.0, 2))
    rng = np.random.default_rng(11)
    layers = [rng.normal(0.0, 1.0, model.node_count(k)) for k in range(3)]
    reward = StopReward(at_layers=layers, open_layers=layers[:2])
    rule = StoppingRule.at_level(model, 2)
    rule.stop_at[1][0] = True
    for driver in (rl.zero_driver(), rl.table_driver([0.0, 0.5], [0.4, -0.7])):
        sweep = g_expectation(model, driver, rule, reward)
        brute = path_sum_expectation(model, driver, rule, reward)
        assert np.allclose(sweep, brute, atol=1e-13)
    # by hand for the zero driver
    by_hand = 0.5 * layers[1][0] + 0.25 * (layers[2][2] + layers[2][3])
    assert g_expectation(model, rl.zero_driver(), rule, reward)[0] == pytest.approx(by_hand)


def test_g_expectation_at_rule_boundary(binomial3):
    from rbsdelab.bsde import g_expectation_at_rule

    bar = rl.random_irregular_barrier(binomial3, seed=30, kind="right-usc")
    reward = StopReward.from_barrier(bar)
    stop = StoppingRule.at_level(binomial3, 3)
    start = StoppingRule.at_level(binomial3, 1)
    driver = rl.linear_driver(y_coef=-0.4)
    values = g_expectation_at_rule(binomial3, driver, stop, reward, start)
    plain = rl.solve_bsde(binomial3, driver, bar.terminal)
    for (level, node, slot), v in values.items():
        assert slot == "at" and level == 1
        assert v == pytest.approx(float(plain.value(1)[node]), abs=1e-13)


def test_rule_stopping_before_start_level_rejected(binomial3):
    reward = StopReward(
        at_layers=[np.zeros(binomial3.node_count(k)) for k in range(4)],
        open_layers=[np.zeros(binomial3.node_count(k)) for k in range(3)],
    )
    rule = StoppingRule.at_level(binomial3, 0)
    with pytest.raises(rl.ModelError):
        g_expectation(binomial3, rl.zero_driver(), rule, reward, from_level=1)


# --- penalized solver ------------------------------------------------------


def test_penalized_solver_reduces_to_plain(binomial3):
    rng = np.random.default_rng(12)
    terminal = rng.normal(0.0, 1.0, binomial3.node_count(3))
    driver = rl.linear_driver(y_coef=0.4)
    plain = rl.solve_bsde(binomial3, driver, terminal)
    never = [np.full(binomial3.node_count(k), -1e9) for k in range(3)]
    for weight in (0.0, 64.0):
        constraint = never if weight else [np.zeros(binomial3.node_count(k)) for k in range(3)]
        pen = rl.solve_penalized_bsde(binomial3, driver, never, terminal, weight)
        assert np.allclose(pen.value(0), plain.value(0), atol=1e-13)
    zero_weight = rl.solve_penalized_bsde(
        binomial3, driver, [np.full(binomial3.node_count(k), 1e9) for k in range(3)],
        terminal, 0.0,
    )
    assert np.allclose(zero_weight.value(0), plain.value(0), atol=1e-13)


def test_penalized_solver_monotone_in_weight(binomial3):
    rng = np.random.default_rng(13)
    terminal = rng.normal(0.0, 1.0, binomial3.node_count(3))
    constraint = [rng.normal(0.5, 0.5, binomial3.node_count(k)) for k in range(3)]
    driver = rl.linear_driver(y_coef=-0.3, constant=0.1)
    prev = None
    for weight in [2.0**i for i in range(11)]:
        sol = rl.solve_penalized_bsde(binomial3, driver, constraint, terminal, weight)
        if prev is not None:
            for k in range(4):
                assert np.all(sol.value(k) >= prev.value(k))
        prev = sol
