"""Rule enumeration, the brute-force oracle, and the Snell machinery."""

import numpy as np
import pytest

import rbsdelab as rl
from rbsdelab.bsde import StopReward, g_expectation
from rbsdelab.stopping import (
    StoppingRule,
    bellman_scaling_check,
    brute_force_snell,
    check_supermartingale_family,
    count_stopping_rules,
    enumerate_stopping_rules,
    evaluate_rule_tree,
    hitting_rule,
    instant_hitting_rule,
    shift_envelope,
    snell_dp,
)


def model_of(n, marks=()):
    return rl.build_lattice(rl.TimeGrid(1.0, n), marks)


# --- enumeration and counting ------------------------------------------------


def test_terminal_only_single_rule():
    model = model_of(1)
    assert count_stopping_rules(model, from_level=1) == 1


def test_single_node_three_rules():
    # stop at the instant, stop inside the interval, or continue
    model = model_of(1)
    assert count_stopping_rules(model) == 3
    rules = list(enumerate_stopping_rules(model))
    assert len(rules) == 3


def test_instant_only_count_recursion():
    # f(d + 1) = 1 + f(d)^2 with f(0) = 1 on a binomial tree
    expected = {1: 2, 2: 5, 3: 26, 4: 677}
    for steps, count in expected.items():
        model = model_of(steps)
        assert count_stopping_rules(model, include_open=False) == count


def test_generation_matches_count():
    for steps in (1, 2):
        for include_open in (False, True):
            model = model_of(steps)
            expected = count_stopping_rules(model, include_open=include_open)
            rules = list(enumerate_stopping_rules(model, include_open=include_open))
            assert len(rules) == expected
            # all rules are distinct
            keys = {
                tuple(tuple(v) for v in r.stop_at) + tuple(tuple(v) for v in r.stop_open)
                for r in rules
            }
            assert len(keys) == expected


def test_budget_refusal_reports_count():
    model = model_of(4, [0.2])
    with pytest.raises(rl.BudgetError) as err:
        list(enumerate_stopping_rules(model, budget=1000))
    assert err.value.count > 1000


def test_rule_reachability_normalized():
    model = model_of(2)
    rule = StoppingRule.at_level(model, 0)
    stops = rule.stops_of(model)
    assert stops == [(0, 0, "at")]


# --- oracle versus dynamic programming ----------------------------------------


def test_oracle_matches_dp_right_usc_battery():
    rng = np.random.default_rng(42)
    drivers = [
        rl.zero_driver(),
        rl.constant_driver(-0.6),
        rl.linear_driver(y_coef=0.5),
    ]
    for trial in range(5):
        steps = int(rng.integers(1, 4))
        marks = [0.3] if trial % 2 and steps <= 2 else []
        model = model_of(steps, marks)
        bar = rl.random_irregular_barrier(model, seed=trial, kind="right-usc")
        for driver in drivers:
            dp = snell_dp(model, driver, bar)
            for level in range(steps + 1):
                values, _, _ = brute_force_snell(
                    model, driver, bar, from_level=level, budget=10**6
                )
                assert np.max(np.abs(values - dp.slots.at[level])) <= 1e-10


def test_oracle_z_driver_nonbinding_intervals():
    model = model_of(3)
    base = rl.random_irregular_barrier(model, seed=4, kind="right-usc")
    bar = rl.Barrier(
        at_values=[v.copy() for v in base.at_values],
        open_values=[v - 50.0 for v in base.open_values],
    )
    driver = rl.linear_driver(y_coef=0.3, z_coef=0.4)
    dp = snell_dp(model, driver, bar)
    values, _, _ = brute_force_snell(model, driver, bar, budget=10**6)
    assert np.max(np.abs(values - dp.slots.at[0])) <= 1e-10


def test_put_argmax_rule():
    model = model_of(2)
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    values, rule, _ = brute_force_snell(model, rl.zero_driver(), bar)
    assert values[0] == 11.0
    # continue at the root and through the up node; stop at the down node
    assert not rule.stop_at[0][0]
    assert not rule.stop_at[1][0]
    assert rule.stop_at[1][1]


def test_spike_argmax_stops_immediately():
    model = model_of(1)
    bar = rl.spike_barrier(model, base=-1e9, level=0, nodes=[0], height=5.0, terminal=0.0)
    values, rule, _ = brute_force_snell(model, rl.zero_driver(), bar)
    assert values[0] == 5.0
    assert rule.stop_at[0][0]


def test_constant_barrier_every_rule_optimal():
    model = model_of(2)
    bar = rl.constant_barrier(model, 3.5)
    reward = StopReward.from_barrier(bar)
    for rule in enumerate_stopping_rules(model):
        value = g_expectation(model, rl.zero_driver(), rule, reward)
        assert value[0] == pytest.approx(3.5, abs=1e-13)


def test_tree_evaluator_agrees_with_sweep():
    model = model_of(2, [0.25])
    bar = rl.random_irregular_barrier(model, seed=8, kind="right-usc")
    driver = rl.linear_driver(y_coef=-0.4)
    reward = StopReward.from_barrier(bar)
    cache = {}
    from rbsdelab.stopping import _tree_options

    for tree in _tree_options(model, 0, cache, True, 0, 0)[:40]:
        rule = StoppingRule.from_trees(model, {0: tree})
        lean = evaluate_rule_tree(model, driver, reward, 0, 0, tree)
        sweep = g_expectation(model, driver, rule, reward)
        assert lean == pytest.approx(float(sweep[0]), abs=1e-12)


def test_hitting_rule_attains_value():
    for seed in (10, 11):
        model = model_of(3)
        bar = rl.random_irregular_barrier(model, seed=seed, kind="right-usc")
        driver = rl.linear_driver(y_coef=-0.5)
        quad = rl.solve_reflected(model, driver, bar)
        rule = hitting_rule(model, bar, quad)
        value = g_expectation(model, driver, rule, StopReward.from_barrier(bar))
        assert np.allclose(value, quad.y.at[0], atol=1e-12)


# --- right-limit identity -------------------------------------------------------


def test_right_limit_identity_on_theorem_class():
    """Strictly-after stopping on the barrier equals stopping on its right limits.

    Both interval endpoints are realized on the left side: the stop just
    after an instant is an instant stop on a barrier whose layer holds the
    interval value.
    """
    drivers = [rl.zero_driver(), rl.constant_driver(-0.8), rl.linear_driver(y_coef=0.5)]
    for seed in (40, 41):
        model = model_of(3)
        bar = rl.random_irregular_barrier(model, seed=seed, kind="strict-left-gap")
        assert bar.is_right_usc() and bar.has_strict_left_gap(model)
        plus = rl.CadlagBarrier(
            at_values=[v.copy() for v in bar.open_values] + [bar.terminal.copy()],
            open_values=[v.copy() for v in bar.open_values],
        )
        for driver in drivers:
            for start in range(3):
                hybrid_at = [bar.at_values[k].copy() for k in range(4)]
                hybrid_at[start] = bar.open_values[start].copy()
                for k in range(start):
                    hybrid_at[k] = np.full_like(hybrid_at[k], -1e12)
                hybrid = rl.Barrier(
                    at_values=hybrid_at,
                    open_values=[v.copy() for v in bar.open_values],
                )
                lhs, _, _ = brute_force_snell(
                    model, driver, hybrid, from_level=start, budget=10**6
                )
                rhs, _, _ = brute_force_snell(
                    model, driver, plus, from_level=start, budget=10**6
                )
                assert np.max(np.abs(lhs - rhs)) <= 1e-12


# --- supermartingale family -------------------------------------------------------


def test_snell_family_passes_pair_checks():
    model = model_of(3)
    bar = rl.random_irregular_barrier(model, seed=12, kind="right-usc")
    driver = rl.linear_driver(y_coef=0.4)
    quad = rl.solve_reflected(model, driver, bar)
    family = snell_dp(model, driver, bar)
    report = check_supermartingale_family(
        model, driver, family.slots, barrier=bar, quad=quad
    )
    assert report.passed
    assert report.max_violation <= 1e-12


def test_martingale_case_passes_with_equality():
    model = model_of(2)
    rng = np.random.default_rng(13)
    terminal = rng.normal(0.0, 1.0, model.node_count(2))
    sol = rl.solve_bsde(model, rl.zero_driver(), terminal)
    report = check_supermartingale_family(model, rl.zero_driver(), sol.x)
    assert report.max_violation <= 1e-13
    level_pairs = [v for d, v in report.pair_violations if "->" in d]
    assert max(abs(v) for v in level_pairs) <= 1e-13  # equality for a martingale


def test_barrier_itself_fails_at_binding_spike():
    # a barrier whose continuation beats the spike is no supermartingale
    model = model_of(1)
    bar = rl.Barrier(
        at_values=[np.array([0.0]), np.array([4.0, 4.0])],
        open_values=[np.array([-1e9])],
    )
    report = check_supermartingale_family(model, rl.zero_driver(), bar.to_slots(model))
    assert report.max_violation >= 4.0 - 1e-12


def test_minimality_against_dominating_families():
    model = model_of(3)
    bar = rl.random_irregular_barrier(model, seed=14, kind="right-usc")
    driver = rl.constant_driver(-0.4)
    family = snell_dp(model, driver, bar)
    rng = np.random.default_rng(15)
    for _ in range(5):
        lift = [np.abs(rng.normal(0.5, 0.5, model.node_count(k))) for k in range(4)]
        bigger = rl.Barrier(
            at_values=[bar.at_values[k] + lift[k] for k in range(4)],
            open_values=[bar.open_values[k] + lift[k] for k in range(3)],
        )
        upper = rl.solve_reflected(model, driver, bigger)
        report = check_supermartingale_family(
            model, driver, upper.y, snell=family.slots
        )
        assert report.minimality_gap >= -1e-12


def test_instant_hitting_rule_is_at_only():
    model = model_of(2)
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    quad = rl.solve_reflected(model, rl.zero_driver(), bar)
    rule = instant_hitting_rule(model, bar, quad)
    assert not any(np.any(v) for v in rule.stop_open)


# --- scaled dynamic programming --------------------------------------------------


def test_bellman_alpha_one_is_dp_consistency():
    model = model_of(2)
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    report = bellman_scaling_check(
        model, rl.zero_driver(), bar, theta_level=1, alpha=np.ones(2)
    )
    assert report.passed
    assert report.max_gap <= 1e-12


def test_bellman_alpha_zero_kills_both_sides():
    model = model_of(2)
    bar = rl.random_irregular_barrier(model, seed=16, kind="right-usc")
    report = bellman_scaling_check(
        model, rl.constant_driver(0.9), bar, theta_level=1, alpha=np.zeros(2)
    )
    assert report.passed
    assert np.allclose(report.lhs, 0.0) and np.allclose(report.rhs, 0.0)


def test_bellman_indicator_scaling_linear_driver():
    model = model_of(2)
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    alpha = np.array([2.0, 0.0])  # twice the indicator of the up node
    report = bellman_scaling_check(
        model, rl.linear_driver(y_coef=0.4), bar, theta_level=1, alpha=alpha
    )
    assert report.passed


def test_bellman_random_alpha_battery():
    rng = np.random.default_rng(17)
    for seed in (18, 19):
        model = model_of(3)
        bar = rl.random_irregular_barrier(model, seed=seed, kind="right-usc")
        for driver in (rl.zero_driver(), rl.linear_driver(y_coef=-0.5)):
            alpha = rng.uniform(0.0, 2.0, model.node_count(1))
            report = bellman_scaling_check(model, driver, bar, 1, alpha)
            assert report.max_gap <= 1e-10


def test_bellman_rejects_negative_alpha():
    model = model_of(2)
    bar = rl.constant_barrier(model, 0.0)
    with pytest.raises(rl.PreconditionError):
        bellman_scaling_check(model, rl.zero_driver(), bar, 1, np.array([-1.0, 0.0]))


# --- envelope shift ---------------------------------------------------------------


def test_shift_envelope_zero_shift_is_exact():
    model = model_of(3)
    bar = rl.random_irregular_barrier(model, seed=20, kind="right-usc")
    result = shift_envelope(model, rl.constant_driver(-1.0), bar, [0.0] * 4)
    assert result.passed
    assert result.snell_gap == 0.0
    assert result.quadruple_gap == 0.0


def test_shift_envelope_staircase():
    model = model_of(3)
    bar = rl.random_irregular_barrier(model, seed=21, kind="right-usc")
    result = shift_envelope(model, rl.zero_driver(), bar, [3.0, 2.0, 1.0, 0.0])
    assert result.passed
    assert result.dominates_barrier >= -1e-12
    assert result.left_jump_min >= -1e-12


def test_shift_envelope_refuses_increasing_ramp():
    model = model_of(3)
    bar = rl.random_irregular_barrier(model, seed=22, kind="right-usc")
    with pytest.raises(rl.PreconditionError) as err:
        shift_envelope(model, rl.zero_driver(), bar, [0.0, 5.0, 10.0, 20.0])
    assert "node" in str(err.value)
