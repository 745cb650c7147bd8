"""Backward solvers: plain, absorbed-at-a-stopping-rule, and penalized.

All sweeps share one step semantics.  Over a step from level k to k+1 the
value just before the next instant is parent-measurable: branch information
on the lattice is revealed at the instant itself, never strictly before it
(the discrete filtration jumps at grid times).  Stopping decisions inside
an open interval are therefore made at the interval's starting node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drivers import Driver, implicit_step, penalized_step
from .exceptions import ModelError
from .lattice import LatticeModel, cond_exp, martingale_coeffs
from .slots import SlotProcess


def step_coeffs(model: LatticeModel, level: int, values: np.ndarray):
    """Martingale coefficients, zeros on deterministic micro steps."""
    step = model.steps[level]
    if not step.stochastic:
        n = model.node_count(level)
        return np.zeros(n), np.zeros((n, model.mark_count))
    return martingale_coeffs(model, level, values)


@dataclass
class BsdeSolution:
    """Solution triple of the unreflected backward equation.

    ``x`` carries the same value in all three slots of each level, ``z``
    and ``l`` hold one entry per step (zeros on micro steps).
    """

    x: SlotProcess
    z: list
    l: list

    def value(self, level: int) -> np.ndarray:
        return self.x.at[level]


def solve_bsde(model: LatticeModel, driver: Driver, terminal) -> BsdeSolution:
    """Backward sweep for the terminal-condition equation.

    Each step solves ``y = E[next | node] + g(t, y, z, l) * dt`` implicitly
    in y; requires ``K * dt < 1``.
    """
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (model.node_count(model.last_level),):
        raise ModelError("terminal condition has wrong node count")
    for step in model.steps:
        driver.check_step_size(step.dt)

    levels = [None] * model.level_count
    z_all = [None] * model.last_level
    l_all = [None] * model.last_level
    levels[model.last_level] = terminal.copy()
    for k in range(model.last_level - 1, -1, -1):
        step = model.steps[k]
        expected = cond_exp(model, k, levels[k + 1])
        z, l = step_coeffs(model, k, levels[k + 1])
        z_all[k], l_all[k] = z, l
        levels[k] = implicit_step(driver, step.start_time, expected, z, l, step.dt)

    return BsdeSolution(x=SlotProcess.flat(model, levels), z=z_all, l=l_all)


def solve_penalized_bsde(
    model: LatticeModel, driver: Driver, constraint: list, terminal, weight: float
) -> BsdeSolution:
    """Backward sweep with drift penalty ``weight * (y - c)^-`` per step.

    ``constraint[k]`` is the right-limit layer the penalty pushes against,
    one array per level k < N on that level's nodes.  The per-node step is
    piecewise linear in y and solved exactly, so the weight may exceed
    ``1 / dt``; outputs are nondecreasing in the weight.
    """
    terminal = np.asarray(terminal, dtype=float)
    for step in model.steps:
        driver.check_step_size(step.dt)

    levels = [None] * model.level_count
    z_all = [None] * model.last_level
    l_all = [None] * model.last_level
    levels[model.last_level] = terminal.copy()
    for k in range(model.last_level - 1, -1, -1):
        step = model.steps[k]
        expected = cond_exp(model, k, levels[k + 1])
        z, l = step_coeffs(model, k, levels[k + 1])
        z_all[k], l_all[k] = z, l
        levels[k] = penalized_step(
            driver, step.start_time, expected, z, l, step.dt, weight, constraint[k]
        )

    return BsdeSolution(x=SlotProcess.flat(model, levels), z=z_all, l=l_all)


@dataclass
class StopReward:
    """Rewards a stopping rule can collect.

    ``at_layers[k]`` pays at instant ``t_k``; ``open_layers[k]`` pays for a
    stop inside ``(t_k, t_{k+1})``, valued at the interval's right limit
    and measurable at its starting node.
    """

    at_layers: list
    open_layers: list

    @classmethod
    def from_barrier(cls, barrier) -> "StopReward":
        return cls(
            at_layers=[v.copy() for v in barrier.at_values],
            open_layers=[v.copy() for v in barrier.end_values],
        )

    def scaled(self, factors: list) -> "StopReward":
        """Nodewise multiply every layer by per-level factors."""
        return StopReward(
            at_layers=[a * f for a, f in zip(self.at_layers, factors)],
            open_layers=[o * f for o, f in zip(self.open_layers, factors[:-1])],
        )


def _validate_rule(rule, model: LatticeModel, from_level: int):
    if len(rule.stop_at) != model.level_count or len(rule.stop_open) != model.last_level:
        raise ModelError("stopping rule does not match the model's levels")
    for k in range(from_level):
        if np.any(rule.stop_at[k]):
            raise ModelError(f"rule stops at level {k} before the start level {from_level}")
        if k < from_level - 1 and np.any(rule.stop_open[k]):
            raise ModelError(f"rule stops inside interval {k} before the start level")
    if from_level >= 1 and np.any(rule.stop_open[from_level - 1]):
        raise ModelError("rule stops strictly before the start level")


def g_expectation_sweep(
    model: LatticeModel,
    driver: Driver,
    rule,
    reward: StopReward,
    from_level: int = 0,
    scale_field: list | None = None,
) -> list:
    """Absorbed backward sweep; returns the value array at every level.

    Stopped node-slots are frozen at their reward; the entry at level k is
    the conditional g-expectation of the stopped reward given that the
    rule has not yet stopped strictly before ``t_k``.
    """
    _validate_rule(rule, model, from_level)
    for step in model.steps:
        driver.check_step_size(step.dt)

    values = [None] * model.level_count
    values[model.last_level] = reward.at_layers[model.last_level].copy()
    for k in range(model.last_level - 1, max(from_level - 1, -1), -1):
        step = model.steps[k]
        scale = scale_field[k] if scale_field is not None else None
        expected = cond_exp(model, k, values[k + 1])
        z, l = step_coeffs(model, k, values[k + 1])
        cont = implicit_step(driver, step.start_time, expected, z, l, step.dt, scale=scale)

        open_mask = np.asarray(rule.stop_open[k], dtype=bool)
        if np.any(open_mask):
            zeros_z = np.zeros_like(z)
            zeros_l = np.zeros_like(l)
            frozen = implicit_step(
                driver, step.start_time, reward.open_layers[k], zeros_z, zeros_l,
                step.dt, scale=scale,
            )
            cont = np.where(open_mask, frozen, cont)

        at_mask = np.asarray(rule.stop_at[k], dtype=bool)
        values[k] = np.where(at_mask, reward.at_layers[k], cont)
    return values


def g_expectation(
    model: LatticeModel,
    driver: Driver,
    rule,
    reward: StopReward,
    from_level: int = 0,
    scale_field: list | None = None,
) -> np.ndarray:
    """Conditional g-expectation of the stopped reward at the start level."""
    return g_expectation_sweep(model, driver, rule, reward, from_level, scale_field)[
        from_level
    ]


def g_expectation_at_rule(
    model: LatticeModel,
    driver: Driver,
    stop_rule,
    reward: StopReward,
    from_rule,
) -> dict:
    """Conditional g-expectation read off at a stopping rule's boundary.

    The start boundary must not come after the stop rule on any path; the
    result maps each of the start rule's stop slots to the value there.
    Start slots inside open intervals read the value of the following
    instant (the absorbed equation is flat across an interval whose start
    has already passed).
    """
    start_levels = [level for level, _, _ in from_rule.stops_of(model)]
    earliest = min(start_levels) if start_levels else 0
    sweep = g_expectation_sweep(model, driver, stop_rule, reward, from_level=earliest)
    out = {}
    for level, node, slot in from_rule.stops_of(model):
        if slot == "at":
            out[(level, node, slot)] = float(sweep[level][node])
        else:
            step = model.steps[level]
            children = range(node * step.branch_count, (node + 1) * step.branch_count)
            out[(level, node, slot)] = float(
                step.probs @ np.array([sweep[level + 1][c] for c in children])
            )
    return out


def path_sum_expectation(
    model: LatticeModel, time_driver, rule, reward: StopReward, from_level: int = 0
) -> np.ndarray:
    """Linear-case oracle: enumerate paths and average reward plus drift.

    Valid only for drivers that depend on time alone; the value of a rule
    is the probability-weighted sum over paths of the stopped reward plus
    the accumulated ``g(t) * dt`` up to the stop.  Independent of the
    backward-sweep code path.
    """
    start_nodes = model.node_count(from_level)
    out = np.zeros(start_nodes)
    for start in range(start_nodes):
        acc = 0.0
        stack = [(from_level, start, 1.0, 0.0)]
        while stack:
            level, node, prob, drift = stack.pop()
            if rule.stop_at[level][node] or level == model.last_level:
                acc += prob * (reward.at_layers[level][node] + drift)
                continue
            step = model.steps[level]
            g_val = float(time_driver(step.start_time, np.zeros(1), np.zeros(1),
                                      np.zeros((1, model.mark_count)))[0])
            drift_next = drift + g_val * step.dt
            if rule.stop_open[level][node]:
                acc += prob * (reward.open_layers[level][node] + drift_next)
                continue
            for b in range(step.branch_count):
                stack.append(
                    (level + 1, node * step.branch_count + b,
                     prob * step.probs[b], drift_next)
                )
        out[start] = acc
    return out


def conditional_scale_field(
    model: LatticeModel, theta_level: int, alpha: np.ndarray
) -> list:
    """Extend a nonnegative value known at one level to every level.

    Above ``theta_level`` each node inherits its ancestor's value; below,
    the conditional expectation stands in (the driver scaling is not yet
    measurable there, so its best predictor is used on both sides of any
    identity built from this field).
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ModelError("scale field must be nonnegative")
    field = [None] * model.level_count
    field[theta_level] = alpha.copy()
    for k in range(theta_level, model.last_level):
        field[k + 1] = model.lift(k, field[k])
    for k in range(theta_level - 1, -1, -1):
        field[k] = cond_exp(model, k, field[k + 1])
    return field
