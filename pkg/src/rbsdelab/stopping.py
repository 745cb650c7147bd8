"""Nonlinear Snell machinery: rules, enumeration, oracle, scaling, shift.

Stopping decisions are adapted to the lattice filtration, which releases
branch information at the instants.  A rule therefore assigns to each node
one of: stop at the instant (collect the instant layer), stop inside the
following open interval at its right limit (collect the interval layer,
decided at the interval's starting node), or continue into the children.
The brute-force value of a rule is computed by nested conditional
g-expectations with no value reuse across rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .barriers import Barrier
from .bsde import (
    StopReward,
    conditional_scale_field,
    g_expectation,
    g_expectation_sweep,
    step_coeffs,
)
from .drivers import Driver, implicit_step
from .exceptions import BudgetError, ModelError, PreconditionError
from .lattice import LatticeModel, cond_exp
from .rbsde import SolutionQuadruple, solve_reflected
from .slots import SlotProcess

DEFAULT_RULE_BUDGET = 200_000

STOP_AT = ("at",)
STOP_OPEN = ("open",)


@dataclass
class StoppingRule:
    """Adapted stop/continue decisions per node-slot.

    ``stop_at[k][j]`` stops at instant ``t_k`` on node j; ``stop_open[k][j]``
    stops inside ``(t_k, t_{k+1})`` on paths through node j.  Decisions on
    nodes below a stop are unreachable and normalized to False; the
    terminal level always stops.
    """

    stop_at: list
    stop_open: list

    @classmethod
    def at_level(cls, model: LatticeModel, level: int) -> "StoppingRule":
        stop_at = [np.zeros(model.node_count(k), dtype=bool) for k in range(model.level_count)]
        stop_at[level][:] = True
        stop_at[model.last_level][:] = True
        stop_open = [np.zeros(model.node_count(k), dtype=bool) for k in range(model.last_level)]
        return cls(stop_at=stop_at, stop_open=stop_open)

    @classmethod
    def from_trees(cls, model: LatticeModel, trees: dict, from_level: int = 0) -> "StoppingRule":
        """Assemble arrays from per-start-node decision trees."""
        rule = cls.at_level(model, model.last_level)
        rule.stop_at[model.last_level][:] = True
        for node, tree in trees.items():
            _fill(model, rule, from_level, node, tree)
        return rule

    def stops_of(self, model: LatticeModel) -> list:
        """(level, node, slot) triples where the rule stops, reachable only."""
        out = []
        stack = [(0, j) for j in range(model.node_count(0))]
        while stack:
            level, node = stack.pop()
            if self.stop_at[level][node] or level == model.last_level:
                out.append((level, node, "at"))
                continue
            if self.stop_open[level][node]:
                out.append((level, node, "open"))
                continue
            b = model.steps[level].branch_count
            stack.extend((level + 1, node * b + c) for c in range(b))
        return sorted(out)


def _fill(model: LatticeModel, rule: StoppingRule, level: int, node: int, tree):
    if level == model.last_level or tree == STOP_AT:
        rule.stop_at[level][node] = True
        return
    if tree == STOP_OPEN:
        rule.stop_open[level][node] = True
        return
    b = model.steps[level].branch_count
    for c, sub in enumerate(tree[1]):
        _fill(model, rule, level + 1, node * b + c, sub)


def count_stopping_rules(
    model: LatticeModel,
    from_level: int = 0,
    include_open: bool = True,
    min_stop_level: int = 0,
    min_open_level: int | None = None,
) -> int:
    """Rules on one subtree rooted at a from-level node (exact big-int count).

    Instant-only counting satisfies ``f(d+1) = 1 + f(d)**B`` in the number
    of remaining steps; the open slot adds one more stop option per node.
    The open threshold may differ from the instant one because a stop
    inside interval k lands strictly after ``t_k``.
    """
    if min_open_level is None:
        min_open_level = min_stop_level
    counts = [0] * model.level_count
    counts[model.last_level] = 1
    for k in range(model.last_level - 1, from_level - 1, -1):
        b = model.steps[k].branch_count
        options = counts[k + 1] ** b
        if k >= min_stop_level:
            options += 1
        if include_open and k >= min_open_level:
            options += 1
        counts[k] = options
    return counts[from_level]


def _tree_options(model, level, cache, include_open, min_stop_level, min_open_level):
    if level in cache:
        return cache[level]
    if level == model.last_level:
        cache[level] = [STOP_AT]
        return cache[level]
    subs = _tree_options(model, level + 1, cache, include_open, min_stop_level, min_open_level)
    options = []
    if level >= min_stop_level:
        options.append(STOP_AT)
    if include_open and level >= min_open_level:
        options.append(STOP_OPEN)
    options.extend(("go", combo) for combo in product(subs, repeat=model.steps[level].branch_count))
    cache[level] = options
    return options


def enumerate_stopping_rules(
    model: LatticeModel,
    from_level: int = 0,
    include_open: bool = True,
    min_stop_level: int = 0,
    min_open_level: int | None = None,
    budget: int = DEFAULT_RULE_BUDGET,
):
    """Yield every adapted rule exactly once as a StoppingRule.

    Refuses with the exact count when the budget is exceeded.  The stream
    covers the whole forest below ``from_level``, so the count multiplies
    across that level's nodes.
    """
    if min_open_level is None:
        min_open_level = min_stop_level
    per_node = count_stopping_rules(
        model, from_level, include_open, min_stop_level, min_open_level
    )
    nodes = model.node_count(from_level)
    total = per_node**nodes
    if total > budget:
        raise BudgetError(
            f"rule enumeration needs {total} rules, budget is {budget}", count=total
        )
    cache: dict = {}
    options = _tree_options(
        model, from_level, cache, include_open, min_stop_level, min_open_level
    )
    for combo in product(options, repeat=nodes):
        yield StoppingRule.from_trees(
            model, {j: tree for j, tree in enumerate(combo)}, from_level
        )


def evaluate_rule_tree(
    model: LatticeModel,
    driver: Driver,
    reward: StopReward,
    level: int,
    node: int,
    tree,
    scale_field=None,
) -> float:
    """Value of one decision tree at one node by nested g-expectation."""
    if level == model.last_level or tree == STOP_AT:
        return float(reward.at_layers[level][node])
    step = model.steps[level]
    scale = None
    if scale_field is not None:
        scale = np.array([scale_field[level][node]])
    if tree == STOP_OPEN:
        frozen = np.array([reward.open_layers[level][node]])
        out = implicit_step(
            driver, step.start_time, frozen, np.zeros(1),
            np.zeros((1, model.mark_count)), step.dt, scale=scale,
        )
        return float(out[0])
    b = step.branch_count
    child = np.array(
        [
            evaluate_rule_tree(model, driver, reward, level + 1, node * b + c, sub, scale_field)
            for c, sub in enumerate(tree[1])
        ]
    )
    expected = np.array([float(step.probs @ child)])
    z_arr, l_arr = _single_node_coeffs(model, level, child)
    out = implicit_step(driver, step.start_time, expected, z_arr, l_arr, step.dt, scale=scale)
    return float(out[0])


def _single_node_coeffs(model: LatticeModel, level: int, child_values: np.ndarray):
    step = model.steps[level]
    m = model.mark_count
    if not step.stochastic:
        return np.zeros(1), np.zeros((1, m))
    from .lattice import _gram_solve

    weighted, inv = _gram_solve(model, step)
    coeffs = inv @ (child_values @ weighted)
    return np.array([coeffs[1] / step.dt]), coeffs[2:][None, :]


@dataclass
class ValueFamily:
    """Slot-indexed value field with its provenance (DP or brute force)."""

    slots: SlotProcess
    provenance: str

    def dominates_barrier(self, model: LatticeModel, barrier: Barrier) -> float:
        return self.slots.min_slot_gap(barrier.to_slots(model))


def snell_dp(model: LatticeModel, driver: Driver, barrier: Barrier) -> ValueFamily:
    """Value of optimal stopping by dynamic programming.

    Identical recursion to the reflected solver; reflection is the
    maximization step, so the family equals that solver's value slotwise.
    """
    quad = solve_reflected(model, driver, barrier)
    return ValueFamily(slots=quad.y, provenance="DP")


def brute_force_snell(
    model: LatticeModel,
    driver: Driver,
    barrier: Barrier = None,
    from_level: int = 0,
    include_open: bool = True,
    min_stop_level: int = None,
    min_open_level: int | None = None,
    reward: StopReward = None,
    scale_field=None,
    budget: int = DEFAULT_RULE_BUDGET,
):
    """Exhaustive maximum over stopping rules, nodewise at the start level.

    Enumerates one subtree per start node (rule pasting across siblings is
    itself a rule, so the nodewise maximum is attained) and evaluates each
    tree by a nested conditional g-expectation.  Returns the values, the
    pasted argmax rule, and the per-node argmax trees.
    """
    if reward is None:
        if barrier is None:
            raise ModelError("need a barrier or an explicit reward")
        reward = StopReward.from_barrier(barrier)
    if min_stop_level is None:
        min_stop_level = from_level
    if min_open_level is None:
        min_open_level = min_stop_level

    per_node = count_stopping_rules(
        model, from_level, include_open, min_stop_level, min_open_level
    )
    nodes = model.node_count(from_level)
    if per_node * nodes > budget:
        raise BudgetError(
            f"brute force needs {per_node} rule evaluations on each of "
            f"{nodes} nodes, budget is {budget}",
            count=per_node * nodes,
        )

    cache: dict = {}
    options = _tree_options(
        model, from_level, cache, include_open, min_stop_level, min_open_level
    )
    values = np.empty(nodes)
    argmax = {}
    for j in range(nodes):
        best, best_tree = -np.inf, None
        for tree in options:
            v = evaluate_rule_tree(model, driver, reward, from_level, j, tree, scale_field)
            if v > best:
                best, best_tree = v, tree
        values[j] = best
        argmax[j] = best_tree
    rule = StoppingRule.from_trees(model, argmax, from_level)
    return values, rule, argmax


def hitting_rule(
    model: LatticeModel, barrier: Barrier, quad: SolutionQuadruple
) -> StoppingRule:
    """Stop at the first slot where the value touches the barrier.

    Instant contact stops at the instant; otherwise contact of the
    parent-measurable interval-end reflection stops inside the interval.
    """
    n = model.last_level
    rule = StoppingRule.at_level(model, n)
    stack = [(0, j) for j in range(model.node_count(0))]
    while stack:
        level, node = stack.pop()
        if level == n:
            continue
        if quad.y.at[level][node] <= barrier.at_values[level][node]:
            rule.stop_at[level][node] = True
            continue
        expected = float(
            np.dot(model.steps[level].probs,
                   quad.y.at[level + 1][_children(model, level, node)])
        )
        if barrier.end_values[level][node] >= expected:
            rule.stop_open[level][node] = True
            continue
        stack.extend((level + 1, c) for c in _children(model, level, node))
    return rule


def _children(model: LatticeModel, level: int, node: int):
    b = model.steps[level].branch_count
    return range(node * b, node * b + b)


def instant_hitting_rule(
    model: LatticeModel, barrier: Barrier, quad: SolutionQuadruple
) -> StoppingRule:
    """Stop at the first instant where the value touches the instant layer.

    The at-slot-only variant used for stopping-pair sampling: its stop
    values are plain instant readings of any slot process.
    """
    n = model.last_level
    rule = StoppingRule.at_level(model, n)
    stack = [(0, j) for j in range(model.node_count(0))]
    while stack:
        level, node = stack.pop()
        if level == n:
            continue
        if quad.y.at[level][node] <= barrier.at_values[level][node]:
            rule.stop_at[level][node] = True
            continue
        stack.extend((level + 1, c) for c in _children(model, level, node))
    return rule


# --- supermartingale family checks ----------------------------------------


@dataclass
class SupermartingaleReport:
    pair_violations: list      # (description, max violation)
    minimality_gap: float | None
    tolerance: float = 1e-12

    @property
    def max_violation(self) -> float:
        return max((v for _, v in self.pair_violations), default=0.0)

    @property
    def passed(self) -> bool:
        ok = self.max_violation <= self.tolerance
        if self.minimality_gap is not None:
            ok = ok and self.minimality_gap >= -self.tolerance
        return ok


def check_supermartingale_family(
    model: LatticeModel,
    driver: Driver,
    family: SlotProcess,
    barrier: Barrier = None,
    quad: SolutionQuadruple = None,
    snell: SlotProcess = None,
) -> SupermartingaleReport:
    """Sampled stopping-pair supermartingale check, plus minimality.

    Pairs are every deterministic level pair together with barrier-hitting
    rules (contact times concentrate the violations).  When a Snell value
    field is supplied, minimality is asserted: a dominating supermartingale
    family must dominate it slotwise.
    """
    n = model.last_level
    reward = StopReward(
        at_layers=[v.copy() for v in family.at],
        open_layers=[family.post[k].copy() for k in range(n)],
    )
    violations = []
    for i in range(n + 1):
        for j in range(i, n + 1):
            sweep = g_expectation_sweep(
                model, driver, StoppingRule.at_level(model, j), reward, from_level=i
            )
            gap = float(np.max(sweep[i] - family.at[i]))
            violations.append((f"levels {i} -> {j}", gap))
    if barrier is not None and quad is not None:
        rule = instant_hitting_rule(model, barrier, quad)
        for i in range(n):
            shifted = _delay_rule(model, rule, i)
            sweep = g_expectation_sweep(model, driver, shifted, reward, from_level=i)
            gap = float(np.max(sweep[i] - family.at[i]))
            violations.append((f"level {i} -> first contact", gap))

    minimality = None
    if snell is not None:
        minimality = family.min_slot_gap(snell)
    return SupermartingaleReport(pair_violations=violations, minimality_gap=minimality)


def _delay_rule(model: LatticeModel, rule: StoppingRule, from_level: int) -> StoppingRule:
    """The rule's stops, postponed to start no earlier than ``from_level``."""
    out = StoppingRule(
        stop_at=[v.copy() for v in rule.stop_at],
        stop_open=[v.copy() for v in rule.stop_open],
    )
    for k in range(from_level):
        out.stop_at[k][:] = False
        out.stop_open[k][:] = False
    out.stop_at[model.last_level][:] = True
    return out


def one_step_supermartingale_violation(
    model: LatticeModel,
    driver: Driver,
    family: SlotProcess,
    end_values: list,
) -> tuple[float, tuple | None]:
    """Exact one-step dominance check used as an operation hypothesis.

    ``end_values[k]`` is the family's parent-measurable value at the end of
    interval k.  Returns the worst violation and a witness (level, node).
    """
    worst, witness = 0.0, None
    for k in range(model.last_level):
        step = model.steps[k]
        expected = cond_exp(model, k, family.at[k + 1])
        z, l = step_coeffs(model, k, family.at[k + 1])
        target = implicit_step(
            driver, step.start_time, np.maximum(end_values[k], expected), z, l, step.dt
        )
        gap = target - family.post[k]
        j = int(np.argmax(gap))
        if gap[j] > worst:
            worst, witness = float(gap[j]), (k, j)
    return worst, witness


# --- Bellman scaling --------------------------------------------------------


@dataclass
class BellmanReport:
    lhs: np.ndarray
    rhs: np.ndarray
    tolerance: float = 1e-10

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.lhs - self.rhs)))

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tolerance


def bellman_scaling_check(
    model: LatticeModel,
    driver: Driver,
    barrier: Barrier,
    theta_level: int,
    alpha,
    budget: int = DEFAULT_RULE_BUDGET,
) -> BellmanReport:
    """Dynamic-programming consistency under a nonnegative scaling.

    The left side transports the scaled Snell value from the scaling level
    back to the root with the scaled driver; the right side is the
    brute-force supremum over rules stopping no earlier than that level
    with the scaled reward.  The scaled driver is applied in perspective
    form (which preserves the Lipschitz constant); below the scaling level
    the scaling enters through its conditional expectation, identically on
    both sides.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise PreconditionError("scaling must be nonnegative")
    if alpha.shape != (model.node_count(theta_level),):
        raise ModelError("scaling must live on the scaling level's nodes")

    field = conditional_scale_field(model, theta_level, alpha)
    snell = solve_reflected(model, driver, barrier)

    reward_theta = StopReward(
        at_layers=[
            field[k] * snell.y.at[k] if k == theta_level else np.zeros(model.node_count(k))
            for k in range(model.level_count)
        ],
        open_layers=[np.zeros(model.node_count(k)) for k in range(model.last_level)],
    )
    lhs = g_expectation(
        model,
        driver,
        StoppingRule.at_level(model, theta_level),
        reward_theta,
        from_level=0,
        scale_field=field,
    )

    scaled_reward = StopReward.from_barrier(barrier).scaled(field)
    rhs, _, _ = brute_force_snell(
        model,
        driver,
        reward=scaled_reward,
        from_level=0,
        min_stop_level=theta_level,
        scale_field=field,
        budget=budget,
    )
    return BellmanReport(lhs=lhs, rhs=rhs)


# --- envelope shift ---------------------------------------------------------


@dataclass
class ShiftEnvelopeResult:
    envelope_barrier: Barrier      # reflective encoding of R[xi + X] - X
    envelope_slots: SlotProcess    # process view, slot by slot
    dominates_barrier: float       # min slot gap of envelope over barrier
    snell_gap: float               # max |R[envelope] - R[xi]| over slots
    left_jump_min: float           # min of pre - at for the envelope process
    quadruple_gap: float           # max component gap of the two solutions
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return (
            self.dominates_barrier >= -self.tolerance
            and self.snell_gap <= self.tolerance
            and self.left_jump_min >= -self.tolerance
            and self.quadruple_gap <= self.tolerance
        )


def parent_end_values(model: LatticeModel, quad: SolutionQuadruple) -> list:
    """The sweep's parent-measurable interval-end values, per step."""
    return [
        cond_exp(model, k, quad.y.at[k + 1]) + quad.da_pre_parent[k]
        for k in range(model.last_level)
    ]


def shift_envelope(
    model: LatticeModel, driver: Driver, barrier: Barrier, shift_levels
) -> ShiftEnvelopeResult:
    """Snell-invariant barrier replacement through a shift process.

    ``shift_levels`` gives the shift per level (scalars or node arrays); it
    must be continuous in the discrete sense, moving only inside open
    intervals.  Requires the shifted Snell field to stay a one-step
    supermartingale everywhere; refuses with the failing node otherwise.
    The returned envelope has the same Snell field as the barrier and the
    reflected solutions agree in all four components.
    """
    n = model.last_level
    x_at = [
        np.broadcast_to(np.asarray(v, dtype=float), (model.node_count(k),)).astype(float)
        for k, v in enumerate(shift_levels)
    ]
    if len(x_at) != n + 1:
        raise ModelError("shift needs one layer per level")
    x_end = [cond_exp(model, k, x_at[k + 1]) for k in range(n)]

    base = solve_reflected(model, driver, barrier)
    base_end = parent_end_values(model, base)

    family = SlotProcess(
        pre=[None] + [base.y.pre[k] + x_at[k] for k in range(1, n + 1)],
        at=[base.y.at[k] + x_at[k] for k in range(n + 1)],
        post=[base.y.post[k] + x_at[k] for k in range(n)] + [None],
    )
    family_end = [base_end[k] + x_end[k] for k in range(n)]
    worst, witness = one_step_supermartingale_violation(model, driver, family, family_end)
    if worst > 1e-12:
        raise PreconditionError(
            f"shifted Snell field loses the supermartingale property at "
            f"level {witness[0]}, node {witness[1]} (violation {worst:.3e})"
        )

    shifted_barrier = Barrier(
        at_values=[barrier.at_values[k] + x_at[k] for k in range(n + 1)],
        open_values=[barrier.open_values[k] + x_at[k] for k in range(n)],
        end_values=[barrier.end_values[k] + x_end[k] for k in range(n)],
    )
    lifted = solve_reflected(model, driver, shifted_barrier)
    lifted_end = parent_end_values(model, lifted)

    envelope = Barrier(
        at_values=[lifted.y.at[k] - x_at[k] for k in range(n + 1)],
        open_values=[lifted.y.post[k] - x_at[k] for k in range(n)],
        end_values=[lifted_end[k] - x_end[k] for k in range(n)],
        pre_values=[None] + [lifted.y.pre[k] - x_at[k] for k in range(1, n + 1)],
    )
    envelope_slots = SlotProcess(
        pre=[None] + [lifted.y.pre[k] - x_at[k] for k in range(1, n + 1)],
        at=[lifted.y.at[k] - x_at[k] for k in range(n + 1)],
        post=[lifted.y.post[k] - x_at[k] for k in range(n)] + [None],
    )

    dominates = envelope_slots.min_slot_gap(barrier.to_slots(model))
    redone = solve_reflected(model, driver, envelope)
    snell_gap = redone.y.max_abs_gap(base.y)
    left_jump_min = min(
        float(np.min(envelope_slots.pre[k] - envelope_slots.at[k])) for k in range(1, n + 1)
    )
    quad_gap = snell_gap
    for k in range(n):
        quad_gap = max(
            quad_gap,
            float(np.max(np.abs(redone.z[k] - base.z[k]))),
            float(np.max(np.abs(redone.l[k] - base.l[k]))) if model.mark_count else 0.0,
            float(np.max(np.abs(redone.da_right[k] - base.da_right[k]))),
            float(np.max(np.abs(redone.da_open[k] - base.da_open[k]))),
        )
    for k in range(1, n + 1):
        quad_gap = max(quad_gap, float(np.max(np.abs(redone.da_pre[k] - base.da_pre[k]))))

    return ShiftEnvelopeResult(
        envelope_barrier=envelope,
        envelope_slots=envelope_slots,
        dominates_barrier=dominates,
        snell_gap=snell_gap,
        left_jump_min=left_jump_min,
        quadruple_gap=quad_gap,
    )
