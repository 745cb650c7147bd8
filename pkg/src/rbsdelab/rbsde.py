"""Reflected solvers and their verification reports.

The backward sweep reflects three times per step, in backward order:

* at the interval's right limit, against the barrier's ``end`` layer,
  parent-measurably (the predictable-jump ledger);
* at the interval's start, against the ``open`` layer (the open-interval
  ledger, the grid stand-in for the vanishing continuous part);
* at the instant itself, against the ``at`` layer (the right-jump ledger).

Every ledger increment is a max-minus-argument difference, so all three
complementarity sums vanish identically, not merely within tolerance.
The reported left-limit slot is completed nodewise as
``pre = end-layer (inherited) v at``, which makes both reflection
identities hold exactly at every node.

Sweeps are sequential level to level; within a level every node is an
independent vectorized lane with a fixed reduction order, so outputs are
deterministic regardless of how the per-node work is scheduled.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .barriers import Barrier, CadlagBarrier, cadlag_approx_sequence, restrict_to_base
from .bsde import BsdeSolution, solve_penalized_bsde, step_coeffs
from .drivers import Driver, implicit_step
from .exceptions import ModelError, PreconditionError
from .lattice import LatticeModel, cond_exp
from .slots import SlotProcess


@dataclass
class SolutionQuadruple:
    """Reflected solution: value slots, integrands, and the ledger of A.

    ``da_pre[k]`` (k >= 1) are the predictable left jumps at the pre slots,
    ``da_right[k]`` (k <= N-1) the right jumps at the instants, and
    ``da_open[k]`` the open-interval increments.  ``da_pre_parent[k]`` is
    the parent-measurable ledger the backward equation itself closes with;
    it differs from the nodewise ``da_pre`` whenever siblings disagree.
    """

    y: SlotProcess
    z: list
    l: list
    da_pre: list
    da_right: list
    da_open: list
    da_pre_parent: list

    def accumulated(self, model: LatticeModel) -> SlotProcess:
        """Running total of A per node-slot, zero at the first instant."""
        n = len(self.y.at) - 1
        a_at = [np.zeros(model.node_count(0))]
        a_post, a_pre = [], [None]
        for k in range(n):
            a_post.append(a_at[k] + self.da_right[k])
            carried = model.lift(k, a_post[k] + self.da_open[k])
            a_pre.append(carried)
            a_at.append(carried + self.da_pre[k + 1])
        a_post.append(None)
        return SlotProcess(pre=a_pre, at=a_at, post=a_post)


def solve_reflected(model: LatticeModel, driver: Driver, barrier: Barrier) -> SolutionQuadruple:
    """Backward ladlag reflection sweep.

    The terminal instant takes the barrier's terminal layer; each earlier
    step reflects at the interval end (parentwise, before the driver), at
    the interval start, and at the instant.  Runs on any barrier; the
    route-agreement and representation theorems are claimed only for
    right-USC ones.
    """
    barrier.check_shapes(model)
    for step in model.steps:
        driver.check_step_size(step.dt)

    n = model.last_level
    y_at = [None] * (n + 1)
    y_post = [None] * (n + 1)
    z_all = [None] * n
    l_all = [None] * n
    da_right = [None] * n
    da_open = [None] * n
    da_pre_parent = [None] * n

    y_at[n] = barrier.terminal.copy()
    for k in range(n - 1, -1, -1):
        step = model.steps[k]
        expected = cond_exp(model, k, y_at[k + 1])
        z, l = step_coeffs(model, k, y_at[k + 1])
        z_all[k], l_all[k] = z, l

        end_reflected = np.maximum(barrier.end_values[k], expected)
        da_pre_parent[k] = end_reflected - expected

        cont = implicit_step(driver, step.start_time, end_reflected, z, l, step.dt)
        y_post[k] = np.maximum(barrier.open_values[k], cont)
        da_open[k] = y_post[k] - cont
        y_at[k] = np.maximum(barrier.at_values[k], y_post[k])
        da_right[k] = y_at[k] - y_post[k]

    y_pre = [None] * (n + 1)
    da_pre = [None] * (n + 1)
    for k in range(1, n + 1):
        inherited = barrier.pre_layer(model, k)
        y_pre[k] = np.maximum(inherited, y_at[k])
        da_pre[k] = y_pre[k] - y_at[k]

    return SolutionQuadruple(
        y=SlotProcess(pre=y_pre, at=y_at, post=y_post[:-1] + [None]),
        z=z_all,
        l=l_all,
        da_pre=da_pre,
        da_right=da_right,
        da_open=da_open,
        da_pre_parent=da_pre_parent,
    )


@dataclass
class SkorokhodReport:
    """The three complementarity sums and the worst per-node product."""

    pre_jump_sum: float
    right_jump_sum: float
    open_interval_sum: float
    worst_node_product: float
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return (
            abs(self.pre_jump_sum) <= self.tolerance
            and abs(self.right_jump_sum) <= self.tolerance
            and abs(self.open_interval_sum) <= self.tolerance
        )

    def as_dict(self) -> dict:
        return {
            "S1_pre_jumps": self.pre_jump_sum,
            "S2_right_jumps": self.right_jump_sum,
            "S3_open_intervals": self.open_interval_sum,
            "worst_node_product": self.worst_node_product,
            "passed": self.passed,
        }


def skorokhod_residuals(
    model: LatticeModel, quad: SolutionQuadruple, barrier: Barrier
) -> SkorokhodReport:
    """Exact probability-weighted complementarity sums."""
    n = model.last_level
    s1 = s2 = s3 = worst = 0.0
    for k in range(1, n + 1):
        gap = quad.y.pre[k] - barrier.pre_layer(model, k)
        prod = gap * quad.da_pre[k]
        s1 += float(np.dot(model.level_probabilities(k), prod))
        worst = max(worst, float(np.max(np.abs(prod))))
    for k in range(n):
        probs = model.level_probabilities(k)
        prod2 = (quad.y.at[k] - barrier.at_values[k]) * quad.da_right[k]
        prod3 = (quad.y.post[k] - barrier.open_values[k]) * quad.da_open[k]
        s2 += float(np.dot(probs, prod2))
        s3 += float(np.dot(probs, prod3))
        worst = max(worst, float(np.max(np.abs(prod2))), float(np.max(np.abs(prod3))))
    return SkorokhodReport(
        pre_jump_sum=s1, right_jump_sum=s2, open_interval_sum=s3, worst_node_product=worst
    )


def check_solution_invariants(
    model: LatticeModel, quad: SolutionQuadruple, barrier: Barrier
) -> dict:
    """Max violations of the solution-quadruple invariants (all should be 0)."""
    n = model.last_level
    below = 0.0
    for k in range(n + 1):
        below = max(below, -float(np.min(quad.y.at[k] - barrier.at_values[k])))
        if k < n:
            below = max(below, -float(np.min(quad.y.post[k] - barrier.open_values[k])))
        if k >= 1:
            below = max(
                below, -float(np.min(quad.y.pre[k] - barrier.pre_layer(model, k)))
            )
    neg_incr = 0.0
    for arr in quad.da_right + quad.da_open + quad.da_pre[1:]:
        neg_incr = max(neg_incr, -float(np.min(arr)))
    right_id = max(
        float(np.max(np.abs(quad.y.at[k] - quad.y.post[k] - quad.da_right[k])))
        for k in range(n)
    )
    left_id = max(
        float(np.max(np.abs(quad.y.pre[k] - quad.y.at[k] - quad.da_pre[k])))
        for k in range(1, n + 1)
    )
    terminal = float(np.max(np.abs(quad.y.at[n] - barrier.terminal)))
    return {
        "barrier_violation": below,
        "negative_increment": neg_incr,
        "right_jump_identity": right_id,
        "left_jump_identity": left_id,
        "terminal_mismatch": terminal,
    }


# --- monotone approximation route ---------------------------------------


@dataclass
class MonotoneApproxResult:
    direct: SolutionQuadruple
    refinements: list          # (refined model, cadlag approximant, quadruple)
    restricted_at: list        # per n: instant-layer values on the base grid
    gaps: list                 # per n: max instant-slot |Y_n - Y_direct|


def solve_via_monotone_approx(
    model: LatticeModel, driver: Driver, barrier: Barrier, n_max: int
) -> MonotoneApproxResult:
    """Solve through the decreasing cadlag approximants of the barrier.

    For each refinement index the RCLL problem is solved on the refined
    lattice and its instant values are restricted to the base grid.  With
    a driver-free generator the restriction matches the direct solution
    exactly at every index; in general the instant-slot gap shrinks with
    the micro width (the refined lattice repartitions each step, so the
    approach need not be one-sided).
    """
    direct = solve_reflected(model, driver, barrier)
    refinements, restricted, gaps = [], [], []
    for n in range(1, n_max + 1):
        refined, approx = cadlag_approx_sequence(model, barrier, n)
        quad = solve_reflected(refined, driver, approx)
        refinements.append((refined, approx, quad))
        base_at = restrict_to_base(quad.y.at, model)
        restricted.append(base_at)
        gap = max(
            float(np.max(np.abs(base_at[k] - direct.y.at[k])))
            for k in range(model.last_level + 1)
        )
        gaps.append(gap)
    return MonotoneApproxResult(
        direct=direct, refinements=refinements, restricted_at=restricted, gaps=gaps
    )


# --- penalization route --------------------------------------------------


@dataclass
class PenalizationResult:
    direct: SolutionQuadruple
    weights: list
    approximants: list         # per weight: SlotProcess of xi v Y^n
    raw: list                  # per weight: BsdeSolution of the penalized equation
    gaps: list                 # per weight: max slot gap to the direct solution


def solve_via_penalization(
    model: LatticeModel,
    driver: Driver,
    barrier: Barrier,
    weights,
    constraint: str = "envelope",
) -> PenalizationResult:
    """Penalized approximants increasing to the reflected solution.

    The penalty pushes against the right layer of the reflected solution
    itself (the envelope route; it is the smallest supermartingale family
    dominating the barrier, so penalizing against its right limits is
    legitimate).  ``constraint="open"`` penalizes against the barrier's
    own open layer instead, for comparison only, with no convergence claim.

    Each approximant is the barrier-clipped penalized value; its left slot
    is completed through the instant layer so that all three slot layers
    converge to the direct solution's.
    """
    direct = solve_reflected(model, driver, barrier)
    n = model.last_level
    if constraint == "envelope":
        layers = [direct.y.post[k] for k in range(n)]
    elif constraint == "open":
        layers = [barrier.open_values[k] for k in range(n)]
    else:
        raise ModelError(f"unknown penalization constraint {constraint!r}")

    approximants, raw, gaps = [], [], []
    for w in weights:
        sol = solve_penalized_bsde(model, driver, layers, barrier.terminal, w)
        raw.append(sol)
        clipped = _clip_to_barrier(model, sol, barrier)
        approximants.append(clipped)
        gaps.append(clipped.max_abs_gap(direct.y))
    return PenalizationResult(
        direct=direct, weights=list(weights), approximants=approximants, raw=raw, gaps=gaps
    )


def _clip_to_barrier(model: LatticeModel, sol: BsdeSolution, barrier: Barrier) -> SlotProcess:
    n = model.last_level
    at = [np.maximum(barrier.at_values[k], sol.value(k)) for k in range(n + 1)]
    post = [np.maximum(barrier.open_values[k], sol.value(k)) for k in range(n)] + [None]
    pre = [None] + [
        np.maximum(barrier.pre_layer(model, k), at[k]) for k in range(1, n + 1)
    ]
    return SlotProcess(pre=pre, at=at, post=post)


# --- right-shift construction --------------------------------------------


@dataclass
class RightShiftResult:
    quad: SolutionQuadruple
    barrier: CadlagBarrier
    invariants: dict
    residuals: SkorokhodReport

    @property
    def passed(self) -> bool:
        return self.residuals.passed and all(v <= 1e-12 for v in self.invariants.values())


def right_shift_solution(
    model: LatticeModel, quad: SolutionQuadruple, barrier: Barrier
) -> RightShiftResult:
    """Shift a solution to the right-limit barrier.

    Requires the instant layer to sit strictly below the inherited left
    limit at every node of every level >= 1; refuses otherwise, citing the
    first offending node.  The shifted quadruple takes the right-limit
    values as its instant layer and absorbs the right jumps into the
    predictable ledger; it satisfies every solution invariant and all
    complementarity sums against the right-limit barrier exactly.
    """
    n = model.last_level
    for k in range(1, n + 1):
        gap = barrier.pre_layer(model, k) - barrier.at_values[k]
        bad = np.nonzero(gap <= 0)[0]
        if len(bad):
            raise PreconditionError(
                f"strict left gap fails at level {k}, node {int(bad[0])}: "
                f"instant value {barrier.at_values[k][bad[0]]!r} does not sit below "
                f"the inherited left limit {barrier.pre_layer(model, k)[bad[0]]!r}"
            )

    shifted_barrier = CadlagBarrier(
        at_values=[v.copy() for v in barrier.open_values] + [barrier.terminal.copy()],
        open_values=[v.copy() for v in barrier.open_values],
    )

    y_at = [quad.y.post[k].copy() for k in range(n)] + [quad.y.at[n].copy()]
    y_post = [v.copy() for v in y_at[:-1]] + [None]
    y_pre = [None] + [
        np.maximum(shifted_barrier.pre_layer(model, k), y_at[k]) for k in range(1, n + 1)
    ]
    da_pre = [None] + [y_pre[k] - y_at[k] for k in range(1, n + 1)]
    shifted = SolutionQuadruple(
        y=SlotProcess(pre=y_pre, at=y_at, post=y_post),
        z=[v.copy() for v in quad.z],
        l=[v.copy() for v in quad.l],
        da_pre=da_pre,
        da_right=[np.zeros_like(v) for v in quad.da_right],
        da_open=[v.copy() for v in quad.da_open],
        da_pre_parent=[v.copy() for v in quad.da_pre_parent],
    )
    invariants = check_solution_invariants(model, shifted, shifted_barrier)
    residuals = skorokhod_residuals(model, shifted, shifted_barrier)
    return RightShiftResult(
        quad=shifted, barrier=shifted_barrier, invariants=invariants, residuals=residuals
    )


# --- generalized complementarity check -----------------------------------


@dataclass
class PengXuReport:
    right_jump_max: float
    right_continuity_gap: float
    residuals: list            # one complementarity sum per sampled process
    rejected: int
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return (
            self.right_jump_max <= self.tolerance
            and self.right_continuity_gap <= self.tolerance
            and all(abs(r) <= self.tolerance for r in self.residuals)
        )


def admissible_interpolant_bounds(
    model: LatticeModel, quad: SolutionQuadruple, barrier: Barrier
) -> tuple[list, list]:
    """Per-interval bounds for cadlag processes squeezed between barrier and solution.

    The squeeze holds almost everywhere in time, which on the grid means on
    the open intervals; the upper bound is the solution's value there, both
    at the interval start and through its inherited left limit.
    """
    n = model.last_level
    lo, hi = [], []
    for k in range(n):
        b = model.steps[k].branch_count
        child_min = quad.y.pre[k + 1].reshape(-1, b).min(axis=1)
        lo.append(barrier.open_values[k].copy())
        hi.append(np.minimum(quad.y.post[k], child_min))
    return lo, hi


def peng_xu_check(
    model: LatticeModel,
    quad: SolutionQuadruple,
    barrier: Barrier,
    sample_count: int = 20,
    seed: int = 0,
) -> PengXuReport:
    """Generalized complementarity against sampled squeezed cadlag processes.

    Requires the barrier's instant layer not to exceed its right limits.
    Verifies the solution has no right jumps, then checks that the ledger
    charges only where solution and squeezed process coincide.
    """
    if not barrier.xi_leq_xi_plus():
        raise PreconditionError(
            "generalized complementarity requires the instant layer "
            "to sit below the right limits everywhere"
        )
    n = model.last_level
    right_jump = max(float(np.max(np.abs(v))) for v in quad.da_right)
    rc_gap = max(
        float(np.max(np.abs(quad.y.at[k] - quad.y.post[k]))) for k in range(n)
    )

    lo, hi = admissible_interpolant_bounds(model, quad, barrier)
    rng = np.random.default_rng(seed)
    residuals = []
    rejected = 0
    for s in range(sample_count):
        if s == 0:
            opens = [v.copy() for v in lo]            # the upper cadlag envelope
        elif s == 1:
            opens = [v.copy() for v in hi]            # the solution itself
        elif s == 2:
            opens = [(a + b) / 2.0 for a, b in zip(lo, hi)]
        else:
            opens = [
                a + rng.uniform(0.0, 1.0, a.shape) * (b - a) for a, b in zip(lo, hi)
            ]
        if any(np.any(o < a - 1e-15) or np.any(o > b + 1e-15)
               for o, a, b in zip(opens, lo, hi)):
            rejected += 1
            continue
        residuals.append(_generalized_residual(model, quad, opens))
    return PengXuReport(
        right_jump_max=right_jump,
        right_continuity_gap=rc_gap,
        residuals=residuals,
        rejected=rejected,
    )


def _generalized_residual(model: LatticeModel, quad: SolutionQuadruple, opens: list) -> float:
    n = model.last_level
    total = 0.0
    for k in range(n):
        probs = model.level_probabilities(k)
        total += float(np.dot(probs, (quad.y.post[k] - opens[k]) * quad.da_open[k]))
        total += float(
            np.dot(probs, (quad.y.at[k] - opens[k]) * quad.da_right[k])
        )
    for k in range(1, n + 1):
        probs = model.level_probabilities(k)
        star_pre = model.lift(k - 1, opens[k - 1])
        total += float(np.dot(probs, (quad.y.pre[k] - star_pre) * quad.da_pre[k]))
    return total


# --- CSV dump -------------------------------------------------------------


def verify_quadruple_csv(quadruple_csv: str, barrier_csv: str, tolerance: float = 1e-12) -> dict:
    """Check a dumped quadruple against a dumped barrier, file-only.

    The tree shape is recovered from the per-level node counts (branching
    is homogeneous within a level), so the checks that need no transition
    probabilities all run: domination of every barrier layer, nonnegative
    ledger increments, both jump identities, and the per-node
    complementarity products.  Probability-weighted sums need the model
    and stay with ``skorokhod_residuals``.
    """
    y, da = {}, {}
    for row in csv.DictReader(io.StringIO(quadruple_csv)):
        key = (int(row["level"]), int(row["nodeId"]), row["slot"])
        y[key] = float(row["Y"])
        da[key] = {
            "dAd": float(row["dAd"]) if row.get("dAd") else None,
            "dAplus": float(row["dAplus"]) if row.get("dAplus") else None,
            "dAopen": float(row["dAopen"]) if row.get("dAopen") else None,
        }
    bar_at, bar_open = {}, {}
    for row in csv.DictReader(io.StringIO(barrier_csv)):
        k, j = int(row["level"]), int(row["nodeId"])
        bar_at[(k, j)] = float(row["atValue"])
        if row.get("openValue"):
            bar_open[(k, j)] = float(row["openValue"])

    counts = {}
    for (k, j, _slot) in y:
        counts[k] = max(counts.get(k, 0), j + 1)
    n = max(counts)
    if sorted(counts) != list(range(n + 1)):
        raise ModelError("quadruple CSV misses levels")

    checks = {
        "barrier_violation": 0.0,
        "negative_increment": 0.0,
        "right_jump_identity": 0.0,
        "left_jump_identity": 0.0,
        "complementarity": 0.0,
    }
    for k in range(n + 1):
        for j in range(counts[k]):
            at = y[(k, j, "at")]
            checks["barrier_violation"] = max(
                checks["barrier_violation"], bar_at[(k, j)] - at
            )
            if k < n:
                post = y[(k, j, "post")]
                d_plus = da[(k, j, "at")]["dAplus"]
                d_open = da[(k, j, "post")]["dAopen"]
                checks["barrier_violation"] = max(
                    checks["barrier_violation"], bar_open[(k, j)] - post
                )
                checks["negative_increment"] = max(
                    checks["negative_increment"], -d_plus, -d_open
                )
                checks["right_jump_identity"] = max(
                    checks["right_jump_identity"], abs(at - post - d_plus)
                )
                checks["complementarity"] = max(
                    checks["complementarity"],
                    abs((at - bar_at[(k, j)]) * d_plus),
                    abs((post - bar_open[(k, j)]) * d_open),
                )
            if k >= 1:
                parent = j // (counts[k] // counts[k - 1])
                inherited = bar_open[(k - 1, parent)]
                pre = y[(k, j, "pre")]
                d_pre = da[(k, j, "pre")]["dAd"]
                checks["barrier_violation"] = max(
                    checks["barrier_violation"], inherited - pre
                )
                checks["negative_increment"] = max(checks["negative_increment"], -d_pre)
                checks["left_jump_identity"] = max(
                    checks["left_jump_identity"], abs(pre - at - d_pre)
                )
                checks["complementarity"] = max(
                    checks["complementarity"], abs((pre - inherited) * d_pre)
                )
    checks["passed"] = all(v <= tolerance for v in checks.values() if not isinstance(v, bool))
    return checks


def quadruple_to_csv(model: LatticeModel, quad: SolutionQuadruple) -> str:
    """Dump per node-slot: level,nodeId,slot,Y,Z,l_i...,dAd,dAplus,dAopen."""
    m = model.mark_count
    header = ["level", "nodeId", "slot", "Y", "Z"]
    header += [f"l_{i}" for i in range(m)]
    header += ["dAd", "dAplus", "dAopen"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    n = model.last_level
    for k in range(n + 1):
        for j in range(model.node_count(k)):
            if k >= 1:
                row = [k, j, "pre", repr(float(quad.y.pre[k][j])), ""]
                row += [""] * m
                row += [repr(float(quad.da_pre[k][j])), "", ""]
                writer.writerow(row)
            z = repr(float(quad.z[k][j])) if k < n else ""
            ls = [repr(float(quad.l[k][j, i])) for i in range(m)] if k < n else [""] * m
            da_plus = repr(float(quad.da_right[k][j])) if k < n else ""
            writer.writerow([k, j, "at", repr(float(quad.y.at[k][j])), z, *ls, "", da_plus, ""])
            if k < n:
                row = [k, j, "post", repr(float(quad.y.post[k][j])), ""]
                row += [""] * m
                row += ["", "", repr(float(quad.da_open[k][j]))]
                writer.writerow(row)
    return buf.getvalue()
