"""Scenario configs, the built-in registry, and the experiment runner.

A scenario is a single JSON document: model, driver, barrier, routes or
instance battery, schedules, seeds, and explicit tolerances (no hidden
defaults in anything scientific).  Running one emits CSV tables plus a
JSON summary with pass flags and returns an exit status for CI:

* 0: every check passed
* 1: a tolerance check failed
* 2: the configuration is invalid
* 3: a resource limit (enumeration budget, step size) was hit

Identical configs and seeds produce byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .barriers import Barrier, barrier_from_config, random_irregular_barrier
from .drivers import driver_from_config
from .exceptions import (
    BudgetError,
    ConfigError,
    ModelError,
    PreconditionError,
    RbsdeLabError,
    StepSizeError,
)
from .lattice import TimeGrid, build_lattice, model_to_csv, validate_model
from .montecarlo import RegressionSpec, crr_sign_dynamics, solve_reflected_mc
from .rbsde import (
    check_solution_invariants,
    peng_xu_check,
    quadruple_to_csv,
    right_shift_solution,
    skorokhod_residuals,
    solve_reflected,
    solve_via_monotone_approx,
    solve_via_penalization,
)
from .stopping import (
    bellman_scaling_check,
    brute_force_snell,
    check_supermartingale_family,
    shift_envelope,
    snell_dp,
)

EXIT_PASS = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_RESOURCE = 3


@dataclass
class ScenarioResult:
    name: str
    exit_code: int
    passed: bool
    summary: dict
    artifacts: list = field(default_factory=list)   # (filename, text) pairs

    def summary_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2, default=_plain) + "\n"


def _plain(obj):
    if isinstance(obj, (np.integer, np.bool_)):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _to_native(obj):
    """Strip numpy scalar types so summaries serialize anywhere."""
    if isinstance(obj, dict):
        return {k: _to_native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_native(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def model_from_config(spec: dict):
    try:
        horizon = float(spec.get("T", 1.0))
        steps = int(spec["N"])
        marks = [float(m["intensity"]) for m in spec.get("marks", [])]
        refinement = int(spec.get("refinementLevel", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model spec {spec!r}") from exc
    micro = 0.0
    if refinement > 0:
        micro = (horizon / steps) * 2.0**-refinement
    return build_lattice(TimeGrid(horizon, steps, micro_width=micro), marks)


def _require(cfg: dict, *keys):
    for key in keys:
        if key not in cfg:
            raise ConfigError(f"scenario is missing required field {key!r}")


def _tol(cfg: dict, name: str) -> float:
    tols = cfg.get("tolerances", {})
    if name not in tols:
        raise ConfigError(f"scenario must declare tolerance {name!r}")
    value = float(tols[name])
    if value <= 0:
        raise ConfigError(f"tolerance {name!r} must be positive")
    return value


def _instance(spec: dict):
    """(model, driver, barrier) from one instance spec."""
    model = model_from_config(spec.get("model", {"N": spec.get("N", 2)}))
    driver = driver_from_config(spec["driver"], model.intensities)
    bar_spec = spec["barrier"]
    if bar_spec.get("type") == "random-irregular":
        barrier = random_irregular_barrier(
            model, seed=bar_spec.get("seed", 0), kind=bar_spec.get("kind", "right-usc")
        )
        shift = bar_spec.get("openShift", 0.0)
        if shift:
            barrier = Barrier(
                at_values=[v.copy() for v in barrier.at_values],
                open_values=[v + shift for v in barrier.open_values],
            )
    else:
        barrier = barrier_from_config(model, bar_spec)
    return model, driver, barrier


# --- individual runners ----------------------------------------------------


def _run_routes(cfg):
    """Solve one instance on the requested routes and compare them."""
    _require(cfg, "model", "driver", "barrier", "routes")
    model, driver, barrier = _instance(cfg)
    direct = solve_reflected(model, driver, barrier)
    residuals = skorokhod_residuals(model, direct, barrier)
    route_values = {"direct": float(direct.y.at[0][0])}
    gaps = {}
    artifacts = [("quadruple.csv", quadruple_to_csv(model, direct))]

    if "bruteforce" in cfg["routes"]:
        tol = _tol(cfg, "oracle")
        values, _, _ = brute_force_snell(
            model, driver, barrier, budget=cfg.get("budget", 10**6)
        )
        route_values["bruteforce"] = float(values[0])
        gaps["bruteforce"] = float(np.max(np.abs(values - direct.y.at[0])))
        gaps["bruteforce_ok"] = gaps["bruteforce"] <= tol
    if "monotone" in cfg["routes"]:
        tol = _tol(cfg, "monotone")
        n_max = int(cfg.get("schedules", {}).get("nMax", 10))
        mono = solve_via_monotone_approx(model, driver, barrier, n_max)
        route_values["monotone"] = float(mono.restricted_at[-1][0][0])
        gaps["monotone"] = mono.gaps[-1]
        gaps["monotone_ok"] = mono.gaps[-1] <= tol * (
            1.0 + float(np.max(np.abs(direct.y.at[0])))
        )
        artifacts.append(_gap_table("monotone_gaps.csv", mono.gaps))
    if "penalization" in cfg["routes"]:
        tol = _tol(cfg, "penalization")
        weights = cfg.get("schedules", {}).get("penalties", [2**i for i in range(11)])
        pen = solve_via_penalization(model, driver, barrier, weights)
        route_values["penalization"] = float(pen.approximants[-1].at[0][0])
        gaps["penalization"] = pen.gaps[-1]
        gaps["penalization_ok"] = pen.gaps[-1] <= tol * (
            1.0 + float(np.max(np.abs(direct.y.at[0])))
        )
        artifacts.append(_gap_table("penalization_gaps.csv", pen.gaps, weights))
    if "mc" in cfg["routes"]:
        mc_cfg = cfg["mc"]
        dyn = crr_sign_dynamics(
            model.grid.horizon,
            model.grid.step_count,
            mc_cfg["spot"],
            mc_cfg["up"],
            mc_cfg["down"],
        )
        strike = mc_cfg["strike"]
        est = solve_reflected_mc(
            dyn,
            driver,
            lambda k, s: np.maximum(strike - s, 0.0),
            path_count=int(mc_cfg.get("paths", 10000)),
            seed=int(cfg.get("seeds", {}).get("mc", 0)),
            spec=RegressionSpec(basis="bins", bins=8),
        )
        route_values["mc"] = est.value
        gaps["mc_se"] = est.std_error
        gaps["mc_ok"] = est.within(float(direct.y.at[0][0]))

    expected = cfg.get("expectedRootValue")
    value_ok = True
    if expected is not None:
        value_ok = abs(route_values["direct"] - float(expected)) <= _tol(cfg, "value")
    passed = (
        residuals.passed
        and value_ok
        and all(v for k, v in gaps.items() if k.endswith("_ok"))
    )
    summary = {
        "routeValues": route_values,
        "gaps": {k: v for k, v in gaps.items() if not k.endswith("_ok")},
        "skorokhod": residuals.as_dict(),
        "expectedRootValue": expected,
        "passFlags": {
            "skorokhod": residuals.passed,
            "expectedValue": value_ok,
            **{k: v for k, v in gaps.items() if k.endswith("_ok")},
        },
    }
    return passed, summary, artifacts


def _run_spike_demo(cfg):
    """Right jumps charge exactly at the spike node, all sums vanish."""
    _require(cfg, "model", "driver", "barrier")
    model, driver, barrier = _instance(cfg)
    level, nodes = int(cfg["barrier"]["level"]), cfg["barrier"].get("nodes", [0])
    quad = solve_reflected(model, driver, barrier)
    residuals = skorokhod_residuals(model, quad, barrier)

    charged = {
        (k, j)
        for k in range(model.last_level)
        for j in np.nonzero(quad.da_right[k] > 0)[0]
    }
    expected_sites = {(level, int(j)) for j in nodes}
    passed = residuals.passed and charged == expected_sites
    summary = {
        "rightJumpSites": sorted([list(site) for site in charged]),
        "expectedSites": sorted([list(site) for site in expected_sites]),
        "skorokhod": residuals.as_dict(),
        "passFlags": {"sites": charged == expected_sites, "skorokhod": residuals.passed},
    }
    return passed, summary, [("quadruple.csv", quadruple_to_csv(model, quad))]


def _run_oracle_equivalence(cfg):
    """Criterion 1: brute force = dynamic programming = reflected value."""
    import hashlib

    from .stopping import count_stopping_rules

    _require(cfg, "instances")
    tol = _tol(cfg, "oracle")
    budget = int(cfg.get("budget", 10**6))
    rows = ["instance,level,gap"]
    reports = []
    worst = 0.0
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        dp = snell_dp(model, driver, barrier)
        direct = solve_reflected(model, driver, barrier)
        dp_vs_direct = dp.slots.max_abs_gap(direct.y)
        worst = max(worst, dp_vs_direct)
        instance_gap = dp_vs_direct
        root_values = None
        root_rule = None
        for level in range(model.last_level + 1):
            values, rule, _ = brute_force_snell(
                model, driver, barrier, from_level=level, budget=budget
            )
            if level == 0:
                root_values, root_rule = values, rule
            gap = float(np.max(np.abs(values - dp.slots.at[level])))
            worst = max(worst, gap)
            instance_gap = max(instance_gap, gap)
            rows.append(f"{i},{level},{gap!r}")
        reports.append(
            {
                "instanceHash": hashlib.sha256(
                    json.dumps(spec, sort_keys=True).encode()
                ).hexdigest()[:16],
                "ruleCount": count_stopping_rules(model),
                "dpValue": float(dp.slots.at[0][0]),
                "bruteForceValue": float(root_values[0]),
                "maxGap": instance_gap,
                "argmaxRule": [list(map(int, s[:2])) + [s[2]]
                               for s in root_rule.stops_of(model)],
            }
        )
    passed = worst <= tol
    summary = {
        "instances": len(cfg["instances"]),
        "maxGap": worst,
        "tolerance": tol,
        "passFlags": {"oracle": passed},
    }
    artifacts = [
        ("oracle_gaps.csv", "\n".join(rows) + "\n"),
        ("oracle_reports.json",
         json.dumps(reports, sort_keys=True, indent=2, default=_plain) + "\n"),
    ]
    return passed, summary, artifacts


def _run_barrier_comparison(cfg):
    """Criterion 2: decreasing barrier sequences give decreasing values."""
    _require(cfg, "sequences")
    tol = _tol(cfg, "comparison")
    worst = -np.inf
    rows = ["sequence,n,min_value_drop"]
    for i, spec in enumerate(cfg["sequences"]):
        model, driver, base = _instance(spec)
        rng = np.random.default_rng(spec.get("perturbSeed", 0))
        bump = [
            np.abs(rng.normal(0.0, 1.0, model.node_count(k)))
            for k in range(model.level_count)
        ]
        prev = None
        for n in range(int(spec.get("count", 6))):
            scale = 2.0**-n
            barrier = Barrier(
                at_values=[base.at_values[k] + scale * bump[k] for k in range(model.level_count)],
                open_values=[base.open_values[k] + scale * bump[k] for k in range(model.last_level)],
            )
            quad = solve_reflected(model, driver, barrier)
            if prev is not None:
                drop = prev.min_slot_gap(quad.y)
                worst = max(worst, -drop)
                rows.append(f"{i},{n},{drop!r}")
            prev = quad.y
    passed = worst <= tol
    summary = {
        "sequences": len(cfg["sequences"]),
        "maxViolation": max(worst, 0.0),
        "tolerance": tol,
        "passFlags": {"comparison": passed},
    }
    return passed, summary, [("comparison.csv", "\n".join(rows) + "\n")]


def _run_monotone_approx(cfg):
    """Criterion 3: approximation gaps shrink monotonically and end small."""
    _require(cfg, "instances")
    tol = _tol(cfg, "relativeGap")
    slack = _tol(cfg, "monotoneSlack")
    n_max = int(cfg.get("schedules", {}).get("nMax", 10))
    rows = ["instance,n,gap"]
    all_ok = True
    worst_rel = 0.0
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        result = solve_via_monotone_approx(model, driver, barrier, n_max)
        for n, gap in enumerate(result.gaps, start=1):
            rows.append(f"{i},{n},{gap!r}")
        scale = 1.0 + float(max(np.max(np.abs(v)) for v in result.direct.y.at))
        monotone = all(
            result.gaps[j + 1] <= result.gaps[j] + slack for j in range(n_max - 1)
        )
        rel = result.gaps[-1] / scale
        worst_rel = max(worst_rel, rel)
        all_ok = all_ok and monotone and rel <= tol
    summary = {
        "instances": len(cfg["instances"]),
        "worstRelativeGap": worst_rel,
        "tolerance": tol,
        "passFlags": {"monotoneConvergence": all_ok},
    }
    return all_ok, summary, [("monotone.csv", "\n".join(rows) + "\n")]


def _run_penalization(cfg):
    """Criterion 4: approximants increase, end close, and halve with weight."""
    _require(cfg, "instances")
    tol = _tol(cfg, "relativeGap")
    weights = cfg.get("schedules", {}).get("penalties", [2**i for i in range(11)])
    rows = ["instance,weight,gap,monotone_violation"]
    all_ok = True
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        result = solve_via_penalization(model, driver, barrier, weights)
        monotone_worst = 0.0
        for j in range(len(weights) - 1):
            drop = result.approximants[j + 1].min_slot_gap(result.approximants[j])
            monotone_worst = max(monotone_worst, -drop)
        for w, gap in zip(weights, result.gaps):
            rows.append(f"{i},{w},{gap!r},{monotone_worst!r}")
        scale = 1.0 + float(max(np.max(np.abs(v)) for v in result.direct.y.at))
        final_ok = result.gaps[-1] <= tol * scale
        decreasing = all(
            result.gaps[j + 1] <= result.gaps[j] + 1e-15
            for j in range(len(weights) - 1)
            if result.gaps[j] > 1e-14
        )
        all_ok = all_ok and monotone_worst == 0.0 and final_ok and decreasing
    summary = {
        "instances": len(cfg["instances"]),
        "weights": list(weights),
        "passFlags": {"penalization": all_ok},
    }
    return all_ok, summary, [("penalization.csv", "\n".join(rows) + "\n")]


def _run_skorokhod(cfg):
    """Criterion 5: all three complementarity sums vanish on every output."""
    _require(cfg, "instances")
    tol = _tol(cfg, "skorokhod")
    worst = 0.0
    rows = ["instance,S1,S2,S3"]
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        rep = skorokhod_residuals(model, quad, barrier)
        worst = max(worst, abs(rep.pre_jump_sum), abs(rep.right_jump_sum),
                    abs(rep.open_interval_sum))
        rows.append(f"{i},{rep.pre_jump_sum!r},{rep.right_jump_sum!r},{rep.open_interval_sum!r}")
    passed = worst <= tol
    summary = {"maxResidual": worst, "tolerance": tol, "passFlags": {"skorokhod": passed}}
    return passed, summary, [("skorokhod.csv", "\n".join(rows) + "\n")]


def _run_reflection_identities(cfg):
    """Criterion 6: both reflection identities hold exactly at every node."""
    _require(cfg, "instances")
    worst = 0.0
    for spec in cfg["instances"]:
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        for k in range(model.last_level):
            worst = max(worst, float(np.max(np.abs(
                quad.y.at[k] - np.maximum(barrier.at_values[k], quad.y.post[k])
            ))))
        for k in range(1, model.last_level + 1):
            worst = max(worst, float(np.max(np.abs(
                quad.y.pre[k] - np.maximum(barrier.pre_layer(model, k), quad.y.at[k])
            ))))
    passed = worst == 0.0
    summary = {"maxDeviation": worst, "passFlags": {"identities": passed}}
    return passed, summary, []


def _run_regularity(cfg):
    """Criterion 7: left-USC kills left jumps; dominated instants kill right ones."""
    _require(cfg, "leftUscInstances", "xiLeqXiPlusInstances")
    worst_left = worst_right = worst_rc = 0.0
    for spec in cfg["leftUscInstances"]:
        model, driver, barrier = _instance(spec)
        if not barrier.is_left_usc(model):
            raise ConfigError("instance is not left-USC")
        quad = solve_reflected(model, driver, barrier)
        worst_left = max(worst_left, float(max(np.max(np.abs(v)) for v in quad.da_pre[1:])))
    for spec in cfg["xiLeqXiPlusInstances"]:
        model, driver, barrier = _instance(spec)
        if not barrier.xi_leq_xi_plus():
            raise ConfigError("instance does not satisfy the right-limit domination")
        quad = solve_reflected(model, driver, barrier)
        worst_right = max(worst_right, float(max(np.max(np.abs(v)) for v in quad.da_right)))
        worst_rc = max(worst_rc, float(max(
            np.max(np.abs(quad.y.at[k] - quad.y.post[k]))
            for k in range(model.last_level)
        )))
    passed = worst_left == 0.0 and worst_right == 0.0 and worst_rc == 0.0
    summary = {
        "maxLeftJumpUnderLeftUSC": worst_left,
        "maxRightJumpUnderDomination": worst_right,
        "maxRightContinuityGap": worst_rc,
        "passFlags": {"regularity": passed},
    }
    return passed, summary, []


def _run_supermartingale(cfg):
    """Criterion 8: value family passes pair checks and is minimal."""
    _require(cfg, "instances")
    tol = _tol(cfg, "supermartingale")
    worst = 0.0
    min_gap = np.inf
    dominating = int(cfg.get("dominatingCount", 5))
    for spec in cfg["instances"]:
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        family = snell_dp(model, driver, barrier)
        rep = check_supermartingale_family(
            model, driver, family.slots, barrier=barrier, quad=quad
        )
        worst = max(worst, rep.max_violation)
        rng = np.random.default_rng(spec.get("dominatingSeed", 0))
        for _ in range(dominating):
            lift = [
                np.abs(rng.normal(0.5, 0.5, model.node_count(k)))
                for k in range(model.level_count)
            ]
            bigger = Barrier(
                at_values=[barrier.at_values[k] + lift[k] for k in range(model.level_count)],
                open_values=[barrier.open_values[k] + lift[k] for k in range(model.last_level)],
            )
            upper = solve_reflected(model, driver, bigger)
            min_gap = min(min_gap, upper.y.min_slot_gap(family.slots))
    passed = worst <= tol and min_gap >= -tol
    summary = {
        "maxPairViolation": worst,
        "minDominationGap": float(min_gap),
        "tolerance": tol,
        "passFlags": {"supermartingale": passed},
    }
    return passed, summary, []


def _run_bellman(cfg):
    """Criterion 9: scaling identity within tolerance on every instance."""
    _require(cfg, "instances")
    tol = _tol(cfg, "bellman")
    worst = 0.0
    rows = ["instance,alpha,gap"]
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        theta = int(spec.get("thetaLevel", 1))
        rng = np.random.default_rng(spec.get("alphaSeed", 0))
        alphas = {
            "zero": np.zeros(model.node_count(theta)),
            "one": np.ones(model.node_count(theta)),
            "random": rng.uniform(0.0, 3.0, model.node_count(theta)),
        }
        for label, alpha in alphas.items():
            rep = bellman_scaling_check(
                model, driver, barrier, theta, alpha, budget=int(cfg.get("budget", 10**6))
            )
            worst = max(worst, rep.max_gap)
            rows.append(f"{i},{label},{rep.max_gap!r}")
    passed = worst <= tol
    summary = {"maxGap": worst, "tolerance": tol, "passFlags": {"bellman": passed}}
    return passed, summary, [("bellman.csv", "\n".join(rows) + "\n")]


def _run_envelope_shift(cfg):
    """Criterion 10: envelope replacement preserves value and quadruple."""
    _require(cfg, "instances")
    tol = _tol(cfg, "envelope")
    worst = 0.0
    refusals = 0
    for spec in cfg["instances"]:
        model, driver, barrier = _instance(spec)
        shifts = spec.get("shifts", [[0.0] * model.level_count])
        for shift in shifts:
            try:
                result = shift_envelope(model, driver, barrier, shift)
            except PreconditionError:
                refusals += 1
                continue
            worst = max(
                worst,
                result.snell_gap,
                result.quadruple_gap,
                max(0.0, -result.dominates_barrier),
                max(0.0, -result.left_jump_min),
            )
    expected_refusals = int(cfg.get("expectedRefusals", 0))
    passed = worst <= tol and refusals == expected_refusals
    summary = {
        "maxGap": worst,
        "refusals": refusals,
        "expectedRefusals": expected_refusals,
        "tolerance": tol,
        "passFlags": {"envelopeShift": passed},
    }
    return passed, summary, []


def _run_right_shift(cfg):
    """Criterion 11: shifted quadruples verify; non-strict inputs refuse."""
    _require(cfg, "strictInstances", "nonStrictInstances")
    all_ok = True
    refusals = 0
    for spec in cfg["strictInstances"]:
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        result = right_shift_solution(model, quad, barrier)
        all_ok = all_ok and result.passed
    for spec in cfg["nonStrictInstances"]:
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        try:
            right_shift_solution(model, quad, barrier)
        except PreconditionError:
            refusals += 1
    passed = all_ok and refusals == len(cfg["nonStrictInstances"])
    summary = {
        "strictInstances": len(cfg["strictInstances"]),
        "refusals": refusals,
        "passFlags": {"rightShift": passed},
    }
    return passed, summary, []


def _run_pengxu(cfg):
    """Criterion 12: generalized complementarity on sampled interpolants."""
    _require(cfg, "instances")
    tol = _tol(cfg, "pengxu")
    samples = int(cfg.get("samplesPerInstance", 20))
    worst = 0.0
    all_admissible = True
    for spec in cfg["instances"]:
        model, driver, barrier = _instance(spec)
        quad = solve_reflected(model, driver, barrier)
        rep = peng_xu_check(
            model, quad, barrier, sample_count=samples, seed=spec.get("sampleSeed", 0)
        )
        all_admissible = all_admissible and len(rep.residuals) >= samples
        worst = max(
            worst,
            rep.right_jump_max,
            rep.right_continuity_gap,
            max((abs(r) for r in rep.residuals), default=0.0),
        )
    passed = worst <= tol and all_admissible
    summary = {"maxResidual": worst, "tolerance": tol, "passFlags": {"pengxu": passed}}
    return passed, summary, []


def _run_s4(cfg):
    """Criterion 13: fourth-power value gaps fall monotonically to nothing."""
    _require(cfg, "instances")
    tol = _tol(cfg, "finalGap")
    n_max = int(cfg.get("schedules", {}).get("nMax", 10))
    rows = ["instance,n,gap4"]
    all_ok = True
    for i, spec in enumerate(cfg["instances"]):
        model, driver, barrier = _instance(spec)
        result = solve_via_monotone_approx(model, driver, barrier, n_max)
        quartics = [g**4 for g in result.gaps]
        for n, q in enumerate(quartics, start=1):
            rows.append(f"{i},{n},{q!r}")
        monotone = all(
            quartics[j + 1] <= quartics[j] + 1e-15 for j in range(n_max - 1)
        )
        all_ok = all_ok and monotone and quartics[-1] <= tol
    summary = {"passFlags": {"s4": all_ok}, "tolerance": tol}
    return all_ok, summary, [("s4.csv", "\n".join(rows) + "\n")]


def _run_mc_vs_lattice(cfg):
    """Criterion 14: Monte Carlo within three standard errors, seeded runs."""
    _require(cfg, "model", "driver", "barrier", "mc")
    model, driver, barrier = _instance(cfg)
    mc_cfg = cfg["mc"]
    target = float(solve_reflected(model, driver, barrier).y.at[0][0])
    dyn = crr_sign_dynamics(
        model.grid.horizon, model.grid.step_count, mc_cfg["spot"], mc_cfg["up"], mc_cfg["down"]
    )
    strike = mc_cfg["strike"]
    runs = int(cfg.get("runs", 40))
    paths = int(mc_cfg.get("paths", 10000))
    base_seed = int(cfg.get("seeds", {}).get("mc", 0))
    rows = ["run,seed,value,stdError,withinThreeSE"]
    hits = 0
    for r in range(runs):
        est = solve_reflected_mc(
            dyn,
            driver,
            lambda k, s: np.maximum(strike - s, 0.0),
            path_count=paths,
            seed=base_seed + r,
            spec=RegressionSpec(basis="bins", bins=8),
        )
        ok = est.within(target)
        hits += ok
        rows.append(f"{r},{base_seed + r},{est.value!r},{est.std_error!r},{int(ok)}")
    required = float(cfg.get("requiredHitRate", 0.95))
    passed = hits >= int(np.ceil(required * runs))
    summary = {
        "latticeValue": target,
        "hits": hits,
        "runs": runs,
        "requiredHitRate": required,
        "passFlags": {"mc": passed},
    }
    return passed, summary, [("mc_runs.csv", "\n".join(rows) + "\n")]


def _gap_table(name, gaps, index=None):
    idx = index if index is not None else list(range(1, len(gaps) + 1))
    rows = ["n,gap"] + [f"{i},{g!r}" for i, g in zip(idx, gaps)]
    return name, "\n".join(rows) + "\n"


_RUNNERS = {
    "routes": _run_routes,
    "spike-demo": _run_spike_demo,
    "oracle-equivalence": _run_oracle_equivalence,
    "barrier-comparison": _run_barrier_comparison,
    "monotone-approx": _run_monotone_approx,
    "penalization": _run_penalization,
    "skorokhod": _run_skorokhod,
    "reflection-identities": _run_reflection_identities,
    "regularity-lemmas": _run_regularity,
    "supermartingale": _run_supermartingale,
    "bellman-scaling": _run_bellman,
    "envelope-shift": _run_envelope_shift,
    "right-shift": _run_right_shift,
    "pengxu": _run_pengxu,
    "s4-continuity": _run_s4,
    "mc-vs-lattice": _run_mc_vs_lattice,
}


def run_scenario_config(cfg: dict) -> ScenarioResult:
    """Validate and execute one scenario configuration."""
    name = cfg.get("name", "unnamed")
    try:
        if not isinstance(cfg, dict) or "kind" not in cfg:
            raise ConfigError("scenario config needs a 'kind' field")
        kind = cfg["kind"]
        if kind not in _RUNNERS:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        passed, summary, artifacts = _RUNNERS[kind](cfg)
    except (ConfigError, ModelError) as exc:
        # bad model, driver, or barrier parameters are configuration faults
        return ScenarioResult(
            name=name, exit_code=EXIT_CONFIG, passed=False,
            summary={"error": str(exc), "errorKind": "config"},
        )
    except (BudgetError, StepSizeError) as exc:
        return ScenarioResult(
            name=name, exit_code=EXIT_RESOURCE, passed=False,
            summary={"error": str(exc), "errorKind": "resource"},
        )
    except RbsdeLabError as exc:
        return ScenarioResult(
            name=name, exit_code=EXIT_TOLERANCE, passed=False,
            summary={"error": str(exc), "errorKind": "runtime"},
        )
    summary = _to_native({"scenario": name, "kind": cfg["kind"], **summary})
    result = ScenarioResult(
        name=name,
        exit_code=EXIT_PASS if passed else EXIT_TOLERANCE,
        passed=passed,
        summary=summary,
        artifacts=artifacts,
    )
    result.artifacts.append(("summary.json", result.summary_json()))
    return result


def run_scenario(name_or_config) -> ScenarioResult:
    """Run a registry scenario by name, or an explicit config dict."""
    if isinstance(name_or_config, str):
        registry = builtin_scenarios()
        if name_or_config not in registry:
            return ScenarioResult(
                name=name_or_config, exit_code=EXIT_CONFIG, passed=False,
                summary={"error": f"unknown scenario {name_or_config!r}",
                         "errorKind": "config"},
            )
        return run_scenario_config(registry[name_or_config])
    return run_scenario_config(name_or_config)


def list_scenarios() -> list:
    """Built-in scenario names with one-line descriptions, stable order."""
    return [
        {"name": name, "description": cfg.get("description", "")}
        for name, cfg in builtin_scenarios().items()
    ]


def run_all_scenarios(names=None, parallel: bool = False) -> list:
    """Run several scenarios, serially by default.

    Scenarios are independent, so parallel execution cannot change any
    output; results come back in the requested order either way.
    """
    names = list(names) if names is not None else list(builtin_scenarios())
    if not parallel:
        return [run_scenario(name) for name in names]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor() as pool:
        return list(pool.map(run_scenario, names))


def dump_model_csv(model_spec: dict) -> dict:
    model = model_from_config(model_spec)
    diag = validate_model(model)
    return {
        "csv": model_to_csv(model),
        "levels": model.level_count,
        "nodes": sum(model.node_count(k) for k in range(model.level_count)),
        "diagnosticsPassed": diag.passed,
        "maxViolation": diag.max_violation,
    }


# --- built-in registry -----------------------------------------------------


def _rusc(seed, n=3, driver=None, marks=(), open_shift=0.0, model_extra=None):
    spec = {
        "model": {"T": 1.0, "N": n, "marks": [{"intensity": m} for m in marks]},
        "driver": driver or {"type": "zero"},
        "barrier": {"type": "random-irregular", "seed": seed, "kind": "right-usc"},
    }
    if open_shift:
        spec["barrier"]["openShift"] = open_shift
    if model_extra:
        spec["model"].update(model_extra)
    return spec


def builtin_scenarios() -> dict:
    """The scenario registry; every acceptance criterion is one entry."""
    drivers = [
        {"type": "zero"},
        {"type": "constant", "value": -0.5},
        {"type": "linear", "y": 0.4},
        {"type": "linear", "z": 0.5},
    ]
    oracle_instances = []
    seed = 100
    for n in (1, 2, 3):
        for drv in drivers:
            shift = -50.0 if drv.get("z") else 0.0
            oracle_instances.append(_rusc(seed, n=n, driver=drv, open_shift=shift))
            seed += 1
    for drv in drivers[:3]:
        oracle_instances.append(_rusc(seed, n=2, driver=drv, marks=(0.3,)))
        seed += 1
    oracle_instances.append(
        _rusc(seed, n=1, driver={"type": "linear", "z": 0.4}, marks=(0.5,),
              open_shift=-50.0)
    )
    seed += 1
    oracle_instances.append(_rusc(seed, n=3, driver={"type": "constant", "value": 0.9}))
    seed += 1
    oracle_instances.append(_rusc(seed, n=3, driver={"type": "linear", "y": -0.6}))
    seed += 1
    for drv in ({"type": "zero"}, {"type": "linear", "y": 0.3},
                {"type": "constant", "value": 0.7},
                {"type": "linear", "z": 0.4}):
        shift = -50.0 if drv.get("z") else 0.0
        oracle_instances.append(_rusc(seed, n=4, driver=drv, open_shift=shift))
        seed += 1

    mixed_battery = (
        [_rusc(s, n=3) for s in (11, 12)]
        + [_rusc(13, n=3, driver={"type": "constant", "value": -1.0})]
        + [_rusc(14, n=2, driver={"type": "linear", "y": -0.5}, marks=(0.4,))]
        + [
            {
                "model": {"T": 1.0, "N": 2},
                "driver": {"type": "zero"},
                "barrier": {"type": "american-put", "strike": 100, "spot": 100,
                            "up": 1.2, "down": 0.8},
            },
            {
                "model": {"T": 1.0, "N": 1},
                "driver": {"type": "zero"},
                "barrier": {"type": "spike", "base": -1e9, "level": 0, "nodes": [0],
                            "height": 5.0, "terminal": 0.0},
            },
        ]
        + [
            {
                "model": {"T": 1.0, "N": 3},
                "driver": {"type": "zero"},
                "barrier": {"type": "random-irregular", "seed": s, "kind": kind},
            }
            for s, kind in ((15, "free"), (16, "xi-leq-xi-plus"), (17, "left-usc"),
                            (18, "cadlag"))
        ]
    )

    irregular_mono = [
        _rusc(s, n=3, driver={"type": "american-discount", "rate": 0.5})
        for s in range(30, 35)
    ] + [
        _rusc(s, n=2, driver={"type": "constant", "value": -0.8}, marks=(0.3,))
        for s in range(35, 38)
    ] + [
        _rusc(s, n=4, driver={"type": "linear", "y": -0.4}) for s in range(38, 40)
    ]

    registry = {
        "american-put": {
            "name": "american-put",
            "description": "Two-step put: all routes agree on the hand value 11.",
            "kind": "routes",
            "model": {"T": 1.0, "N": 2},
            "driver": {"type": "zero"},
            "barrier": {"type": "american-put", "strike": 100, "spot": 100,
                        "up": 1.2, "down": 0.8},
            "routes": ["direct", "bruteforce", "monotone", "penalization", "mc"],
            "schedules": {"nMax": 8, "penalties": [2**i for i in range(11)]},
            "mc": {"strike": 100, "spot": 100, "up": 1.2, "down": 0.8, "paths": 4000},
            "seeds": {"mc": 2024},
            "expectedRootValue": 11.0,
            "tolerances": {"value": 1e-12, "oracle": 1e-10, "monotone": 1e-3,
                           "penalization": 1e-2},
        },
        "spike-demo": {
            "name": "spike-demo",
            "description": "Instant spike: right jump charges there and only there.",
            "kind": "spike-demo",
            "model": {"T": 1.0, "N": 1},
            "driver": {"type": "zero"},
            "barrier": {"type": "spike", "base": -1e9, "level": 0, "nodes": [0],
                        "height": 5.0, "terminal": 0.0},
            "tolerances": {"skorokhod": 1e-12},
        },
        "oracle-equivalence": {
            "name": "oracle-equivalence",
            "description": "Exhaustive stopping rules match the DP at every node.",
            "kind": "oracle-equivalence",
            "instances": oracle_instances,
            "budget": 10**6,
            "tolerances": {"oracle": 1e-10},
        },
        "barrier-comparison": {
            "name": "barrier-comparison",
            "description": "Decreasing barrier sequences give decreasing solutions.",
            "kind": "barrier-comparison",
            "sequences": [
                {**_rusc(50, n=3), "perturbSeed": 1, "count": 6},
                {**_rusc(51, n=3, driver={"type": "constant", "value": -0.6}),
                 "perturbSeed": 2, "count": 6},
                {**_rusc(52, n=2, driver={"type": "linear", "y": 0.5}, marks=(0.3,)),
                 "perturbSeed": 3, "count": 6},
                {**_rusc(53, n=4, driver={"type": "linear", "y": -0.3}),
                 "perturbSeed": 4, "count": 6},
            ],
            "tolerances": {"comparison": 1e-12},
        },
        "monotone-approx": {
            "name": "monotone-approx",
            "description": "Cadlag approximants: gaps shrink to the direct solution.",
            "kind": "monotone-approx",
            "instances": irregular_mono,
            "schedules": {"nMax": 10},
            "tolerances": {"relativeGap": 1e-3, "monotoneSlack": 1e-12},
        },
        "penalization-convergence": {
            "name": "penalization-convergence",
            "description": "Penalized values increase to the reflected solution.",
            "kind": "penalization",
            "instances": [
                _rusc(60, n=3, driver={"type": "constant", "value": -1.0}),
                _rusc(61, n=3),
                _rusc(62, n=2, driver={"type": "linear", "y": -0.5}, marks=(0.4,)),
                {
                    "model": {"T": 1.0, "N": 2},
                    "driver": {"type": "zero"},
                    "barrier": {"type": "american-put", "strike": 100, "spot": 100,
                                "up": 1.2, "down": 0.8},
                },
            ],
            "schedules": {"penalties": [2**i for i in range(11)]},
            "tolerances": {"relativeGap": 1e-2},
        },
        "skorokhod-residuals": {
            "name": "skorokhod-residuals",
            "description": "All three complementarity sums vanish on every output.",
            "kind": "skorokhod",
            "instances": mixed_battery,
            "tolerances": {"skorokhod": 1e-12},
        },
        "reflection-identities": {
            "name": "reflection-identities",
            "description": "Instant and left-limit reflection identities, exact.",
            "kind": "reflection-identities",
            "instances": mixed_battery,
            "tolerances": {},
        },
        "regularity-lemmas": {
            "name": "regularity-lemmas",
            "description": "Left-USC kills left jumps; domination kills right ones.",
            "kind": "regularity-lemmas",
            "leftUscInstances": [
                {
                    "model": {"T": 1.0, "N": 3},
                    "driver": drv,
                    "barrier": {"type": "random-irregular", "seed": s, "kind": "left-usc"},
                }
                for s, drv in ((70, {"type": "zero"}),
                               (71, {"type": "constant", "value": -0.7}),
                               (72, {"type": "linear", "y": 0.4}))
            ],
            "xiLeqXiPlusInstances": [
                {
                    "model": {"T": 1.0, "N": 3},
                    "driver": drv,
                    "barrier": {"type": "random-irregular", "seed": s,
                                "kind": "xi-leq-xi-plus"},
                }
                for s, drv in ((73, {"type": "zero"}),
                               (74, {"type": "constant", "value": 0.6}),
                               (75, {"type": "linear", "y": -0.4}))
            ],
            "tolerances": {},
        },
        "supermartingale": {
            "name": "supermartingale",
            "description": "Snell family: pair dominance and minimality.",
            "kind": "supermartingale",
            "instances": [
                {**_rusc(80, n=3), "dominatingSeed": 1},
                {**_rusc(81, n=3, driver={"type": "constant", "value": -0.5}),
                 "dominatingSeed": 2},
                {**_rusc(82, n=2, driver={"type": "linear", "y": 0.5}, marks=(0.3,)),
                 "dominatingSeed": 3},
            ],
            "dominatingCount": 5,
            "tolerances": {"supermartingale": 1e-12},
        },
        "bellman-scaling": {
            "name": "bellman-scaling",
            "description": "Scaled dynamic-programming identity by enumeration.",
            "kind": "bellman-scaling",
            "instances": [
                {**_rusc(90 + i, n=3, driver=drv, open_shift=(-50.0 if drv.get("z") else 0.0)),
                 "thetaLevel": 1 + (i % 2), "alphaSeed": i}
                for i, drv in enumerate(
                    [{"type": "zero"}, {"type": "constant", "value": -0.5},
                     {"type": "linear", "y": 0.4}, {"type": "linear", "y": -0.6},
                     {"type": "linear", "z": 0.5}, {"type": "zero"},
                     {"type": "constant", "value": 0.8}, {"type": "linear", "y": 0.3},
                     {"type": "linear", "z": 0.4}, {"type": "zero"}]
                )
            ],
            "budget": 10**6,
            "tolerances": {"bellman": 1e-10},
        },
        "envelope-shift": {
            "name": "envelope-shift",
            "description": "Snell-invariant envelope replacement, full equality.",
            "kind": "envelope-shift",
            "instances": [
                {**_rusc(95, n=3), "shifts": [[0.0] * 4, [3.0, 2.0, 1.0, 0.0]]},
                {**_rusc(96, n=3, driver={"type": "constant", "value": -0.8}),
                 "shifts": [[0.0] * 4, [2.0, 2.0, 0.5, 0.0]]},
                {**_rusc(97, n=2, driver={"type": "linear", "y": -0.5}),
                 "shifts": [[0.0] * 3, [1.0, 0.5, 0.0]]},
                {**_rusc(98, n=2, marks=(0.3,)), "shifts": [[0.0] * 3]},
                {**_rusc(99, n=3),
                 "shifts": [[1.0] * 4, [0.0, 10.0, 20.0, 40.0]]},
                {**_rusc(100, n=3, driver={"type": "zero"}),
                 "shifts": [[0.5, 0.5, 0.25, 0.0]]},
            ],
            "expectedRefusals": 1,
            "tolerances": {"envelope": 1e-12},
        },
        "right-shift": {
            "name": "right-shift",
            "description": "Right-limit shift verifies; non-strict inputs refuse.",
            "kind": "right-shift",
            "strictInstances": [
                {
                    "model": {"T": 1.0, "N": 3},
                    "driver": drv,
                    "barrier": {"type": "random-irregular", "seed": s,
                                "kind": "strict-left-gap"},
                }
                for s, drv in ((200, {"type": "zero"}),
                               (201, {"type": "constant", "value": -0.9}),
                               (202, {"type": "linear", "y": 0.5}),
                               (203, {"type": "linear", "y": -0.5}),
                               (204, {"type": "zero"}))
            ],
            "nonStrictInstances": [
                {
                    "model": {"T": 1.0, "N": 2},
                    "driver": {"type": "zero"},
                    "barrier": {"type": "random-irregular", "seed": 205, "kind": "cadlag"},
                }
            ],
            "tolerances": {},
        },
        "pengxu-check": {
            "name": "pengxu-check",
            "description": "Generalized complementarity on squeezed processes.",
            "kind": "pengxu",
            "instances": [
                {
                    "model": {"T": 1.0, "N": 3},
                    "driver": drv,
                    "barrier": {"type": "random-irregular", "seed": s,
                                "kind": "xi-leq-xi-plus"},
                    "sampleSeed": s,
                }
                for s, drv in ((210, {"type": "zero"}),
                               (211, {"type": "constant", "value": -0.7}),
                               (212, {"type": "linear", "y": 0.4}),
                               (213, {"type": "linear", "y": -0.6}),
                               (214, {"type": "zero"}))
            ] + [
                {
                    "model": {"T": 1.0, "N": 2},
                    "driver": {"type": "zero"},
                    "barrier": {"type": "american-put", "strike": 100, "spot": 100,
                                "up": 1.2, "down": 0.8},
                    "sampleSeed": 215,
                }
            ],
            "samplesPerInstance": 20,
            "tolerances": {"pengxu": 1e-12},
        },
        "s4-continuity": {
            "name": "s4-continuity",
            "description": "Fourth-power value gaps fall monotonically to zero.",
            "kind": "s4-continuity",
            "instances": [
                _rusc(220, n=3, driver={"type": "american-discount", "rate": 0.6}),
                _rusc(221, n=3, driver={"type": "constant", "value": -1.2}),
                _rusc(222, n=2, driver={"type": "linear", "y": -0.5}, marks=(0.4,)),
            ],
            "schedules": {"nMax": 10},
            "tolerances": {"finalGap": 1e-8},
        },
        "mc-vs-lattice": {
            "name": "mc-vs-lattice",
            "description": "Regression Monte Carlo hits the lattice put value.",
            "kind": "mc-vs-lattice",
            "model": {"T": 1.0, "N": 2},
            "driver": {"type": "zero"},
            "barrier": {"type": "american-put", "strike": 100, "spot": 100,
                        "up": 1.2, "down": 0.8},
            "mc": {"strike": 100, "spot": 100, "up": 1.2, "down": 0.8, "paths": 10000},
            "runs": 40,
            "requiredHitRate": 0.95,
            "seeds": {"mc": 5000},
            "tolerances": {},
        },
    }
    return registry
