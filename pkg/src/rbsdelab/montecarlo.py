"""Regression Monte Carlo cross-check for Markovian instances.

Paths are simulated from per-path seeds derived from one master seed, so
ensembles are reproducible and path-parallel evaluation cannot change the
draws.  Accumulated statistics use numpy's pairwise summation on arrays in
path order, a fixed reduction tree.

The reflected solver is the exercise-decision realization: the fitted
continuation decides stop versus continue at each instant and the realized
downstream value is propagated, which keeps the estimator free of the
upward bias a fitted-max iteration would carry.  Only drivers in ``(t, y)``
are supported here; regression cannot resolve the martingale integrands
reliably at this sample scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .drivers import Driver
from .exceptions import ConfigError, ModelError

MIN_BATCHES = 30


@dataclass(frozen=True)
class MarkovDynamics:
    """State recursion driven by the step's Brownian and jump draws.

    ``step_fn(k, state, dw, jumps) -> state`` maps path arrays one step
    forward; ``dw`` has variance ``dt`` and ``jumps`` is an (paths, marks)
    0/1 array.
    """

    horizon: float
    step_count: int
    initial_state: float
    step_fn: Callable
    intensities: tuple = ()

    @property
    def dt(self) -> float:
        return self.horizon / self.step_count


def crr_sign_dynamics(
    horizon: float, step_count: int, spot: float, up: float, down: float
) -> MarkovDynamics:
    """Multiplicative moves by the sign of the Brownian draw.

    Matches the lattice's branch distribution exactly (the sign of a
    centered Gaussian is a fair coin), so lattice values are the exact
    targets for the Monte Carlo estimate.
    """

    def step_fn(k, state, dw, jumps):
        return state * np.where(dw > 0, up, down)

    return MarkovDynamics(
        horizon=horizon, step_count=step_count, initial_state=spot, step_fn=step_fn
    )


@dataclass
class PathEnsemble:
    """Simulated paths with their seeds and empirical-moment gates."""

    dynamics: MarkovDynamics
    states: np.ndarray          # (paths, steps + 1)
    dw: np.ndarray              # (paths, steps)
    jumps: np.ndarray           # (paths, steps, marks)
    master_seed: int
    path_seeds: np.ndarray

    @property
    def path_count(self) -> int:
        return self.states.shape[0]

    def moment_gates(self) -> dict:
        """Sanity gates on the raw draws (informational, never an error)."""
        m = self.path_count
        dt = self.dynamics.dt
        gates = {
            "dw_mean": float(np.mean(self.dw)),
            "dw_mean_bound": 5.0 * np.sqrt(dt / (m * self.dynamics.step_count)),
        }
        mu = np.asarray(self.dynamics.intensities, dtype=float)
        for i, rate in enumerate(mu):
            lam = rate * dt
            comp = self.jumps[:, :, i] - lam
            gates[f"jump_{i}_mean"] = float(np.mean(comp))
            gates[f"jump_{i}_bound"] = 5.0 * np.sqrt(
                max(lam, 1e-300) / (m * self.dynamics.step_count)
            )
        return gates


def simulate_paths(dynamics: MarkovDynamics, path_count: int, seed: int) -> PathEnsemble:
    """Simulate reproducible paths; equal seeds give identical ensembles."""
    if path_count < 1:
        raise ConfigError("need at least one path")
    seq = np.random.SeedSequence(seed)
    path_seeds = seq.generate_state(path_count, dtype=np.uint64)

    n = dynamics.step_count
    mu = np.asarray(dynamics.intensities, dtype=float)
    m = len(mu)
    dt = dynamics.dt
    lam = mu * dt
    if np.sum(lam) >= 1.0:
        raise ConfigError("jump probabilities per step must sum below one")

    dw = np.empty((path_count, n))
    jumps = np.zeros((path_count, n, m))
    root_dt = np.sqrt(dt)
    for p in range(path_count):
        rng = np.random.Generator(np.random.Philox(key=int(path_seeds[p])))
        dw[p] = rng.normal(0.0, root_dt, n)
        if m:
            u = rng.uniform(0.0, 1.0, n)
            edges = np.cumsum(lam)
            for i in range(m):
                lo = edges[i - 1] if i else 0.0
                jumps[p, :, i] = ((u >= lo) & (u < edges[i])).astype(float)

    states = np.empty((path_count, n + 1))
    states[:, 0] = dynamics.initial_state
    for k in range(n):
        states[:, k + 1] = dynamics.step_fn(k, states[:, k], dw[:, k], jumps[:, k, :])

    return PathEnsemble(
        dynamics=dynamics,
        states=states,
        dw=dw,
        jumps=jumps,
        master_seed=seed,
        path_seeds=path_seeds,
    )


@dataclass(frozen=True)
class RegressionSpec:
    """Conditional-expectation approximation over the Markov state.

    ``basis="poly"`` uses monomials up to ``degree``; ``basis="bins"``
    uses indicator bins over the distinct-state range.  The basis size is
    capped at a tenth of the sample (overfit guard).
    """

    basis: str = "poly"
    degree: int = 2
    bins: int = 8
    ridge: float = 0.0

    def design(self, states: np.ndarray) -> np.ndarray:
        if self.basis == "poly":
            return np.vander(states, self.degree + 1, increasing=True)
        if self.basis == "bins":
            uniq = np.unique(states)
            if len(uniq) <= self.bins:
                edges = np.concatenate([uniq, [uniq[-1] + 1.0]])
            else:
                edges = np.linspace(states.min(), states.max() + 1e-12, self.bins + 1)
            idx = np.clip(np.searchsorted(edges, states, side="right") - 1, 0, len(edges) - 2)
            out = np.zeros((len(states), len(edges) - 1))
            out[np.arange(len(states)), idx] = 1.0
            return out
        raise ConfigError(f"unknown basis {self.basis!r}")


def regress_cond_exp(
    ensemble: PathEnsemble, step: int, values: np.ndarray, spec: RegressionSpec
) -> np.ndarray:
    """Ridge-regularized least-squares projection, returned in sample."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ModelError("regression targets must be finite")
    x = spec.design(ensemble.states[:, step])
    if x.shape[1] > ensemble.path_count / 10:
        raise ConfigError(
            f"basis size {x.shape[1]} exceeds a tenth of {ensemble.path_count} paths"
        )
    gram = x.T @ x + spec.ridge * np.eye(x.shape[1])
    if spec.ridge == 0.0:
        rank = np.linalg.matrix_rank(gram)
        if rank < x.shape[1]:
            raise ModelError(
                "singular regression design with zero ridge; set ridge > 0"
            )
    beta = np.linalg.solve(gram, x.T @ values)
    return x @ beta


@dataclass
class McEstimate:
    value: float
    std_error: float
    batch_values: np.ndarray
    moment_gates: list

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.value - target) <= sigmas * self.std_error


def solve_reflected_mc(
    dynamics: MarkovDynamics,
    driver: Driver,
    payoff: Callable,
    path_count: int,
    seed: int,
    spec: RegressionSpec | None = None,
    batches: int = 40,
) -> McEstimate:
    """Regression Monte Carlo value of the reflected problem at time zero.

    ``payoff(k, state)`` gives the barrier (and terminal, at the last step)
    as a function of the Markov state.  Batches are simulated and solved
    independently; the estimate is the batch mean with its standard error.
    """
    if driver.depends_on_z or driver.depends_on_l:
        raise ConfigError("Monte Carlo route supports drivers in (t, y) only")
    if batches < MIN_BATCHES:
        raise ConfigError(f"need at least {MIN_BATCHES} batches, got {batches}")
    spec = spec or RegressionSpec()
    per_batch = path_count // batches
    if per_batch < 2:
        raise ConfigError("need at least two paths per batch for the sample split")

    seq = np.random.SeedSequence(seed)
    batch_seeds = seq.generate_state(batches, dtype=np.uint64)
    batch_values = np.empty(batches)
    gates = []
    for b in range(batches):
        ensemble = simulate_paths(dynamics, per_batch, int(batch_seeds[b]))
        gates.append(ensemble.moment_gates())
        batch_values[b] = _solve_one_batch(ensemble, driver, payoff, spec)

    value = float(np.mean(batch_values))
    std_error = float(np.std(batch_values, ddof=1) / np.sqrt(batches))
    return McEstimate(
        value=value, std_error=std_error, batch_values=batch_values, moment_gates=gates
    )


def _solve_one_batch(ensemble, driver, payoff, spec) -> float:
    """Split-sample sweep: fit the exercise rule on one half, value the other.

    Fitting and valuation on the same paths carries a selection bias
    upward wherever payoff and continuation tie; with the split, the rule
    is independent of the valued paths and the estimate is unbiased for
    the (near-optimal) fitted rule's value.
    """
    dyn = ensemble.dynamics
    n = dyn.step_count
    dt = dyn.dt
    times = np.arange(n) * dt
    fit = np.arange(ensemble.path_count) % 2 == 0
    val = ~fit

    betas = [None] * n
    designs = [spec.design(ensemble.states[:, k]) for k in range(n)]
    realized = payoff(n, ensemble.states[:, n]).astype(float)[fit]
    for k in range(n - 1, -1, -1):
        target = _pathwise_step(driver, times[k], realized, dt)
        x = designs[k][fit]
        gram = x.T @ x + spec.ridge * np.eye(x.shape[1])
        betas[k] = np.linalg.solve(gram, x.T @ target)
        exercise = payoff(k, ensemble.states[:, k]).astype(float)[fit]
        stop = exercise >= x @ betas[k]
        realized = np.where(stop, exercise, target)

    realized = payoff(n, ensemble.states[:, n]).astype(float)[val]
    for k in range(n - 1, -1, -1):
        target = _pathwise_step(driver, times[k], realized, dt)
        fitted = designs[k][val] @ betas[k]
        exercise = payoff(k, ensemble.states[:, k]).astype(float)[val]
        stop = exercise >= fitted
        realized = np.where(stop, exercise, target)
    return float(np.mean(realized))


def _pathwise_step(driver, t, values, h):
    """Implicit per-path step ``y = v + g(t, y) * h`` (no reflection)."""
    if h == 0.0:
        return values
    from .drivers import implicit_step

    zeros_z = np.zeros_like(values)
    zeros_l = np.zeros((len(values), 0))
    return implicit_step(driver, t, values, zeros_z, zeros_l, h)
