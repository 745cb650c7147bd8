"""Finite event trees with Brownian and compensated-jump branches.

The lattice is a non-recombining tree over a uniform macro grid.  Each
stochastic step branches into ``2 * (m + 1)`` children: a Brownian move of
``+/- sqrt(h)`` crossed with "no jump" or "jump of mark i".  Refined grids
insert a deterministic micro step (single child, probability one) after each
macro instant; those carry time width ``delta`` and no randomness.

All conditional expectations are exact probability-weighted sums, so solver
outputs are reproducible bit for bit.  Values are immutable after
construction; per-node work within a level is independent and sweeps are
sequential level to level with a fixed per-node summation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ModelError


class DeterministicStepWarning(UserWarning):
    """Martingale coefficients requested on a single-child step."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform macro grid on [0, T], optionally refined by micro steps.

    Parameters
    ----------
    horizon : float
        Terminal time T > 0.
    step_count : int
        Number of macro steps N >= 1; the macro step is ``T / N``.
    micro_width : float
        Width delta of the deterministic micro step inserted after each
        macro instant.  Zero means no refinement; when positive it must be
        strictly smaller than the macro step.
    """

    horizon: float
    step_count: int
    micro_width: float = 0.0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        if self.step_count < 1:
            raise ModelError(f"step_count must be >= 1, got {self.step_count}")
        if not 0 <= self.micro_width < self.macro_step:
            raise ModelError(
                f"micro_width must lie in [0, {self.macro_step}), got {self.micro_width}"
            )

    @property
    def macro_step(self) -> float:
        return self.horizon / self.step_count

    @property
    def macro_instants(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.step_count + 1)

    @property
    def is_refined(self) -> bool:
        return self.micro_width > 0.0


@dataclass(frozen=True)
class Step:
    """One transition of the tree, from ``level`` to ``level + 1``.

    ``probs``, ``dw`` and ``jumps`` are indexed by branch.  ``jumps[b, i]``
    is 1.0 when branch ``b`` carries a jump of mark ``i``.  Micro steps have
    a single branch with probability one and no randomness.
    """

    index: int
    start_time: float
    dt: float
    stochastic: bool
    probs: np.ndarray
    dw: np.ndarray
    jumps: np.ndarray
    lam: np.ndarray

    @property
    def branch_count(self) -> int:
        return len(self.probs)

    def compensated_jumps(self) -> np.ndarray:
        """Per-branch compensated jump indicators, shape (branches, marks)."""
        return self.jumps - self.lam[None, :]


@dataclass(frozen=True)
class LatticeModel:
    """Non-recombining event tree with exact transition probabilities.

    Nodes at each level are indexed 0..n_k-1; branch ``b`` of node ``j``
    at level ``k`` leads to node ``j * B_k + b`` at level ``k + 1``.
    """

    grid: TimeGrid
    intensities: np.ndarray
    steps: tuple[Step, ...]
    level_times: np.ndarray
    _gram_factors: dict = field(default_factory=dict, repr=False)

    @property
    def level_count(self) -> int:
        return len(self.steps) + 1

    @property
    def last_level(self) -> int:
        return len(self.steps)

    @property
    def mark_count(self) -> int:
        return len(self.intensities)

    def node_count(self, level: int) -> int:
        n = 1
        for step in self.steps[:level]:
            n *= step.branch_count
        return n

    def level_probabilities(self, level: int) -> np.ndarray:
        """Unconditional probability of each node at ``level``."""
        p = np.ones(1)
        for step in self.steps[:level]:
            p = (p[:, None] * step.probs[None, :]).reshape(-1)
        return p

    def parents(self, level: int) -> np.ndarray:
        """Parent index at ``level - 1`` for every node at ``level``."""
        if level < 1:
            raise ModelError("root has no parent")
        b = self.steps[level - 1].branch_count
        return np.arange(self.node_count(level)) // b

    def lift(self, level: int, parent_values: np.ndarray) -> np.ndarray:
        """Copy parent-level values onto the children one level down."""
        b = self.steps[level].branch_count
        return np.repeat(np.asarray(parent_values, dtype=float), b)

    def expectation(self, level: int, values: np.ndarray) -> float:
        return float(np.dot(self.level_probabilities(level), values))


def build_lattice(grid: TimeGrid, intensities=()) -> LatticeModel:
    """Build the event tree for a grid and jump-mark intensities.

    Rejects parameter sets where the per-step jump probabilities
    ``mu_i * h`` sum to one or more (the branch weights would not be a
    probability distribution).
    """
    mu = np.asarray(list(intensities), dtype=float)
    if np.any(mu < 0):
        raise ModelError("mark intensities must be nonnegative")
    m = len(mu)

    dt = grid.macro_step
    delta = grid.micro_width
    stoch_dt = dt - delta

    total = float(np.sum(mu) * stoch_dt)
    if total >= 1.0:
        raise ModelError(
            f"jump probabilities sum to {total:.6g} >= 1 for step width {stoch_dt:.6g}"
        )

    steps = []
    times = [0.0]
    idx = 0
    for k in range(grid.step_count):
        t_k = k * dt
        if grid.is_refined:
            steps.append(
                Step(
                    index=idx,
                    start_time=t_k,
                    dt=delta,
                    stochastic=False,
                    probs=np.ones(1),
                    dw=np.zeros(1),
                    jumps=np.zeros((1, m)),
                    lam=np.zeros(m),
                )
            )
            times.append(t_k + delta)
            idx += 1
        steps.append(_stochastic_step(idx, t_k + delta, stoch_dt, mu))
        times.append(t_k + dt)
        idx += 1

    return LatticeModel(
        grid=grid,
        intensities=mu,
        steps=tuple(steps),
        level_times=np.array(times),
    )


def _stochastic_step(index: int, start: float, h: float, mu: np.ndarray) -> Step:
    m = len(mu)
    lam = mu * h
    root_h = np.sqrt(h)

    probs, dw, jumps = [], [], []
    for sign in (+1.0, -1.0):
        probs.append(0.5 * (1.0 - lam.sum()))
        dw.append(sign * root_h)
        jumps.append(np.zeros(m))
        for i in range(m):
            probs.append(0.5 * lam[i])
            dw.append(sign * root_h)
            row = np.zeros(m)
            row[i] = 1.0
            jumps.append(row)

    return Step(
        index=index,
        start_time=start,
        dt=h,
        stochastic=True,
        probs=np.array(probs),
        dw=np.array(dw),
        jumps=np.array(jumps).reshape(2 * (m + 1), m),
        lam=lam,
    )


def cond_exp(model: LatticeModel, level: int, values: np.ndarray) -> np.ndarray:
    """Exact conditional expectation of level ``level + 1`` values.

    Linear in ``values``; a micro step is the identity transition.
    """
    step = model.steps[level]
    v = np.asarray(values, dtype=float)
    expected = model.node_count(level + 1)
    if v.shape != (expected,):
        raise ModelError(f"expected {expected} child values, got shape {v.shape}")
    return v.reshape(-1, step.branch_count) @ step.probs


def _gram_solve(model: LatticeModel, step: Step) -> tuple[np.ndarray, np.ndarray]:
    """Weighted regressor matrix and inverse Gram for {1, dW, dN~_i}.

    Jump indicators of distinct marks are mutually exclusive, hence
    correlated; the joint least-squares system keeps the projection
    residual orthogonal to every regressor.
    """
    cached = model._gram_factors.get(step.index)
    if cached is not None:
        return cached
    reg = np.column_stack([np.ones(step.branch_count), step.dw, step.compensated_jumps()])
    weighted = reg * step.probs[:, None]
    gram = reg.T @ weighted
    inv = np.linalg.inv(gram)
    model._gram_factors[step.index] = (weighted, inv)
    return weighted, inv


def martingale_coeffs(
    model: LatticeModel, level: int, values: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project child values on the step's martingale increments.

    Returns the Brownian coefficient ``z`` (per node) and the per-mark jump
    coefficients ``l`` (shape nodes x marks).  On a deterministic micro step
    the coefficients are undefined; zeros are returned and a
    ``DeterministicStepWarning`` is emitted.
    """
    step = model.steps[level]
    n = model.node_count(level)
    m = model.mark_count
    v = np.asarray(values, dtype=float).reshape(n, step.branch_count)

    if not step.stochastic:
        warnings.warn(
            "martingale coefficients requested on a deterministic micro step; "
            "returning zeros",
            DeterministicStepWarning,
            stacklevel=2,
        )
        return np.zeros(n), np.zeros((n, m))

    weighted, inv = _gram_solve(model, step)
    moments = v @ weighted          # nodes x (2 + m): E[v * regressor]
    coeffs = moments @ inv.T
    z = coeffs[:, 1] / step.dt
    l = coeffs[:, 2:]
    return z, l


@dataclass
class ModelDiagnostics:
    """Report-only validation of probability sums and moment identities."""

    prob_sum_error: float
    dw_mean_error: float
    dw_var_error: float
    jump_mean_error: float
    cross_moment_error: float
    tolerance: float = 1e-12

    @property
    def max_violation(self) -> float:
        return max(
            self.prob_sum_error,
            self.dw_mean_error,
            self.dw_var_error,
            self.jump_mean_error,
            self.cross_moment_error,
        )

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance


def validate_model(model: LatticeModel, tolerance: float = 1e-12) -> ModelDiagnostics:
    """Check branch-probability sums and exact moment identities.

    Moment checks are skipped on deterministic micro steps (they hold
    vacuously there).
    """
    prob_err = dw_mean = dw_var = jump_mean = cross = 0.0
    for step in model.steps:
        prob_err = max(prob_err, abs(float(step.probs.sum()) - 1.0))
        if not step.stochastic:
            continue
        p = step.probs
        dw_mean = max(dw_mean, abs(float(p @ step.dw)))
        dw_var = max(dw_var, abs(float(p @ step.dw**2) - step.dt))
        comp = step.compensated_jumps()
        if model.mark_count:
            jump_mean = max(jump_mean, float(np.max(np.abs(p @ comp))))
            cross = max(cross, float(np.max(np.abs((p * step.dw) @ comp))))
    return ModelDiagnostics(
        prob_sum_error=prob_err,
        dw_mean_error=dw_mean,
        dw_var_error=dw_var,
        jump_mean_error=jump_mean,
        cross_moment_error=cross,
        tolerance=tolerance,
    )


def leaf_paths(model: LatticeModel) -> np.ndarray:
    """Node index at every level for each root-to-leaf path.

    Row i gives the ancestors of leaf i, shape (leaves, levels).
    """
    leaves = model.node_count(model.last_level)
    out = np.empty((leaves, model.level_count), dtype=int)
    idx = np.arange(leaves)
    out[:, model.last_level] = idx
    for level in range(model.last_level, 0, -1):
        idx = idx // model.steps[level - 1].branch_count
        out[:, level - 1] = idx
    return out


def model_to_csv(model: LatticeModel) -> str:
    """Dump nodes as CSV: level,nodeId,parentId,branchProb,dW,jumpMark."""
    lines = ["level,nodeId,parentId,branchProb,dW,jumpMark"]
    lines.append("0,0,-1,1,0,-1")
    for level in range(1, model.level_count):
        step = model.steps[level - 1]
        b = step.branch_count
        if model.mark_count:
            mark_of_branch = np.where(
                step.jumps.any(axis=1), step.jumps.argmax(axis=1), -1
            )
        else:
            mark_of_branch = np.full(b, -1)
        for node in range(model.node_count(level)):
            branch = node % b
            lines.append(
                f"{level},{node},{node // b},{float(step.probs[branch])!r},"
                f"{float(step.dw[branch])!r},{int(mark_of_branch[branch])}"
            )
    return "\n".join(lines) + "\n"
