"""Barriers with left/right irregularity on the lattice.

A barrier holds one value at each instant (``at`` layer) and one constant
value on each open inter-instant interval (``open`` layer, measurable at
the interval's left endpoint).  The limit from the left at ``t_{k+1}`` is
the parent's open value inherited by the children.

Process-derived barriers (produced by the envelope-shift construction) are
not constant on open intervals; they carry a distinct parent-measurable
``end`` value for the interval's right limit.  Ordinary barriers leave
``end`` equal to ``open``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ModelError, PreconditionError
from .lattice import LatticeModel, TimeGrid, build_lattice
from .slots import SlotProcess, sup_distance_slots


@dataclass
class Barrier:
    """Ladlag barrier given by instant and open-interval layers.

    ``at_values[k]`` lives on level-k nodes for k = 0..N; the last entry is
    the terminal condition.  ``open_values[k]`` (k = 0..N-1) is the value
    on ``(t_k, t_{k+1})`` at its start; ``end_values[k]`` the value at its
    end (defaults to ``open_values[k]``).
    """

    at_values: list
    open_values: list
    end_values: list = field(default=None)
    pre_values: list = field(default=None)

    def __post_init__(self):
        self.at_values = [np.asarray(v, dtype=float) for v in self.at_values]
        self.open_values = [np.asarray(v, dtype=float) for v in self.open_values]
        if len(self.at_values) != len(self.open_values) + 1:
            raise ModelError("need one more instant layer than open layers")
        if self.end_values is None:
            self.end_values = [v.copy() for v in self.open_values]
        else:
            self.end_values = [np.asarray(v, dtype=float) for v in self.end_values]
        if len(self.end_values) != len(self.open_values):
            raise ModelError("end layer count must match open layer count")
        if self.pre_values is not None:
            if len(self.pre_values) != len(self.at_values):
                raise ModelError("explicit left-limit layers need one entry per level")
            self.pre_values = [None] + [
                np.asarray(v, dtype=float) for v in self.pre_values[1:]
            ]

    @property
    def last_level(self) -> int:
        return len(self.at_values) - 1

    @property
    def terminal(self) -> np.ndarray:
        return self.at_values[-1]

    def check_shapes(self, model: LatticeModel):
        if self.last_level != model.last_level:
            raise ModelError(
                f"barrier has {self.last_level} steps, model has {model.last_level}"
            )
        for k, v in enumerate(self.at_values):
            if v.shape != (model.node_count(k),):
                raise ModelError(f"instant layer {k} has wrong node count")
        for k, v in enumerate(self.open_values):
            if v.shape != (model.node_count(k),):
                raise ModelError(f"open layer {k} has wrong node count")
        if self.pre_values is not None:
            for k, v in enumerate(self.pre_values):
                if v is not None and v.shape != (model.node_count(k),):
                    raise ModelError(f"left-limit layer {k} has wrong node count")

    def pre_layer(self, model: LatticeModel, level: int) -> np.ndarray:
        """Limit from the left at ``t_level`` on level-``level`` nodes.

        Ordinary barriers are constant on open intervals, so children
        inherit the parent's interval-end value; process-derived barriers
        carry an explicit node-resolved layer instead.
        """
        if self.pre_values is not None and self.pre_values[level] is not None:
            return self.pre_values[level]
        return model.lift(level - 1, self.end_values[level - 1])

    # classification ----------------------------------------------------

    def is_right_usc(self) -> bool:
        return all(
            np.all(a >= o) and np.all(a >= e)
            for a, o, e in zip(self.at_values, self.open_values, self.end_values)
        )

    def is_left_usc(self, model: LatticeModel) -> bool:
        return all(
            np.all(self.pre_layer(model, k) <= self.at_values[k])
            for k in range(1, self.last_level + 1)
        )

    def xi_leq_xi_plus(self) -> bool:
        return all(
            np.all(a <= o)
            for a, o in zip(self.at_values, self.open_values)
        )

    def has_strict_left_gap(self, model: LatticeModel) -> bool:
        return all(
            np.all(self.at_values[k] < self.pre_layer(model, k))
            for k in range(1, self.last_level + 1)
        )

    def is_cadlag(self) -> bool:
        return self.pre_values is None and all(
            np.array_equal(a, o) and np.array_equal(o, e)
            for a, o, e in zip(self.at_values, self.open_values, self.end_values)
        )

    def flags(self, model: LatticeModel) -> dict:
        return {
            "rightUSC": self.is_right_usc(),
            "leftUSC": self.is_left_usc(model),
            "xiLEQxiPlus": self.xi_leq_xi_plus(),
            "strictLeftGap": self.has_strict_left_gap(model),
            "cadlag": self.is_cadlag(),
        }

    def to_slots(self, model: LatticeModel) -> SlotProcess:
        """Slot view: pre = inherited interval end, at = instant, post = open."""
        n = self.last_level
        return SlotProcess(
            pre=[None] + [self.pre_layer(model, k) for k in range(1, n + 1)],
            at=[v.copy() for v in self.at_values],
            post=[v.copy() for v in self.open_values] + [None],
        )


class CadlagBarrier(Barrier):
    """Barrier whose instant and interval layers agree (discrete RCLL)."""

    def __post_init__(self):
        super().__post_init__()
        if not self.is_cadlag():
            raise ModelError("cadlag barrier requires equal instant and interval layers")


def make_barrier(model: LatticeModel, at_layers, open_layers, terminal) -> Barrier:
    """Assemble a barrier from explicit layers and validate against a model."""
    b = Barrier(
        at_values=list(at_layers) + [terminal],
        open_values=list(open_layers),
    )
    b.check_shapes(model)
    return b


def constant_barrier(model: LatticeModel, value: float) -> CadlagBarrier:
    n = model.last_level
    return CadlagBarrier(
        at_values=[np.full(model.node_count(k), float(value)) for k in range(n + 1)],
        open_values=[np.full(model.node_count(k), float(value)) for k in range(n)],
    )


def node_states(model: LatticeModel, spot: float, up: float, down: float, jump_factors=None) -> list:
    """Multiplicative state per node: up/down by the Brownian sign, times a
    per-mark factor on jump branches; micro steps leave the state unchanged."""
    factors = np.asarray(
        list(jump_factors) if jump_factors is not None else np.ones(model.mark_count),
        dtype=float,
    )
    states = [np.array([float(spot)])]
    for step in model.steps:
        parent = states[-1]
        if not step.stochastic:
            states.append(parent.copy())
            continue
        mult = np.where(step.dw > 0, up, down)
        if model.mark_count:
            mult = mult * np.prod(factors[None, :] ** step.jumps, axis=1)
        states.append((parent[:, None] * mult[None, :]).reshape(-1))
    return states


def american_put_barrier(
    model: LatticeModel,
    strike: float,
    spot: float,
    up: float,
    down: float,
    jump_factors=None,
) -> CadlagBarrier:
    """Put payoff along the multiplicative state, equal on both layers."""
    states = node_states(model, spot, up, down, jump_factors)
    payoff = [np.maximum(strike - s, 0.0) for s in states]
    return CadlagBarrier(
        at_values=payoff,
        open_values=[p.copy() for p in payoff[:-1]],
    )


def spike_barrier(
    model: LatticeModel,
    base: float,
    level: int,
    nodes,
    height: float,
    terminal: float | None = None,
) -> Barrier:
    """Constant barrier with an instant-only spike at selected nodes."""
    n = model.last_level
    at = [np.full(model.node_count(k), float(base)) for k in range(n + 1)]
    if terminal is not None:
        at[n] = np.full(model.node_count(n), float(terminal))
    idx = range(model.node_count(level)) if nodes == "all" else list(nodes)
    for j in idx:
        at[level][j] = height
    return Barrier(
        at_values=at,
        open_values=[np.full(model.node_count(k), float(base)) for k in range(n)],
    )


def random_irregular_barrier(
    model: LatticeModel, seed: int, kind: str = "right-usc", scale: float = 1.0
) -> Barrier:
    """Random adapted barrier in a requested regularity class.

    Kinds: ``free``, ``right-usc``, ``cadlag``, ``xi-leq-xi-plus``,
    ``left-usc``, ``strict-left-gap``.
    """
    rng = np.random.default_rng(seed)
    n = model.last_level
    walk = [rng.normal(0.0, scale, model.node_count(0))]
    for k in range(1, n + 1):
        b = model.steps[k - 1].branch_count
        walk.append(np.repeat(walk[-1], b) + rng.normal(0.0, scale, model.node_count(k)))

    opens = [walk[k] + rng.normal(0.0, 0.5 * scale, walk[k].shape) for k in range(n)]
    ats = [walk[k].copy() for k in range(n + 1)]

    if kind == "free":
        pass
    elif kind == "right-usc":
        for k in range(n):
            ats[k] = np.maximum(ats[k], opens[k]) + np.abs(
                rng.normal(0.0, 0.3 * scale, ats[k].shape)
            ) * rng.integers(0, 2, ats[k].shape)
    elif kind == "cadlag":
        for k in range(n):
            ats[k] = opens[k].copy()
    elif kind == "xi-leq-xi-plus":
        for k in range(n):
            ats[k] = np.minimum(ats[k], opens[k]) - np.abs(
                rng.normal(0.0, 0.3 * scale, ats[k].shape)
            ) * rng.integers(0, 2, ats[k].shape)
    elif kind == "left-usc":
        for k in range(1, n + 1):
            inherited = model.lift(k - 1, opens[k - 1])
            ats[k] = inherited + np.abs(rng.normal(0.0, 0.3 * scale, ats[k].shape))
    elif kind == "strict-left-gap":
        # right-USC with strictly smaller instant values than the inherited
        # left limits, the hypothesis class of the right-shift theorem
        ats[0] = opens[0] + np.abs(rng.normal(0.0, 0.3 * scale, ats[0].shape))
        for k in range(1, n + 1):
            inherited = model.lift(k - 1, opens[k - 1])
            ats[k] = inherited - 0.05 * scale - np.abs(
                rng.normal(0.0, 0.3 * scale, ats[k].shape)
            )
            if k < n:
                opens[k] = ats[k] - np.abs(rng.normal(0.0, 0.3 * scale, ats[k].shape))
    else:
        raise ConfigError(f"unknown irregular barrier kind {kind!r}")

    return Barrier(at_values=ats, open_values=opens)


def barrier_from_config(model: LatticeModel, spec: dict) -> Barrier:
    kind = spec.get("type")
    if kind == "constant":
        return constant_barrier(model, spec["value"])
    if kind == "american-put":
        return american_put_barrier(
            model,
            strike=spec["strike"],
            spot=spec.get("spot", 100.0),
            up=spec.get("up", 1.2),
            down=spec.get("down", 0.8),
            jump_factors=spec.get("jump_factors"),
        )
    if kind == "spike":
        return spike_barrier(
            model,
            base=spec.get("base", 0.0),
            level=spec["level"],
            nodes=spec.get("nodes", "all"),
            height=spec["height"],
            terminal=spec.get("terminal"),
        )
    if kind == "random-irregular":
        return random_irregular_barrier(
            model, seed=spec.get("seed", 0), kind=spec.get("kind", "right-usc")
        )
    if kind == "table":
        return barrier_from_csv(model, spec["csv"])
    raise ConfigError(f"unknown barrier type {kind!r}")


# --- envelope and monotone approximation -------------------------------


def upper_cadlag_envelope(barrier: Barrier) -> CadlagBarrier:
    """Smallest cadlag barrier dominating both layers.

    Per node the envelope equals ``max(at, open)``; on a right-USC barrier
    it agrees with the instant layer everywhere.
    """
    n = barrier.last_level
    env = [
        np.maximum(barrier.at_values[k], barrier.open_values[k]) for k in range(n)
    ]
    return CadlagBarrier(
        at_values=env + [barrier.terminal.copy()],
        open_values=[e.copy() for e in env],
    )


def cadlag_approx_sequence(
    model: LatticeModel, barrier: Barrier, n: int
) -> tuple[LatticeModel, CadlagBarrier]:
    """Refined model and the n-th cadlag approximant of a right-USC barrier.

    A deterministic micro step of width ``dt * 2**-n`` follows each macro
    instant; the approximant holds ``max(at, open)`` on the micro window
    and the open value on the remainder, so the sequence decreases slotwise
    and pins the instant values for every n.
    """
    if n < 1:
        raise ConfigError("refinement index must be >= 1")
    if not barrier.is_right_usc():
        raise PreconditionError(
            "cadlag approximation requires a right-USC barrier "
            "(the sequence would not decrease to it)"
        )
    if model.grid.is_refined:
        raise ModelError("approximation starts from an unrefined base model")

    delta = model.grid.macro_step * 2.0**-n
    refined = build_lattice(
        TimeGrid(model.grid.horizon, model.grid.step_count, micro_width=delta),
        model.intensities,
    )

    at, opens = [], []
    for k in range(model.last_level):
        window = np.maximum(barrier.at_values[k], barrier.open_values[k])
        rest = barrier.open_values[k]
        at.append(window)          # refined level 2k, instant t_k
        opens.append(window.copy())
        at.append(rest.copy())     # refined level 2k+1, instant t_k + delta
        opens.append(rest.copy())
    at.append(barrier.terminal.copy())
    return refined, CadlagBarrier(at_values=at, open_values=opens)


def embed_in_refined(
    base_model: LatticeModel, barrier: Barrier, refined_model: LatticeModel
) -> Barrier:
    """Represent a base barrier on a refined lattice without changing it."""
    at, opens, ends = [], [], []
    for k in range(base_model.last_level):
        a = barrier.at_values[k]
        o = barrier.open_values[k]
        e = barrier.end_values[k]
        at.append(a.copy())
        opens.append(o.copy())
        ends.append(o.copy())      # interval (t_k, t_k + delta) sits inside (t_k, t_{k+1})
        at.append(o.copy())
        opens.append(o.copy())
        ends.append(e.copy())
    at.append(barrier.terminal.copy())
    b = Barrier(at_values=at, open_values=opens, end_values=ends)
    b.check_shapes(refined_model)
    return b


def restrict_to_base(refined_values: list, base_model: LatticeModel) -> list:
    """Pick the macro-instant entries out of per-level refined arrays."""
    return [refined_values[2 * k] for k in range(base_model.last_level)] + [
        refined_values[-1]
    ]


def sup_distance(model: LatticeModel, a, b) -> tuple[np.ndarray, float]:
    """Pathwise sup distance and its L2 norm for barriers or slot processes."""
    for x in (a, b):
        last = x.last_level
        if last != model.last_level:
            raise ModelError(
                f"incompatible slot structures: {last} steps against "
                f"{model.last_level} on the model"
            )
    sa = a.to_slots(model) if isinstance(a, Barrier) else a
    sb = b.to_slots(model) if isinstance(b, Barrier) else b
    return sup_distance_slots(model, sa, sb)


# --- CSV round trip -----------------------------------------------------


def barrier_to_csv(barrier: Barrier) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["level", "nodeId", "atValue", "openValue"])
    for k, layer in enumerate(barrier.at_values):
        is_terminal = k == barrier.last_level
        for j, v in enumerate(layer):
            open_v = "" if is_terminal else repr(float(barrier.open_values[k][j]))
            writer.writerow([k, j, repr(float(v)), open_v])
    return buf.getvalue()


def barrier_from_csv(model: LatticeModel, text: str) -> Barrier:
    at = {}
    opens = {}
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        try:
            k = int(row["level"])
            j = int(row["nodeId"])
            at.setdefault(k, {})[j] = float(row["atValue"])
            if row.get("openValue"):
                opens.setdefault(k, {})[j] = float(row["openValue"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad barrier CSV row {row!r}") from exc

    n = model.last_level
    at_layers, open_layers = [], []
    for k in range(n + 1):
        count = model.node_count(k)
        if k not in at or len(at[k]) != count:
            raise ConfigError(f"barrier CSV misses nodes at level {k}")
        at_layers.append(np.array([at[k][j] for j in range(count)]))
        if k < n:
            if k not in opens or len(opens[k]) != count:
                raise ConfigError(f"barrier CSV misses open values at level {k}")
            open_layers.append(np.array([opens[k][j] for j in range(count)]))
    b = Barrier(at_values=at_layers, open_values=open_layers)
    b.check_shapes(model)
    return b
