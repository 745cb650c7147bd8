"""Slot-indexed processes: left-limit, instant, and right-limit layers.

A ladlag process on the lattice carries three values per instant: ``pre``
(the limit from the left, defined for levels >= 1), ``at`` (the value at
the instant) and ``post`` (the limit from the right, defined for levels
<= N-1).  All three layers of level k live on the level-k node set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ModelError
from .lattice import LatticeModel, leaf_paths


@dataclass
class SlotProcess:
    """Per-level (pre, at, post) value arrays.

    ``pre[0]`` and ``post[last]`` are None; every other entry is an array
    over that level's nodes.
    """

    pre: list
    at: list
    post: list

    @classmethod
    def flat(cls, model: LatticeModel, levels: list) -> "SlotProcess":
        """Lift one value array per level into all three slots."""
        at = [np.asarray(v, dtype=float) for v in levels]
        for k, v in enumerate(at):
            if v.shape != (model.node_count(k),):
                raise ModelError(f"level {k} values have wrong node count")
        pre = [None] + [a.copy() for a in at[1:]]
        post = [a.copy() for a in at[:-1]] + [None]
        return cls(pre=pre, at=at, post=post)

    @classmethod
    def deterministic(cls, model: LatticeModel, per_level) -> "SlotProcess":
        """Constant per level across nodes and slots (a staircase in time)."""
        vals = [np.full(model.node_count(k), float(v)) for k, v in enumerate(per_level)]
        return cls.flat(model, vals)

    @property
    def last_level(self) -> int:
        return len(self.at) - 1

    def copy(self) -> "SlotProcess":
        return SlotProcess(
            pre=[None if v is None else v.copy() for v in self.pre],
            at=[v.copy() for v in self.at],
            post=[None if v is None else v.copy() for v in self.post],
        )

    def shift_by(self, other: "SlotProcess", sign: float = 1.0) -> "SlotProcess":
        """Slotwise ``self + sign * other``."""
        out = self.copy()
        for k in range(len(out.at)):
            out.at[k] = out.at[k] + sign * other.at[k]
            if out.pre[k] is not None and other.pre[k] is not None:
                out.pre[k] = out.pre[k] + sign * other.pre[k]
            if out.post[k] is not None and other.post[k] is not None:
                out.post[k] = out.post[k] + sign * other.post[k]
        return out

    def max_abs_gap(self, other: "SlotProcess") -> float:
        """Largest absolute difference over all shared slots."""
        worst = 0.0
        for k in range(len(self.at)):
            worst = max(worst, float(np.max(np.abs(self.at[k] - other.at[k]))))
            if self.pre[k] is not None and other.pre[k] is not None:
                worst = max(worst, float(np.max(np.abs(self.pre[k] - other.pre[k]))))
            if self.post[k] is not None and other.post[k] is not None:
                worst = max(worst, float(np.max(np.abs(self.post[k] - other.post[k]))))
        return worst

    def min_slot_gap(self, other: "SlotProcess") -> float:
        """Smallest value of ``self - other`` over all shared slots."""
        worst = np.inf
        for k in range(len(self.at)):
            worst = min(worst, float(np.min(self.at[k] - other.at[k])))
            if self.pre[k] is not None and other.pre[k] is not None:
                worst = min(worst, float(np.min(self.pre[k] - other.pre[k])))
            if self.post[k] is not None and other.post[k] is not None:
                worst = min(worst, float(np.min(self.post[k] - other.post[k])))
        return float(worst)


def sup_distance_slots(
    model: LatticeModel, a: SlotProcess, b: SlotProcess
) -> tuple[np.ndarray, float]:
    """Pathwise sup of |a - b| over slots, and its L2 norm over paths.

    The essential supremum over stopping rules on a finite tree equals the
    pathwise supremum over slots, so this is exact.
    """
    if a.last_level != b.last_level:
        raise ModelError("slot processes live on different level ranges")
    paths = leaf_paths(model)
    leaves = paths.shape[0]
    sup = np.zeros(leaves)
    for k in range(a.last_level + 1):
        idx = paths[:, k]
        sup = np.maximum(sup, np.abs(a.at[k] - b.at[k])[idx])
        if a.pre[k] is not None and b.pre[k] is not None:
            sup = np.maximum(sup, np.abs(a.pre[k] - b.pre[k])[idx])
        if a.post[k] is not None and b.post[k] is not None:
            sup = np.maximum(sup, np.abs(a.post[k] - b.post[k])[idx])
    weights = model.level_probabilities(model.last_level)
    l2 = float(np.sqrt(np.sum(weights * sup**2)))
    return sup, l2
