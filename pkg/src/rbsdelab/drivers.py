"""Driver abstraction and the implicit backward step.

A driver is the generator ``g(t, y, z, l)`` of the backward equation,
Lipschitz in ``(y, z, l)`` with a declared constant.  Evaluation is
vectorized: ``y`` and ``z`` are arrays over the nodes of one level, ``l``
has one column per jump mark.

Backward steps are implicit in ``y`` and explicit in ``(z, l)``.  A step
solves ``y = base + g(t, y, z, l) * h`` exactly when the driver declares an
affine-in-y structure, otherwise by fixed point to 1e-13 (contraction
requires ``K * h < 1``).  The penalized step additionally carries
``n * (y - c)^- * h`` and is solved piecewise, so the penalty weight may
exceed ``1 / h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import ConfigError, ConvergenceError, LipschitzViolationError, StepSizeError

FIXED_POINT_TOL = 1e-13
FIXED_POINT_MAX_ITER = 200


@dataclass(frozen=True)
class Driver:
    """Generator of the backward equation with a declared Lipschitz bound.

    Parameters
    ----------
    fn : callable
        Vectorized ``g(t, y, z, l) -> array``; ``l`` has shape (n, marks).
    lipschitz : float
        Declared constant K in ``|y| + |z| + ||l||_mu`` distance.
    depends_on_y, depends_on_z, depends_on_l : bool
        Structure flags; y-independence and affine-in-y enable closed-form
        steps.
    y_slope : float or None
        Exact linear coefficient of y when the driver is affine in y.
    """

    fn: Callable
    lipschitz: float
    depends_on_y: bool = False
    depends_on_z: bool = False
    depends_on_l: bool = False
    y_slope: float | None = None
    name: str = "custom"

    def __call__(self, t, y, z, l):
        return np.asarray(self.fn(t, y, z, l), dtype=float)

    def check_step_size(self, h: float):
        if self.lipschitz * h >= 1.0:
            raise StepSizeError(
                f"K * h = {self.lipschitz * h:.6g} >= 1 for driver '{self.name}'"
            )


def zero_driver() -> Driver:
    return Driver(fn=lambda t, y, z, l: np.zeros(np.shape(y)), lipschitz=0.0, name="zero")


def constant_driver(value: float) -> Driver:
    return Driver(
        fn=lambda t, y, z, l: np.full(np.shape(y), float(value)),
        lipschitz=0.0,
        name=f"constant({value})",
    )


def linear_driver(y_coef=0.0, z_coef=0.0, jump_coefs=(), constant=0.0, intensities=()) -> Driver:
    """Driver ``a*y + b*z + sum_i c_i l_i + d``.

    The Lipschitz constant in the ``||.||_mu`` norm uses the declared
    intensities as weights; a mark with zero intensity must have a zero
    coefficient (its contribution is invisible in that norm).
    """
    c = np.asarray(list(jump_coefs), dtype=float)
    mu = np.asarray(list(intensities), dtype=float)
    if len(c) and len(mu) != len(c):
        raise ConfigError("jump_coefs and intensities must have equal length")
    k_l = 0.0
    for ci, mi in zip(c, mu):
        if ci != 0.0 and mi <= 0.0:
            raise ConfigError("nonzero jump coefficient requires positive intensity")
        if mi > 0.0:
            k_l += ci * ci / mi
    k = abs(y_coef) + abs(z_coef) + float(np.sqrt(k_l))

    def fn(t, y, z, l):
        out = y_coef * np.asarray(y, dtype=float) + z_coef * np.asarray(z, dtype=float)
        if len(c):
            out = out + np.asarray(l, dtype=float) @ c
        return out + constant

    return Driver(
        fn=fn,
        lipschitz=k,
        depends_on_y=y_coef != 0.0,
        depends_on_z=z_coef != 0.0,
        depends_on_l=bool(len(c)) and bool(np.any(c != 0.0)),
        y_slope=float(y_coef),
        name="linear",
    )


def american_discount_driver(rate: float) -> Driver:
    """Discounting driver ``-r * y``."""
    d = linear_driver(y_coef=-float(rate))
    object.__setattr__(d, "name", f"american-discount({rate})")
    return d


def table_driver(times, values) -> Driver:
    """Piecewise-constant time table ``g(t) = values[j]`` on ``[times[j], times[j+1])``.

    Declarative form for scenario configs; no code injection.
    """
    ts = np.asarray(list(times), dtype=float)
    vs = np.asarray(list(values), dtype=float)
    if len(ts) != len(vs) or len(ts) == 0:
        raise ConfigError("table driver needs equally many times and values")
    if np.any(np.diff(ts) <= 0):
        raise ConfigError("table times must be strictly increasing")

    def fn(t, y, z, l):
        j = int(np.searchsorted(ts, t, side="right") - 1)
        j = max(j, 0)
        return np.full(np.shape(y), vs[j])

    return Driver(fn=fn, lipschitz=0.0, name="table")


def driver_from_config(spec: dict, intensities=()) -> Driver:
    kind = spec.get("type")
    if kind == "zero":
        return zero_driver()
    if kind == "constant":
        return constant_driver(spec["value"])
    if kind == "linear":
        return linear_driver(
            y_coef=spec.get("y", 0.0),
            z_coef=spec.get("z", 0.0),
            jump_coefs=spec.get("jumps", [0.0] * len(list(intensities))),
            constant=spec.get("constant", 0.0),
            intensities=intensities,
        )
    if kind == "american-discount":
        return american_discount_driver(spec["rate"])
    if kind in ("table", "custom-table"):
        return table_driver(spec["times"], spec["values"])
    raise ConfigError(f"unknown driver type {kind!r}")


def implicit_step(driver: Driver, t: float, base, z, l, h: float, scale=None) -> np.ndarray:
    """Solve ``y = base + s * g(t, y / s, z / s, l / s) * h`` per node.

    ``scale`` is the optional nonnegative node field ``s`` used by the
    Bellman scaling machinery (perspective form, which preserves the
    Lipschitz constant); ``None`` means the plain step.  Where ``s`` is
    zero the driver term vanishes.
    """
    base = np.asarray(base, dtype=float)
    if h == 0.0:
        return base.copy()
    driver.check_step_size(h)

    def g_eval(y):
        if scale is None:
            return driver(t, y, z, l)
        s = np.asarray(scale, dtype=float)
        safe = np.where(s > 0, s, 1.0)
        val = driver(t, y / safe, z / safe, l / safe[:, None] if np.ndim(l) == 2 else l)
        return np.where(s > 0, s * val, 0.0)

    if not driver.depends_on_y:
        return base + g_eval(base) * h

    if driver.y_slope is not None:
        # g(t, y, z, l) = slope * y + rest; perspective keeps the slope.
        rest = g_eval(np.zeros_like(base))
        return (base + rest * h) / (1.0 - driver.y_slope * h)

    y = base.copy()
    for _ in range(FIXED_POINT_MAX_ITER):
        y_next = base + g_eval(y) * h
        if np.max(np.abs(y_next - y)) <= FIXED_POINT_TOL:
            return y_next
        y = y_next
    raise ConvergenceError(
        f"implicit step did not converge in {FIXED_POINT_MAX_ITER} iterations"
    )


def penalized_step(
    driver: Driver, t: float, base, z, l, h: float, weight: float, constraint
) -> np.ndarray:
    """Solve ``y = base + g(t,y,z,l) h + weight * (y - c)^- h`` per node.

    The map is piecewise in y with a single crossing, so each node is
    solved on the correct piece; the binding piece is written in the form
    ``c - (.)/(1 + (n - a) h)`` which is monotone in the weight even in
    floating point.
    """
    if weight < 0:
        raise ConfigError("penalty weight must be nonnegative")
    base = np.asarray(base, dtype=float)
    c = np.broadcast_to(np.asarray(constraint, dtype=float), base.shape)
    free = implicit_step(driver, t, base, z, l, h)
    if weight == 0.0 or h == 0.0:
        return free

    binding = free < c
    if not np.any(binding):
        return free

    if not driver.depends_on_y:
        g0 = driver(t, base, z, l)
        bound = c - (c - base - g0 * h) / (1.0 + weight * h)
    elif driver.y_slope is not None:
        a = driver.y_slope
        g0 = driver(t, np.zeros_like(base), z, l)
        bound = c - (c * (1.0 - a * h) - base - g0 * h) / (1.0 - a * h + weight * h)
    else:
        y = np.minimum(free, c)
        for _ in range(FIXED_POINT_MAX_ITER):
            y_next = (base + driver(t, y, z, l) * h + weight * c * h) / (1.0 + weight * h)
            if np.max(np.abs(y_next - y)) <= FIXED_POINT_TOL:
                y = y_next
                break
            y = y_next
        else:
            raise ConvergenceError("penalized step did not converge")
        bound = y

    return np.where(binding, bound, free)


def lipschitz_probe(
    driver: Driver,
    probe_count: int = 2000,
    seed: int = 0,
    intensities=(),
    scale: float = 5.0,
) -> float:
    """Estimate the Lipschitz constant from random probe pairs.

    Returns the largest observed difference quotient and raises
    ``LipschitzViolationError`` when it exceeds the declared constant by
    more than a factor ``1 + 1e-9`` (the driver is misdeclared).
    """
    rng = np.random.default_rng(seed)
    mu = np.asarray(list(intensities), dtype=float)
    m = len(mu)

    t = rng.uniform(0.0, 1.0, probe_count)
    y1, y2 = rng.normal(0, scale, (2, probe_count))
    z1, z2 = rng.normal(0, scale, (2, probe_count))
    l1 = rng.normal(0, scale, (probe_count, m))
    l2 = rng.normal(0, scale, (probe_count, m))

    worst = 0.0
    for i in range(probe_count):
        g1 = float(driver(t[i], np.array([y1[i]]), np.array([z1[i]]), l1[i : i + 1])[0])
        g2 = float(driver(t[i], np.array([y2[i]]), np.array([z2[i]]), l2[i : i + 1])[0])
        dl = np.sqrt(np.sum(mu * (l1[i] - l2[i]) ** 2)) if m else 0.0
        dist = abs(y1[i] - y2[i]) + abs(z1[i] - z2[i]) + dl
        if dist > 1e-12:
            worst = max(worst, abs(g1 - g2) / dist)

    if worst > driver.lipschitz * (1.0 + 1e-9) + 1e-15:
        raise LipschitzViolationError(
            f"observed quotient {worst:.6g} exceeds declared K = {driver.lipschitz:.6g}"
        )
    return worst
