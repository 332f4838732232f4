"""Piecewise-constant weight functions over [0, horizon].

A WeightFunction holds, for every tensor a residual module consumes, a
coefficient block whose leading axis indexes uniform time intervals.
Evaluating at time t selects the slice of the interval containing t;
intervals are half-open [(i)*h/M, (i+1)*h/M) with the last one closed so
t = horizon is valid (a Runge-Kutta stage with c = 1 lands there).

Split refinement doubles the interval count by copying slices, which leaves
the function pointwise unchanged; coarsening is the L2 projection onto
fewer equal-width intervals, i.e. averaging the covered slices.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParamGroupSpec:
    """Names and shapes of every tensor a residual module consumes."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate entry names in {names}")
        for name, shape in self.entries:
            if len(shape) == 0 or any(d < 1 for d in shape):
                raise ValueError(f"entry {name!r} has invalid shape {shape}")

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    def shape(self, name: str) -> tuple[int, ...]:
        for n, s in self.entries:
            if n == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True)
class WeightFunction:
    group: ParamGroupSpec
    num_basis: int
    horizon: float
    coefficients: dict[str, np.ndarray]

    def __post_init__(self):
        if self.num_basis < 1:
            raise ValueError("num_basis must be at least 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if set(self.coefficients) != set(self.group.names()):
            raise ValueError(
                f"coefficient entries {sorted(self.coefficients)} do not match "
                f"group {sorted(self.group.names())}"
            )
        for name, shape in self.group.entries:
            got = self.coefficients[name].shape
            if got != (self.num_basis, *shape):
                raise ValueError(
                    f"entry {name!r}: expected shape {(self.num_basis, *shape)}, got {got}"
                )


def interval_index(num_basis: int, horizon: float, t: float) -> int:
    """0-based index of the interval containing t.

    Boundary points belong to the interval starting there (half-open rule),
    t = horizon to the last interval.  Values within 1e-9 (relative) of a
    boundary are treated as exact boundary hits, so times assembled from
    float arithmetic like k*dt classify the way the exact rationals would.
    """
    if not 0.0 <= t <= horizon:
        raise ValueError(f"time {t} outside [0, {horizon}]")
    u = t * num_basis / horizon
    r = round(u)
    idx = int(r) if abs(u - r) <= 1e-9 * max(1.0, abs(u)) else int(math.floor(u))
    return min(idx, num_basis - 1)


def basis_eval(num_basis: int, horizon: float, basis_index: int, t: float) -> float:
    """Indicator of interval ``basis_index`` (1-based) at time t."""
    if not 1 <= basis_index <= num_basis:
        raise ValueError(f"basis index {basis_index} outside [1, {num_basis}]")
    return 1.0 if interval_index(num_basis, horizon, t) == basis_index - 1 else 0.0


def theta_eval(wf: WeightFunction, t: float) -> dict[str, np.ndarray]:
    """Weights at time t: the coefficient slice of the active interval.

    The taped counterpart is autodiff.select on the coefficient leaf with
    the same index, which routes gradient to exactly that slice.
    """
    idx = interval_index(wf.num_basis, wf.horizon, t)
    return {name: c[idx].copy() for name, c in wf.coefficients.items()}


def refine_split(wf: WeightFunction) -> WeightFunction:
    """Double the interval count, copying each slice; pointwise a no-op."""
    return WeightFunction(
        group=wf.group,
        num_basis=2 * wf.num_basis,
        horizon=wf.horizon,
        coefficients={name: np.repeat(c, 2, axis=0) for name, c in wf.coefficients.items()},
    )


def project_coarsen(wf: WeightFunction, new_num_basis: int) -> WeightFunction:
    """L2 projection onto ``new_num_basis`` equal intervals (slice means)."""
    if new_num_basis < 1 or wf.num_basis % new_num_basis != 0:
        raise ValueError(
            f"cannot coarsen {wf.num_basis} intervals to {new_num_basis}: not a divisor"
        )
    factor = wf.num_basis // new_num_basis
    coeffs = {
        name: c.reshape((new_num_basis, factor) + c.shape[1:]).mean(axis=1)
        for name, c in wf.coefficients.items()
    }
    return WeightFunction(wf.group, new_num_basis, wf.horizon, coeffs)


def param_count(wf: WeightFunction) -> int:
    return int(sum(c.size for c in wf.coefficients.values()))
