"""Explicit fixed-step Runge-Kutta schemes over Butcher tableaus.

One stepping routine serves all four shipped schemes (forward Euler,
explicit midpoint, classic RK4 and the RK4 3/8 rule).  The stepper is
polymorphic: it runs on plain numpy arrays or on autodiff Vars, so the same
code path is used for baselines and for training graphs.

Each tableau also carries its stage abscissae as exact fractions; graph
manifestation uses those to classify stage times against basis intervals
with integer arithmetic instead of float comparisons.
"""

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .autodiff import Var


class StageOverflowError(ArithmeticError):
    """A Runge-Kutta stage produced a non-finite value."""


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    c: tuple[float, ...]
    c_exact: tuple[Fraction, ...]
    nominal_order: int

    @property
    def stages(self) -> int:
        return len(self.b)

    def __post_init__(self):
        s = self.stages
        if len(self.a) != s or len(self.c) != s or len(self.c_exact) != s:
            raise ValueError(f"{self.name}: inconsistent stage counts")
        for i, row in enumerate(self.a):
            if len(row) != s:
                raise ValueError(f"{self.name}: a must be {s}x{s}")
            for j in range(i, s):
                if row[j] != 0.0:
                    raise ValueError(f"{self.name}: not explicit, a[{i}][{j}] != 0")
        if abs(sum(self.b) - 1.0) > 1e-14:
            raise ValueError(f"{self.name}: weights b do not sum to 1")
        for i, row in enumerate(self.a):
            if abs(sum(row) - self.c[i]) > 1e-14:
                raise ValueError(f"{self.name}: row sum of a[{i}] does not match c[{i}]")


def _tableau(name, a_rows, b_row, c_row, order) -> ButcherTableau:
    s = len(b_row)
    a = tuple(tuple(float(a_rows[i][j]) if j < len(a_rows[i]) else 0.0 for j in range(s))
              for i in range(s))
    return ButcherTableau(
        name=name,
        a=a,
        b=tuple(float(x) for x in b_row),
        c=tuple(float(x) for x in c_row),
        c_exact=tuple(Fraction(x) for x in c_row),
        nominal_order=order,
    )


_F = Fraction
_SCHEMES = {
    "euler": _tableau("euler", [[]], [_F(1)], [_F(0)], 1),
    "midpoint": _tableau(
        "midpoint",
        [[], [_F(1, 2)]],
        [_F(0), _F(1)],
        [_F(0), _F(1, 2)],
        2,
    ),
    "rk4": _tableau(
        "rk4",
        [[], [_F(1, 2)], [_F(0), _F(1, 2)], [_F(0), _F(0), _F(1)]],
        [_F(1, 6), _F(1, 3), _F(1, 3), _F(1, 6)],
        [_F(0), _F(1, 2), _F(1, 2), _F(1)],
        4,
    ),
    "rk4-38": _tableau(
        "rk4-38",
        [[], [_F(1, 3)], [_F(-1, 3), _F(1)], [_F(1), _F(-1), _F(1)]],
        [_F(1, 8), _F(3, 8), _F(3, 8), _F(1, 8)],
        [_F(0), _F(1, 3), _F(2, 3), _F(1)],
        4,
    ),
}

SCHEME_NAMES = tuple(_SCHEMES)

_ALIASES = {
    "euler": "euler",
    "forward-euler": "euler",
    "midpoint": "midpoint",
    "rk4": "rk4",
    "rk4-classic": "rk4",
    "rk4classic": "rk4",
    "rk4-38": "rk4-38",
    "rk4_38": "rk4-38",
}


def tableau(scheme: str) -> ButcherTableau:
    """Coefficients of one of the shipped explicit schemes."""
    key = _ALIASES.get(scheme.strip().lower())
    if key is None:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEME_NAMES}")
    return _SCHEMES[key]


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    num_steps: int

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.num_steps + 1)


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)

    def append(self, t: float, x: np.ndarray) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.states.append(np.asarray(x, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.times)


def _is_finite(x) -> bool:
    v = x.value if isinstance(x, Var) else x
    return bool(np.all(np.isfinite(v)))


def step(tab: ButcherTableau, f, x, t: float, dt: float):
    """One explicit RK step x_{k+1} = x + dt * sum_i b_i y_i.

    Works on numpy arrays and on autodiff Vars.  The slope accumulation
    order (ascending stage index) is fixed so that alternative executions
    of the same scheme are bit-identical.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    ys = []
    for i in range(tab.stages):
        xi = x
        row = tab.a[i]
        for j in range(i):
            if row[j] != 0.0:
                xi = xi + (dt * row[j]) * ys[j]
        yi = f(xi, t + tab.c[i] * dt)
        if not _is_finite(yi):
            raise StageOverflowError(f"{tab.name}: non-finite value at stage {i + 1} (t={t}, dt={dt})")
        ys.append(yi)
    out = x
    for bi, yi in zip(tab.b, ys):
        if bi != 0.0:
            out = out + (dt * bi) * yi
    return out


def solve(tab: ButcherTableau, f, x0, grid: TimeGrid) -> Trajectory:
    """Integrate over the uniform grid, recording every node."""
    traj = Trajectory()
    x = np.asarray(x0, dtype=np.float64)
    traj.append(0.0, x)
    dt = grid.dt
    for k in range(grid.num_steps):
        x = step(tab, f, x, k * dt, dt)
        traj.append((k + 1) * dt, x)
    return traj


def global_error(traj: Trajectory, oracle) -> float:
    """Euclidean distance between the final state and oracle(final time)."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    t_end = traj.times[-1]
    ref = np.asarray(oracle(t_end), dtype=np.float64)
    return float(np.linalg.norm(traj.states[-1] - ref))


def order_fit(samples, state_scale: float = 1.0) -> tuple[float, float]:
    """Least-squares slope/intercept of log E against log dt.

    Samples at or below the roundoff floor (100 eps * state_scale) and
    non-positive errors are excluded; fewer than 3 usable samples is an
    error because the slope would be meaningless.
    """
    floor = 100.0 * np.finfo(np.float64).eps * max(state_scale, 1.0)
    kept = []
    for dt, err in samples:
        if dt <= 0.0:
            raise ValueError(f"non-positive dt {dt}")
        if err <= floor:
            warnings.warn(f"order_fit: dropping sample (dt={dt}, E={err}) at the roundoff floor")
            continue
        kept.append((dt, err))
    if len(kept) < 3:
        raise ValueError(f"order_fit needs at least 3 usable samples, got {len(kept)}")
    log_dt = np.log([dt for dt, _ in kept])
    log_e = np.log([err for _, err in kept])
    slope, intercept = np.polyfit(log_dt, log_e, 1)
    return float(slope), float(intercept)
