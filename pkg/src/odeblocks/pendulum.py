"""The nonlinear pendulum: true right-hand side and closed-form solution.

State is x = [rho, v] with rho the angle from the bottom position and
v = d(rho)/dt.  The dynamics are rho'' = g * sin(rho) with g < 0.  For a
stationary start (v0 = 0, |rho0| < pi) the angle has the closed form

    rho(t) = 2 asin( sin(rho0/2) * sn(K(m) - w0 t; m) ),   m = sin^2(rho0/2)

with w0 = sqrt(-g), which this module evaluates together with its analytic
time derivative v(t) = -2 w0 sin(rho0/2) cn(K(m) - w0 t; m).
"""

import math
from dataclasses import dataclass

import numpy as np

from .elliptic import complete_elliptic_k, jacobi_sn_cn_dn


@dataclass(frozen=True)
class PendulumConfig:
    gravity: float = -9.81
    rho0: float = 3.0 * math.pi / 4.0
    v0: float = 0.0

    def __post_init__(self):
        if not self.gravity < 0.0:
            raise ValueError(f"gravity must be negative (angle measured from the bottom), got {self.gravity}")
        if not abs(self.rho0) < math.pi:
            raise ValueError(f"|rho0| must be below pi (oscillatory regime), got {self.rho0}")

    @property
    def omega0(self) -> float:
        return math.sqrt(-self.gravity)

    @property
    def modulus(self) -> float:
        return math.sin(0.5 * self.rho0) ** 2


def true_rhs(state, cfg: PendulumConfig) -> np.ndarray:
    """d/dt [rho, v] = [v, g sin(rho)]."""
    rho, v = float(state[0]), float(state[1])
    return np.array([v, cfg.gravity * math.sin(rho)])


def pendulum_exact(t: float, cfg: PendulumConfig) -> tuple[float, float]:
    """Closed-form (rho, v) at time t for a stationary start."""
    if cfg.v0 != 0.0:
        raise ValueError("closed-form pendulum solution requires a stationary start (v0 = 0)")
    s = math.sin(0.5 * cfg.rho0)
    m = s * s
    if m < 1e-16:
        return 0.0, 0.0
    u = complete_elliptic_k(m) - cfg.omega0 * t
    sn, cn, _ = jacobi_sn_cn_dn(u, m)
    rho = 2.0 * math.asin(max(-1.0, min(1.0, s * sn)))
    v = -2.0 * cfg.omega0 * s * cn
    return rho, v


def pendulum_period(cfg: PendulumConfig) -> float:
    """Oscillation period implied by the argument scaling of pendulum_exact."""
    return 4.0 * complete_elliptic_k(cfg.modulus) / cfg.omega0


def pendulum_energy(state, cfg: PendulumConfig) -> float:
    """v^2/2 + g cos(rho); conserved along true trajectories."""
    rho, v = float(state[0]), float(state[1])
    return 0.5 * v * v + cfg.gravity * math.cos(rho)
