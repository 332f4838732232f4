"""Complete elliptic integral K(m) and Jacobi sn/cn/dn for 0 <= m < 1.

K uses the arithmetic-geometric mean iteration; sn/cn/dn use the Gauss/Landen
descending-modulus scheme with amplitude backtracking (DLMF 22.20(ii)).
Both are plain double-precision scalar routines, accurate to ~1e-12 for K
and ~1e-10 for the Jacobi functions over the oscillatory-pendulum range.
"""

import math

_MAX_ITERATIONS = 30


def _check_parameter(m: float) -> None:
    if not 0.0 <= m < 1.0:
        raise ValueError(f"elliptic parameter m must lie in [0, 1), got {m}")


def complete_elliptic_k(m: float) -> float:
    """K(m) = integral_0^{pi/2} dt / sqrt(1 - m sin^2 t), via the AGM.

    The iteration reaches its fixed point quadratically; more than
    _MAX_ITERATIONS steps means m is outside the supported range.
    """
    _check_parameter(m)
    a, b = 1.0, math.sqrt(1.0 - m)
    for _ in range(_MAX_ITERATIONS):
        if abs(a - b) <= 1e-15 * a:
            return math.pi / (2.0 * a)
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    raise ArithmeticError(f"AGM did not reach a fixed point for m={m}")


def jacobi_sn_cn_dn(u: float, m: float) -> tuple[float, float, float]:
    """Jacobi elliptic sn, cn, dn at argument u, parameter m.

    Descends the modulus via the AGM until it drops below 1e-14, then
    backtracks the amplitude:  phi_{n-1} = (phi_n + asin((c_n/a_n) sin phi_n))/2,
    sn = sin phi_0, cn = cos phi_0, dn = cos phi_0 / cos(phi_1 - phi_0).
    dn is recovered from the amplitudes, not from 1 - m*sn^2, so the
    Pythagorean identities stay independent checks.
    """
    _check_parameter(m)
    if m < 1e-16:
        return math.sin(u), math.cos(u), 1.0

    a_seq = [1.0]
    c_seq = [math.sqrt(m)]
    a, b = 1.0, math.sqrt(1.0 - m)
    while abs(c_seq[-1]) > 1e-14 * a_seq[-1]:
        if len(a_seq) > _MAX_ITERATIONS:
            raise ArithmeticError(f"Landen descent did not converge for m={m}")
        c_seq.append(0.5 * (a - b))
        a, b = 0.5 * (a + b), math.sqrt(a * b)
        a_seq.append(a)

    n = len(a_seq) - 1
    phi = (2.0 ** n) * a_seq[n] * u
    phi_one = phi
    for i in range(n, 0, -1):
        s = (c_seq[i] / a_seq[i]) * math.sin(phi)
        phi_one = phi
        phi = 0.5 * (phi + math.asin(max(-1.0, min(1.0, s))))

    sn = math.sin(phi)
    cn = math.cos(phi)
    dn = cn / math.cos(phi_one - phi)
    return sn, cn, dn
