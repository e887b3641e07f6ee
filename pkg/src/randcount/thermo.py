"""Transfer matrices, pressure and the growth exponents derived from it.

For an affine system the potential is constant on 1-cylinders, so the transfer operator
restricted to such functions is the ``a x a`` matrix ``B_s[b, e] = A[e, b] * ratio_e**s``.
Pressure is the log of its Perron eigenvalue and every exponent is the root of a strictly
decreasing function of ``x``, found by bisection.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentSpec, FluctuationCertificate
from .errors import NoConvergence, SpecError
from .symbolic import SystemSpec

ROOT_WIDTH = 1e-12
POWER_RTOL = 1e-13
POWER_MAX_ITER = 20_000
DENSE_FALLBACK_MAX = 8


def transfer_matrix(spec: SystemSpec, s: complex) -> np.ndarray:
    """``B_s`` with ``B_s[b, e] = A[e, b] * exp(s * log ratio_e)`` (principal branch)."""
    logs = np.log(np.array(spec.ratios, dtype=float))
    weights = np.exp(s * logs)
    return spec.incidence_array.T * weights[None, :]


def perron_root(matrix: np.ndarray, rtol: float = POWER_RTOL) -> float:
    """Perron eigenvalue of an irreducible nonnegative matrix.

    Shifted power iteration ``v <- B v + tau v`` with ``tau`` the current Collatz-Wielandt
    lower bound; the shift keeps periodic matrices convergent. Stops once the
    Collatz-Wielandt bracket ``min (Bv)_i / v_i <= r <= max (Bv)_i / v_i`` has relative
    width below ``rtol``.
    """
    B = np.asarray(matrix, dtype=float)
    v = np.ones(B.shape[0])
    for _ in range(POWER_MAX_ITER):
        w = B @ v
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        if hi <= 0.0:
            break
        if hi - lo <= rtol * hi:
            return float(0.5 * (lo + hi))
        v = w + lo * v
        v /= v.max()
        if not (v > 0).all():
            break
    if B.shape[0] <= DENSE_FALLBACK_MAX:
        return float(np.max(np.abs(np.linalg.eigvals(B))))
    raise NoConvergence("power iteration did not converge")


def pressure(spec: SystemSpec, x: float) -> float:
    """Topological pressure ``P(x) = log r(B_x)``.

    The matrix is rescaled by ``ratio_max**x`` before the eigenvalue solve so that large
    ``|x|`` neither underflows nor overflows.
    """
    logs = np.log(np.array(spec.ratios, dtype=float))
    anchor = logs.max() if x >= 0 else logs.min()
    scaled = spec.incidence_array.T * np.exp(x * (logs - anchor))[None, :]
    return math.log(perron_root(scaled)) + x * anchor


def decreasing_root(fn: Callable[[float], float], lo: float = 0.0, hi: float = 1.0,
                    width: float = ROOT_WIDTH) -> float:
    """Root of a strictly decreasing function with ``fn(lo) > 0``; ``hi`` grows geometrically."""
    if fn(lo) <= 0:
        raise SpecError("function is not positive at the left end of the bracket", code="no_root")
    while fn(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise SpecError("no root found while growing the bracket", code="no_root")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def delta(spec: SystemSpec) -> float:
    """Unique zero of the pressure function."""
    return decreasing_root(lambda x: pressure(spec, x))


def expected_pressure(spec: SystemSpec, env: EnvironmentSpec, x: float) -> float:
    return pressure(spec, x) + x * env.mean_log_modulus


def delta_Lambda(spec: SystemSpec, env: EnvironmentSpec) -> float:
    """Zero of the expected pressure; the a.s. dimension of the random limit set."""
    mean_log = env.mean_log_modulus
    return decreasing_root(lambda x: pressure(spec, x) + x * mean_log)


def delta_periodic(spec: SystemSpec, cycle: Sequence[float], prefix: Sequence[float] = ()) -> float:
    """Exponent of an eventually periodic environment with moduli ``prefix + cycle*``.

    The prefix only changes constants, not the exponent.
    """
    if len(cycle) == 0:
        raise SpecError("cycle must be nonempty", code="empty_cycle")
    for z in list(cycle) + list(prefix):
        if not 0.0 < z <= 1.0:
            raise SpecError(f"modulus {z} not in (0, 1]", code="modulus_out_of_range")
    mean_log = math.fsum(math.log(z) for z in cycle) / len(cycle)
    return decreasing_root(lambda x: pressure(spec, x) + x * mean_log)


def fluctuation_constants(env: EnvironmentSpec, frequencies: Sequence[float]) -> tuple[float, float]:
    """``c = sum l_i log|z_i|`` and ``d = sum log|z_i|``."""
    if len(frequencies) != env.size:
        raise SpecError("frequency vector must match the environment", code="bad_frequencies")
    if any(l < 0 for l in frequencies) or abs(math.fsum(frequencies) - 1.0) > 1e-12:
        raise SpecError("frequencies must be nonnegative and sum to 1", code="bad_frequencies")
    logs = [math.log(z) for z in env.values]
    return math.fsum(l * g for l, g in zip(frequencies, logs)), math.fsum(logs)


def delta_bounded_fluctuation(spec: SystemSpec, c: float) -> float:
    """Zero of ``P(x) + c x`` for a bounded-fluctuation environment with constant ``c <= 0``."""
    if c > 0:
        raise SpecError("c must be nonpositive", code="bad_constant")
    return decreasing_root(lambda x: pressure(spec, x) + c * x)


@dataclass(frozen=True)
class ExponentReport:
    delta: float
    delta_Lambda: float
    delta_lambda: float | None
    c: float
    d: float
    bracket_width: float = ROOT_WIDTH
    method: str = "perron-power-iteration+bisection"

    def to_summary(self) -> dict:
        return {
            "delta": self.delta,
            "delta_lambda_env": self.delta_Lambda,
            "delta_lambda_path": self.delta_lambda,
            "c": self.c,
            "d": self.d,
            "bracket_width": self.bracket_width,
            "method": self.method,
        }


def exponent_report(
    spec: SystemSpec,
    env: EnvironmentSpec,
    certificate: FluctuationCertificate | None = None,
) -> ExponentReport:
    """Collect all exponents for a system and environment.

    ``c`` and ``d`` use the certificate's frequencies when given, otherwise the
    environment's probabilities; ``delta_lambda`` is the bounded-fluctuation exponent for
    the certificate (or the environment's own mode when it is periodic or balanced).
    """
    det = delta(spec)
    dL = delta_Lambda(spec, env)
    if certificate is not None:
        freqs = [float(f) for f in certificate.frequencies]
    elif env.mode == "eventually_periodic":
        freqs = [env.cycle.count(i) / len(env.cycle) for i in range(env.size)]
    elif env.mode == "balanced" and env.frequencies is not None:
        freqs = list(env.frequencies)
    else:
        freqs = list(env.probabilities)
    c, d = fluctuation_constants(env, freqs)
    path_exp = None
    if certificate is not None or env.mode != "iid":
        path_exp = delta_bounded_fluctuation(spec, c)
    return ExponentReport(det, dL, path_exp, c, d)

