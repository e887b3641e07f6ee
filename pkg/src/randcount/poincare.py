"""Random Poincare series and the zero analysis of the periodic characteristic function.

The series is ``eta(s) = sum_{n>=1} exp(s * Lambda_n) * (B_s^n 1)_rho`` where
``Lambda_n = log|lambda_0 ... lambda_{n-1}|``. Complex powers of positive bases use the
principal branch ``exp(s log r)``.
"""
from __future__ import annotations

import cmath
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentPath
from .errors import SeriesError
from .symbolic import SystemSpec
from .thermo import decreasing_root, pressure, transfer_matrix

TAIL_RADIUS_MAX = 1.0 - 1e-9
CAUCHY_WINDOW = 20
ZERO_THRESHOLD = 1e-6
SIMPLE_THRESHOLD = 1e-8
NEWTON_MAX_ITER = 60


@dataclass(frozen=True, eq=False)
class SeriesEvaluation:
    s: complex
    partial_sums: np.ndarray
    term_magnitudes: np.ndarray
    truncation: int
    tail_bound: float | None
    cauchy: bool

    @property
    def value(self) -> complex:
        return complex(self.partial_sums[-1])


def eta_partial(spec: SystemSpec, path: EnvironmentPath, s: complex, N: int) -> SeriesEvaluation:
    """Partial sums up to ``N`` terms, one matrix-vector product per term."""
    if path.length < N:
        raise SeriesError(f"path of length {path.length} shorter than N={N}", code="path_too_short")
    if N < 1:
        raise SeriesError("N must be positive", code="bad_truncation")
    s = complex(s)
    B = transfer_matrix(spec, s)
    rho = spec.suffix_letter
    v = np.ones(spec.letter_count, dtype=complex)
    terms = np.empty(N, dtype=complex)
    for n in range(1, N + 1):
        v = B @ v
        terms[n - 1] = cmath.exp(s * path.cum_log[n]) * v[rho]
    mags = np.abs(terms)
    sums = np.cumsum(terms)
    rate = _decay_rate(mags)
    cauchy = rate is not None and rate < 1.0
    tail = float(mags[-1] * rate / (1.0 - rate)) if cauchy else None
    return SeriesEvaluation(s, sums, mags, N, tail, cauchy)


def _decay_rate(mags: np.ndarray) -> float | None:
    """Geometric rate of the trailing term magnitudes."""
    w = min(CAUCHY_WINDOW, mags.size - 1)
    if w < 1:
        return None
    last, first = mags[-1], mags[-1 - w]
    if first == 0.0:
        return 0.0 if last == 0.0 else None
    if last == 0.0:
        return 0.0
    return float((last / first) ** (1.0 / w))


def eta_closed_periodic(spec: SystemSpec, prefix: Sequence[float], cycle: Sequence[float], s: complex) -> complex:
    """Full series for the environment ``prefix`` followed by ``cycle`` repeated forever.

    Terms past the prefix are grouped by their position inside the cycle; each group is a
    matrix geometric series in ``M = |cycle product|^s * B_s^k``, summed by solving
    ``(I - M) x = B_s^m 1``.
    """
    if len(cycle) == 0:
        raise SeriesError("cycle must be nonempty", code="empty_cycle")
    s = complex(s)
    B = transfer_matrix(spec, s)
    rho = spec.suffix_letter
    a = spec.letter_count
    k = len(cycle)
    total = 0j
    v = np.ones(a, dtype=complex)
    cum = 0.0
    for z in prefix:
        cum += math.log(z)
        v = B @ v
        total += cmath.exp(s * cum) * v[rho]
    cycle_log = math.fsum(math.log(z) for z in cycle)
    M = cmath.exp(s * cycle_log) * np.linalg.matrix_power(B, k)
    radius = float(np.max(np.abs(np.linalg.eigvals(M))))
    if radius >= TAIL_RADIUS_MAX:
        raise SeriesError(f"tail spectral radius {radius:.6g} >= 1; s is not right of the abscissa",
                          code="tail_divergent")
    x = np.linalg.solve(np.eye(a) - M, v)
    head = cmath.exp(s * cum)
    inner = 0.0
    for z in cycle:
        inner += math.log(z)
        x = B @ x
        total += head * cmath.exp(s * inner) * x[rho]
    return complex(total)


def growth_rate(spec: SystemSpec, path: EnvironmentPath, x: float, N: int, window: int) -> float:
    """Mean over ``n in [N - window, N]`` of ``(log (B_x^n 1)_rho + x Lambda_n) / n``.

    ``B_x`` is normalized by its Perron root so the iterates stay bounded; the window is
    walked in blocks of about ``sqrt(window)`` steps using precomputed powers.
    """
    P = pressure(spec, x)
    logs = np.log(np.array(spec.ratios, dtype=float))
    Bn = spec.incidence_array.T * np.exp(x * logs - P)[None, :]
    rho = spec.suffix_letter
    start = N - window
    v = np.linalg.matrix_power(Bn, start) @ np.ones(spec.letter_count)
    block = max(1, int(math.isqrt(window + 1)))
    powers = [np.eye(spec.letter_count)]
    for _ in range(block - 1):
        powers.append(Bn @ powers[-1])
    stack = np.stack(powers)
    step = Bn @ powers[-1]
    vals = np.empty(window + 1)
    pos = 0
    while pos <= window:
        take = min(block, window + 1 - pos)
        vals[pos : pos + take] = (stack[:take] @ v)[:, rho]
        v = step @ v
        pos += take
    ns = np.arange(start, N + 1)
    per_step = P + (np.log(vals) + x * path.cum_log[start : N + 1]) / ns
    return math.fsum(per_step) / per_step.size


def abscissa_estimate(spec: SystemSpec, path: EnvironmentPath, N: int, window: int) -> float:
    """Root of the windowed growth rate: the estimated abscissa of convergence."""
    if path.length < N:
        raise SeriesError(f"path of length {path.length} shorter than N={N}", code="path_too_short")
    if not 1 <= window <= N // 2:
        raise SeriesError("window must lie in [1, N/2]", code="bad_window")
    return decreasing_root(lambda x: growth_rate(spec, path, x, N, window), width=1e-13)


@dataclass(frozen=True)
class ThetaParams:
    """``theta(s) = 1 - (sum_e ratio_e^s)^m * prod_j cycle_j^s``."""

    m: int
    cycle: tuple[float, ...]
    ratios: tuple[float, ...] = (0.5, 1.0 / 3.0)

    def __post_init__(self):
        if self.m < 1 or len(self.cycle) != self.m:
            raise SeriesError("cycle must hold exactly m moduli", code="bad_theta_params")
        if any(not 0.0 < z <= 1.0 for z in self.cycle):
            raise SeriesError("cycle moduli must lie in (0, 1]", code="modulus_out_of_range")
        if any(not 0.0 < r < 1.0 for r in self.ratios):
            raise SeriesError("ratios must lie in (0, 1)", code="ratio_out_of_range")


def _theta_parts(params: ThetaParams, s: complex):
    logs = [math.log(r) for r in params.ratios]
    powers = [cmath.exp(s * g) for g in logs]
    base = sum(powers)
    base_prime = sum(p * g for p, g in zip(powers, logs))
    cycle_log = math.fsum(math.log(z) for z in params.cycle)
    cyc = cmath.exp(s * cycle_log)
    return base, base_prime, cyc, cycle_log


def theta(params: ThetaParams, s: complex) -> complex:
    base, _, cyc, _ = _theta_parts(params, complex(s))
    return 1.0 - base**params.m * cyc


def theta_prime(params: ThetaParams, s: complex) -> complex:
    base, base_prime, cyc, cycle_log = _theta_parts(params, complex(s))
    m = params.m
    return -(m * base ** (m - 1) * base_prime * cyc + base**m * cyc * cycle_log)


@dataclass(frozen=True)
class ThetaZero:
    x: float
    y: float
    abs_theta: float
    abs_theta_prime: float
    simple: bool


@dataclass(frozen=True, eq=False)
class ZeroScan:
    x0: float
    ys: np.ndarray
    abs_theta: np.ndarray
    zeros: list
    off_axis_minima: list

    @property
    def min_off_axis(self) -> float:
        return min((v for _, v in self.off_axis_minima), default=math.inf)


def real_zero(params: ThetaParams) -> float:
    """The real zero of ``theta``: bisection, then Newton polish."""
    x = decreasing_root(lambda t: -theta(params, t).real)
    for _ in range(5):
        step = (theta(params, x) / theta_prime(params, x)).real
        x -= step
        if abs(step) < 1e-16:
            break
    return x


def _newton(params: ThetaParams, s: complex) -> complex:
    for _ in range(NEWTON_MAX_ITER):
        d = theta_prime(params, s)
        if d == 0:
            break
        step = theta(params, s) / d
        s -= step
        if abs(step) < 1e-15 * max(1.0, abs(s)):
            break
    return s


def zero_scan(params: ThetaParams, y_max: float, grid_step: float) -> ZeroScan:
    """Scan ``|theta(x0 + iy)|`` on ``y = j*grid_step`` and polish near-zero minima."""
    if not 0.0 < grid_step <= 0.01:
        raise SeriesError("grid_step must lie in (0, 0.01]", code="bad_grid")
    x0 = real_zero(params)
    J = int(math.floor(y_max / grid_step + 1e-9))
    ys = np.arange(-J, J + 1) * grid_step
    vals = np.abs(np.array([theta(params, complex(x0, y)) for y in ys]))
    zeros: list[ThetaZero] = []
    off_axis = []
    for j in range(ys.size):
        left = vals[j - 1] if j > 0 else math.inf
        right = vals[j + 1] if j + 1 < ys.size else math.inf
        if not (vals[j] <= left and vals[j] <= right):
            continue
        y = float(ys[j])
        if j != J:
            off_axis.append((y, float(vals[j])))
        if vals[j] >= ZERO_THRESHOLD:
            continue
        root = _newton(params, complex(x0, y))
        if any(abs(root - complex(z.x, z.y)) < 1e-8 for z in zeros):
            continue
        dprime = abs(theta_prime(params, root))
        zeros.append(ThetaZero(root.real, root.imag, abs(theta(params, root)), dprime, dprime > SIMPLE_THRESHOLD))
    return ZeroScan(x0, ys, vals, zeros, off_axis)
