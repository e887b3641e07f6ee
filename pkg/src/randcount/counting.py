"""Counting functions of an affine system, deterministic and in a random environment.

For affine maps the ergodic sum of a word depends only on its letter composition
``kappa`` (how often each letter occurs), so the census of admissible words collapses to
``D[n][kappa][e]``: the number of admissible words of length ``n`` with composition
``kappa`` ending in letter ``e``. Word weights are ``W(n, kappa) = sum_e kappa_e * w_e``
with ``w_e = -log ratio_e``; in a random environment the path adds ``-log|lambda_0 ...
lambda_{n-1}|``. A word is counted at threshold ``T`` when its weight is ``<= T``.

Two backends share the same state space:

* ``exact`` keeps Python integers;
* ``logspace`` keeps every count as ``mantissa * 2**exponent`` (float64 mantissa, int64
  exponent), which is immune to overflow and accumulates only rounding error. The
  resulting relative error is bounded by :attr:`CompositionTable.rel_error_bound`.

Ties matter (the reduction identity is an exact tie), so thresholds may be *anchored* to
a lattice point; anchored comparisons inside a narrow floating band are decided exactly
by comparing products of the ratios and moduli as rationals.
"""
from __future__ import annotations

import bisect
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .environment import (
    EnvironmentPath,
    EnvironmentSpec,
    FluctuationCertificate,
    make_balanced,
    path_from_indices,
    verify_certificate,
)
from .errors import CountingError
from .symbolic import SystemSpec
from .thermo import delta, delta_Lambda

EXACT_CAPS = {2: 20000, 3: 800}
LOGSPACE_STATE_BUDGET = 5_000_000
UNIT_ROUNDOFF = 2.0**-53
ZERO_EXP = -(10**6)
TIE_RTOL = 1e-9
CALIBRATION_WINDOW = (20.0, 120.0)


# ---------------------------------------------------------------------------
# scaled floating arithmetic: value = m * 2**e with m in [0.5, 1) or m == 0


def _xnorm(m: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    frac, shift = np.frexp(m)
    exp = np.where(frac == 0.0, ZERO_EXP, e + shift)
    return frac, exp.astype(np.int64)


def _xadd(m1, e1, m2, e2):
    top = np.maximum(e1, e2)
    s = np.ldexp(m1, np.maximum(e1 - top, -2000)) + np.ldexp(m2, np.maximum(e2 - top, -2000))
    return _xnorm(s, top)


def _xprefix(m: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Prefix sums ``P_j = sum_{t<j} m_t 2**e_t`` (length ``K+1``), in scaled form.

    Terms are summed in blocks whose running-maximum exponent spans at most 900 binades,
    so no prefix that matters can underflow.
    """
    K = m.size
    pm = np.zeros(K + 1)
    pe = np.full(K + 1, ZERO_EXP, dtype=np.int64)
    if K == 0:
        return pm, pe
    run = np.maximum.accumulate(e)
    cm, ce = 0.0, ZERO_EXP
    b = 0
    while b < K:
        base = max(int(run[b]), ce)
        end = int(np.searchsorted(run, base + 900, side="right"))
        end = max(end, b + 1)
        top = max(int(run[end - 1]), ce)
        block = np.ldexp(m[b:end], np.maximum(e[b:end] - top, -2000))
        sums = np.cumsum(block) + math.ldexp(cm, max(ce - top, -2000))
        fm, fe = _xnorm(sums, np.full(sums.size, top, dtype=np.int64))
        pm[b + 1 : end + 1] = fm
        pe[b + 1 : end + 1] = fe
        cm, ce = float(fm[-1]), int(fe[-1])
        b = end
    return pm, pe


def _xlog(m: float, e: int) -> float:
    if m == 0.0:
        return -math.inf
    return math.log(m) + e * math.log(2.0)


def _xlog_total(ms: Sequence[float], es: Sequence[int]) -> float:
    live = [(m, e) for m, e in zip(ms, es) if m != 0.0]
    if not live:
        return -math.inf
    top = max(e for _, e in live)
    total = math.fsum(math.ldexp(m, max(e - top, -2000)) for m, e in live)
    return math.log(total) + top * math.log(2.0)


# ---------------------------------------------------------------------------
# composition table


@dataclass(eq=False)
class _RawLayer:
    compositions: np.ndarray  # (K, a) full compositions
    counts: object  # object ndarray of ints, or (mantissa, exponent) pair


@dataclass(eq=False)
class Layer:
    """One length ``n``: suffix-compatible counts sorted by word weight."""

    n: int
    compositions: np.ndarray
    weights: np.ndarray
    counts: object
    prefix: object

    def prefix_value(self, j: int):
        if isinstance(self.prefix, tuple):
            return float(self.prefix[0][j]), int(self.prefix[1][j])
        return self.prefix[j]


@dataclass(eq=False)
class CompositionTable:
    """Word census ``C_rho(n, kappa)`` for ``1 <= n <= n_max`` with weight-sorted prefix sums."""

    spec: SystemSpec
    n_max: int
    backend: str
    letter_weights: np.ndarray
    layers: list = field(repr=False)
    states: list | None = field(default=None, repr=False)
    _raw: list = field(default=None, repr=False)

    @property
    def rel_error_bound(self) -> float:
        """Certified relative error of any count (0 for the exact backend)."""
        if self.backend == "exact":
            return 0.0
        a = self.spec.letter_count
        largest = max((layer.weights.size for layer in self.layers[1:]), default=1)
        ops = a * self.n_max + largest + self.n_max + 8
        return 1.01 * ops * UNIT_ROUNDOFF

    def suffix_count(self, n: int, composition: Sequence[int]):
        layer = self.layers[n]
        hit = np.nonzero((layer.compositions == np.asarray(composition)).all(axis=1))[0]
        if hit.size == 0:
            return 0
        j = int(hit[0])
        if isinstance(layer.counts, tuple):
            return float(layer.counts[0][j]), int(layer.counts[1][j])
        return layer.counts[j]

    def state_count(self, n: int, composition: Sequence[int], last: int) -> int:
        """``D[n][kappa][last]`` (exact backend only)."""
        if self.states is None:
            raise CountingError("states are only kept by the exact backend", code="no_states")
        if sum(composition) != n:
            return 0
        return int(self.states[n][(last,) + tuple(composition[:-1])])

    def row_total(self, n: int):
        layer = self.layers[n]
        return layer.prefix_value(layer.weights.size)

    def reweighted(self, letter_weights: Sequence[float]) -> "CompositionTable":
        """Same census with different positive per-letter weights."""
        w = np.asarray(letter_weights, dtype=float)
        if w.shape != (self.spec.letter_count,) or not (w > 0).all():
            raise CountingError("letter weights must be positive, one per letter", code="bad_weights")
        layers = [None] + [_sort_layer(n, raw, w) for n, raw in enumerate(self._raw) if n > 0]
        return CompositionTable(self.spec, self.n_max, self.backend, w, layers, self.states, self._raw)


def _valid_compositions(n: int, a: int) -> tuple[np.ndarray, tuple]:
    shape = (n + 1,) * (a - 1)
    grid = np.indices(shape).reshape(a - 1, -1).T
    keep = grid.sum(axis=1) <= n
    partial = grid[keep]
    full = np.concatenate([partial, (n - partial.sum(axis=1))[:, None]], axis=1)
    return full.astype(np.int64), tuple(partial.T)


def _sort_layer(n: int, raw: _RawLayer, w: np.ndarray) -> Layer:
    comps = raw.compositions
    weights = comps @ w
    order = np.lexsort((np.arange(weights.size), weights))
    if isinstance(raw.counts, tuple):
        m, e = raw.counts[0][order], raw.counts[1][order]
        return Layer(n, comps[order], weights[order], (m, e), _xprefix(m, e))
    c = raw.counts[order]
    prefix = np.concatenate([np.array([0], dtype=object), np.cumsum(c)]) if c.size else np.array([0], dtype=object)
    return Layer(n, comps[order], weights[order], c, prefix)


def _check_size(a: int, n_max: int, backend: str) -> None:
    if backend == "exact":
        if a not in EXACT_CAPS:
            raise CountingError(
                f"exact backend supports 2 or 3 letters, got {a}; use backend='logspace'",
                code="alphabet_too_large",
            )
        if n_max > EXACT_CAPS[a]:
            raise CountingError(f"n_max={n_max} exceeds the exact cap {EXACT_CAPS[a]}", code="n_max_exceeded")
    elif backend == "logspace":
        if a * (n_max + 1) ** (a - 1) > LOGSPACE_STATE_BUDGET:
            raise CountingError("composition state space too large", code="n_max_exceeded")
    else:
        raise CountingError(f"unknown backend {backend!r}", code="unknown_backend")


def build_composition_table(
    spec: SystemSpec, n_max: int, backend: str = "exact", letter_weights: Sequence[float] | None = None
) -> CompositionTable:
    """Run the composition recurrence ``D[n+1][kappa + unit(f)][f] = sum_e D[n][kappa][e] A[e, f]``."""
    a = spec.letter_count
    n_max = max(int(n_max), 1)
    _check_size(a, n_max, backend)
    A = spec.incidence
    rho = spec.suffix_letter
    w = spec.letter_weights if letter_weights is None else np.asarray(letter_weights, dtype=float)
    exact = backend == "exact"

    def zeros(shape):
        if exact:
            return np.zeros(shape, dtype=object)
        return np.zeros(shape), np.full(shape, ZERO_EXP, dtype=np.int64)

    # layer 1: one word per letter
    shape1 = (a,) + (2,) * (a - 1)
    state = zeros(shape1)
    for e in range(a):
        pos = (e,) + tuple(1 if j == e else 0 for j in range(a - 1))
        if exact:
            state[pos] = 1
        else:
            state[0][pos], state[1][pos] = 0.5, 1

    raw_layers: list = [None]
    states: list | None = [None] if exact else None
    for n in range(1, n_max + 1):
        comps, partial_index = _valid_compositions(n, a)
        if exact:
            suffix = sum(state[e] for e in range(a) if A[e][rho])
            raw_counts = np.asarray(suffix, dtype=object)[partial_index] if a > 1 else suffix
            raw_counts = np.array(raw_counts, dtype=object).reshape(-1)
            states.append(state)
        else:
            sm, se = np.zeros(state[0].shape[1:]), np.full(state[0].shape[1:], ZERO_EXP, dtype=np.int64)
            for e in range(a):
                if A[e][rho]:
                    sm, se = _xadd(sm, se, state[0][e], state[1][e])
            raw_counts = (sm[partial_index].reshape(-1), se[partial_index].reshape(-1))
        raw_layers.append(_RawLayer(comps, raw_counts))
        if n == n_max:
            break
        new_shape = (a,) + (n + 2,) * (a - 1)
        new = zeros(new_shape)
        for f in range(a):
            target = (f,) + tuple(slice(1, n + 2) if j == f else slice(0, n + 1) for j in range(a - 1))
            preds = [e for e in range(a) if A[e][f]]
            if exact:
                new[target] = sum(state[e] for e in preds)
            else:
                acc_m = np.zeros((n + 1,) * (a - 1))
                acc_e = np.full((n + 1,) * (a - 1), ZERO_EXP, dtype=np.int64)
                for e in preds:
                    acc_m, acc_e = _xadd(acc_m, acc_e, state[0][e], state[1][e])
                new[0][target], new[1][target] = acc_m, acc_e
        state = new

    layers = [None] + [_sort_layer(n, raw_layers[n], w) for n in range(1, n_max + 1)]
    return CompositionTable(spec, n_max, backend, w, layers, states, raw_layers)


@lru_cache(maxsize=16)
def _cached_table(spec: SystemSpec, n_max: int, backend: str) -> CompositionTable:
    return build_composition_table(spec, n_max, backend)


def table_for(spec: SystemSpec, n_max: int, backend: str = "exact") -> CompositionTable:
    """Cached table covering at least ``n_max`` (rounded up to limit rebuilds)."""
    size = max(16, 1 << max(int(n_max) - 1, 1).bit_length())
    cap = EXACT_CAPS.get(spec.letter_count, size) if backend == "exact" else size
    return _cached_table(spec, max(int(n_max), min(size, cap)), backend)


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class Threshold:
    """A counting threshold ``T``.

    Raw thresholds compare in floating point (closed: weight ``<= T`` counts). Anchored
    thresholds equal the weight of the lattice point ``(n, composition)`` (plus the path
    term at position ``n`` when counting in an environment) and are decided exactly.
    """

    value: float
    anchor_n: int | None = None
    anchor_composition: tuple[int, ...] | None = None

    @property
    def anchored(self) -> bool:
        return self.anchor_n is not None

    @classmethod
    def raw(cls, value: float) -> "Threshold":
        return cls(float(value))

    @classmethod
    def at(cls, spec: SystemSpec, composition: Sequence[int], path: EnvironmentPath | None = None,
           letter_weights: Sequence[float] | None = None) -> "Threshold":
        comp = tuple(int(k) for k in composition)
        if len(comp) != spec.letter_count or min(comp) < 0:
            raise CountingError("composition must have one nonnegative entry per letter", code="bad_anchor")
        n = sum(comp)
        w = spec.letter_weights if letter_weights is None else np.asarray(letter_weights, dtype=float)
        value = math.fsum(k * x for k, x in zip(comp, w))
        if path is not None:
            if path.length < n:
                raise CountingError("path shorter than the anchor length", code="path_too_short")
            value -= path.log_product(n)
        return cls(value, n, comp)


def _as_threshold(T) -> Threshold:
    return T if isinstance(T, Threshold) else Threshold.raw(T)


def _exact_ge_one(exponents: dict) -> bool:
    """Is ``prod base**exp >= 1`` for rational bases? Decided exactly."""
    num, den = 1, 1
    for base, k in exponents.items():
        if k == 0 or base == 1:
            continue
        if k < 0:
            base, k = 1 / base, -k
        num *= base.numerator**k
        den *= base.denominator**k
    return num >= den


@dataclass(frozen=True)
class _Context:
    table: CompositionTable
    offsets: np.ndarray | None  # float path term per length (-log|lambda_0..|)
    path: EnvironmentPath | None
    ratio_bases: tuple  # exact rationals behind each letter weight, or None
    n_stop: int


def _letter_bases(table: CompositionTable) -> tuple | None:
    w = table.letter_weights
    base = table.spec.letter_weights
    if np.array_equal(w, base):
        return tuple(Fraction(r) for r in table.spec.ratios)
    return None


def _required_length(T: float, step_min: float) -> int:
    return int(math.floor(T * (1 + 4 * UNIT_ROUNDOFF) / step_min + 1e-9)) if T > 0 else 0


def _included(ctx: _Context, layer: Layer, T: Threshold) -> int:
    offset = 0.0 if ctx.offsets is None else float(ctx.offsets[layer.n])
    totals = layer.weights + offset
    if not T.anchored:
        return int(np.searchsorted(totals, T.value, side="right"))
    tol = TIE_RTOL * max(1.0, abs(T.value))
    lo = int(np.searchsorted(totals, T.value - tol, side="left"))
    hi = int(np.searchsorted(totals, T.value + tol, side="right"))
    if lo == hi:
        return lo
    if ctx.ratio_bases is None:
        raise CountingError("anchored ties need the system's own letter weights", code="anchor_unsupported")
    anchor = np.asarray(T.anchor_composition)
    count = lo
    for j in range(lo, hi):
        exps: dict = {}
        for base, k in zip(ctx.ratio_bases, layer.compositions[j] - anchor):
            exps[base] = exps.get(base, 0) + int(k)
        if ctx.path is not None:
            ds = ctx.path.counts[layer.n] - ctx.path.counts[T.anchor_n]
            for z, k in zip(ctx.path.values, ds):
                b = Fraction(z)
                exps[b] = exps.get(b, 0) + int(k)
        if _exact_ge_one(exps):
            count = j + 1
        else:
            break
    return count


def _count(ctx: _Context, T: Threshold):
    table = ctx.table
    parts = []
    for n in range(1, ctx.n_stop + 1):
        layer = table.layers[n]
        j = _included(ctx, layer, T)
        if j:
            parts.append(layer.prefix_value(j))
    if table.backend == "exact":
        return sum(parts)
    return _xlog_total([m for m, _ in parts], [e for _, e in parts])


def _deterministic_context(table: CompositionTable, T: Threshold) -> _Context:
    step = float(table.letter_weights.min())
    slack = TIE_RTOL * max(1.0, abs(T.value)) if T.anchored else 0.0
    need = _required_length(T.value + slack, step)
    if need > table.n_max:
        raise CountingError(
            f"threshold {T.value} needs words up to length {need}, table has {table.n_max}",
            code="table_too_small",
        )
    return _Context(table, None, None, _letter_bases(table), min(need, table.n_max))


def _random_context(table: CompositionTable, path: EnvironmentPath, T: Threshold) -> _Context:
    step = float(table.letter_weights.min()) - math.log(max(path.values))
    slack = TIE_RTOL * max(1.0, abs(T.value)) if T.anchored else 0.0
    need = _required_length(T.value + slack, step)
    if path.length < need:
        raise CountingError(f"path of length {path.length} shorter than required {need}", code="path_too_short")
    if need > table.n_max:
        raise CountingError(
            f"threshold {T.value} needs words up to length {need}, table has {table.n_max}",
            code="table_too_small",
        )
    return _Context(table, -path.cum_log, path, _letter_bases(table), need)


def _resolve_table(source, T: Threshold, path: EnvironmentPath | None, backend: str) -> CompositionTable:
    if isinstance(source, CompositionTable):
        return source
    spec = source
    step = float(spec.letter_weights.min())
    if path is not None:
        step -= math.log(max(path.values))
    need = _required_length(T.value * (1 + TIE_RTOL) + TIE_RTOL, step)
    return table_for(spec, max(need, 1), backend)


def count_deterministic(source: SystemSpec | CompositionTable, T) -> int:
    """``N_rho(T)``: admissible suffix-compatible words of weight at most ``T`` (exact)."""
    T = _as_threshold(T)
    table = _resolve_table(source, T, None, "exact")
    if table.backend != "exact":
        raise CountingError("use log_count_deterministic with a logspace table", code="wrong_backend")
    return _count(_deterministic_context(table, T), T)


def count_random(source: SystemSpec | CompositionTable, path: EnvironmentPath, T) -> int:
    """``N_rho^lambda(T)``: words whose weight plus the path term ``-log|lambda_0..lambda_{n-1}|`` is at most ``T``."""
    T = _as_threshold(T)
    table = _resolve_table(source, T, path, "exact")
    if table.backend != "exact":
        raise CountingError("use log_count_random with a logspace table", code="wrong_backend")
    return _count(_random_context(table, path, T), T)


def log_count_deterministic(source: SystemSpec | CompositionTable, T) -> float:
    T = _as_threshold(T)
    table = _resolve_table(source, T, None, "logspace")
    result = _count(_deterministic_context(table, T), T)
    return _int_log(result) if table.backend == "exact" else result


def log_count_random(source: SystemSpec | CompositionTable, path: EnvironmentPath, T) -> float:
    T = _as_threshold(T)
    table = _resolve_table(source, T, path, "logspace")
    result = _count(_random_context(table, path, T), T)
    return _int_log(result) if table.backend == "exact" else result


def _int_log(n: int) -> float:
    return math.log(n) if n > 0 else -math.inf


def weighted_layer_sum(table: CompositionTable, n: int, x: float) -> float:
    """``sum_kappa C_rho(n, kappa) * exp(-x W(n, kappa))`` (the deterministic word sum at ``x``)."""
    layer = table.layers[n]
    if table.backend == "exact":
        terms = [float(c) * math.exp(-x * w) for c, w in zip(layer.counts, layer.weights) if c]
        return math.fsum(terms)
    m, e = layer.counts
    logs = np.log(np.where(m > 0, m, 1.0)) + e * math.log(2.0) - x * layer.weights
    logs = logs[m > 0]
    top = logs.max()
    return math.exp(top) * math.fsum(np.exp(logs - top))


# ---------------------------------------------------------------------------
# series


@dataclass(frozen=True, eq=False)
class CountingSeries:
    grid: np.ndarray
    exponent: float
    backend: str
    counts: list | None
    log_counts: np.ndarray
    rel_error_bound: float

    @property
    def log_ratios(self) -> np.ndarray:
        return self.log_counts - self.exponent * self.grid


def counting_series(
    spec: SystemSpec,
    path: EnvironmentPath | None,
    grid: Iterable[float],
    exponent: float,
    backend: str = "exact",
    table: CompositionTable | None = None,
) -> CountingSeries:
    """Counts on an ascending grid of raw thresholds, with ``log N(T) - exponent*T``."""
    grid = np.asarray(list(grid), dtype=float)
    if grid.size and (np.diff(grid) < 0).any():
        raise CountingError("grid must be ascending", code="bad_grid")
    if table is None:
        top = Threshold.raw(float(grid.max()) if grid.size else 0.0)
        table = _resolve_table(spec, top, path, backend)
    counts = None
    if table.backend == "exact":
        counts = [
            count_deterministic(table, T) if path is None else count_random(table, path, T) for T in grid
        ]
        logs = np.array([_int_log(c) for c in counts])
    else:
        logs = np.array(
            [log_count_deterministic(table, T) if path is None else log_count_random(table, path, T) for T in grid]
        )
    return CountingSeries(grid, float(exponent), table.backend, counts, logs, table.rel_error_bound)


# ---------------------------------------------------------------------------
# bound and identity checks


@dataclass
class CheckReport:
    name: str
    passed: bool
    checked: int
    violations: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_summary(self) -> dict:
        return {
            "check": self.name,
            "pass": self.passed,
            "checked": self.checked,
            "violations": self.violations,
            **self.details,
        }


def sandwich_check(
    spec: SystemSpec,
    path: EnvironmentPath,
    grid: Iterable[float],
    certificate: FluctuationCertificate | None = None,
    upper_shift: float = 0.0,
) -> CheckReport:
    """Verify ``N'(T + q d) <= N^lambda(T) <= N'(T + p d)`` on a grid.

    ``N'`` counts with per-letter weight ``-log ratio_e - c``. ``upper_shift`` moves the
    upper threshold and exists only to inject faults in tests.
    """
    cert = certificate or path.certificate
    if cert is None:
        raise CountingError("path carries no bounded-fluctuation certificate", code="certificate_missing")
    if not verify_certificate(path, cert):
        raise CountingError("certificate does not hold on the path", code="certificate_invalid")
    logs = [math.log(z) for z in path.values]
    c = math.fsum(float(l) * g for l, g in zip(cert.frequencies, logs))
    d = math.fsum(logs)
    lower, upper = float(cert.lower), float(cert.upper)
    grid = sorted(float(T) for T in grid)
    w = spec.letter_weights
    shifted = w - c
    top = max(grid) if grid else 0.0
    need_random = _required_length(top, float(w.min()) - math.log(max(path.values)))
    if path.length < need_random:
        raise CountingError(f"path of length {path.length} shorter than required {need_random}",
                            code="path_too_short")
    need_shifted = _required_length(top + lower * d + abs(upper_shift), float(shifted.min()))
    base = table_for(spec, max(need_random, need_shifted, 1), "exact")
    primed = base.reweighted(shifted)
    report = CheckReport("sandwich", True, 0, details={"c": c, "d": d, "p": lower, "q": upper})
    for T in grid:
        lo = count_deterministic(primed, T + upper * d) if T + upper * d > 0 else 0
        mid = count_random(base, path, T)
        hi_T = T + lower * d + upper_shift
        hi = count_deterministic(primed, hi_T) if hi_T > 0 else 0
        report.rows.append((T, lo, mid, hi))
        report.checked += 1
        if not lo <= mid <= hi:
            report.passed = False
            report.violations.append({"T": T, "lower": lo, "count": mid, "upper": hi})
    return report


def reduction_identity_check(spec: SystemSpec, path: EnvironmentPath, n_list: Iterable[int]) -> CheckReport:
    """Equal ratios: ``N^lambda(T_n) == N(-n log ratio)`` with ``T_n`` anchored at length ``n``."""
    if not spec.has_equal_ratios:
        raise CountingError("reduction identity needs equal ratios", code="ratios_not_equal")
    n_list = sorted(int(n) for n in n_list)
    report = CheckReport("reduction", True, 0)
    if not n_list:
        return report
    a = spec.letter_count
    top = Threshold.at(spec, (n_list[-1],) + (0,) * (a - 1), path)
    table = _resolve_table(spec, top, path, "exact")
    for n in n_list:
        comp = (n,) + (0,) * (a - 1)
        random_count = count_random(table, path, Threshold.at(spec, comp, path))
        det_count = count_deterministic(table, Threshold.at(spec, comp))
        report.rows.append((n, random_count, det_count))
        report.checked += 1
        if random_count != det_count:
            report.passed = False
            report.violations.append({"n": n, "random": random_count, "deterministic": det_count})
    return report


def eqr9_bounds(spec: SystemSpec, path: EnvironmentPath, p: float, m: int, n: int) -> tuple[float, float, float]:
    """Lower bound, realized random ergodic sum and upper bound at a crossing time ``n``."""
    log_a = math.log(spec.ratios[0])
    log_z, log_w = (math.log(v) for v in path.values)
    q = 1.0 - p
    lower = n * log_a + (p * n + m) * log_z + (q * n - m + 1) * log_w
    upper = n * log_a + (p * n + m - 1) * log_z + (q * n - m) * log_w
    s_z, s_w = (int(c) for c in path.counts[n])
    realized = n * log_a + s_z * log_z + s_w * log_w
    return lower, realized, upper


def eqr9_bracket_check(
    spec: SystemSpec, path: EnvironmentPath, p: float, m: int, times: Iterable[int]
) -> CheckReport:
    """Two-sided bound on the random ergodic sum at crossing times of the first value's walk."""
    if len(path.values) != 2:
        raise CountingError("the bracket needs exactly two environment values", code="not_two_values")
    if not spec.has_equal_ratios:
        raise CountingError("the bracket needs equal ratios", code="ratios_not_equal")
    report = CheckReport("eqr9", True, 0, details={"p": p, "m": m})
    for n in times:
        n = int(n)
        lower, realized, upper = eqr9_bounds(spec, path, p, m, n)
        tol = 1e-9 * max(n, 1)
        report.checked += 1
        if not (lower - tol <= realized <= upper + tol):
            report.passed = False
            report.violations.append({"n": n, "lower": lower, "sum": realized, "upper": upper})
    return report


def ratio_bracket(log_C: float, log_D: float, delta_L: float, z: float, w: float, m: int) -> tuple[float, float]:
    """Log-bracket for ``N^lambda(T)/exp(delta_L T)`` at a crossing time with offset ``m``."""
    shift = delta_L * m * math.log(z / w)
    return log_C + delta_L * math.log(w) + shift, log_D - delta_L * math.log(z) + shift


def calibrate_deterministic(
    spec: SystemSpec, window: tuple[float, float] = CALIBRATION_WINDOW, table: CompositionTable | None = None
) -> tuple[float, float]:
    """``(log C_meas, log D_meas)``: inf and sup of ``log N(T) - delta T`` over the window.

    With equal ratios ``N`` jumps only at multiples of the letter weight; the extremes of
    the step function are attained at the window ends, at the jumps, or just left of them.
    """
    if not spec.has_equal_ratios:
        raise CountingError("calibration needs equal ratios", code="ratios_not_equal")
    step = float(spec.letter_weights[0])
    det = delta(spec)
    lo_T, hi_T = window
    a = spec.letter_count
    k_hi = int(math.floor(hi_T / step))
    table = table or table_for(spec, k_hi + 1, "exact")

    def N_len(k: int) -> int:
        return count_deterministic(table, Threshold.at(spec, (k,) + (0,) * (a - 1))) if k > 0 else 0

    k_lo = int(math.floor(lo_T / step))
    values = [math.log(N_len(k_lo)) - det * lo_T, math.log(N_len(k_hi)) - det * hi_T]
    for k in range(k_lo + 1, k_hi + 1):
        T = k * step
        values.append(math.log(N_len(k)) - det * T)
        values.append(math.log(N_len(k - 1)) - det * T)
    return min(values), max(values)


def crossing_path(values: Sequence[float], p: float, m: int, n: int, length: int) -> EnvironmentPath:
    """Path with ``s_{n,0} = floor(p n) + m`` followed by value 0, so ``n`` is a crossing time.

    The first ``n`` letters spread the required count of value 0 evenly; positions after
    ``n`` repeat value 0.
    """
    target = math.floor(p * n) + m
    if not 0 <= target <= n:
        raise CountingError(f"cannot realize offset {m} within {n} steps", code="n_cap_too_small")
    head = make_balanced(values, (target / n, 1 - target / n), n).indices.tolist() if n else []
    tail = [0] * max(length - n, 1)
    return path_from_indices(values, head + tail)


@dataclass
class FluctuationRow:
    m: int
    n: int
    T: float
    log_ratio: float
    lower: float
    upper: float
    inside: bool


def fluctuation_demo(
    spec: SystemSpec,
    env: EnvironmentSpec,
    m_targets: Iterable[int],
    n_cap: int = 400,
    p: float | None = None,
    window: tuple[float, float] = CALIBRATION_WINDOW,
    tol: float = 1e-6,
) -> CheckReport:
    """Measure ``N^lambda(T)/exp(delta_Lambda T)`` at constructed crossing times.

    For each ``m`` a path with ``s_{n,z} = floor(p n) + m`` at the largest feasible
    ``n <= n_cap`` is built, the ratio is evaluated at the anchored threshold
    ``T = -S_n f`` with the logspace backend, and compared with the bracket built from the
    measured deterministic constants.
    """
    if env.size != 2:
        raise CountingError("fluctuation demo needs exactly two environment values", code="not_two_values")
    if not spec.has_equal_ratios:
        raise CountingError("fluctuation demo needs equal ratios", code="ratios_not_equal")
    p = env.probabilities[0] if p is None else p
    z, w = env.values
    dL = delta_Lambda(spec, env)
    log_C, log_D = calibrate_deterministic(spec, window)
    a = spec.letter_count
    step = float(spec.letter_weights[0]) - math.log(max(z, w))
    report = CheckReport("fluctuation-demo", True, 0, details={
        "delta_Lambda": dL, "log_C_meas": log_C, "log_D_meas": log_D, "n_cap": n_cap,
    })
    rows = []
    for m in m_targets:
        m = int(m)
        n = n_cap
        if not 0 <= math.floor(p * n) + m <= n:
            raise CountingError(f"n_cap={n_cap} too small for m={m}", code="n_cap_too_small")
        probe = crossing_path(env.values, p, m, n, n + 1)
        T = Threshold.at(spec, (n,) + (0,) * (a - 1), probe)
        length = _required_length(T.value * (1 + TIE_RTOL) + TIE_RTOL, step) + 1
        path = crossing_path(env.values, p, m, n, max(length, n + 1))
        table = table_for(spec, length, "logspace")
        log_ratio = log_count_random(table, path, T) - dL * T.value
        lower, upper = ratio_bracket(log_C, log_D, dL, z, w, m)
        inside = lower - tol <= log_ratio <= upper + tol
        rows.append(FluctuationRow(m, n, T.value, log_ratio, lower, upper, inside))
        report.checked += 1
        if not inside:
            report.passed = False
            report.violations.append({"m": m, "log_ratio": log_ratio, "lower": lower, "upper": upper})
    report.rows = rows
    if rows:
        spread = max(r.log_ratio for r in rows) - min(r.log_ratio for r in rows)
        report.details["log_spread"] = spread
    return report
