"""Random environments: finite modulus sets, realized paths and their letter-count walks.

Only the future half ``lambda_0 lambda_1 ...`` of an environment is represented. Values
are stored as moduli in (0, 1]; a complex multiplier enters every formula only through
its modulus.
"""
from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import SpecError

#: Identifier of the path generator. Bump it whenever ``sample_iid`` changes its stream.
GENERATOR_ID = "philox4x64-10/key=seed/counter=0/u53/searchsorted-right/v1"

MODES = ("iid", "eventually_periodic", "balanced")
PROBABILITY_TOL = 1e-12
LIL_START = 16


@dataclass(frozen=True)
class EnvironmentSpec:
    values: tuple[float, ...]
    probabilities: tuple[float, ...]
    epsilon: float = 1e-6
    mode: str = "iid"
    seed: int | None = None
    prefix: tuple[int, ...] = ()
    cycle: tuple[int, ...] = ()
    frequencies: tuple[float, ...] | None = None

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def log_values(self) -> np.ndarray:
        return np.log(np.array(self.values, dtype=float))

    @property
    def mean_log_modulus(self) -> float:
        """``sum_i p_i log|z_i|``; never positive."""
        return math.fsum(p * math.log(z) for p, z in zip(self.probabilities, self.values))


def validate_environment(raw: EnvironmentSpec | Mapping) -> EnvironmentSpec:
    fields_ = dict(raw) if isinstance(raw, Mapping) else raw.__dict__.copy()
    values = tuple(abs(complex(z)) if isinstance(z, complex) else abs(float(z)) for z in fields_["values"])
    probs = fields_.get("probabilities")
    if probs is None:
        probs = (1.0 / len(values),) * len(values)
    probs = tuple(float(p) for p in probs)
    eps = float(fields_.get("epsilon", 1e-6))
    mode = fields_.get("mode", "iid")

    if not values:
        raise SpecError("environment needs at least one value", code="empty_environment")
    if len(probs) != len(values):
        raise SpecError("probabilities must match values", code="inconsistent_shape")
    if not eps > 0:
        raise SpecError("epsilon must be positive", code="modulus_out_of_range")
    for i, z in enumerate(values):
        if not (eps < z <= 1.0):
            raise SpecError(f"modulus {i} = {z} not in ({eps}, 1]", code="modulus_out_of_range", index=i)
    if len(set(values)) != len(values):
        raise SpecError("moduli must be pairwise distinct", code="duplicate_value")
    for i, p in enumerate(probs):
        if p < 0 or math.isnan(p):
            raise SpecError(f"probability {i} is negative", code="bad_probabilities", index=i)
    if abs(math.fsum(probs) - 1.0) > PROBABILITY_TOL:
        raise SpecError("probabilities must sum to 1", code="bad_probabilities")
    if mode not in MODES:
        raise SpecError(f"mode must be one of {MODES}", code="unknown_mode")

    prefix = tuple(int(i) for i in fields_.get("prefix", ()) or ())
    cycle = tuple(int(i) for i in fields_.get("cycle", ()) or ())
    for i in prefix + cycle:
        if not 0 <= i < len(values):
            raise SpecError(f"value index {i} out of range", code="index_out_of_range", index=i)
    if mode == "eventually_periodic" and not cycle:
        raise SpecError("eventually periodic mode needs a nonempty cycle", code="empty_cycle")
    freqs = fields_.get("frequencies")
    if freqs is not None:
        freqs = tuple(float(x) for x in freqs)
        _frequencies_as_fractions(freqs, len(values))
    elif mode == "balanced":
        freqs = probs
    seed = fields_.get("seed")
    return EnvironmentSpec(values, probs, eps, mode, None if seed is None else int(seed), prefix, cycle, freqs)


@dataclass(frozen=True)
class FluctuationCertificate:
    """Witness that ``k*l_i + lower <= s_{k,i} <= k*l_i + upper`` for every letter and step."""

    frequencies: tuple[Fraction, ...]
    lower: Fraction
    upper: Fraction


@dataclass(frozen=True, eq=False)
class EnvironmentPath:
    values: tuple[float, ...]
    indices: np.ndarray
    cum_log: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    certificate: FluctuationCertificate | None = None

    @property
    def length(self) -> int:
        return len(self.indices)

    @property
    def moduli(self) -> np.ndarray:
        return np.array(self.values)[self.indices]

    def log_product(self, k: int) -> float:
        """``log|lambda_0 ... lambda_{k-1}|`` reconstructed from the letter counts."""
        return math.fsum(int(c) * math.log(z) for c, z in zip(self.counts[k], self.values))

    def with_certificate(self, certificate: FluctuationCertificate) -> "EnvironmentPath":
        return EnvironmentPath(self.values, self.indices, self.cum_log, self.counts, certificate)


def path_from_indices(values: Sequence[float], indices, certificate=None) -> EnvironmentPath:
    values = tuple(float(z) for z in values)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= len(values)):
        raise SpecError("path index out of range", code="index_out_of_range")
    counts = np.zeros((idx.size + 1, len(values)), dtype=np.int64)
    for i in range(len(values)):
        counts[1:, i] = np.cumsum(idx == i)
    logs = np.log(np.array(values, dtype=float))
    cum_log = np.concatenate(([0.0], np.cumsum(logs[idx])))
    return EnvironmentPath(values, idx, cum_log, counts, certificate)


def _uniforms(seed: int, n: int) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed) % (1 << 64))
    raw = bitgen.random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def sample_iid(env: EnvironmentSpec, seed: int, n: int) -> EnvironmentPath:
    """Draw ``n`` i.i.d. letters with probabilities ``env.probabilities``.

    The generator is Philox4x64-10 keyed by the seed with its counter starting at zero;
    each raw 64-bit output becomes a 53-bit uniform, which is mapped to a letter by
    inverse CDF. Draw ``k`` only depends on ``(seed, k)``, so shorter paths are
    prefixes of longer ones.
    """
    u = _uniforms(seed, n)
    cdf = np.cumsum(np.array(env.probabilities, dtype=float))
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), env.size - 1)
    return path_from_indices(env.values, idx)


def make_eventually_periodic(
    values: Sequence[float], prefix: Sequence[int], cycle: Sequence[int], n: int
) -> EnvironmentPath:
    if len(cycle) == 0:
        raise SpecError("cycle must be nonempty", code="empty_cycle")
    prefix = list(prefix)[:n]
    reps = max(0, n - len(prefix))
    body = (list(cycle) * (reps // len(cycle) + 1))[:reps]
    cert = periodic_certificate(len(values), prefix, cycle)
    return path_from_indices(values, prefix + body, cert)


def periodic_certificate(size: int, prefix: Sequence[int], cycle: Sequence[int]) -> FluctuationCertificate:
    """Exact bounded-fluctuation certificate of ``prefix`` followed by ``cycle`` forever.

    Deviations ``s_k - k*l`` repeat with the cycle once the prefix is consumed, so the
    extremes over ``k in [1, len(prefix) + len(cycle)]`` are the extremes over all ``k``.
    """
    freqs = tuple(Fraction(sum(1 for c in cycle if c == i), len(cycle)) for i in range(size))
    seq = list(prefix) + list(cycle)
    lo, hi = _deviation_extremes(seq, freqs)
    return FluctuationCertificate(freqs, lo, hi)


def _deviation_extremes(seq: Sequence[int], freqs: Sequence[Fraction]) -> tuple[Fraction, Fraction]:
    counts = [0] * len(freqs)
    lo = hi = None
    for k, letter in enumerate(seq, start=1):
        counts[letter] += 1
        for i, l_i in enumerate(freqs):
            dev = counts[i] - k * l_i
            lo = dev if lo is None or dev < lo else lo
            hi = dev if hi is None or dev > hi else hi
    return (lo or Fraction(0)), (hi or Fraction(0))


def _frequencies_as_fractions(freqs: Sequence[float], size: int) -> tuple[Fraction, ...]:
    if len(freqs) != size:
        raise SpecError("frequency vector must match the number of values", code="bad_frequencies")
    if any(x < 0 or math.isnan(x) for x in freqs):
        raise SpecError("frequencies must be nonnegative", code="bad_frequencies")
    if abs(math.fsum(freqs) - 1.0) > PROBABILITY_TOL:
        raise SpecError("frequencies must sum to 1", code="bad_frequencies")
    fracs = [Fraction(x).limit_denominator(10**9) for x in freqs]
    fracs[-1] = 1 - sum(fracs[:-1])
    if fracs[-1] < 0:
        raise SpecError("frequencies must sum to 1", code="bad_frequencies")
    return tuple(fracs)


def make_balanced(values: Sequence[float], frequencies: Sequence[float], n: int) -> EnvironmentPath:
    """Greedy low-discrepancy path with letter frequencies ``l``.

    Step ``k`` takes the letter maximizing ``(k+1)*l_i - s_{k,i}`` (lowest index on ties).
    The result carries the certificate ``lower = -a_Z``, ``upper = a_Z``; the bound is
    re-verified exactly before returning.
    """
    size = len(values)
    fracs = _frequencies_as_fractions(frequencies, size)
    counts = [0] * size
    seq = []
    for k in range(n):
        best = max(range(size), key=lambda i: ((k + 1) * fracs[i] - counts[i], -i))
        counts[best] += 1
        seq.append(best)
    cert = FluctuationCertificate(fracs, Fraction(-size), Fraction(size))
    path = path_from_indices(values, seq, cert)
    if not verify_certificate(path, cert):
        raise SpecError("greedy construction exceeded its deviation bound", code="certificate_failed")
    return path


def verify_certificate(path: EnvironmentPath, cert: FluctuationCertificate) -> bool:
    """Exact check of the bounded-fluctuation inequality for every prefix length ``k >= 1``."""
    if len(cert.frequencies) != len(path.values):
        return False
    den = math.lcm(cert.lower.denominator, cert.upper.denominator, *(f.denominator for f in cert.frequencies))
    small = den < 1 << 20 and path.length < 1 << 30
    dtype = np.int64 if small else object
    ks = np.arange(1, path.length + 1, dtype=np.int64).astype(dtype)
    lo, hi = int(cert.lower * den), int(cert.upper * den)
    for i, l_i in enumerate(cert.frequencies):
        s = path.counts[1:, i].astype(dtype) * den
        base = ks * int(l_i * den)
        if (s < base + lo).any() or (s > base + hi).any():
            return False
    return True


def empirical_certificate(path: EnvironmentPath, frequencies: Sequence[float]) -> FluctuationCertificate:
    """Tightest ``(lower, upper)`` for the realized prefix, exact in rationals."""
    fracs = _frequencies_as_fractions(frequencies, len(path.values))
    lo, hi = _deviation_extremes(path.indices.tolist(), fracs)
    return FluctuationCertificate(fracs, lo, hi)


def letter_walk(path: EnvironmentPath, i: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered count walk ``s_{k,i} - k*p`` for ``k = 1..n``."""
    _check_index(path, i)
    ks = np.arange(1, path.length + 1)
    return ks, path.counts[1:, i] - ks * p


def _check_index(path: EnvironmentPath, i: int) -> None:
    if not 0 <= i < len(path.values):
        raise SpecError(f"value index {i} out of range", code="index_out_of_range", index=i)


def crossing_times(path: EnvironmentPath, i: int, p: float, m: int) -> np.ndarray:
    """All ``1 <= k < n`` with ``s_{k,i} <= p*k + m < s_{k+1,i}``.

    ``p`` is read as the nearest rational with denominator at most 10**9 and the
    comparison is exact in integers.
    """
    _check_index(path, i)
    frac = Fraction(p).limit_denominator(10**9)
    num, den = frac.numerator, frac.denominator
    n = path.length
    exact_fits = (n + abs(m) + 1) * max(abs(num), den, 1) < 1 << 62
    dtype = np.int64 if exact_fits else object
    s = path.counts[:, i].astype(dtype)
    level = np.arange(n, dtype=np.int64).astype(dtype) * num + m * den
    hit = (s[:-1] * den <= level) & (s[1:] * den > level)
    hit[0] = False
    return np.nonzero(hit)[0]


@dataclass(frozen=True)
class LILStatistics:
    ks: np.ndarray
    values: np.ndarray
    running_max: np.ndarray
    running_min: np.ndarray

    @property
    def max(self) -> float:
        return float(self.running_max[-1]) if self.values.size else float("nan")

    @property
    def min(self) -> float:
        return float(self.running_min[-1]) if self.values.size else float("nan")


def lil_statistics(path: EnvironmentPath, i: int, p: float, k_min: int = LIL_START) -> LILStatistics:
    """Walk normalized by ``sqrt(2 p (1-p) k log log k)`` for ``k >= k_min``."""
    _check_index(path, i)
    if not 0.0 < p < 1.0:
        raise SpecError("p must lie strictly between 0 and 1", code="p_degenerate")
    k_min = max(int(k_min), LIL_START)
    ks = np.arange(k_min, path.length + 1)
    centered = path.counts[k_min:, i] - ks * p
    scale = np.sqrt(2.0 * p * (1.0 - p) * ks * np.log(np.log(ks)))
    vals = centered / scale
    return LILStatistics(ks, vals, np.maximum.accumulate(vals), np.minimum.accumulate(vals))


def drift_sum(path: EnvironmentPath, env: EnvironmentSpec) -> tuple[np.ndarray, np.ndarray]:
    """``sum_i (s_{k,i} - k p_i) log|z_i|`` for ``k = 1..n``."""
    if len(env.values) != len(path.values):
        raise SpecError("environment and path disagree on the value set", code="inconsistent_shape")
    ks = np.arange(1, path.length + 1)
    logs = env.log_values
    probs = np.array(env.probabilities)
    centered = path.counts[1:] - ks[:, None] * probs[None, :]
    return ks, centered @ logs


def realize(env: EnvironmentSpec, n: int, seed: int | None = None) -> EnvironmentPath:
    """Build a path of length ``n`` according to ``env.mode``."""
    if env.mode == "iid":
        s = env.seed if seed is None else seed
        if s is None:
            raise SpecError("i.i.d. environments need an explicit seed", code="missing_seed")
        return sample_iid(env, s, n)
    if env.mode == "eventually_periodic":
        return make_eventually_periodic(env.values, env.prefix, env.cycle, n)
    return make_balanced(env.values, env.frequencies or env.probabilities, n)
