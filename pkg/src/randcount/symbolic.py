"""Finite-alphabet subshifts of finite type carrying an affine contraction system.

Letters are integers ``0..a-1``. Letter ``e`` acts by ``t -> ratios[e] * t + placements[e]``
on [0, 1]; the incidence matrix decides which letters may follow each other, and a
word ``w`` is compatible with the suffix letter when ``incidence[w[-1]][suffix_letter] == 1``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import SpecError

DGENERIC_FLAGS = ("none", "d_generic", "strongly_d_generic")
ENUMERATION_CAP = 14

Word = tuple[int, ...]


@dataclass(frozen=True)
class SystemSpec:
    letter_count: int
    ratios: tuple[float, ...]
    incidence: tuple[tuple[int, ...], ...]
    suffix_letter: int = 0
    placements: tuple[float, ...] | None = None
    dgeneric_flag: str = "none"

    @property
    def incidence_array(self) -> np.ndarray:
        return np.array(self.incidence, dtype=np.int64)

    @property
    def letter_weights(self) -> np.ndarray:
        """Per-letter cost ``-log(ratio)``; every weight is positive."""
        return -np.log(np.array(self.ratios, dtype=float))

    @property
    def has_equal_ratios(self) -> bool:
        return len(set(self.ratios)) == 1


def full_shift(ratios: Sequence[float], suffix_letter: int = 0) -> SystemSpec:
    a = len(ratios)
    return validate_system(
        SystemSpec(a, tuple(float(r) for r in ratios), tuple((1,) * a for _ in range(a)), suffix_letter)
    )


def golden_mean(ratios: Sequence[float] = (1 / 3, 1 / 3), suffix_letter: int = 0) -> SystemSpec:
    """Two letters with the word ``11`` forbidden."""
    return validate_system(SystemSpec(2, tuple(float(r) for r in ratios), ((1, 1), (1, 0)), suffix_letter))


def is_irreducible(incidence: np.ndarray) -> bool:
    """Decide irreducibility exactly from boolean matrix powers ``A, A^2, ..., A^a``."""
    a = incidence.shape[0]
    step = (incidence > 0).astype(np.int64)
    reach = step.copy()
    power = step.copy()
    for _ in range(a - 1):
        power = ((power @ step) > 0).astype(np.int64)
        reach |= power
    return bool(reach.all())


def validate_system(raw: SystemSpec | Mapping) -> SystemSpec:
    """Check a candidate system and return it as a frozen :class:`SystemSpec`.

    Raises :class:`SpecError` with code ``ratio_out_of_range``, ``not_irreducible``,
    ``osc_violation`` or ``inconsistent_shape``; ``index`` names the offender.
    """
    if isinstance(raw, Mapping):
        fields = dict(raw)
        fields.setdefault("letter_count", len(fields.get("ratios", ())))
    else:
        fields = raw.__dict__.copy()

    a = int(fields["letter_count"])
    ratios = tuple(float(r) for r in fields["ratios"])
    incidence = tuple(tuple(int(v) for v in row) for row in fields["incidence"])
    suffix = int(fields.get("suffix_letter", 0))
    placements = fields.get("placements")
    flag = fields.get("dgeneric_flag", "none") or "none"

    if a < 2:
        raise SpecError(f"need at least two letters, got {a}", code="inconsistent_shape")
    if len(ratios) != a or len(incidence) != a or any(len(row) != a for row in incidence):
        raise SpecError("ratios and incidence must match letter_count", code="inconsistent_shape")
    if placements is not None:
        placements = tuple(float(b) for b in placements)
        if len(placements) != a:
            raise SpecError("placements must match letter_count", code="inconsistent_shape")
    if not 0 <= suffix < a:
        raise SpecError(f"suffix letter {suffix} out of range", code="letter_out_of_range", index=suffix)
    if flag not in DGENERIC_FLAGS:
        raise SpecError(f"dgeneric_flag must be one of {DGENERIC_FLAGS}", code="inconsistent_shape")
    for e, r in enumerate(ratios):
        if not (0.0 < r < 1.0) or math.isnan(r):
            raise SpecError(f"ratio {e} = {r} not in (0, 1)", code="ratio_out_of_range", index=e)
    for row in incidence:
        if any(v not in (0, 1) for v in row):
            raise SpecError("incidence entries must be 0 or 1", code="inconsistent_shape")
    if not is_irreducible(np.array(incidence)):
        raise SpecError("incidence matrix is not irreducible", code="not_irreducible")
    if placements is not None:
        _check_open_set_condition(ratios, placements)

    return SystemSpec(a, ratios, incidence, suffix, placements, flag)


def _check_open_set_condition(ratios: Sequence[float], placements: Sequence[float]) -> None:
    for e, (r, b) in enumerate(zip(ratios, placements)):
        if not (0.0 < b < 1.0) or r + b > 1.0:
            raise SpecError(f"image of letter {e} leaves [0, 1]", code="osc_violation", index=e)
    order = sorted(range(len(ratios)), key=lambda e: placements[e])
    for left, right in zip(order, order[1:]):
        if placements[left] + ratios[left] > placements[right]:
            raise SpecError(
                f"images of letters {left} and {right} overlap", code="osc_violation", index=right
            )


def _check_letters(word: Sequence[int], spec: SystemSpec) -> None:
    for pos, e in enumerate(word):
        if not 0 <= e < spec.letter_count:
            raise SpecError(f"letter {e} at position {pos} out of range", code="letter_out_of_range", index=pos)


def is_admissible(word: Sequence[int], spec: SystemSpec, check_suffix: bool = False) -> bool:
    if len(word) == 0:
        raise SpecError("word must be nonempty", code="empty_word")
    _check_letters(word, spec)
    A = spec.incidence
    if any(A[u][v] == 0 for u, v in zip(word, word[1:])):
        return False
    return not check_suffix or A[word[-1]][spec.suffix_letter] == 1


def count_words_length(n: int, spec: SystemSpec) -> int:
    """Number of admissible words of length ``n`` that may precede the suffix letter."""
    if n < 1:
        raise SpecError("length must be at least 1", code="bad_length")
    A = [list(row) for row in spec.incidence]
    a = spec.letter_count
    # v[e] = number of admissible words of the current length starting at e and ending before the suffix
    v = [A[e][spec.suffix_letter] for e in range(a)]
    for _ in range(n - 1):
        v = [sum(A[e][f] * v[f] for f in range(a)) for e in range(a)]
    return sum(v)


def enumerate_words(n: int, spec: SystemSpec) -> list[Word]:
    """All suffix-compatible admissible words of length ``n`` in lexicographic order.

    Brute-force oracle; ``n`` is capped at 14.
    """
    if n > ENUMERATION_CAP:
        raise SpecError(f"n={n} exceeds enumeration cap {ENUMERATION_CAP}", code="n_too_large")
    if n < 1:
        raise SpecError("length must be at least 1", code="bad_length")
    A = spec.incidence
    a = spec.letter_count
    out: list[Word] = []

    def extend(prefix: list[int]) -> None:
        if len(prefix) == n:
            if A[prefix[-1]][spec.suffix_letter]:
                out.append(tuple(prefix))
            return
        for e in range(a):
            if not prefix or A[prefix[-1]][e]:
                prefix.append(e)
                extend(prefix)
                prefix.pop()

    extend([])
    return out
