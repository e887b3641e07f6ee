import math
from fractions import Fraction

import pytest

from randcount.symbolic import enumerate_words

ACCEPTANCE_LINES: list[str] = []


def brute_weights(spec, n, path=None):
    """Word weights of every suffix-compatible word of length ``n``, summed letter by letter."""
    weights = []
    env_term = 0.0
    if path is not None:
        env_term = -math.fsum(math.log(path.values[i]) for i in path.indices[:n])
    for word in enumerate_words(n, spec):
        weights.append(math.fsum(-math.log(spec.ratios[e]) for e in word) + env_term)
    return weights


def brute_count(spec, T, n_max, path=None):
    return sum(sum(1 for w in brute_weights(spec, n, path) if w <= T) for n in range(1, n_max + 1))


def brute_count_anchored(spec, anchor_word_len, anchor_comp, n_max, path=None):
    """Exact count of words whose product of ratios (and moduli) is at least the anchor's."""
    def product(comp, n):
        value = Fraction(1)
        for r, k in zip(spec.ratios, comp):
            value *= Fraction(r) ** k
        if path is not None:
            for i in path.indices[:n]:
                value *= Fraction(path.values[i])
        return value

    target = product(anchor_comp, anchor_word_len)
    total = 0
    for n in range(1, n_max + 1):
        for word in enumerate_words(n, spec):
            comp = [word.count(e) for e in range(spec.letter_count)]
            if product(comp, n) >= target:
                total += 1
    return total


@pytest.fixture
def acceptance_line():
    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
