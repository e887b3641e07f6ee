import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randcount.errors import SpecError
from randcount.symbolic import (
    count_words_length,
    enumerate_words,
    full_shift,
    golden_mean,
    is_admissible,
    is_irreducible,
    validate_system,
)


def test_full_shift_word_counts():
    spec = full_shift((1 / 3, 1 / 3))
    assert [count_words_length(n, spec) for n in range(1, 6)] == [2, 4, 8, 16, 32]


def test_golden_mean_words_length_three():
    spec = golden_mean()
    assert enumerate_words(3, spec) == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 0, 1)]
    assert count_words_length(3, spec) == 5


def test_golden_mean_counts_are_fibonacci():
    spec = golden_mean()
    fib = [2, 3]
    while len(fib) < 12:
        fib.append(fib[-1] + fib[-2])
    assert [count_words_length(n, spec) for n in range(1, 13)] == fib


def test_suffix_letter_filters_last_letter():
    spec = golden_mean(suffix_letter=1)
    assert all(w[-1] == 0 for w in enumerate_words(4, spec))


def test_is_admissible():
    spec = golden_mean()
    assert is_admissible((0, 1, 0), spec)
    assert not is_admissible((1, 1), spec)
    assert not is_admissible((0, 1), golden_mean(suffix_letter=1), check_suffix=True)


@pytest.mark.parametrize(
    "word, code",
    [((), "empty_word"), ((0, 2), "letter_out_of_range"), ((-1,), "letter_out_of_range")],
)
def test_is_admissible_errors(word, code):
    with pytest.raises(SpecError) as err:
        is_admissible(word, golden_mean())
    assert err.value.code == code


@pytest.mark.parametrize(
    "raw, code",
    [
        ({"ratios": (0.5, 1.0), "incidence": ((1, 1), (1, 1))}, "ratio_out_of_range"),
        ({"ratios": (0.5, 0.0), "incidence": ((1, 1), (1, 1))}, "ratio_out_of_range"),
        ({"ratios": (0.5, 0.3), "incidence": ((1, 1), (0, 1))}, "not_irreducible"),
        ({"ratios": (0.5, 0.3), "incidence": ((1, 1),)}, "inconsistent_shape"),
        ({"ratios": (0.5, 0.3), "incidence": ((1, 1), (1, 1)), "placements": (0.1, 0.5)}, "osc_violation"),
        ({"ratios": (0.5, 0.3), "incidence": ((1, 1), (1, 1)), "suffix_letter": 2}, "letter_out_of_range"),
    ],
)
def test_validate_system_errors(raw, code):
    with pytest.raises(SpecError) as err:
        validate_system(raw)
    assert err.value.code == code


def test_ratio_error_names_index():
    with pytest.raises(SpecError) as err:
        validate_system({"ratios": (0.5, 1.5, 0.2), "incidence": [[1] * 3] * 3})
    assert err.value.index == 1


def test_open_set_condition_accepts_disjoint_images():
    spec = validate_system({"ratios": (1 / 3, 1 / 3), "incidence": ((1, 1), (1, 1)), "placements": (0.0 + 1e-9, 2 / 3)})
    assert spec.placements is not None


def test_enumeration_cap():
    with pytest.raises(SpecError) as err:
        enumerate_words(15, full_shift((0.5, 0.3)))
    assert err.value.code == "n_too_large"


def test_is_irreducible_cycle():
    assert is_irreducible(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]]))
    assert not is_irreducible(np.array([[1, 1, 0], [0, 1, 1], [0, 0, 1]]))


def _irreducible_incidences(a):
    out = []
    for bits in itertools.product((0, 1), repeat=a * a):
        m = np.array(bits).reshape(a, a)
        if is_irreducible(m):
            out.append(tuple(tuple(int(v) for v in row) for row in m))
    return out


INCIDENCES = _irreducible_incidences(2) + _irreducible_incidences(3)[::7]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(INCIDENCES), st.data())
def test_count_matches_enumeration(incidence, data):
    a = len(incidence)
    suffix = data.draw(st.integers(0, a - 1))
    n = data.draw(st.integers(1, 8))
    spec = validate_system({"ratios": [0.3] * a, "incidence": incidence, "suffix_letter": suffix})
    words = enumerate_words(n, spec)
    assert count_words_length(n, spec) == len(words)
    assert words == sorted(words)
    assert all(is_admissible(w, spec, check_suffix=True) for w in words)
