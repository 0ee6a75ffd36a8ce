from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernrank import (
    CustomError, KernelFamily, ValidationError, composite_legendre, derive_rng, equilibrate, gauss_legendre,
    half_line_rule, to_jsonable
)


def test_custom_error_formats_message_and_prefix() -> None:
    err = ValidationError('bad value {value}!', 'parse', value=3)

    assert str(err) == '(parse) bad value 3!'
    assert err.value == 3
    assert err.exit_code == 2
    assert isinstance(err, ValueError)
    assert isinstance(err, CustomError)


def test_custom_error_names_callables() -> None:
    assert str(ValidationError('oops', derive_rng)) == '(derive_rng) oops'


def test_derive_rng_is_a_pure_function_of_its_path() -> None:
    a = derive_rng(7, 3).random(4)
    b = derive_rng(7, 3).random(4)
    c = derive_rng(7, 4).random(4)

    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_rng_rejects_negative_indices() -> None:
    with pytest.raises(ValidationError):
        derive_rng(1, -2)


def test_gauss_legendre_integrates_polynomials_exactly() -> None:
    x, w = gauss_legendre(5)

    # exact up to degree 9
    assert w @ x ** 8 == pytest.approx(2 / 9, rel=1e-14)
    assert w @ x ** 7 == pytest.approx(0.0, abs=1e-15)


def test_composite_legendre_sine() -> None:
    ys, ws = composite_legendre(0.0, np.pi, 8, 16)

    assert ws @ np.sin(ys) == pytest.approx(2.0, rel=1e-13)
    assert np.all(np.diff(ys) > 0)


def test_half_line_rule_exponential() -> None:
    ys, ws = half_line_rule(0.0, 40.0, 16, 64)

    assert ws @ np.exp(-ys) == pytest.approx(1.0, rel=1e-12)
    assert ws @ (ys * np.exp(-ys)) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_equilibrate_scales_by_powers_of_two(seed: int) -> None:
    rng = derive_rng(seed)
    matrix = rng.standard_normal((6, 5)) * 10.0 ** rng.uniform(-8, 8, (6, 1))

    scaled = equilibrate(matrix)
    exponents = np.log2(scaled / matrix)

    np.testing.assert_array_equal(exponents, np.round(exponents))

    assert np.all(np.abs(scaled).max(axis=1) >= 0.25)
    assert np.all(np.abs(scaled).max(axis=1) <= 4.0)
    assert np.all(np.abs(scaled).max(axis=0) <= 4.0)


def test_equilibrate_leaves_zero_rows_alone() -> None:
    matrix = np.array([[0.0, 0.0], [1e-6, 3e-6]])

    scaled = equilibrate(matrix)

    np.testing.assert_array_equal(scaled[0], 0.0)
    assert np.abs(scaled[1]).max() <= 4.0


def test_to_jsonable_plain_types() -> None:
    value = {
        1: (np.float64(0.5), np.int64(3)), 'kind': KernelFamily.DOT, 'array': np.arange(3.0)
    }

    assert to_jsonable(value) == {'1': [0.5, 3], 'kind': 'dot', 'array': [0.0, 1.0, 2.0]}
