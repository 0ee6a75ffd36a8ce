from __future__ import annotations

from math import factorial, fsum

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernrank import (
    DomainViolation, DotProfile, KernelFamily, KernelSpec, OpenBall, OpenBox, UnitSphere, UnknownKernelError,
    ValidationError, cell_index, derive_rng, eval_kernel, kernel_matrix, sample_points
)

seeds = st.integers(0, 2 ** 32 - 1)


def test_euclidean_value() -> None:
    spec = KernelSpec(KernelFamily.EUCLIDEAN_SQ, n=2, lo=-5.0, hi=5.0)

    assert eval_kernel(spec, [0.0, 0.0], [3.0, 4.0]) == 25.0


def test_sphere_distance_to_itself_is_zero() -> None:
    assert eval_kernel('sphere-geo:n=2', [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]) == 0.0
    assert eval_kernel('sphere-geo:n=2', [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]) == pytest.approx(np.pi / 2)
    assert eval_kernel('sphere-geo-sq:n=2', [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]) == pytest.approx(np.pi ** 2)


def test_indicator_value() -> None:
    # 0.6 lies in [1/2, 2/3), the s = 1 cell
    assert eval_kernel('indicator', 0.6, 0.3) == pytest.approx(0.3)
    assert eval_kernel('indicator', 0.7, 0.5) == pytest.approx(0.125)


def test_dot_at_orthogonal_points() -> None:
    assert eval_kernel('dot:exp-neg', [0.5, 0.0, 0.0], [0.0, 0.5, 0.0]) == 1.0
    assert eval_kernel('dot:cos', [0.5, 0.5, 0.0], [0.5, 0.5, 0.0]) == pytest.approx(np.cos(0.5))


def test_euclidean_matrix() -> None:
    matrix = kernel_matrix('euclidean-sq:lo=-1,hi=3', [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])

    np.testing.assert_array_equal(matrix.entries, [[0, 1, 4], [1, 0, 1], [4, 1, 0]])
    assert matrix.shape == (3, 3)


def test_one_pair_matrix_matches_eval() -> None:
    spec = KernelSpec.from_string('dot:cos')
    x, y = [0.1, -0.4, 0.7], [0.9, 0.2, -0.3]

    assert kernel_matrix(spec, [x], [y]).entries[0, 0] == eval_kernel(spec, x, y)


def test_indicator_rows_repeat_within_a_cell() -> None:
    entries = kernel_matrix('indicator', [0.1, 0.3], [0.2, 0.7]).entries

    np.testing.assert_array_equal(entries, np.ones((2, 2)))


@pytest.mark.parametrize('x, s', [(0.25, 0), (0.5, 1), (0.6, 1), (0.7, 2), (0.75, 3), (0.9985, 665)])
def test_cell_index(x: float, s: int) -> None:
    assert cell_index(x) == s


@settings(max_examples=200, deadline=None)
@given(x=st.floats(1e-6, 1 - 1e-6))
def test_cell_index_interval(x: float) -> None:
    s = cell_index(x)

    assert s / (s + 1) <= x < (s + 1) / (s + 2)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_symmetric_families_are_exactly_symmetric(seed: int) -> None:
    rng = derive_rng(seed)

    for text in ('euclidean-sq:n=3', 'circular-sq', 'sphere-geo:n=2', 'sphere-geo-sq:n=3', 'dot:cos,n=2'):
        spec = KernelSpec.from_string(text)
        points = sample_points(spec.domain_u, rng, 6)

        matrix = spec.values(points, points)

        np.testing.assert_array_equal(matrix, matrix.T)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_sphere_distances_are_real_angles(seed: int) -> None:
    points = sample_points(UnitSphere(2), derive_rng(seed), 8)
    angles = kernel_matrix('sphere-geo:n=2', points, points).entries

    assert np.all(np.isfinite(angles))
    assert np.all((angles >= 0.0) & (angles <= np.pi))


def test_matrix_entries_match_single_evaluations() -> None:
    rng = derive_rng(5)

    for text in ('euclidean-sq:n=2', 'indicator'):
        spec = KernelSpec.from_string(text)
        xs, ys = sample_points(spec.domain_u, rng, 4), sample_points(spec.domain_v, rng, 3)
        matrix = kernel_matrix(spec, xs, ys).entries

        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                assert matrix[i, j] == eval_kernel(spec, x, y)

    spec = KernelSpec.from_string('null-example')
    xs, ys = sample_points(spec.domain_u, rng, 4), sample_points(spec.domain_v, rng, 3)
    matrix = kernel_matrix(spec, xs, ys).entries

    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            assert matrix[i, j] == pytest.approx(eval_kernel(spec, x, y), rel=1e-15)


def test_points_outside_the_domain_are_rejected() -> None:
    with pytest.raises(DomainViolation):
        eval_kernel('euclidean-sq', 1.5, 0.5)

    with pytest.raises(DomainViolation):
        eval_kernel('sphere-geo:n=2', [0.0, 0.0, 1.1], [0.0, 0.0, 1.0])

    with pytest.raises(DomainViolation):
        eval_kernel('null-example', 0.5, -1.0)


def test_null_example_is_one_at_the_origin() -> None:
    assert eval_kernel('null-example', 0.0, 5.0) == 1.0


@pytest.mark.parametrize(
    'x, y', [(0.5, 2.0), (-0.8, 1.5), (0.3, 1.0), (-1.5, 0.4), (0.2, 2.0), (0.01, 10.0), (-0.01, 10.0), (0.06, 4.0)]
)
def test_null_example_matches_its_series(x: float, y: float) -> None:
    terms = [x ** s / factorial(s) * (y / (2 * s) - 1.0) * y ** (2 * s - 1) for s in range(1, 80)]

    assert eval_kernel('null-example', x, y) == pytest.approx(1.0 + fsum(terms), rel=1e-10)


def test_null_example_term_cap_is_not_binding() -> None:
    base = KernelSpec(KernelFamily.NULL_EXAMPLE, lo=-3.0, hi=3.0)
    doubled = KernelSpec(KernelFamily.NULL_EXAMPLE, lo=-3.0, hi=3.0, max_terms=1000)

    xs = np.concatenate([np.linspace(-2.0, 2.0, 9), [-0.01, 0.01, 0.06]])
    ys = np.concatenate([np.linspace(0.1, 10.0, 12), [2.0, 4.0]])

    np.testing.assert_allclose(doubled.values(xs, ys), base.values(xs, ys), rtol=1e-12)


def test_kernel_strings_round_trip() -> None:
    for text, canonical in (
        ('euclidean-sq:n=2', 'euclidean-sq:n=2'),
        ('sphere-geo-sq:n=2', 'sphere-geo-sq:n=2'),
        ('dot:exp-neg', 'dot:exp-neg,n=3'),
        ('dot:h=cos,n=1,lo=0,hi=1', 'dot:cos,n=1,lo=0.0,hi=1.0'),
        ('indicator', 'indicator'),
        ('null-example', 'null-example'),
        ('null-example:rate=2,terms=50', 'null-example:rate=2.0,terms=50'),
    ):
        spec = KernelSpec.from_string(text)

        assert str(spec) == canonical
        assert KernelSpec.from_string(str(spec)) == spec


def test_default_domains() -> None:
    assert KernelSpec.from_string('euclidean-sq').domain_u == OpenBox.cube(1)
    assert KernelSpec.from_string('circular-sq').domain_u == OpenBox((0.0,), (2 * np.pi,))
    assert KernelSpec.from_string('sphere-geo').domain_v == UnitSphere(2)
    assert KernelSpec.from_string('dot:exp-neg').domain_u == OpenBox.cube(3, -1.0, 1.0)
    assert KernelSpec.from_string('dot:arccos').domain_u == OpenBall.unit(3)
    assert KernelSpec.from_string('null-example').domain_u == OpenBox((-2.0,), (2.0,))
    assert KernelSpec.from_string('dot:arccos').profile is DotProfile.ARCCOS


@pytest.mark.parametrize('text', [
    'bogus', 'euclidean-sq:q=1', 'euclidean-sq:n=abc', 'sphere-geo:lo=0', 'dot:tanh', 'dot:arccos,n=3,lo=-1,hi=1',
    'circular-sq:n=2'
])
def test_unknown_kernels_are_rejected(text: str) -> None:
    with pytest.raises(UnknownKernelError) as info:
        KernelSpec.from_string(text)

    assert info.value.exit_code == 2


def test_spec_validation() -> None:
    with pytest.raises(ValidationError):
        KernelSpec(KernelFamily.EUCLIDEAN_SQ, lo=0.0)

    with pytest.raises(ValidationError):
        KernelSpec(KernelFamily.INDICATOR, lo=-1.0, hi=1.0)

    with pytest.raises(ValidationError):
        KernelSpec(KernelFamily.CIRCULAR_SQ, profile=DotProfile.COS)


@pytest.mark.parametrize('profile', list(DotProfile))
def test_profile_taylor_coefficients(profile: DotProfile) -> None:
    z = 0.3
    partial = sum(profile.taylor_coefficient(s) * z ** s for s in range(40))

    assert partial == pytest.approx(float(profile(np.array(z))), rel=1e-12)


@pytest.mark.parametrize('x', [0.2, 0.06, -0.05])
def test_null_example_terms_vanishing_at_y_equal_two_s(x: float) -> None:
    # term s drops out at y = 2s while later terms do not
    for y in (2.0, 4.0, 6.0):
        terms = [x ** s / factorial(s) * (y / (2 * s) - 1.0) * y ** (2 * s - 1) for s in range(1, 80)]

        assert eval_kernel('null-example', x, y) == pytest.approx(1.0 + fsum(terms), rel=1e-10)
