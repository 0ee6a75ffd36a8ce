from __future__ import annotations

from fractions import Fraction
from math import factorial, fsum

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernrank import (
    ExpNegOverXFamily, KernelRowFamily, KernelSpec, LLIVerdict, OpenBox, PowerFamily, SubsetNotContained,
    TaylorFunctionFamily, TolerancePolicy, TranslatedPowerFamily, ValidationError, constrained_fullrank_search,
    derive_rng, finite_rank_estimate, fullrank_mc, fullrank_witness, kernel_matrix, lli_probe, numerical_rank,
    taylor_span_rank
)

unit = OpenBox((0.0,), (1.0,))
narrow = OpenBox((0.4,), (0.45,))


def test_euclidean_matrix_has_rank_three() -> None:
    points = [0.0, 1.0, 2.0, 3.0, 4.0]
    result = numerical_rank(kernel_matrix('euclidean-sq:lo=-1,hi=5', points, points).entries)

    assert result.rank == 3
    assert result.singular_values.size == 5
    assert result.ratios[3] < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), inner=st.integers(1, 5), scale=st.floats(1e-3, 1e3))
def test_rank_ignores_permutations_and_scale(seed: int, inner: int, scale: float) -> None:
    rng = derive_rng(seed)
    matrix = rng.standard_normal((6, inner)) @ rng.standard_normal((inner, 6))

    shuffled = scale * matrix[rng.permutation(6)][:, rng.permutation(6)]

    assert numerical_rank(matrix).rank == inner
    assert numerical_rank(shuffled).rank == inner
    assert numerical_rank(matrix, TolerancePolicy(equilibrate=False)).rank == inner


def test_degenerate_matrices() -> None:
    assert numerical_rank(np.zeros((3, 3))).rank == 0
    assert numerical_rank(np.zeros((0, 4))).rank == 0

    with pytest.raises(ValidationError):
        numerical_rank([[1.0, np.nan], [0.0, 1.0]])

    with pytest.raises(ValidationError):
        numerical_rank([1.0, 2.0])


def test_policy_validation() -> None:
    with pytest.raises(ValidationError):
        TolerancePolicy(rel_threshold=1.5)

    with pytest.raises(ValidationError):
        TolerancePolicy(rel_threshold=1e-12, strict_threshold=1e-10)


def test_deficiencies_grow_with_the_threshold() -> None:
    counts = [
        fullrank_mc('indicator', 3, 50, seed=9, policy=TolerancePolicy(rel, min(rel, 1e-13))).deficiency_count
        for rel in (1e-14, 1e-12, 1e-10, 1e-8, 1e-4, 1e-2)
    ]

    assert counts == sorted(counts)


def test_strict_deficiencies_never_exceed_regular_ones() -> None:
    report = fullrank_mc('indicator', 3, 200, seed=1)

    assert 0 <= report.strict_deficiency_count <= report.deficiency_count <= report.trials
    assert list(report.singular_min_quantiles) == sorted(report.singular_min_quantiles)
    assert sum(report.rank_histogram.values()) == 200


def test_forced_euclidean_deficiency() -> None:
    report = fullrank_mc('euclidean-sq', 4, 100, seed=0)

    assert report.deficiency_count == 100
    assert report.rank_histogram == {3: 100}
    assert report.verdict == 'rank deficient with positive frequency'


@pytest.mark.parametrize('n', [1, 2, 3])
def test_euclidean_rank_law(n: int) -> None:
    estimate = finite_rank_estimate(f'euclidean-sq:n={n}', n + 5, 20, seed=3)

    assert estimate.rank == n + 2
    assert estimate.profile == tuple(min(k, n + 2) for k in range(1, n + 6))
    assert estimate.plateau_length == 3
    assert estimate.excess_ratio is not None and estimate.excess_ratio < 1e-12


def test_circular_rank() -> None:
    assert finite_rank_estimate('circular-sq', 6, 20, seed=4).rank == 3


def test_undecided_estimates() -> None:
    full = finite_rank_estimate('sphere-geo-sq:n=2', 6, 3, seed=0)

    assert full.rank is None
    assert full.label == '>= 6'

    short = finite_rank_estimate('euclidean-sq', 6, 5, seed=0)

    assert short.rank is None
    assert short.lower_bound == 3
    assert short.to_dict()['label'] == '>= 6'


def test_reports_do_not_depend_on_workers() -> None:
    serial = fullrank_mc('indicator', 3, 40, seed=5)
    threaded = fullrank_mc('indicator', 3, 40, seed=5, workers=4)

    assert serial == threaded


def test_probe_arguments_are_validated() -> None:
    with pytest.raises(ValidationError):
        fullrank_mc('null-example', 3, 10, shared_nodes=True)

    with pytest.raises(ValidationError):
        fullrank_mc('euclidean-sq', 51, 10)

    with pytest.raises(ValidationError):
        fullrank_mc('euclidean-sq', 2, 0)

    with pytest.raises(SubsetNotContained):
        fullrank_mc('euclidean-sq', 2, 10, subsets_u=[narrow, OpenBox((0.5,), (1.5,))])


def test_subset_probe_draws_from_the_subsets() -> None:
    report = fullrank_mc('euclidean-sq', 3, 50, seed=2, subsets_u=[narrow] * 3, subsets_v=[narrow] * 3)

    assert report.deficiency_count == 0


def test_monomials_are_independent_on_a_window() -> None:
    probe = lli_probe(PowerFamily.monomials(range(4), unit), narrow, seed=0)

    assert probe.verdict is LLIVerdict.WITNESS_FOUND
    assert probe.search.rank == 4
    assert np.all((probe.search.points > 0.4) & (probe.search.points < 0.45))


def test_translated_monomials() -> None:
    family = TranslatedPowerFamily(((0,), (1,), (2,)), unit, center=(0.5,))

    np.testing.assert_allclose(family.values([0.25, 0.75]), [[1.0, 1.0], [-0.25, 0.25], [0.0625, 0.0625]])
    assert fullrank_witness(family, seed=1).found


def test_flat_functions_have_no_witness_on_the_negative_side() -> None:
    family = ExpNegOverXFamily((1.0, 2.0, 3.0))

    negative = lli_probe(family, OpenBox((-0.5,), (-0.45,)), seed=0)
    positive = lli_probe(family, narrow, seed=0)

    assert negative.verdict is LLIVerdict.NO_WITNESS_IN_BUDGET
    assert negative.search.rank == 0
    assert positive.verdict is LLIVerdict.WITNESS_FOUND
    assert negative.to_dict()['verdict'] == 'no_witness_in_budget'


def test_sphere_taylor_functions_are_independent_on_a_window() -> None:
    spec = KernelSpec.from_string('sphere-geo-sq:n=2')
    family = TaylorFunctionFamily(spec, (0.1, -0.1), (1.0, 0.0), (0, 1, 2))

    probe = lli_probe(family, OpenBox((0.3, 0.3), (0.35, 0.35)), seed=0)

    assert probe.verdict is LLIVerdict.WITNESS_FOUND
    assert probe.search.rank == 3


def test_window_must_lie_in_the_domain() -> None:
    with pytest.raises(SubsetNotContained):
        lli_probe(PowerFamily.monomials(range(2), unit), OpenBox((0.9,), (1.1,)))

    with pytest.raises(ValidationError):
        lli_probe(PowerFamily.monomials(range(2), unit), narrow, k=3)


def test_kernel_rows_span_at_most_the_kernel_rank() -> None:
    spec = KernelSpec.from_string('euclidean-sq')

    five = fullrank_witness(KernelRowFamily(spec, np.linspace(0.1, 0.9, 5)[:, None]), seed=0)
    three = fullrank_witness(KernelRowFamily(spec, np.array([[0.2], [0.5], [0.8]])), seed=0)

    assert not five.found
    assert five.rank == 3
    assert three.found


def test_witness_search_needs_one_subset_per_function() -> None:
    with pytest.raises(ValidationError):
        constrained_fullrank_search(PowerFamily.monomials(range(3), unit), [narrow, narrow])


def test_witness_search_is_seeded() -> None:
    family = PowerFamily.monomials(range(3), unit)

    first = fullrank_witness(family, budget=16, seed=4)
    second = fullrank_witness(family, budget=16, seed=4)

    np.testing.assert_array_equal(first.points, second.points)
    assert first.sigma_ratio == second.sigma_ratio


@pytest.mark.parametrize('kernel, p', [('euclidean-sq', (0.5,)), ('circular-sq', (1.0,))])
def test_taylor_functions_of_quadratic_kernels(kernel: str, p: tuple[float, ...]) -> None:
    assert taylor_span_rank(kernel, p, (1.0,), 5).rank == 3


def test_taylor_functions_of_an_analytic_kernel() -> None:
    assert taylor_span_rank('dot:exp-neg,n=1', (0.0,), (1.0,), 4).rank == 5


@pytest.mark.slow
@pytest.mark.parametrize('kernel', ['sphere-geo:n=2', 'sphere-geo-sq:n=2'])
@pytest.mark.parametrize('k', [2, 5, 10, 25])
def test_sphere_kernels_are_full_rank(kernel: str, k: int) -> None:
    report = fullrank_mc(kernel, k, 1000, seed=11)

    assert report.deficiency_count == 0

    if k <= 10:
        assert report.singular_min_quantiles[0] > 1e-10


@pytest.mark.slow
def test_indicator_collision_rate() -> None:
    expected = fsum((1.0 / ((s + 1) * (s + 2))) ** 2 for s in range(100_000))

    assert expected == pytest.approx(0.2899, abs=5e-5)

    report = fullrank_mc('indicator', 2, 10000, seed=0)

    assert abs(report.deficiency_fraction - expected) < 0.05


@pytest.mark.slow
@pytest.mark.parametrize('profile', ['exp-neg', 'cos'])
@pytest.mark.parametrize('k', [5, 10])
def test_dot_kernels_are_full_rank(profile: str, k: int) -> None:
    assert fullrank_mc(f'dot:{profile}', k, 500, seed=0).deficiency_count == 0


@pytest.mark.slow
@pytest.mark.parametrize('k', [2, 3])
def test_null_example_is_full_rank(k: int) -> None:
    assert fullrank_mc('null-example', k, 500, seed=0).deficiency_count == 0


def _null_coefficient(s: int, y: Fraction) -> Fraction:
    # x^s coefficient of the null-example kernel, a polynomial of degree 2s in y
    if s == 0:
        return Fraction(1)

    return y ** (2 * s - 1) * (y / (2 * s) - 1) / factorial(s)


def _exact_det(rows: list[list[Fraction]]) -> Fraction:
    rows = [row[:] for row in rows]
    det = Fraction(1)

    for col in range(len(rows)):
        pivot = next((i for i in range(col, len(rows)) if rows[i][col] != 0), None)

        if pivot is None:
            return Fraction(0)

        if pivot != col:
            rows[col], rows[pivot] = rows[pivot], rows[col]
            det = -det

        det *= rows[col][col]

        for i in range(col + 1, len(rows)):
            factor = rows[i][col] / rows[col][col]
            rows[i] = [a - factor * b for a, b in zip(rows[i], rows[col])]

    return det


@pytest.mark.parametrize('k', [2, 5, 10])
def test_null_example_leading_block_is_nonsingular(k: int) -> None:
    # det A_k(eps x, y) = eps^(k(k-1)/2) det[x_i^s] det[c_s(y_j)] + O(eps^(k(k-1)/2 + 1))
    ys = [j + 1 + Fraction(1, j + 3) for j in range(k)]

    assert _exact_det([[_null_coefficient(s, y) for y in ys] for s in range(k)]) != 0
