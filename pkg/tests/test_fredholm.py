from __future__ import annotations

import numpy as np
import pytest

from kernrank import (
    DiscreteSystem, ExpDecay, GaussianBump, KernelSpec, LambdaSelection, OpenBall, OpenBox, PolynomialFunction,
    QuadratureNotConverged, SingularSystem, SolveMethod, SubsetNotContained, TestFunction, ValidationError, assemble,
    forward_apply, lambda_sweep, local_recover, null_moment_check, recovery_error, recovery_sweep, solve_direct,
    solve_tikhonov, solve_tsvd, uniform_partition
)
from kernrank.fredholm import CALIBRATION_NOISE, LAMBDA_SWEEP, _noise_spread

unit = OpenBox((0.0,), (1.0,))
window = OpenBox((0.4,), (0.6,))
# clean error at the noise stable lambda, which sits near 1e-7 with error 0.33; a one mode fit scores 0.70
RECOVERY_BOUND = 0.5
laplace = 'dot:exp-neg,n=1,lo=0,hi=1'
bump = GaussianBump(0.5, 0.15)
targets = np.array([0.1, 0.5, 0.9])


def _system(spec: str, k: int, region: OpenBox = unit) -> DiscreteSystem:
    return assemble(spec, uniform_partition(region, k), uniform_partition(KernelSpec.from_string(spec).domain_v, k))


def test_two_cell_euclidean_system() -> None:
    system = _system('euclidean-sq', 2)

    np.testing.assert_allclose(system.matrix, [[0.0, 0.125], [0.125, 0.0]])
    np.testing.assert_allclose(system.weights, np.diag([2.0, 2.0]))


def test_assemble_needs_matching_partitions() -> None:
    with pytest.raises(ValidationError):
        assemble('euclidean-sq', uniform_partition(unit, 2), uniform_partition(unit, 3))


def test_forward_integral_of_a_constant() -> None:
    g = forward_apply('euclidean-sq', PolynomialFunction((1.0,)), targets)

    np.testing.assert_allclose(g, targets ** 2 - targets + 1.0 / 3.0, rtol=1e-12)


def test_forward_integral_of_an_exponential() -> None:
    g = forward_apply(laplace, ExpDecay(1.0), targets)

    np.testing.assert_allclose(g, -np.expm1(-(targets + 1.0)) / (targets + 1.0), rtol=1e-12)


def test_forward_needs_a_one_dimensional_v() -> None:
    with pytest.raises(ValidationError):
        forward_apply('sphere-geo:n=2', bump, [[0.0, 0.0, 1.0]])

    with pytest.raises(ValidationError):
        forward_apply(laplace, bump, targets, quad_nodes=1)


def test_unconverged_quadrature() -> None:
    with pytest.raises(QuadratureNotConverged) as info:
        forward_apply(laplace, GaussianBump(0.5, 0.01), targets, quad_nodes=2, max_nodes=4, rtol=1e-15)

    assert info.value.exit_code == 5


def test_direct_solve_reproduces_piecewise_constant_truths() -> None:
    system = _system(laplace, 3)
    f = np.array([1.0, -2.0, 0.5])

    result = solve_direct(system, system.matrix @ f)

    np.testing.assert_allclose(result.f_hat, f, rtol=1e-10)
    np.testing.assert_allclose(system.weights @ result.solution, result.f_hat)
    assert result.parameter is None


def test_direct_solve_refuses_singular_systems() -> None:
    system = _system('euclidean-sq', 4)

    with pytest.raises(SingularSystem) as info:
        solve_direct(system, np.ones(4))

    assert info.value.rank == 3
    assert info.value.exit_code == 4


def test_truncated_svd_projects_onto_the_range() -> None:
    system = _system('euclidean-sq', 4)
    g = forward_apply('euclidean-sq', PolynomialFunction((1.0,)), system.xs)

    assert solve_tsvd(system, g, 3).residual < 1e-10
    assert solve_tsvd(system, g, 1).residual > 1e-3

    with pytest.raises(ValidationError):
        solve_tsvd(system, g, 5)


def test_small_lambda_matches_the_direct_solve() -> None:
    system = _system('euclidean-sq', 2)
    g = np.array([1.0, 2.0])

    np.testing.assert_allclose(solve_direct(system, g).f_hat, [16.0, 8.0])
    np.testing.assert_allclose(solve_tikhonov(system, g, 1e-8).f_hat, [16.0, 8.0], rtol=1e-8)

    gaps = [
        float(np.max(np.abs(solve_tikhonov(system, g, lam).f_hat - [16.0, 8.0]))) for lam in (1e-2, 1e-4, 1e-6, 1e-8)
    ]

    assert gaps == sorted(gaps, reverse=True)
    assert gaps[1] < 1e-4

    with pytest.raises(ValidationError):
        solve_tikhonov(system, g, 0.0)


def test_lambda_sweep_traces_an_l_curve() -> None:
    system = _system(laplace, 8, window)
    g = forward_apply(laplace, bump, system.xs)

    sweep = lambda_sweep(system, g)
    residuals = [res.residual for res in sweep]
    norms = [float(np.linalg.norm(res.solution)) for res in sweep]

    assert len(sweep) == 25
    assert [res.parameter for res in sweep] == sorted(res.parameter for res in sweep)

    for a, b in zip(residuals, residuals[1:]):
        assert b >= a - 1e-12

    for a, b in zip(norms, norms[1:]):
        assert b <= a * (1.0 + 1e-9)


def test_recovery_error_of_exact_and_zero_reconstructions() -> None:
    part = uniform_partition(unit, 5)

    assert recovery_error(np.ones(5), part, PolynomialFunction((1.0,))) == 0.0
    assert recovery_error(np.zeros(5), part, bump) == pytest.approx(1.0)


def test_local_recovery_from_a_window() -> None:
    clean = local_recover(laplace, bump, window, 12)

    assert clean.selection is LambdaSelection.CALIBRATION
    assert clean.method is SolveMethod.TIKHONOV
    assert clean.recovery_error < RECOVERY_BOUND
    assert clean.residual >= 0.0
    assert np.all((clean.nodes_x > 0.4) & (clean.nodes_x < 0.6))

    assert clean.parameter is not None
    assert clean.parameter > LAMBDA_SWEEP[6]

    noisy = local_recover(laplace, bump, window, 12, lam=clean.parameter, noise=1e-8, seed=3)

    assert noisy.selection is LambdaSelection.FIXED
    assert noisy.recovery_error < 2.0 * clean.recovery_error


def test_noise_spread_matches_sampled_perturbations() -> None:
    system = _system(laplace, 12, window)
    g = forward_apply(laplace, bump, system.xs)
    rng = np.random.default_rng(17)

    for lam in (1e-9, 1e-7, 1e-5):
        base = solve_tikhonov(system, g, lam).f_hat
        squares = []

        for _ in range(200):
            noisy = g * (1.0 + CALIBRATION_NOISE * rng.standard_normal(12))
            squares.append(float(system.volumes @ (solve_tikhonov(system, noisy, lam).f_hat - base) ** 2))

        spread = _noise_spread(system, g, lam, CALIBRATION_NOISE)

        assert np.sqrt(np.mean(squares)) == pytest.approx(spread, rel=0.35)


def test_discrepancy_principle_is_used_under_noise() -> None:
    report = local_recover(laplace, bump, window, 12, noise=1e-3, seed=1)

    assert report.selection is LambdaSelection.DISCREPANCY
    assert report.to_dict()['selection'] == 'discrepancy'


def test_recovery_rejects_bad_windows() -> None:
    with pytest.raises(SingularSystem):
        local_recover('euclidean-sq', PolynomialFunction((1.0,)), window, 4, method='direct')

    with pytest.raises(SubsetNotContained):
        local_recover(laplace, bump, OpenBox((0.5,), (1.5,)), 4)

    with pytest.raises(ValidationError):
        local_recover(laplace, bump, OpenBall((0.5,), 0.1), 4)


def test_truncated_recovery_defaults_to_the_numerical_rank() -> None:
    report = local_recover('euclidean-sq', PolynomialFunction((1.0,)), window, 6, method='tsvd')

    assert report.parameter == 3.0


def test_recovery_sweep_is_keyed_by_cell_count() -> None:
    reports = recovery_sweep(laplace, bump, window, [4, 8], lam=1e-6)

    assert list(reports) == [4, 8]
    assert [report.f_hat.size for report in reports.values()] == [4, 8]


def test_null_example_maps_the_exponential_to_a_constant() -> None:
    report = null_moment_check([-2.0, -1.0, -0.5, 0.0])

    assert report.exact_cancellation
    assert len(report.terms) == 30
    assert report.divergent == ()
    assert report.constancy_gap is not None and report.constancy_gap < 1e-8
    assert report.constant == pytest.approx(1.0, abs=1e-8)


def test_null_moment_check_flags_divergent_points() -> None:
    report = null_moment_check([1.0, -1.0, 0.5])

    assert report.xs == (-1.0, 0.5, 1.0)
    assert report.divergent == (0.5, 1.0)
    assert report.values[1:] == (None, None)
    assert report.values[0] == pytest.approx(1.0, abs=1e-8)

    only_divergent = null_moment_check([0.5])

    assert only_divergent.constant is None
    assert only_divergent.constancy_gap is None


def test_null_moment_table_serializes_integers_as_text() -> None:
    payload = null_moment_check([0.0], terms=12).to_dict()

    assert payload['exact_cancellation'] is True
    assert payload['terms'][11] == {
        's': 12, 'positive': '25852016738884976640000', 'negative': '25852016738884976640000', 'difference': 0
    }


def test_null_moment_check_arguments() -> None:
    with pytest.raises(ValidationError):
        null_moment_check([])

    with pytest.raises(ValidationError):
        null_moment_check([0.0], terms=0)

    with pytest.raises(ValidationError):
        null_moment_check([0.0], spec=KernelSpec.from_string('euclidean-sq'))


def test_test_function_strings() -> None:
    assert TestFunction.from_string('polynomial:1,0,2') == PolynomialFunction((1.0, 0.0, 2.0))
    assert TestFunction.from_string('exp-decay:rate=2') == ExpDecay(2.0)
    assert TestFunction.from_string('gaussian-bump:center=0.5,width=0.15') == bump

    for text in ('sinc', 'exp-decay:speed=2', 'gaussian-bump:width=-1', 'polynomial:a'):
        with pytest.raises(ValidationError):
            TestFunction.from_string(text)
