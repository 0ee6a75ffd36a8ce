from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from math import factorial
from typing import Any, ClassVar, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import lu_factor, lu_solve, svd, svdvals

from .domains import HalfLine, OpenBox, Partition, uniform_partition
from .exceptions import QuadratureNotConverged, SingularSystem, SubsetNotContained, ValidationError
from .helpers import composite_legendre, derive_rng, gauss_legendre, half_line_rule
from .kernels import KernelSpec
from .rank import numerical_rank
from .types import (
    InversionReport, KernelFamily, LambdaSelection, MomentRow, NullMomentReport, SolveMethod, SolveResult,
    TolerancePolicy
)

__all__ = [
    'TestFunction', 'ExpDecay', 'PolynomialFunction', 'GaussianBump',

    'DiscreteSystem',

    'assemble', 'forward_apply',
    'solve_direct', 'solve_tsvd', 'solve_tikhonov', 'lambda_sweep',
    'recovery_error', 'local_recover', 'recovery_sweep',
    'null_moment_check'
]

__abstract__ = [
    'TestFunction'
]

log = logging.getLogger(__name__)

QUAD_PANELS = 16
"""Panels of the composite forward rule."""

HALF_LINE_SPLIT = 40.0
"""Length of (a, a + split) covered by Gauss-Legendre panels before the Laguerre tail takes over."""

LAMBDA_SWEEP = np.logspace(-12.0, 0.0, 25)

DISCREPANCY_FACTOR = 1.5

CALIBRATION_NOISE = 1e-8
"""Relative data noise a calibrated lambda has to tolerate."""

NOISE_MARGIN = 0.4
"""Largest expected noise error allowed, as a fraction of the clean recovery error."""


class TestFunction(ABC):
    """Truth f on a one dimensional V."""

    kind: ClassVar[str]

    # keeps pytest from collecting it
    __test__ = False

    @abstractmethod
    def __call__(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        ...

    @classmethod
    def from_string(cls, text: str) -> TestFunction:
        """
        Parse ``exp-decay:rate=1``, ``polynomial:1,0,2`` (lowest degree first) or
        ``gaussian-bump:center=0.5,width=0.15``.
        """

        kind, _, rest = text.strip().partition(':')
        tokens = [t.strip() for t in rest.split(',') if t.strip()]

        try:
            if kind == PolynomialFunction.kind:
                return PolynomialFunction(tuple(float(t) for t in tokens) or (1.0,))

            params = {key.strip(): float(value) for key, _, value in (t.partition('=') for t in tokens)}

            if kind == ExpDecay.kind:
                return ExpDecay(**params)

            if kind == GaussianBump.kind:
                return GaussianBump(**params)
        except (TypeError, ValueError) as e:
            raise ValidationError('Bad test function "{text}": {error}', cls.from_string, text=text, error=e) from e

        raise ValidationError(
            'Unknown test function "{text}", expected exp-decay, polynomial or gaussian-bump!', cls.from_string,
            text=text
        )


@dataclass(frozen=True)
class ExpDecay(TestFunction):
    kind: ClassVar[str] = 'exp-decay'

    rate: float = 1.0

    def __call__(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.exp(-self.rate * y)


@dataclass(frozen=True)
class PolynomialFunction(TestFunction):
    kind: ClassVar[str] = 'polynomial'

    coeffs: tuple[float, ...] = (1.0,)
    """Power basis coefficients, lowest degree first."""

    def __call__(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.polynomial.polynomial.polyval(y, self.coeffs)  # type: ignore[no-any-return]


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    kind: ClassVar[str] = 'gaussian-bump'

    center: float = 0.5
    width: float = 0.15
    """Standard deviation of the bump."""

    def __post_init__(self) -> None:
        if not self.width > 0.0:
            raise ValidationError('Bump width must be positive, got {width}!', GaussianBump, width=self.width)

    def __call__(self, y: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.exp(-0.5 * ((y - self.center) / self.width) ** 2)


@dataclass(frozen=True)
class DiscreteSystem:
    """
    Quadrature discretization sum_j psi(x_i, y_j) f(y_j) vol(V_j) = g(x_i).

    ``kernel`` holds psi(x_i, y_j); the system matrix is ``matrix = kernel @ diag(volumes)``.
    Solves work on kernel @ u = g and return f = W u with W = diag(1 / vol).
    """

    spec: KernelSpec
    xs: NDArray[np.float64] = field(repr=False)
    ys: NDArray[np.float64] = field(repr=False)
    volumes: NDArray[np.float64] = field(repr=False)
    kernel: NDArray[np.float64] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.volumes)

    @property
    def matrix(self) -> NDArray[np.float64]:
        """A with A[i, j] = psi(x_i, y_j) vol(V_j)."""

        return self.kernel * self.volumes[None, :]

    @property
    def weights(self) -> NDArray[np.float64]:
        """W = diag(1 / vol(V_j))."""

        return np.diag(1.0 / self.volumes)

    def residual(self, f_hat: NDArray[np.float64], g: NDArray[np.float64]) -> float:
        """||A f_hat - g|| / ||g||."""

        norm = float(np.linalg.norm(g))
        return float(np.linalg.norm(self.matrix @ f_hat - g)) / (norm if norm > 0.0 else 1.0)

    def _result(self, solution: NDArray[np.float64], g: NDArray[np.float64], parameter: float | None) -> SolveResult:
        f_hat = solution / self.volumes
        return SolveResult(f_hat, solution, self.residual(f_hat, g), parameter)


def assemble(spec: KernelSpec | str, part_u: Partition, part_v: Partition) -> DiscreteSystem:
    """Build the k x k system on the cell centers of two partitions with the same cell count."""

    spec = KernelSpec.from_param(spec)

    if len(part_u) != len(part_v):
        raise ValidationError(
            'Partitions must have the same number of cells, got {ku} and {kv}!', assemble,
            ku=len(part_u), kv=len(part_v)
        )

    kernel = spec.values(part_u.reps, part_v.reps)

    return DiscreteSystem(spec, part_u.reps, part_v.reps, np.asarray(part_v.volumes, dtype=np.float64), kernel)


def _rule(spec: KernelSpec, nodes: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    v = spec.domain_v

    if isinstance(v, OpenBox) and v.dim == 1:
        return composite_legendre(v.lo[0], v.hi[0], QUAD_PANELS, nodes)

    if isinstance(v, HalfLine):
        return half_line_rule(v.a, HALF_LINE_SPLIT, QUAD_PANELS, nodes)

    raise ValidationError('Forward integrals need a one dimensional V, got {domain}!', forward_apply, domain=v)


def _integrate(spec: KernelSpec, f: TestFunction, xs: ArrayLike, nodes: int) -> NDArray[np.float64]:
    ys, ws = _rule(spec, nodes)
    return spec.values(xs, ys) @ (ws * f(ys))


def forward_apply(
    spec: KernelSpec | str, f: TestFunction, x_targets: ArrayLike, quad_nodes: int = 64, check: bool = True,
    rtol: float = 1e-10, max_nodes: int = 1024
) -> NDArray[np.float64]:
    """
    g(x) = int_V psi(x, y) f(y) dy at every target.

    :param spec:            Kernel; V must be a one dimensional box or a half line.
    :param f:               Truth to integrate against.
    :param x_targets:       Points of U.
    :param quad_nodes:      Gauss nodes per panel of the 16 panel composite rule.
    :param check:           Double the nodes until two successive results agree to ``rtol``.
    :param rtol:            Relative self-convergence tolerance.
    :param max_nodes:       Node cap per panel for the self-check.

    :return:                g at each target.
    """

    spec = KernelSpec.from_param(spec)

    if quad_nodes < 2:
        raise ValidationError('Need at least 2 quadrature nodes, got {nodes}!', forward_apply, nodes=quad_nodes)

    nodes = quad_nodes
    g = _integrate(spec, f, x_targets, nodes)

    if not check:
        return g

    while True:
        finer = _integrate(spec, f, x_targets, 2 * nodes)
        change = float(np.max(np.abs(finer - g))) / max(float(np.max(np.abs(finer))), np.finfo(float).tiny)

        if change <= rtol:
            return finer

        nodes *= 2

        if 2 * nodes > max_nodes:
            raise QuadratureNotConverged(forward_apply, nodes, change)

        g = finer


def solve_direct(
    system: DiscreteSystem, g: ArrayLike, policy: TolerancePolicy = TolerancePolicy()
) -> SolveResult:
    """f_hat = W A^-1 g through an LU factorization, refusing numerically singular systems."""

    g = np.asarray(g, dtype=np.float64)
    rank = numerical_rank(system.kernel, policy).rank

    if rank < system.size:
        raise SingularSystem(solve_direct, rank, system.size)

    solution = lu_solve(lu_factor(system.kernel), g)

    return system._result(solution, g, None)


def solve_tsvd(system: DiscreteSystem, g: ArrayLike, r: int) -> SolveResult:
    """Pseudo-inverse truncated to the r leading singular triplets, zero singular values skipped."""

    g = np.asarray(g, dtype=np.float64)

    if not 1 <= r <= system.size:
        raise ValidationError('Retained modes must be in [1, {k}], got {r}!', solve_tsvd, r=r, k=system.size)

    u, s, vt = svd(system.kernel)
    s = s[:r]

    coefficients = np.divide(u[:, :r].T @ g, s, out=np.zeros(r), where=s > 0.0)

    return system._result(vt[:r].T @ coefficients, g, float(r))


def solve_tikhonov(system: DiscreteSystem, g: ArrayLike, lam: float) -> SolveResult:
    """Minimizer of ||K u - g||^2 + lam^2 ||u||^2, then weighted by W."""

    g = np.asarray(g, dtype=np.float64)

    if not lam > 0.0:
        raise ValidationError('lambda must be positive, got {lam}!', solve_tikhonov, lam=lam)

    u, s, vt = svd(system.kernel)

    return system._result(vt.T @ (s / (s * s + lam * lam) * (u.T @ g)), g, float(lam))


def lambda_sweep(
    system: DiscreteSystem, g: ArrayLike, lams: Sequence[float] | NDArray[np.float64] = LAMBDA_SWEEP
) -> list[SolveResult]:
    """Tikhonov solutions over a lambda grid, in grid order; residuals and norms give the L-curve."""

    return [solve_tikhonov(system, g, float(lam)) for lam in lams]


def recovery_error(
    f_hat: NDArray[np.float64], part_v: Partition, f_true: TestFunction, nodes: int = 32
) -> float:
    """Relative L2 distance between the piecewise constant f_hat and the truth, cell by cell."""

    x, w = gauss_legendre(nodes)

    err = norm = 0.0

    for value, cell in zip(f_hat, part_v.cells):
        lo, hi = cell.lo[0], cell.hi[0]
        half = 0.5 * (hi - lo)
        truth = f_true(0.5 * (hi + lo) + half * x)

        err += half * float(w @ (value - truth) ** 2)
        norm += half * float(w @ truth ** 2)

    return float(np.sqrt(err / norm)) if norm > 0.0 else float(np.sqrt(err))


def _truth_norm(part_v: Partition, f_true: TestFunction, nodes: int = 32) -> float:
    x, w = gauss_legendre(nodes)

    total = 0.0

    for cell in part_v.cells:
        lo, hi = cell.lo[0], cell.hi[0]
        half = 0.5 * (hi - lo)
        total += half * float(w @ f_true(0.5 * (hi + lo) + half * x) ** 2)

    return float(np.sqrt(total))


def _noise_spread(system: DiscreteSystem, g: NDArray[np.float64], lam: float, noise: float) -> float:
    """Root mean square L2 change of f_hat when each g_i is scaled by 1 + noise * N(0, 1)."""

    u, s, vt = svd(system.kernel)

    gain = (vt.T * (s / (s * s + lam * lam))) @ u.T
    gain = gain / system.volumes[:, None] * g[None, :]

    return noise * float(np.sqrt(system.volumes @ (gain * gain).sum(axis=1)))


def _select_lambda(
    system: DiscreteSystem, g: NDArray[np.float64], part_v: Partition, f_true: TestFunction, noise: float
) -> tuple[SolveResult, LambdaSelection]:
    sweep = lambda_sweep(system, g)

    if noise > 0.0:
        admissible = [res for res in sweep if res.residual <= DISCREPANCY_FACTOR * noise]
        return (admissible[-1] if admissible else sweep[0]), LambdaSelection.DISCREPANCY

    truth = _truth_norm(part_v, f_true)
    errors = np.array([recovery_error(res.f_hat, part_v, f_true) for res in sweep])
    spreads = np.array([
        _noise_spread(system, g, float(lam), CALIBRATION_NOISE) / (truth if truth > 0.0 else 1.0)
        for lam in LAMBDA_SWEEP
    ])

    # smallest clean error among the lambdas CALIBRATION_NOISE cannot swamp
    stable = spreads <= NOISE_MARGIN * errors

    if not np.any(stable):
        log.warning(
            'No lambda in the sweep is stable under %.0e relative noise, keeping the largest', CALIBRATION_NOISE
        )
        return sweep[-1], LambdaSelection.CALIBRATION

    best = int(np.argmin(np.where(stable, errors, np.inf)))

    log.debug(
        'calibrated lambda %.3e: recovery error %.3e, noise spread %.3e', sweep[best].parameter, errors[best],
        spreads[best]
    )

    return sweep[best], LambdaSelection.CALIBRATION


def local_recover(
    spec: KernelSpec | str, f_true: TestFunction, window: OpenBox, k: int,
    method: SolveMethod | str = SolveMethod.TIKHONOV, lam: float | None = None, r: int | None = None,
    quad_nodes: int = 64, seed: int = 0, noise: float = 0.0, policy: TolerancePolicy = TolerancePolicy()
) -> InversionReport:
    """
    Recover f on V from g measured at k cell centers of a window of U only.

    g comes from :py:func:`forward_apply` on its own quadrature grid, independent of the
    k cell discretization. With ``noise`` > 0 each g_i is multiplied by 1 + noise * N(0, 1)
    drawn from ``derive_rng(seed)``. Tikhonov without ``lam`` sweeps 25 values in
    [1e-12, 1]: the discrepancy principle picks one when noise is declared, otherwise the
    value with the smallest recovery error is kept among those whose expected
    error under CALIBRATION_NOISE relative data noise stays below NOISE_MARGIN times the
    clean one (calibration runs only).

    :return:        Report with residual, recovery error, the chosen parameter and the vectors.
    """

    spec = KernelSpec.from_param(spec)
    method = SolveMethod(method)

    if not isinstance(window, OpenBox) or window.dim != 1:
        raise ValidationError('Recovery windows are one dimensional boxes, got {window}!', local_recover, window=window)

    if not spec.domain_u.encloses(window):
        raise SubsetNotContained(local_recover, window, spec.domain_u)

    if not isinstance(spec.domain_v, OpenBox) or spec.domain_v.dim != 1:
        raise ValidationError('Recovery needs a bounded one dimensional V, got {v}!', local_recover, v=spec.domain_v)

    if k < 1 or noise < 0.0:
        raise ValidationError('Need k >= 1 and noise >= 0, got {k} and {noise}!', local_recover, k=k, noise=noise)

    part_u, part_v = uniform_partition(window, k), uniform_partition(spec.domain_v, k)

    g = forward_apply(spec, f_true, part_u.reps, quad_nodes)

    if noise > 0.0:
        g = g * (1.0 + noise * derive_rng(seed).standard_normal(k))

    system = assemble(spec, part_u, part_v)
    selection = LambdaSelection.FIXED

    if method is SolveMethod.DIRECT:
        result = solve_direct(system, g, policy)
    elif method is SolveMethod.TSVD:
        result = solve_tsvd(system, g, r if r is not None else max(numerical_rank(system.kernel, policy).rank, 1))
    elif lam is not None:
        result = solve_tikhonov(system, g, lam)
    else:
        result, selection = _select_lambda(system, g, part_v, f_true, noise)

    singular = svdvals(system.matrix)

    report = InversionReport(
        kernel=str(spec), k=k, method=method, parameter=result.parameter, selection=selection,
        condition_number=float(singular[0] / singular[-1]) if singular[-1] > 0.0 else float('inf'),
        residual=result.residual, recovery_error=recovery_error(result.f_hat, part_v, f_true),
        window=(window.lo, window.hi), seed=seed, noise=noise, quad_nodes=quad_nodes,
        nodes_x=part_u.reps[:, 0], nodes_y=part_v.reps[:, 0], g=g, f_hat=result.f_hat
    )

    log.info(
        'local_recover %s k=%d %s(%s, %s): residual %.3e, recovery error %.3e', spec, k, method,
        result.parameter, selection, report.residual, report.recovery_error
    )

    return report


def recovery_sweep(
    spec: KernelSpec | str, f_true: TestFunction, window: OpenBox, ks: Sequence[int], **kwargs: Any
) -> dict[int, InversionReport]:
    """One :py:func:`local_recover` per cell count, keyed by k."""

    return {k: local_recover(spec, f_true, window, k, **kwargs) for k in ks}


def null_moment_check(
    x_grid: Sequence[float], terms: int = 30, quad_nodes: int = 64, spec: KernelSpec | None = None
) -> NullMomentReport:
    """
    Check that the null-example operator maps e^-y to a constant.

    The x^s coefficient of the integral is (2s)! / (2s) - (2s - 1)!, computed in integers
    for s <= ``terms``. The quadrature side covers the x <= 0 part of the grid; for x > 0
    the integrand grows like e^(x y^2) and those points are reported as divergent.
    """

    if terms < 1:
        raise ValidationError('Need at least one term, got {terms}!', null_moment_check, terms=terms)

    xs = sorted(float(x) for x in x_grid)

    if not xs:
        raise ValidationError('The x grid is empty!', null_moment_check)

    if spec is None:
        spec = KernelSpec(KernelFamily.NULL_EXAMPLE, lo=min(xs[0], 0.0) - 1.0, hi=max(xs[-1], 0.0) + 1.0)
    elif spec.family is not KernelFamily.NULL_EXAMPLE:
        raise ValidationError(
            'null_moment_check needs the null-example kernel, got {spec}!', null_moment_check, spec=str(spec)
        )

    rows = tuple(MomentRow(s, factorial(2 * s) // (2 * s), factorial(2 * s - 1)) for s in range(1, terms + 1))

    convergent = [x for x in xs if x <= 0.0]
    divergent = tuple(x for x in xs if x > 0.0)

    values = dict[float, float]()

    if convergent:
        g = forward_apply(spec, ExpDecay(1.0), np.array(convergent), quad_nodes)
        values = dict(zip(convergent, map(float, g)))

    measured = list(values.values())

    report = NullMomentReport(
        terms=rows, xs=tuple(xs), values=tuple(values.get(x) for x in xs), divergent=divergent,
        constant=float(np.mean(measured)) if measured else None,
        constancy_gap=float(max(measured) - min(measured)) if measured else None,
        quad_nodes=quad_nodes
    )

    if divergent:
        log.info('null_moment_check: integral diverges at x = %s', divergent)

    log.info('null_moment_check: constant %s, gap %s', report.constant, report.constancy_gap)

    return report
