from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from math import comb, factorial, pi
from typing import Any, NamedTuple, TypeAlias

import numpy as np
from numpy.typing import NDArray

from .exceptions import ValidationError
from .helpers import to_jsonable

__all__ = [
    'Point', 'PointArray',

    'KernelFamily', 'DotProfile',
    'SolveMethod', 'LambdaSelection', 'LLIVerdict', 'OutputFormat',

    'TolerancePolicy', 'RankResult',
    'RankReport', 'FiniteRankEstimate', 'WitnessSearch', 'LLIProbe',

    'JetCheckRow', 'FiniteDiffReport', 'OddEvenReport', 'PolyFit',

    'SolveResult', 'InversionReport', 'MomentRow', 'NullMomentReport'
]

Point: TypeAlias = NDArray[np.float64]
"""A single location, a 1-D float array of the ambient dimension."""

PointArray: TypeAlias = NDArray[np.float64]
"""Several locations stacked along the first axis, shape (count, ambient dimension)."""


class KernelFamily(StrEnum):
    """Closed registry of kernel families, keyed by their command line names."""

    EUCLIDEAN_SQ = 'euclidean-sq'
    """Squared euclidean distance, finite rank n + 2."""

    CIRCULAR_SQ = 'circular-sq'
    """Squared difference of angles on (0, 2pi), finite rank 3."""

    SPHERE_GEO = 'sphere-geo'
    """Great circle distance on the unit n-sphere."""

    SPHERE_GEO_SQ = 'sphere-geo-sq'
    """Squared great circle distance on the unit n-sphere."""

    DOT = 'dot'
    """h(x . y) for an analytic profile h."""

    INDICATOR = 'indicator'
    """Disjoint-cell indicator series, rank deficient with positive probability."""

    NULL_EXAMPLE = 'null-example'
    """Full rank a.e. kernel on R x (0, inf) whose operator annihilates every x-dependent moment."""

    @property
    def is_spherical(self) -> bool:
        """Whether points of this family live on a unit sphere."""

        return self in {KernelFamily.SPHERE_GEO, KernelFamily.SPHERE_GEO_SQ}

    @property
    def is_symmetric(self) -> bool:
        """Whether eval(x, y) == eval(y, x) holds exactly."""

        return self in {
            KernelFamily.EUCLIDEAN_SQ, KernelFamily.CIRCULAR_SQ, KernelFamily.SPHERE_GEO,
            KernelFamily.SPHERE_GEO_SQ, KernelFamily.DOT
        }

    @property
    def parameters(self) -> frozenset[str]:
        """Parameter names accepted in the ``family:param=value`` string form."""

        if self is KernelFamily.EUCLIDEAN_SQ:
            return frozenset({'n', 'lo', 'hi'})
        if self is KernelFamily.CIRCULAR_SQ or self is KernelFamily.INDICATOR:
            return frozenset({'lo', 'hi'})
        if self.is_spherical:
            return frozenset({'n'})
        if self is KernelFamily.DOT:
            return frozenset({'h', 'n', 'lo', 'hi'})

        return frozenset({'lo', 'hi', 'rate', 'terms'})


class DotProfile(StrEnum):
    """Analytic profiles h of the dot-product family h(x . y)."""

    EXP_NEG = 'exp-neg'
    COS = 'cos'
    ARCCOS = 'arccos'

    def __call__(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        if self is DotProfile.EXP_NEG:
            return np.exp(-z)
        if self is DotProfile.COS:
            return np.cos(z)
        return np.arccos(z)

    def taylor_coefficient(self, s: int) -> float:
        """h^(s)(0) / s!"""

        if self is DotProfile.EXP_NEG:
            return (-1) ** s / factorial(s)

        if self is DotProfile.COS:
            return (1, 0, -1, 0)[s % 4] / factorial(s)

        if s == 0:
            return pi / 2

        if s % 2 == 0:
            return 0.0

        j = (s - 1) // 2

        return -comb(2 * j, j) / (4 ** j * (2 * j + 1))


class SolveMethod(StrEnum):
    """Inversion method for a discrete Fredholm system."""

    DIRECT = 'direct'
    TSVD = 'tsvd'
    TIKHONOV = 'tikhonov'


class LambdaSelection(StrEnum):
    """How the Tikhonov parameter of a recovery was chosen."""

    FIXED = 'fixed'
    """Given by the caller."""

    CALIBRATION = 'calibration'
    """Minimum recovery error over the sweep, only possible when the truth is known."""

    DISCREPANCY = 'discrepancy'
    """Largest lambda whose residual stays under the declared noise level."""


class LLIVerdict(StrEnum):
    WITNESS_FOUND = 'witness_found'
    NO_WITNESS_IN_BUDGET = 'no_witness_in_budget'


class OutputFormat(StrEnum):
    JSON = 'json'
    CSV = 'csv'


@dataclass(frozen=True)
class TolerancePolicy:
    """Floating point surrogate for exact matrix rank."""

    rel_threshold: float = 1e-10
    """Singular values above rel_threshold * sigma_max count towards the rank."""

    strict_threshold: float = 1e-13
    """Audit threshold, deficiencies below it are exact up to rounding."""

    abs_floor: float = 1e-300
    """A matrix whose largest singular value is below this has rank 0."""

    equilibrate: bool = True
    """Balance rows and columns with power-of-two factors before the SVD."""

    def __post_init__(self) -> None:
        if not 0.0 < self.rel_threshold < 1.0:
            raise ValidationError(
                'rel_threshold must be in (0, 1), got {value}!', TolerancePolicy, value=self.rel_threshold
            )

        if not 0.0 < self.strict_threshold <= self.rel_threshold:
            raise ValidationError(
                'strict_threshold must be in (0, rel_threshold], got {value}!', TolerancePolicy,
                value=self.strict_threshold
            )

        if self.abs_floor < 0.0:
            raise ValidationError('abs_floor must be non-negative!', TolerancePolicy)

    def rank_of(self, singular_values: NDArray[np.float64], threshold: float | None = None) -> int:
        """Count singular values above the relative threshold (or a given one)."""

        if singular_values.size == 0 or singular_values[0] <= self.abs_floor:
            return 0

        cut = (self.rel_threshold if threshold is None else threshold) * singular_values[0]

        return int(np.count_nonzero(singular_values > cut))


class RankResult(NamedTuple):
    """Numerical rank together with the singular values it was read from."""

    rank: int
    singular_values: NDArray[np.float64]

    @property
    def ratios(self) -> NDArray[np.float64]:
        """sigma_i / sigma_max, zeros for the zero matrix."""

        if self.singular_values.size == 0 or self.singular_values[0] == 0.0:
            return np.zeros_like(self.singular_values)

        return self.singular_values / self.singular_values[0]


@dataclass(frozen=True)
class RankReport:
    """Outcome of a seeded Monte Carlo full-rank probe."""

    kernel: str
    k: int
    trials: int
    seed: int
    policy: TolerancePolicy

    deficiency_count: int
    """Trials whose numerical rank fell below k."""

    strict_deficiency_count: int
    """Trials that were deficient even under the strict threshold."""

    singular_min_quantiles: tuple[float, float, float]
    """(p5, p50, p95) of sigma_min / sigma_max."""

    rank_histogram: dict[int, int]
    shared_nodes: bool = False

    @property
    def deficiency_fraction(self) -> float:
        return self.deficiency_count / self.trials

    @property
    def verdict(self) -> str:
        if self.deficiency_count == 0:
            return 'consistent with full rank a.e.'

        return 'rank deficient with positive frequency'

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self) | {'deficiency_fraction': self.deficiency_fraction, 'verdict': self.verdict}


@dataclass(frozen=True)
class FiniteRankEstimate:
    """Per-k maximum observed rank and the plateau read from it."""

    kernel: str
    k_max: int
    trials_per_k: int
    seed: int
    policy: TolerancePolicy

    profile: tuple[int, ...]
    """profile[k - 1] is the largest rank observed among the k x k trials."""

    rank: int | None
    """Plateau value, None when the profile does not stall below k_max."""

    plateau_length: int
    """Number of consecutive k > rank observed at exactly rank."""

    excess_ratio: float | None
    """Worst sigma_{rank+1} / sigma_max among the oversized trials."""

    @property
    def lower_bound(self) -> int:
        return self.rank if self.rank is not None else max(self.profile)

    @property
    def label(self) -> str:
        return str(self.rank) if self.rank is not None else f'>= {self.k_max}'

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self) | {'label': self.label}


@dataclass(frozen=True)
class WitnessSearch:
    """Greedy witness search result; the failure case is a value, not an error."""

    found: bool
    rank: int
    size: int
    points: PointArray = field(repr=False)
    """Best points found, one per subset."""

    sigma_ratio: float
    """sigma_min / sigma_max of the final function-by-point matrix."""

    budget: int
    seed: int

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self) | {'points': to_jsonable(self.points)}


@dataclass(frozen=True)
class LLIProbe:
    verdict: LLIVerdict
    window: str
    search: WitnessSearch

    def to_dict(self) -> dict[str, Any]:
        return {'verdict': self.verdict.value, 'window': self.window, 'search': self.search.to_dict()}


class JetCheckRow(NamedTuple):
    """One order of a jet against finite differences of the kernel."""

    order: int
    coefficient: float
    finite_diff: float | None
    rel_err: float | None


@dataclass(frozen=True)
class FiniteDiffReport:
    rows: tuple[JetCheckRow, ...]

    @property
    def worst(self) -> float:
        """Largest scaled discrepancy over the checked orders, 0 when none was checked."""

        return max((row.rel_err for row in self.rows if row.rel_err is not None), default=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {'rows': to_jsonable(self.rows), 'worst': self.worst}


@dataclass(frozen=True)
class OddEvenReport:
    on_axis: bool
    """Whether the first chart coordinate of x is zero."""

    max_odd: float
    """Largest magnitude among the odd jet coefficients, 0 when there are none."""

    even: NDArray[np.float64] = field(repr=False)
    tolerance: float = 1e-10

    @property
    def holds(self) -> bool:
        return self.on_axis and self.max_odd < self.tolerance

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self) | {'even': to_jsonable(self.even), 'holds': self.holds}


class PolyFit(NamedTuple):
    """Power-basis coefficients, lowest degree first, and the max-abs residual."""

    coefficients: NDArray[np.float64]
    residual: float


class SolveResult(NamedTuple):
    """Solution of a discrete system, both as cell values and in the scaled unknown."""

    f_hat: NDArray[np.float64]
    """Cell values of the recovered function, W applied."""

    solution: NDArray[np.float64]
    """Unknown of the kernel system K x = g before weighting."""

    residual: float
    """||A f_hat - g|| / ||g||."""

    parameter: float | None
    """lambda for Tikhonov, retained modes for TSVD, None for direct solves."""


@dataclass(frozen=True)
class InversionReport:
    """Outcome of a windowed recovery experiment."""

    kernel: str
    k: int
    method: SolveMethod
    parameter: float | None
    selection: LambdaSelection
    condition_number: float
    residual: float
    recovery_error: float
    window: tuple[tuple[float, ...], tuple[float, ...]]
    seed: int
    noise: float
    quad_nodes: int

    nodes_x: NDArray[np.float64] = field(repr=False)
    nodes_y: NDArray[np.float64] = field(repr=False)
    g: NDArray[np.float64] = field(repr=False)
    f_hat: NDArray[np.float64] = field(repr=False)

    def to_dict(self) -> dict[str, Any]:
        return to_jsonable(self) | {
            'nodes_x': to_jsonable(self.nodes_x), 'nodes_y': to_jsonable(self.nodes_y),
            'g': to_jsonable(self.g), 'f_hat': to_jsonable(self.f_hat)
        }


class MomentRow(NamedTuple):
    """x^s coefficient of the null-example operator applied to e^-y, in integers."""

    s: int
    positive: int
    """(2s)! / (2s), the y^{2s} / (2s) moment."""

    negative: int
    """(2s - 1)!, the y^{2s - 1} moment."""

    @property
    def difference(self) -> int:
        return self.positive - self.negative


@dataclass(frozen=True)
class NullMomentReport:
    terms: tuple[MomentRow, ...] = field(repr=False)
    xs: tuple[float, ...]
    values: tuple[float | None, ...]
    """Quadrature value of the operator applied to e^-y, None where the integral diverges."""

    divergent: tuple[float, ...]
    constant: float | None
    constancy_gap: float | None
    quad_nodes: int

    @property
    def exact_cancellation(self) -> bool:
        return all(row.difference == 0 for row in self.terms)

    def to_dict(self) -> dict[str, Any]:
        rows = [
            {'s': row.s, 'positive': str(row.positive), 'negative': str(row.negative), 'difference': row.difference}
            for row in self.terms
        ]

        return to_jsonable(self) | {'terms': rows, 'exact_cancellation': self.exact_cancellation}
