from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import svdvals

from .domains import Domain, OpenBall, OpenBox, as_points
from .exceptions import SubsetNotContained, ValidationError
from .helpers import derive_rng, equilibrate
from .kernels import KernelSpec
from .series import SliceSpec, jet_propagate
from .types import (
    FiniteRankEstimate, LLIProbe, LLIVerdict, PointArray, RankReport, RankResult, TolerancePolicy, WitnessSearch
)

__all__ = [
    'numerical_rank',

    'FunctionFamily',
    'PowerFamily', 'TranslatedPowerFamily', 'ExpNegOverXFamily', 'KernelRowFamily', 'TaylorFunctionFamily',

    'fullrank_mc', 'finite_rank_estimate',
    'constrained_fullrank_search', 'fullrank_witness', 'lli_probe',
    'taylor_span_rank'
]

__abstract__ = [
    'FunctionFamily'
]

log = logging.getLogger(__name__)

K_CAP = 50
"""Largest matrix size the Monte Carlo probes accept by default."""

_T = TypeVar('_T')


def numerical_rank(matrix: ArrayLike, policy: TolerancePolicy = TolerancePolicy()) -> RankResult:
    """
    Rank as the count of singular values above ``policy.rel_threshold * sigma_max``.

    With ``policy.equilibrate`` the matrix is first balanced by exact power-of-two row and
    column scalings, which leave the exact rank untouched.
    """

    values = np.asarray(matrix, dtype=np.float64)

    if values.ndim != 2:
        raise ValidationError('Expected a matrix, got shape {shape}!', numerical_rank, shape=values.shape)

    if not np.all(np.isfinite(values)):
        raise ValidationError('Matrix has non-finite entries!', numerical_rank)

    if values.size == 0:
        return RankResult(0, np.zeros(0))

    if policy.equilibrate:
        values = equilibrate(values)

    singular = svdvals(values, check_finite=False)

    return RankResult(policy.rank_of(singular), singular)


class FunctionFamily(ABC):
    """A finite list of real functions on a common domain."""

    @property
    @abstractmethod
    def domain(self) -> Domain:
        ...

    @property
    @abstractmethod
    def size(self) -> int:
        ...

    @abstractmethod
    def values(self, points: ArrayLike) -> NDArray[np.float64]:
        """(size, count) matrix with the value of function i at point j."""


@dataclass(frozen=True)
class PowerFamily(FunctionFamily):
    """Monomials x^e for a list of multi-indices e."""

    exponents: tuple[tuple[int, ...], ...]
    region: Domain = field(default_factory=lambda: OpenBox((0.0,), (1.0,)))

    @classmethod
    def monomials(cls, degrees: Iterable[int], region: Domain | None = None) -> PowerFamily:
        """One dimensional powers x^d."""

        region = region or OpenBox((0.0,), (1.0,))
        return cls(tuple((d,) for d in degrees), region)

    @property
    def domain(self) -> Domain:
        return self.region

    @property
    def size(self) -> int:
        return len(self.exponents)

    def _shifted(self, points: PointArray) -> PointArray:
        return points

    def values(self, points: ArrayLike) -> NDArray[np.float64]:
        pts = self._shifted(as_points(points, self.region.ambient_dim))
        powers = np.array(self.exponents, dtype=np.float64)

        return np.prod(pts[None, :, :] ** powers[:, None, :], axis=-1)


@dataclass(frozen=True)
class TranslatedPowerFamily(PowerFamily):
    """Monomials (x - center)^e."""

    center: tuple[float, ...] = (0.0,)

    def _shifted(self, points: PointArray) -> PointArray:
        return points - np.array(self.center)


@dataclass(frozen=True)
class ExpNegOverXFamily(FunctionFamily):
    """
    f_s(x) = exp(-s / x) for x > 0 and 0 otherwise.

    Every member is smooth on the line, linearly independent on the positive half and
    identically zero on the negative half.
    """

    rates: tuple[float, ...]
    region: Domain = field(default_factory=lambda: OpenBox((-1.0,), (1.0,)))

    @property
    def domain(self) -> Domain:
        return self.region

    @property
    def size(self) -> int:
        return len(self.rates)

    def values(self, points: ArrayLike) -> NDArray[np.float64]:
        x = as_points(points, 1)[:, 0]
        positive = x > 0.0
        safe = np.where(positive, x, 1.0)

        return np.where(positive[None, :], np.exp(-np.array(self.rates)[:, None] / safe[None, :]), 0.0)


@dataclass(frozen=True)
class KernelRowFamily(FunctionFamily):
    """y -> psi(x_i, y) for frozen x_i."""

    spec: KernelSpec
    xs: PointArray = field(compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'xs', self.spec.domain_u.check(self.xs, KernelRowFamily))

    @property
    def domain(self) -> Domain:
        return self.spec.domain_v

    @property
    def size(self) -> int:
        return len(self.xs)

    def values(self, points: ArrayLike) -> NDArray[np.float64]:
        return self.spec.values(self.xs, points)


@dataclass(frozen=True)
class TaylorFunctionFamily(FunctionFamily):
    """
    Taylor functions x -> c_s(x) of a kernel along a slice p + t * direction of V.

    For sphere kernels x ranges over the hemisphere chart. For the indicator kernel the
    c_s are exact: C(s(x), q) p^(s(x) - q) / s(x)!, constant on every cell of x.
    """

    spec: KernelSpec
    p: tuple[float, ...]
    direction: tuple[float, ...]
    orders: tuple[int, ...]
    radius: float = 0.1

    def __post_init__(self) -> None:
        if not self.orders or min(self.orders) < 0:
            raise ValidationError('Orders must be a non-empty list of non-negative integers!', TaylorFunctionFamily)

    @property
    def domain(self) -> Domain:
        if self.spec.family.is_spherical:
            assert self.spec.n is not None
            return OpenBall.unit(self.spec.n)

        return self.spec.domain_u

    @property
    def size(self) -> int:
        return len(self.orders)

    def values(self, points: ArrayLike) -> NDArray[np.float64]:
        pts = as_points(points, self.domain.ambient_dim)
        order = max(self.orders)

        columns = [
            jet_propagate(self.spec, SliceSpec(tuple(x), self.p, self.direction, order, self.radius)).coeffs
            for x in pts
        ]

        return np.array(columns).T[list(self.orders)] if columns else np.zeros((self.size, 0))


def _map(fn: Callable[[int], _T], indices: Sequence[int], workers: int) -> list[_T]:
    if workers <= 1:
        return [fn(i) for i in indices]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices))


def _check_subsets(subsets: Sequence[Domain] | None, domain: Domain, k: int, func: Callable[..., object]) -> None:
    if subsets is None:
        return

    if len(subsets) != k:
        raise ValidationError('Expected {k} subsets, got {count}!', func, k=k, count=len(subsets))

    for subset in subsets:
        if not domain.encloses(subset):
            raise SubsetNotContained(func, subset, domain)


def _draw(domain: Domain, subsets: Sequence[Domain] | None, rng: np.random.Generator, k: int) -> PointArray:
    if subsets is None:
        return domain.sample(rng, k)

    return np.vstack([subset.sample(rng, 1) for subset in subsets])


def _sample_matrix(
    spec: KernelSpec, rng: np.random.Generator, k: int, subsets_u: Sequence[Domain] | None = None,
    subsets_v: Sequence[Domain] | None = None, shared_nodes: bool = False
) -> NDArray[np.float64]:
    # x draws come first, then y draws, from the same stream
    xs = _draw(spec.domain_u, subsets_u, rng, k)
    ys = xs if shared_nodes else _draw(spec.domain_v, subsets_v, rng, k)

    return spec.values(xs, ys)


def _ratio_min(result: RankResult) -> float:
    ratios = result.ratios
    return float(ratios[-1]) if ratios.size else 0.0


def fullrank_mc(
    spec: KernelSpec | str, k: int, trials: int, seed: int = 0, policy: TolerancePolicy = TolerancePolicy(),
    subsets_u: Sequence[Domain] | None = None, subsets_v: Sequence[Domain] | None = None,
    shared_nodes: bool = False, workers: int = 1, k_cap: int = K_CAP
) -> RankReport:
    """
    Count rank deficient kernel matrices over seeded random trials.

    Trial t draws x_1..x_k from U (or x_i from subsets_u[i]) and y_1..y_k from V (or from
    subsets_v) out of the stream ``derive_rng(seed, t)``, so the report does not depend on
    ``workers``.

    :param spec:            Kernel to probe.
    :param k:               Matrix size.
    :param trials:          Number of independent trials.
    :param seed:            Master seed.
    :param policy:          Rank policy.
    :param subsets_u:       Optional open subsets U_i, one per row.
    :param subsets_v:       Optional open subsets V_j, one per column.
    :param shared_nodes:    Use y_j = x_j; needs U = V and no subsets_v.
    :param workers:         Threads to spread trials over.
    :param k_cap:           Largest accepted k.

    :return:                Deficiency counts under both thresholds and sigma_min / sigma_max quantiles.
    """

    spec = KernelSpec.from_param(spec)

    if not 1 <= k <= k_cap:
        raise ValidationError('k must be in [1, {cap}], got {k}!', fullrank_mc, k=k, cap=k_cap)

    if trials < 1:
        raise ValidationError('Need at least one trial, got {trials}!', fullrank_mc, trials=trials)

    if shared_nodes and (spec.domain_u != spec.domain_v or subsets_v is not None):
        raise ValidationError('Shared nodes need U = V and no separate V subsets!', fullrank_mc)

    _check_subsets(subsets_u, spec.domain_u, k, fullrank_mc)
    _check_subsets(subsets_v, spec.domain_v, k, fullrank_mc)

    log.debug('fullrank_mc %s k=%d trials=%d seed=%d workers=%d', spec, k, trials, seed, workers)

    def trial(t: int) -> tuple[int, int, float]:
        matrix = _sample_matrix(spec, derive_rng(seed, t), k, subsets_u, subsets_v, shared_nodes)
        result = numerical_rank(matrix, policy)

        return result.rank, policy.rank_of(result.singular_values, policy.strict_threshold), _ratio_min(result)

    outcomes = _map(trial, range(trials), workers)

    ranks = [rank for rank, _, _ in outcomes]
    ratios = np.array([ratio for _, _, ratio in outcomes])
    p5, p50, p95 = np.quantile(ratios, [0.05, 0.5, 0.95])

    report = RankReport(
        kernel=str(spec), k=k, trials=trials, seed=seed, policy=policy,
        deficiency_count=sum(rank < k for rank in ranks),
        strict_deficiency_count=sum(strict < k for _, strict, _ in outcomes),
        singular_min_quantiles=(float(p5), float(p50), float(p95)),
        rank_histogram=dict(sorted(Counter(ranks).items())),
        shared_nodes=shared_nodes
    )

    log.info('%s k=%d: %d/%d deficient, %s', spec, k, report.deficiency_count, trials, report.verdict)

    return report


def finite_rank_estimate(
    spec: KernelSpec | str, k_max: int, trials_per_k: int = 20, seed: int = 0,
    policy: TolerancePolicy = TolerancePolicy(), min_plateau: int = 3, min_trials: int = 20
) -> FiniteRankEstimate:
    """
    Estimate the rank of a kernel from the largest matrix rank seen at each size.

    The estimate is r when every k in (r, k_max] tops out at rank r, the run of such k is at
    least ``min_plateau`` long and every size had ``min_trials`` trials; otherwise it is
    undecided and only ">= k_max" can be reported.
    """

    spec = KernelSpec.from_param(spec)

    if k_max < 2:
        raise ValidationError('k_max must be at least 2, got {k_max}!', finite_rank_estimate, k_max=k_max)

    if trials_per_k < 1:
        raise ValidationError('Need at least one trial per k!', finite_rank_estimate)

    profile = list[int]()
    spectra = dict[int, list[NDArray[np.float64]]]()

    for k in range(1, k_max + 1):
        results = [numerical_rank(_sample_matrix(spec, derive_rng(seed, k, t), k), policy) for t in range(trials_per_k)]

        profile.append(max(r.rank for r in results))
        spectra[k] = [r.ratios for r in results]

    top = profile[-1]
    plateau = 0

    for k in range(k_max, top, -1):
        if profile[k - 1] != top:
            break
        plateau += 1

    decided = top < k_max and plateau == k_max - top and plateau >= min_plateau and trials_per_k >= min_trials

    excess = None

    if decided:
        excess = max(float(ratios[top]) for k in range(top + 1, k_max + 1) for ratios in spectra[k])

    estimate = FiniteRankEstimate(
        kernel=str(spec), k_max=k_max, trials_per_k=trials_per_k, seed=seed, policy=policy,
        profile=tuple(profile), rank=top if decided else None, plateau_length=plateau, excess_ratio=excess
    )

    log.info('finite rank of %s: %s (profile %s)', spec, estimate.label, estimate.profile)

    return estimate


def _score(matrix: NDArray[np.float64], policy: TolerancePolicy) -> float:
    return _ratio_min(numerical_rank(matrix, policy))


def constrained_fullrank_search(
    family: FunctionFamily, subsets: Sequence[Domain], budget: int = 64, seed: int = 0,
    policy: TolerancePolicy = TolerancePolicy()
) -> WitnessSearch:
    """
    Greedy search for x_j in subsets[j] making {f_i(x_j)} nonsingular.

    Point j is the best of ``budget`` candidates drawn from ``derive_rng(seed, j)``, scored
    by sigma_min / sigma_max of the functions-by-points matrix built so far. Candidate
    streams are nested, a larger budget only adds candidates.
    """

    k = family.size

    if len(subsets) != k:
        raise ValidationError(
            'Need one subset per function, got {count} for {k} functions!', constrained_fullrank_search,
            count=len(subsets), k=k
        )

    if budget < 1:
        raise ValidationError('Budget must be positive, got {budget}!', constrained_fullrank_search, budget=budget)

    for subset in subsets:
        if not family.domain.encloses(subset):
            raise SubsetNotContained(constrained_fullrank_search, subset, family.domain)

    chosen = np.zeros((k, 0))
    points = list[NDArray[np.float64]]()

    for j, subset in enumerate(subsets):
        candidates = subset.sample(derive_rng(seed, j), budget)
        columns = family.values(candidates)

        scores = [_score(np.column_stack([chosen, columns[:, c]]), policy) for c in range(budget)]
        best = int(np.argmax(scores))

        chosen = np.column_stack([chosen, columns[:, best]])
        points.append(candidates[best])

    final = numerical_rank(chosen, policy)

    search = WitnessSearch(
        found=final.rank == k, rank=final.rank, size=k, points=np.array(points),
        sigma_ratio=_ratio_min(final), budget=budget, seed=seed
    )

    log.debug('witness search over %d subsets: rank %d of %d', k, final.rank, k)

    return search


def fullrank_witness(
    family: FunctionFamily, budget: int = 64, seed: int = 0, policy: TolerancePolicy = TolerancePolicy()
) -> WitnessSearch:
    """Unconstrained witness search, every point drawn from the whole family domain."""

    return constrained_fullrank_search(family, [family.domain] * family.size, budget, seed, policy)


def lli_probe(
    family: FunctionFamily, window: Domain, k: int | None = None, budget: int = 64, seed: int = 0,
    policy: TolerancePolicy = TolerancePolicy()
) -> LLIProbe:
    """
    Look for a witness with all points in one window.

    A witness shows the family is linearly independent on that window. Its absence is only
    evidence of dependence.
    """

    if k is not None and k != family.size:
        raise ValidationError('k must equal the family size {size}, got {k}!', lli_probe, k=k, size=family.size)

    if not family.domain.encloses(window):
        raise SubsetNotContained(lli_probe, window, family.domain)

    search = constrained_fullrank_search(family, [window] * family.size, budget, seed, policy)
    verdict = LLIVerdict.WITNESS_FOUND if search.found else LLIVerdict.NO_WITNESS_IN_BUDGET

    log.info('lli probe on %s: %s (rank %d of %d)', window, verdict, search.rank, search.size)

    return LLIProbe(verdict, str(window), search)


def taylor_span_rank(
    spec: KernelSpec | str, p: Sequence[float], direction: Sequence[float], order: int, samples: int = 32,
    seed: int = 0, radius: float = 0.1, policy: TolerancePolicy = TolerancePolicy()
) -> RankResult:
    """Numerical dimension of span{c_0, ..., c_order} sampled at random points of U."""

    spec = KernelSpec.from_param(spec)
    family = TaylorFunctionFamily(spec, tuple(p), tuple(direction), tuple(range(order + 1)), radius)

    points = family.domain.sample(derive_rng(seed), samples)

    return numerical_rank(family.values(points), policy)
