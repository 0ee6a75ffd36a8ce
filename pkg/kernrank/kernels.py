from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import pi
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expi, factorial

from .domains import Domain, HalfLine, OpenBall, OpenBox, UnitSphere, as_points
from .exceptions import DomainViolation, NonConvergent, UnknownKernelError, ValidationError
from .types import DotProfile, KernelFamily, PointArray

__all__ = [
    'KernelSpec', 'KernelMatrix',

    'eval_kernel', 'kernel_matrix',
    'cell_index', 'cell_indices'
]

log = logging.getLogger(__name__)

ARCCOS_SLACK = 1e-9
"""Cosines further than this outside [-1, 1] signal a point off the unit sphere."""

NULL_SERIES_RADIUS = 1.0
"""null-example switches from its power series to the exponential integral above this |x y^2|."""

NULL_SERIES_RTOL = 1e-15

_DEFAULT_N = {
    KernelFamily.EUCLIDEAN_SQ: 1,
    KernelFamily.SPHERE_GEO: 2,
    KernelFamily.SPHERE_GEO_SQ: 2,
    KernelFamily.DOT: 3
}


@dataclass(frozen=True)
class KernelSpec:
    """
    A kernel family together with the parameters that fix its domains.

    Domains are derived from the parameters:

        * euclidean-sq: the box (lo, hi)^n, default (0, 1)^n.
        * circular-sq: the interval (lo, hi), default (0, 2pi).
        * sphere-geo, sphere-geo-sq: the unit n-sphere for both arguments.
        * dot: the box (lo, hi)^n, default (-1, 1)^3; the open unit ball of R^n for arccos
          unless a box is given explicitly.
        * indicator: the interval (lo, hi) inside (0, 1), default (0, 1).
        * null-example: U = (lo, hi), default (-2, 2), and V = (0, inf) sampled as Exp(rate).
    """

    family: KernelFamily
    n: int | None = None
    profile: DotProfile | None = None
    lo: float | None = None
    hi: float | None = None
    rate: float = 1.0
    max_terms: int = 500
    """Hard cap on the null-example series."""

    _domains: tuple[Domain, Domain] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        family = KernelFamily(self.family)
        object.__setattr__(self, 'family', family)

        if family in _DEFAULT_N:
            object.__setattr__(self, 'n', int(self.n if self.n is not None else _DEFAULT_N[family]))
        elif self.n not in {None, 1}:
            raise ValidationError('{family} is one dimensional, got n={n}!', KernelSpec, family=family, n=self.n)
        else:
            object.__setattr__(self, 'n', 1)

        if family is KernelFamily.DOT:
            object.__setattr__(self, 'profile', DotProfile(self.profile or DotProfile.EXP_NEG))
        elif self.profile is not None:
            raise ValidationError('Only the dot family takes a profile!', KernelSpec)

        if (self.lo is None) != (self.hi is None):
            raise ValidationError('lo and hi must be given together!', KernelSpec)

        if family.is_spherical and self.lo is not None:
            raise ValidationError('Sphere kernels take no box bounds!', KernelSpec)

        if self.max_terms < 1:
            raise ValidationError('max_terms must be positive, got {terms}!', KernelSpec, terms=self.max_terms)

        object.__setattr__(self, '_domains', self._resolve_domains())

    def _resolve_domains(self) -> tuple[Domain, Domain]:
        assert self.n is not None

        family, n = self.family, self.n

        bounds = None if self.lo is None or self.hi is None else (self.lo, self.hi)

        def box(lo: float, hi: float) -> OpenBox:
            return OpenBox.cube(n, *(bounds or (lo, hi)))

        if family is KernelFamily.EUCLIDEAN_SQ:
            u = box(0.0, 1.0)
            return u, u

        if family is KernelFamily.CIRCULAR_SQ:
            u = box(0.0, 2 * pi)
            return u, u

        if family.is_spherical:
            sphere = UnitSphere(n)
            return sphere, sphere

        if family is KernelFamily.DOT:
            if self.profile is DotProfile.ARCCOS:
                u = OpenBall.unit(n) if self.lo is None else box(-1.0, 1.0)

                if _sup_norm(u) ** 2 > 1.0 + ARCCOS_SLACK:
                    raise ValidationError(
                        'arccos needs |x . y| <= 1 on {domain}, its radius is {radius}!', KernelSpec,
                        domain=u, radius=_sup_norm(u)
                    )

                return u, u

            u = box(-1.0, 1.0)
            return u, u

        if family is KernelFamily.INDICATOR:
            u = box(0.0, 1.0)

            if u.lo[0] < 0.0 or u.hi[0] > 1.0:
                raise ValidationError(
                    'indicator lives on a subinterval of (0, 1), got {domain}!', KernelSpec, domain=u
                )

            return u, u

        return box(-2.0, 2.0), HalfLine(0.0, self.rate)

    @property
    def domain_u(self) -> Domain:
        return self._domains[0]

    @property
    def domain_v(self) -> Domain:
        return self._domains[1]

    @property
    def is_analytic(self) -> bool:
        return self.family is not KernelFamily.INDICATOR

    @classmethod
    def from_string(cls, text: str) -> KernelSpec:
        """
        Parse the command line form ``family[:param=value,...]``.

        A bare token is the profile of the dot family, so ``dot:exp-neg`` and
        ``dot:h=exp-neg`` are the same kernel.
        """

        name, _, rest = text.strip().partition(':')

        try:
            family = KernelFamily(name)
        except ValueError:
            raise UnknownKernelError(
                cls.from_string, text, detail=f'Known families: {", ".join(KernelFamily)}.'
            ) from None

        kwargs = dict[str, Any]()

        for token in filter(None, (t.strip() for t in rest.split(','))):
            key, eq, value = token.partition('=')

            if not eq:
                key, value = 'h', key

            if key not in family.parameters:
                raise UnknownKernelError(cls.from_string, text, detail=f'"{key}" is not a parameter of {family}.')

            try:
                if key == 'h':
                    kwargs['profile'] = DotProfile(value)
                elif key in {'n', 'terms'}:
                    kwargs['max_terms' if key == 'terms' else key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError:
                raise UnknownKernelError(
                    cls.from_string, text, detail=f'Bad value for "{key}": {value!r}.'
                ) from None

        try:
            return cls(family, **kwargs)
        except ValidationError as e:
            raise UnknownKernelError(cls.from_string, text, detail=str(e)) from e

    @classmethod
    def from_param(cls, value: str | KernelFamily | KernelSpec) -> KernelSpec:
        if isinstance(value, KernelSpec):
            return value

        if isinstance(value, KernelFamily):
            return cls(value)

        return cls.from_string(value)

    def __str__(self) -> str:
        parts = list[str]()

        if self.profile is not None:
            parts.append(self.profile.value)

        if self.family in _DEFAULT_N:
            parts.append(f'n={self.n}')

        if self.lo is not None:
            parts += [f'lo={self.lo!r}', f'hi={self.hi!r}']

        if self.family is KernelFamily.NULL_EXAMPLE:
            if self.rate != 1.0:
                parts.append(f'rate={self.rate!r}')
            if self.max_terms != 500:
                parts.append(f'terms={self.max_terms}')

        return f'{self.family}:{",".join(parts)}' if parts else str(self.family)

    def values(self, xs: ArrayLike, ys: ArrayLike, check: bool = True) -> NDArray[np.float64]:
        """
        Evaluate the kernel on every pair (xs[i], ys[j]).

        :param xs:          Points of U, shape (m, dim U) or a flat sequence for one dimensional U.
        :param ys:          Points of V, same convention.
        :param check:       Verify membership of every point first.

        :return:            (m, k) matrix of kernel values.
        """

        xs = as_points(xs, self.domain_u.ambient_dim)
        ys = as_points(ys, self.domain_v.ambient_dim)

        if check:
            self.domain_u.check(xs, self.values)
            self.domain_v.check(ys, self.values)

        return _evaluate(self, xs, ys)


@dataclass(frozen=True)
class KernelMatrix:
    """Kernel values on a grid of points together with the points generating them."""

    entries: NDArray[np.float64]
    xs: PointArray
    ys: PointArray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape  # type: ignore[return-value]


def _sup_norm(domain: Domain) -> float:
    if isinstance(domain, OpenBall):
        return float(np.linalg.norm(domain.center_array) + domain.radius)

    if isinstance(domain, OpenBox):
        return float(np.max(np.linalg.norm(domain.corners, axis=1)))

    return np.inf


def _pairwise_dot(xs: PointArray, ys: PointArray) -> NDArray[np.float64]:
    # elementwise products summed in coordinate order keep dot(x, y) == dot(y, x) bit for bit
    return (xs[:, None, :] * ys[None, :, :]).sum(axis=-1)


def _checked_cosines(cosines: NDArray[np.float64], func: Any) -> NDArray[np.float64]:
    if np.any(np.abs(cosines) > 1.0 + ARCCOS_SLACK):
        worst = float(cosines.flat[np.argmax(np.abs(cosines))])
        raise DomainViolation(func, 'arccos argument {value} is outside [-1, 1]!', value=worst)

    return np.clip(cosines, -1.0, 1.0)


def cell_index(x: float) -> int:
    """Unique s >= 0 with s / (s + 1) <= x < (s + 1) / (s + 2), for 0 < x < 1."""

    return int(cell_indices(np.array([x], dtype=np.float64))[0])


def cell_indices(xs: NDArray[np.float64]) -> NDArray[np.int64]:
    if np.any((xs <= 0.0) | (xs >= 1.0)):
        raise DomainViolation(cell_indices, 'Cell indices are defined on (0, 1), got {point}!', point=xs.tolist())

    s = np.ceil(xs / (1.0 - xs)).astype(np.int64) - 1
    s = np.maximum(s, 0)

    # the closed form can be one off at cell boundaries
    s = np.where(xs >= (s + 1) / (s + 2), s + 1, s)
    s = np.where((s > 0) & (xs < s / (s + 1)), s - 1, s)

    return s


def _null_series(spec: KernelSpec, x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
    # a_s = x^s y^(2s - 1) / s!, term_s = a_s (y / (2s) - 1); each entry stops on its own
    total = np.ones_like(x)
    a = x * y
    z = x * y * y
    active = np.ones(x.shape, dtype=np.bool_)

    for s in range(1, spec.max_terms + 1):
        term = a * (y / (2 * s) - 1.0)
        total = np.where(active, total + term, total)

        a = a * z / (s + 1)

        # |term_k| <= |a_k| (1 + y / 2k) for k > s, and |a_k| shrinks at least geometrically once |z| / (k + 1) <= 1/2
        ratio = np.abs(z) / (s + 2)
        tail = 2.0 * np.abs(a) * (1.0 + np.abs(y) / (2 * (s + 1)))
        active &= ~((ratio <= 0.5) & (tail <= NULL_SERIES_RTOL * np.abs(total)))

        if not np.any(active):
            return total

    raise NonConvergent(eval_kernel, terms=spec.max_terms)


def _null_kernel(spec: KernelSpec, xs: PointArray, ys: PointArray) -> NDArray[np.float64]:
    x, y = np.broadcast_arrays(xs[:, :1], ys[:, 0][None, :])
    z = x * y * y

    out = np.empty(x.shape)
    near = np.abs(z) <= NULL_SERIES_RADIUS

    if np.any(near):
        out[near] = _null_series(spec, x[near], y[near])

    if np.any(far := ~near):
        zf, yf = z[far], y[far]

        with np.errstate(over='ignore', invalid='ignore'):
            # sum_{s>=1} z^s / (s s!) = Ei(z) - gamma - ln|z|
            s1 = expi(zf) - np.euler_gamma - np.log(np.abs(zf))
            out[far] = 1.0 + 0.5 * s1 - np.expm1(zf) / yf

    if not np.all(np.isfinite(out)):
        raise NonConvergent(eval_kernel, 'null-example overflowed for x * y^2 up to {z:.3g}!', z=float(np.max(z)))

    return out


def _evaluate(spec: KernelSpec, xs: PointArray, ys: PointArray) -> NDArray[np.float64]:
    family = spec.family

    if family in {KernelFamily.EUCLIDEAN_SQ, KernelFamily.CIRCULAR_SQ}:
        return ((xs[:, None, :] - ys[None, :, :]) ** 2).sum(axis=-1)

    if family.is_spherical:
        angles = np.arccos(_checked_cosines(_pairwise_dot(xs, ys), eval_kernel))
        return angles * angles if family is KernelFamily.SPHERE_GEO_SQ else angles

    if family is KernelFamily.DOT:
        assert spec.profile is not None

        z = _pairwise_dot(xs, ys)

        if spec.profile is DotProfile.ARCCOS:
            z = _checked_cosines(z, eval_kernel)

        return spec.profile(z)

    if family is KernelFamily.INDICATOR:
        s = cell_indices(xs[:, 0])[:, None]
        y = ys[:, 0][None, :]

        # factorial is inf beyond 170, where y^s / s! underflows anyway
        return np.power(y, s) / factorial(s)

    return _null_kernel(spec, xs, ys)


def eval_kernel(spec: KernelSpec | str, x: ArrayLike, y: ArrayLike) -> float:
    """
    Kernel value at one pair of points.

    Goes through the same vectorised path as :py:func:`kernel_matrix`, so a matrix entry
    and the corresponding single evaluation agree bit for bit.
    """

    spec = KernelSpec.from_param(spec)

    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))

    return float(spec.values(x[None, :], y[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec | str, xs: ArrayLike, ys: ArrayLike) -> KernelMatrix:
    """Matrix {psi(x_i, y_j)} for points of U and V."""

    spec = KernelSpec.from_param(spec)

    xs = as_points(xs, spec.domain_u.ambient_dim)
    ys = as_points(ys, spec.domain_v.ambient_dim)

    log.debug('kernel_matrix %s: %dx%d', spec, len(xs), len(ys))

    return KernelMatrix(spec.values(xs, ys), xs, ys)
