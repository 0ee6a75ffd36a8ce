from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb, factorial
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray
from scipy.special import expi

from .domains import OpenBall, as_point, hemisphere_embed
from .exceptions import DomainViolation, IllConditionedFit, NonConvergent, SingularExpansion, ValidationError
from .kernels import NULL_SERIES_RADIUS, NULL_SERIES_RTOL, KernelSpec, cell_index
from .types import DotProfile, FiniteDiffReport, JetCheckRow, KernelFamily, OddEvenReport, PolyFit

__all__ = [
    'TaylorJet', 'SliceSpec',

    'jet_propagate', 'finite_diff_check', 'odd_even_structure',
    'poly_fit_in_t', 'axis_restriction_samples'
]

log = logging.getLogger(__name__)

ARCCOS_EDGE = 1e-9
"""arccos is expanded only where |z0| < 1 - ARCCOS_EDGE."""

MAX_FD_ORDER = 6

# two-step Richardson weights for central differences at h, 2h, 4h
_RICHARDSON = (64.0 / 45.0, -20.0 / 45.0, 1.0 / 45.0)


@dataclass(frozen=True)
class TaylorJet:
    """
    Truncated power series in the slice parameter t.

    ``coeffs[s]`` is the s-th derivative at t = base divided by s!. Binary operations
    between jets of different orders truncate to the lower order.
    """

    coeffs: NDArray[np.float64]
    base: float = 0.0
    """Slice parameter the series is expanded around."""

    def __post_init__(self) -> None:
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64)).copy()

        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ValidationError('A jet needs at least the constant coefficient!', TaylorJet)

        coeffs.setflags(write=False)
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def constant(cls, value: float, order: int) -> TaylorJet:
        coeffs = np.zeros(order + 1)
        coeffs[0] = value
        return cls(coeffs)

    @classmethod
    def variable(cls, value: float, slope: float, order: int) -> TaylorJet:
        """The jet of t -> value + slope * t."""

        coeffs = np.zeros(order + 1)
        coeffs[0] = value

        if order >= 1:
            coeffs[1] = slope

        return cls(coeffs)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def _pair(self, other: TaylorJet | float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        if isinstance(other, TaylorJet):
            m = min(self.order, other.order) + 1
            return self.coeffs[:m], other.coeffs[:m]

        return self.coeffs, TaylorJet.constant(float(other), self.order).coeffs

    def __add__(self, other: TaylorJet | float) -> TaylorJet:
        a, b = self._pair(other)
        return TaylorJet(a + b, self.base)

    __radd__ = __add__

    def __sub__(self, other: TaylorJet | float) -> TaylorJet:
        a, b = self._pair(other)
        return TaylorJet(a - b, self.base)

    def __rsub__(self, other: float) -> TaylorJet:
        a, b = self._pair(other)
        return TaylorJet(b - a, self.base)

    def __neg__(self) -> TaylorJet:
        return TaylorJet(-self.coeffs, self.base)

    def __mul__(self, other: TaylorJet | float) -> TaylorJet:
        if not isinstance(other, TaylorJet):
            return TaylorJet(self.coeffs * float(other), self.base)

        a, b = self._pair(other)
        return TaylorJet(np.convolve(a, b)[:a.size], self.base)

    __rmul__ = __mul__

    def __truediv__(self, other: TaylorJet | float) -> TaylorJet:
        if not isinstance(other, TaylorJet):
            return TaylorJet(self.coeffs / float(other), self.base)

        a, b = self._pair(other)

        if b[0] == 0.0:
            raise SingularExpansion(self.__truediv__, value=0.0, detail='division by a jet vanishing at t = 0')

        q = np.zeros_like(a)

        for k in range(a.size):
            q[k] = (a[k] - b[1:k + 1] @ q[k - 1::-1][:k]) / b[0]

        return TaylorJet(q, self.base)

    def __rtruediv__(self, other: float) -> TaylorJet:
        return TaylorJet.constant(float(other), self.order) / self

    def __pow__(self, power: int) -> TaylorJet:
        if power < 0:
            return 1.0 / self ** -power

        result = TaylorJet.constant(1.0, self.order)
        square = self

        while power:
            if power & 1:
                result = result * square
            power >>= 1
            if power:
                square = square * square

        return result

    def derivative(self) -> TaylorJet:
        """d/dt, one order lower; the derivative of an order 0 jet is the zero jet."""

        if self.order == 0:
            return TaylorJet(np.zeros(1), self.base)

        return TaylorJet(self.coeffs[1:] * np.arange(1, self.order + 1), self.base)

    def integrate(self, constant: float = 0.0) -> TaylorJet:
        """Antiderivative with the given value at t = base, one order higher."""

        return TaylorJet(np.concatenate([[constant], self.coeffs / np.arange(1, self.order + 2)]), self.base)

    def sqrt(self) -> TaylorJet:
        a = self.coeffs

        if not a[0] > 0.0:
            raise SingularExpansion(self.sqrt, value=a[0], detail='square root needs a positive constant term')

        s = np.zeros_like(a)
        s[0] = np.sqrt(a[0])

        for k in range(1, a.size):
            s[k] = (a[k] - s[1:k] @ s[k - 1:0:-1]) / (2.0 * s[0])

        return TaylorJet(s, self.base)

    def exp(self) -> TaylorJet:
        a = self.coeffs
        e = np.zeros_like(a)
        e[0] = np.exp(a[0])

        for k in range(1, a.size):
            j = np.arange(1, k + 1)
            e[k] = (j * a[1:k + 1]) @ e[k - 1::-1][:k] / k

        return TaylorJet(e, self.base)

    def expm1(self) -> TaylorJet:
        coeffs = self.exp().coeffs.copy()
        coeffs[0] = np.expm1(self.coeffs[0])
        return TaylorJet(coeffs, self.base)

    def sincos(self) -> tuple[TaylorJet, TaylorJet]:
        a = self.coeffs
        s, c = np.zeros_like(a), np.zeros_like(a)
        s[0], c[0] = np.sin(a[0]), np.cos(a[0])

        for k in range(1, a.size):
            ja = np.arange(1, k + 1) * a[1:k + 1]
            s[k] = ja @ c[k - 1::-1][:k] / k
            c[k] = -(ja @ s[k - 1::-1][:k]) / k

        return TaylorJet(s, self.base), TaylorJet(c, self.base)

    def sin(self) -> TaylorJet:
        return self.sincos()[0]

    def cos(self) -> TaylorJet:
        return self.sincos()[1]

    def arccos(self) -> TaylorJet:
        """arccos through w' = -z' / sqrt(1 - z^2), integrated term by term from arccos(z0)."""

        z0 = self.value

        if abs(z0) >= 1.0 - ARCCOS_EDGE:
            raise SingularExpansion(
                self.arccos, value=z0, detail='arccos is singular at +-1 (coincident or antipodal points)'
            )

        if self.order == 0:
            return TaylorJet([np.arccos(z0)], self.base)

        slope = -self.derivative() / (1.0 - self * self).sqrt()

        return slope.integrate(float(np.arccos(z0)))

    def evaluate(self, t: float | NDArray[np.float64]) -> float | NDArray[np.float64]:
        """Partial sum at t - base."""

        return np.polynomial.polynomial.polyval(np.asarray(t) - self.base, self.coeffs)  # type: ignore[no-any-return]


@dataclass(frozen=True)
class SliceSpec:
    """
    The line t -> p + t * direction in V along which a kernel is expanded, with x frozen.

    For sphere kernels x, p and direction are hemisphere chart coordinates.
    """

    x: tuple[float, ...]
    p: tuple[float, ...]
    direction: tuple[float, ...]
    order: int
    radius: float = 0.1
    """The segment |t| < radius is asserted to lie in V and inside the convergence disc."""

    def __post_init__(self) -> None:
        x, p, d = as_point(self.x), as_point(self.p), as_point(self.direction)

        if p.size != d.size:
            raise ValidationError('Expansion point and direction differ in length!', SliceSpec)

        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-12:
            raise ValidationError('Slice direction must be a unit vector, got {d}!', SliceSpec, d=tuple(d.tolist()))

        if self.order < 0:
            raise ValidationError('Jet order must be non-negative, got {order}!', SliceSpec, order=self.order)

        if not self.radius > 0.0:
            raise ValidationError('Slice radius must be positive, got {radius}!', SliceSpec, radius=self.radius)

        object.__setattr__(self, 'x', tuple(x.tolist()))
        object.__setattr__(self, 'p', tuple(p.tolist()))
        object.__setattr__(self, 'direction', tuple(d.tolist()))

    @classmethod
    def along_axis(
        cls, x: Sequence[float], order: int, axis: int = 0, p: Sequence[float] | None = None, radius: float = 0.1
    ) -> SliceSpec:
        """Slice through p (default the origin) along a coordinate axis of the y space."""

        dim = len(p) if p is not None else len(x)
        direction = np.zeros(dim)
        direction[axis] = 1.0

        return cls(tuple(x), tuple(p) if p is not None else (0.0,) * dim, tuple(direction), order, radius)

    @property
    def p_array(self) -> NDArray[np.float64]:
        return np.array(self.p)

    @property
    def direction_array(self) -> NDArray[np.float64]:
        return np.array(self.direction)

    def points(self, ts: ArrayLike) -> NDArray[np.float64]:
        """y coordinates p + t * direction for each t, one row per t."""

        return self.p_array + np.asarray(ts, dtype=np.float64).reshape(-1, 1) * self.direction_array


def _check_slice(spec: KernelSpec, slc: SliceSpec) -> None:
    ends = slc.points([-slc.radius, slc.radius])

    if spec.family.is_spherical:
        assert spec.n is not None

        chart = OpenBall.unit(spec.n)

        if len(slc.x) != spec.n or len(slc.p) != spec.n:
            raise ValidationError('Sphere slices are given in {n} chart coordinates!', jet_propagate, n=spec.n)

        hemisphere_embed(slc.x)

        if not np.all(chart.contains_many(np.vstack([slc.p_array, ends]))):
            raise DomainViolation(jet_propagate, point=slc.p, domain=f'the chart ball with slice radius {slc.radius}')

        return

    spec.domain_u.check(np.array([slc.x]), jet_propagate)

    if len(slc.p) != spec.domain_v.ambient_dim:
        raise ValidationError(
            'Slice must live in the {dim} dimensional V!', jet_propagate, dim=spec.domain_v.ambient_dim
        )

    if not np.all(spec.domain_v.contains_many(np.vstack([slc.p_array, ends]))):
        raise DomainViolation(jet_propagate, point=slc.p, domain=f'{spec.domain_v} with slice radius {slc.radius}')


def _null_jet(spec: KernelSpec, x: float, y: TaylorJet) -> TaylorJet:
    z = x * y * y

    if abs(z.value) > NULL_SERIES_RADIUS:
        # S1(z) = sum z^s / (s s!) has S1'(z) = expm1(z) / z
        z0 = z.value
        s1 = (z.expm1() / z * z.derivative()).integrate(float(expi(z0) - np.euler_gamma - np.log(abs(z0))))
        return 1.0 + 0.5 * s1 - z.expm1() / y

    total = TaylorJet.constant(1.0, y.order)
    odd_power = y
    scale = x
    y_norm = float(np.sum(np.abs(y.coeffs)))

    for s in range(1, spec.max_terms + 1):
        term = scale * odd_power * (y / (2 * s) - 1.0)
        total = total + term

        odd_power = odd_power * y * y
        scale *= x / (s + 1)

        # l1 coefficient bounds, as in the scalar series
        ratio = abs(x) * y_norm ** 2 / (s + 2)
        tail = 2.0 * abs(scale) * np.sum(np.abs(odd_power.coeffs)) * (1.0 + y_norm / (2 * (s + 1)))

        if ratio <= 0.5 and tail <= NULL_SERIES_RTOL * np.max(np.abs(total.coeffs)):
            return total

    raise NonConvergent(jet_propagate, terms=spec.max_terms)


def jet_propagate(spec: KernelSpec | str, slc: SliceSpec) -> TaylorJet:
    """
    Taylor jet of t -> psi(x, p + t * direction).

    Sphere kernels are expanded through the hemisphere chart: both arguments are mapped by
    x -> (x, sqrt(1 - |x|^2)), the cosine of the angle is composed from series square roots
    and products, and arccos is applied as a series.

    :param spec:        Kernel to expand.
    :param slc:         Frozen x, expansion point, direction and order.

    :return:            Jet of the requested order.
    """

    spec = KernelSpec.from_param(spec)

    _check_slice(spec, slc)

    m, family = slc.order, spec.family
    x = np.array(slc.x)
    ys = [TaylorJet.variable(p, d, m) for p, d in zip(slc.p, slc.direction)]

    if family in {KernelFamily.EUCLIDEAN_SQ, KernelFamily.CIRCULAR_SQ}:
        jet = sum(((float(xi) - y) ** 2 for xi, y in zip(x, ys)), TaylorJet.constant(0.0, m))
    elif family.is_spherical:
        xt = hemisphere_embed(x)
        height = (1.0 - sum((y * y for y in ys), TaylorJet.constant(0.0, m))).sqrt()
        cosine = sum((float(xi) * y for xi, y in zip(xt, ys)), float(xt[-1]) * height)
        jet = cosine.arccos()

        if family is KernelFamily.SPHERE_GEO_SQ:
            jet = jet * jet
    elif family is KernelFamily.DOT:
        z = sum((float(xi) * y for xi, y in zip(x, ys)), TaylorJet.constant(0.0, m))

        if spec.profile is DotProfile.EXP_NEG:
            jet = (-z).exp()
        elif spec.profile is DotProfile.COS:
            jet = z.cos()
        else:
            jet = z.arccos()
    elif family is KernelFamily.INDICATOR:
        s = cell_index(float(x[0]))
        jet = ys[0] ** s / factorial(s)
    else:
        jet = _null_jet(spec, float(x[0]), ys[0])

    if not np.all(np.isfinite(jet.coeffs)):
        raise NonConvergent(jet_propagate, 'Jet of {spec} has non-finite coefficients!', spec=str(spec))

    log.debug('jet_propagate %s order %d at x=%s: %s', spec, m, slc.x, jet.coeffs)

    return jet


def _slice_values(spec: KernelSpec, slc: SliceSpec, ts: NDArray[np.float64]) -> NDArray[np.float64]:
    ys = slc.points(ts)
    x = np.array([slc.x])

    if spec.family.is_spherical:
        x = hemisphere_embed(slc.x)[None, :]
        ys = np.array([hemisphere_embed(y) for y in ys])

    return spec.values(x, ys)[0]


def _central_difference(
    spec: KernelSpec, slc: SliceSpec, order: int, h: float
) -> float:
    offsets = (order / 2.0 - np.arange(order + 1)) * h
    weights = np.array([(-1) ** j * comb(order, j) for j in range(order + 1)], dtype=np.float64)

    return float(weights @ _slice_values(spec, slc, offsets)) / h ** order


def finite_diff_check(spec: KernelSpec | str, slc: SliceSpec, step: float = 0.05) -> FiniteDiffReport:
    """
    Compare a jet against Richardson-refined central differences of the kernel.

    Orders 1 to min(order, 6) are checked with central differences at h, 2h and 4h,
    h = step * radius, combined by two Richardson steps. The discrepancy of order q is
    |c_q - d_q| * radius^q / max_s |c_s| * radius^s, which does not depend on how the
    slice is parametrized.
    """

    spec = KernelSpec.from_param(spec)

    if not 0.0 < step < 1.0 / (2 * MAX_FD_ORDER):
        raise ValidationError('Step must be in (0, 1/12) so that samples stay in the slice!', finite_diff_check)

    jet = jet_propagate(spec, slc)
    h = step * slc.radius

    powers = slc.radius ** np.arange(jet.order + 1)
    scale = float(np.max(np.abs(jet.coeffs) * powers)) or 1.0

    rows = [JetCheckRow(0, float(jet.coeffs[0]), float(_slice_values(spec, slc, np.zeros(1))[0]), None)]

    for q in range(1, jet.order + 1):
        if q > MAX_FD_ORDER:
            rows.append(JetCheckRow(q, float(jet.coeffs[q]), None, None))
            continue

        levels = [_central_difference(spec, slc, q, h * 2 ** i) for i in range(3)]
        estimate = sum(w * d for w, d in zip(_RICHARDSON, levels)) / factorial(q)

        rel_err = abs(estimate - jet.coeffs[q]) * powers[q] / scale

        rows.append(JetCheckRow(q, float(jet.coeffs[q]), estimate, rel_err))

    report = FiniteDiffReport(tuple(rows))

    log.debug('finite_diff_check %s: worst %.3e', spec, report.worst)

    return report


def odd_even_structure(
    spec: KernelSpec | str, x: Sequence[float], order: int, tolerance: float = 1e-10
) -> OddEvenReport:
    """
    Split the jet along y_1 at the chart origin into odd and even coefficients.

    On the axis x_1 = 0 the restriction is even in y_1 and every odd coefficient vanishes.
    Off the axis the report is still filled in, with ``on_axis`` False.
    """

    spec = KernelSpec.from_param(spec)

    if not spec.family.is_spherical:
        raise ValidationError(
            'Odd/even structure is a property of the sphere kernels, got {spec}!', odd_even_structure, spec=str(spec)
        )

    point = as_point(x)
    radius = 0.5 * (1.0 - float(np.linalg.norm(point)))

    jet = jet_propagate(spec, SliceSpec.along_axis(tuple(point.tolist()), order, radius=max(radius, 1e-3)))

    odd = jet.coeffs[1::2]

    return OddEvenReport(
        on_axis=bool(point[0] == 0.0),
        max_odd=float(np.max(np.abs(odd))) if odd.size else 0.0,
        even=jet.coeffs[0::2].copy(),
        tolerance=tolerance
    )


def poly_fit_in_t(samples: Iterable[tuple[float, float]] | NDArray[np.float64], degree: int) -> PolyFit:
    """
    Least squares polynomial fit in the power basis, lowest degree first.

    The fit runs on t mapped to [-1, 1] and is converted back, so moderately high degrees
    stay well conditioned.
    """

    data = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=np.float64)

    if data.ndim != 2 or data.shape[1] != 2:
        raise ValidationError('Samples must be (t, value) pairs!', poly_fit_in_t)

    t, v = data[:, 0], data[:, 1]

    if degree < 0:
        raise IllConditionedFit(poly_fit_in_t, degree, detail='negative degree')

    if np.unique(t).size < degree + 2:
        raise IllConditionedFit(
            poly_fit_in_t, degree, detail=f'need {degree + 2} distinct abscissae, got {np.unique(t).size}'
        )

    poly, (_, rank, _, _) = Polynomial.fit(t, v, degree, full=True)

    if rank < degree + 1:
        raise IllConditionedFit(poly_fit_in_t, degree, detail=f'Vandermonde rank {rank}')

    coefficients = np.zeros(degree + 1)
    converted = poly.convert().coef
    coefficients[:converted.size] = converted

    return PolyFit(coefficients, float(np.max(np.abs(poly(t) - v))))


def axis_restriction_samples(
    spec: KernelSpec | str, s: int, heights: Sequence[float] | NDArray[np.float64]
) -> NDArray[np.float64]:
    """
    Samples (t, d^{2s} psi / dy_1^{2s}) on the axis x = (0, x_2, 0, ...) at y = 0.

    t = sqrt(1 - x_2^2) / x_2 is the cotangent of the polar angle of x, the variable the
    even restrictions of the sphere distance are polynomials in.
    """

    spec = KernelSpec.from_param(spec)

    if not spec.family.is_spherical or spec.n is None or spec.n < 2:
        raise ValidationError('Axis restrictions need a sphere kernel with n >= 2!', axis_restriction_samples)

    if s < 1:
        raise ValidationError('s must be at least 1, got {s}!', axis_restriction_samples, s=s)

    rows = list[tuple[float, float]]()

    for height in heights:
        if not 0.0 < height < 1.0:
            raise DomainViolation(axis_restriction_samples, point=height, domain='(0, 1)')

        x = np.zeros(spec.n)
        x[1] = height

        jet = jet_propagate(spec, SliceSpec.along_axis(tuple(x), 2 * s, radius=0.5 * (1.0 - height)))

        rows.append((float(np.sqrt(1.0 - height * height) / height), float(jet.coeffs[2 * s] * factorial(2 * s))))

    return np.array(rows)

