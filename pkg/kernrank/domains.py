from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from itertools import product
from math import gamma, pi
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DomainViolation, OutOfChart, SubsetNotContained, ValidationError
from .types import Point, PointArray

__all__ = [
    'Domain',
    'OpenBox', 'OpenBall', 'UnitSphere', 'SphereCap', 'HalfLine',

    'Partition',

    'as_point', 'as_points',
    'sample_point', 'sample_points', 'sample_in_subset',
    'uniform_partition',
    'hemisphere_embed'
]

__abstract__ = [
    'Domain'
]

log = logging.getLogger(__name__)

SPHERE_TOL = 1e-12
"""Allowed deviation of a sphere point from unit norm."""


def as_point(coords: ArrayLike) -> Point:
    """Coerce to a finite 1-D float array."""

    point = np.atleast_1d(np.asarray(coords, dtype=np.float64))

    if point.ndim != 1 or not np.all(np.isfinite(point)):
        raise DomainViolation(as_point, 'Point {point} must be a finite vector!', point=coords, domain=None)

    return point


def as_points(coords: ArrayLike, dim: int) -> PointArray:
    """Coerce to a (count, dim) float array; a flat sequence is read as count points of dimension 1."""

    points = np.asarray(coords, dtype=np.float64)

    if points.ndim <= 1 and dim == 1:
        points = points.reshape(-1, 1)
    elif points.ndim == 1:
        points = points.reshape(1, -1)

    if points.ndim != 2 or points.shape[1] != dim:
        raise DomainViolation(
            as_points, 'Expected points of dimension {dim}, got shape {shape}!', dim=dim, shape=points.shape
        )

    return points


@dataclass(frozen=True)
class Domain(ABC):
    """An open region points are drawn from."""

    @property
    @abstractmethod
    def ambient_dim(self) -> int:
        """Length of the coordinate vectors of member points."""

    @property
    @abstractmethod
    def dim(self) -> int:
        """Intrinsic dimension."""

    @abstractmethod
    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        """Strict membership of each row."""

    @abstractmethod
    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        ...

    @abstractmethod
    def encloses(self, other: Domain) -> bool:
        """Whether ``other`` is contained in the closure of this domain; conservative for unknown pairs."""

    def contains(self, point: ArrayLike) -> bool:
        point = np.asarray(point, dtype=np.float64)

        if point.shape != (self.ambient_dim,) or not np.all(np.isfinite(point)):
            return False

        return bool(self.contains_many(point[None, :])[0])

    def check(self, points: PointArray, func: Any = None) -> PointArray:
        """Raise DomainViolation naming the first row outside the domain."""

        points = as_points(points, self.ambient_dim)

        inside = self.contains_many(points) & np.all(np.isfinite(points), axis=1)

        if not np.all(inside):
            bad = points[int(np.argmin(inside))]
            raise DomainViolation(func or self.check, point=tuple(bad.tolist()), domain=self)

        return points

    def sample(self, rng: np.random.Generator, count: int) -> PointArray:
        """
        Draw ``count`` points, re-drawing any that landed on the boundary.

        Draws are consumed row by row from ``rng``, so barring boundary hits the first
        points of a larger draw equal a smaller draw from the same stream state.
        """

        points = self._draw(rng, count)

        for i in range(count):
            while not self.contains_many(points[i:i + 1])[0]:
                points[i] = self._draw(rng, 1)[0]

        return points


@dataclass(frozen=True)
class OpenBox(Domain):
    """Product of open intervals (lo[i], hi[i])."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))

        if len(lo) != len(hi) or not lo:
            raise ValidationError('Box bounds {lo} and {hi} must have the same positive length!', OpenBox, lo=lo, hi=hi)

        if not all(a < b for a, b in zip(lo, hi)) or not all(np.isfinite(lo + hi)):
            raise ValidationError('Box bounds must be finite with lo < hi, got {lo} and {hi}!', OpenBox, lo=lo, hi=hi)

        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @classmethod
    def cube(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> OpenBox:
        return cls((lo,) * n, (hi,) * n)

    @property
    def ambient_dim(self) -> int:
        return len(self.lo)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_array(self) -> NDArray[np.float64]:
        return np.array(self.lo)

    @property
    def hi_array(self) -> NDArray[np.float64]:
        return np.array(self.hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi_array - self.lo_array))

    @property
    def corners(self) -> PointArray:
        return np.array(list(product(*zip(self.lo, self.hi))), dtype=np.float64)

    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        return np.all((points > self.lo_array) & (points < self.hi_array), axis=1)

    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        return rng.uniform(self.lo_array, self.hi_array, size=(count, self.ambient_dim))

    def encloses(self, other: Domain) -> bool:
        if other.ambient_dim != self.ambient_dim:
            return False

        if isinstance(other, OpenBox):
            return bool(np.all(other.lo_array >= self.lo_array) and np.all(other.hi_array <= self.hi_array))

        if isinstance(other, OpenBall):
            lo, hi = other.center_array - other.radius, other.center_array + other.radius
            return bool(np.all(lo >= self.lo_array) and np.all(hi <= self.hi_array))

        return False

    def __str__(self) -> str:
        return 'x'.join(f'({a:g},{b:g})' for a, b in zip(self.lo, self.hi))


@dataclass(frozen=True)
class OpenBall(Domain):
    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        center = tuple(float(v) for v in np.atleast_1d(self.center))

        if not center or not np.all(np.isfinite(center)):
            raise ValidationError('Ball center {center} must be a finite vector!', OpenBall, center=center)

        if not self.radius > 0.0:
            raise ValidationError('Ball radius must be positive, got {radius}!', OpenBall, radius=self.radius)

        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'radius', float(self.radius))

    @classmethod
    def unit(cls, n: int) -> OpenBall:
        return cls((0.0,) * n, 1.0)

    @property
    def ambient_dim(self) -> int:
        return len(self.center)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def center_array(self) -> NDArray[np.float64]:
        return np.array(self.center)

    @property
    def volume(self) -> float:
        n = self.dim
        return pi ** (n / 2) / gamma(n / 2 + 1) * self.radius ** n

    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        return np.linalg.norm(points - self.center_array, axis=1) < self.radius

    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        # the first n coordinates of a uniform point on S^(n + 1) are uniform in the n-ball
        gauss = rng.standard_normal((count, self.ambient_dim + 2))
        gauss /= np.linalg.norm(gauss, axis=1, keepdims=True)

        return self.center_array + self.radius * gauss[:, :self.ambient_dim]

    def encloses(self, other: Domain) -> bool:
        if other.ambient_dim != self.ambient_dim:
            return False

        if isinstance(other, OpenBall):
            return bool(np.linalg.norm(other.center_array - self.center_array) + other.radius <= self.radius)

        if isinstance(other, OpenBox):
            return bool(np.all(np.linalg.norm(other.corners - self.center_array, axis=1) <= self.radius))

        return False

    def __str__(self) -> str:
        return f'ball({", ".join(f"{c:g}" for c in self.center)}; r={self.radius:g})'


@dataclass(frozen=True)
class UnitSphere(Domain):
    """The unit n-sphere, points in R^(n + 1)."""

    n: int = 2

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError('Sphere dimension must be at least 1, got {n}!', UnitSphere, n=self.n)

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    @property
    def dim(self) -> int:
        return self.n

    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        return np.abs(np.linalg.norm(points, axis=1) - 1.0) <= SPHERE_TOL

    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        points = rng.standard_normal((count, self.ambient_dim))
        norms = np.linalg.norm(points, axis=1, keepdims=True)

        # a zero draw has probability zero; sample() re-draws it since nan fails membership
        with np.errstate(invalid='ignore', divide='ignore'):
            return points / norms

    def encloses(self, other: Domain) -> bool:
        if isinstance(other, UnitSphere):
            return other.n == self.n

        if isinstance(other, SphereCap):
            return other.n == self.n

        return False

    def __str__(self) -> str:
        return f'S^{self.n}'


@dataclass(frozen=True)
class SphereCap(Domain):
    """Open geodesic cap of angular radius ``angle`` around a unit vector."""

    center: tuple[float, ...]
    angle: float

    def __post_init__(self) -> None:
        center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        norm = float(np.linalg.norm(center))

        if center.size < 2 or not np.isfinite(norm) or norm == 0.0:
            raise ValidationError('Cap center {center} must be a nonzero vector!', SphereCap, center=self.center)

        if not 0.0 < self.angle <= pi:
            raise ValidationError('Cap angle must be in (0, pi], got {angle}!', SphereCap, angle=self.angle)

        object.__setattr__(self, 'center', tuple((center / norm).tolist()))
        object.__setattr__(self, 'angle', float(self.angle))

    @property
    def n(self) -> int:
        return len(self.center) - 1

    @property
    def ambient_dim(self) -> int:
        return len(self.center)

    @property
    def dim(self) -> int:
        return self.n

    @property
    def center_array(self) -> NDArray[np.float64]:
        return np.array(self.center)

    def angles(self, points: PointArray) -> NDArray[np.float64]:
        return np.arccos(np.clip(points @ self.center_array, -1.0, 1.0))

    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        on_sphere = np.abs(np.linalg.norm(points, axis=1) - 1.0) <= SPHERE_TOL
        return on_sphere & (self.angles(points) < self.angle)

    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        # polar angle has density sin^(n - 1); rejection against its maximum on [0, angle]
        peak = np.sin(min(self.angle, pi / 2)) ** (self.n - 1)
        center = self.center_array
        points = np.empty((count, self.ambient_dim))

        for i in range(count):
            while True:
                theta = rng.uniform(0.0, self.angle)
                if rng.uniform(0.0, peak) <= np.sin(theta) ** (self.n - 1):
                    break

            tangent = rng.standard_normal(self.ambient_dim)
            tangent -= (tangent @ center) * center
            tangent /= np.linalg.norm(tangent)

            points[i] = np.cos(theta) * center + np.sin(theta) * tangent

        return points

    def encloses(self, other: Domain) -> bool:
        if isinstance(other, SphereCap) and other.n == self.n:
            gap = float(np.arccos(np.clip(other.center_array @ self.center_array, -1.0, 1.0)))
            return gap + other.angle <= self.angle

        return False

    def __str__(self) -> str:
        return f'cap({", ".join(f"{c:g}" for c in self.center)}; {self.angle:g} rad)'


@dataclass(frozen=True)
class HalfLine(Domain):
    """Open half line (a, inf) with an exponential sampling proposal."""

    a: float = 0.0
    rate: float = 1.0
    """Rate of the exponential proposal a + Exp(rate)."""

    def __post_init__(self) -> None:
        if not np.isfinite(self.a):
            raise ValidationError('Half line start must be finite, got {a}!', HalfLine, a=self.a)

        if not self.rate > 0.0:
            raise ValidationError('Half line proposal rate must be positive, got {rate}!', HalfLine, rate=self.rate)

        object.__setattr__(self, 'a', float(self.a))
        object.__setattr__(self, 'rate', float(self.rate))

    @property
    def ambient_dim(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return 1

    def contains_many(self, points: PointArray) -> NDArray[np.bool_]:
        return (points[:, 0] > self.a) & np.isfinite(points[:, 0])

    def _draw(self, rng: np.random.Generator, count: int) -> PointArray:
        return self.a + rng.exponential(1.0 / self.rate, size=(count, 1))

    def encloses(self, other: Domain) -> bool:
        if isinstance(other, HalfLine):
            return other.a >= self.a

        if isinstance(other, OpenBox) and other.ambient_dim == 1:
            return other.lo[0] >= self.a

        return False

    def __str__(self) -> str:
        return f'({self.a:g},inf)'


@dataclass(frozen=True)
class Partition:
    """Congruent cells of a box with their centers and volumes."""

    cells: tuple[OpenBox, ...]
    reps: PointArray
    volumes: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.cells)


def sample_points(domain: Domain, rng: np.random.Generator, count: int) -> PointArray:
    """Draw ``count`` points strictly inside ``domain``."""

    if count < 0:
        raise ValidationError('Can not draw {count} points!', sample_points, count=count)

    return domain.sample(rng, count)


def sample_point(domain: Domain, rng: np.random.Generator) -> Point:
    """Uniform on boxes, balls, spheres and caps, shifted exponential on half lines."""

    return domain.sample(rng, 1)[0]


def sample_in_subset(domain: Domain, subset: Domain, rng: np.random.Generator) -> Point:
    """Draw from ``subset`` after checking that it lies inside ``domain``."""

    if not domain.encloses(subset):
        raise SubsetNotContained(sample_in_subset, subset, domain)

    return sample_point(subset, rng)


def uniform_partition(domain: OpenBox, k: int) -> Partition:
    """
    Split a box into k^n congruent cells, row-major over the axes.

    :param domain:      Box to partition.
    :param k:           Cells per axis.

    :return:            Cells, their centers and their (equal) volumes.
    """

    if not isinstance(domain, OpenBox):
        raise ValidationError('Only boxes can be partitioned, got {domain}!', uniform_partition, domain=domain)

    if k < 1:
        raise ValidationError('Cell count per axis must be at least 1, got {k}!', uniform_partition, k=k)

    edges = [np.linspace(a, b, k + 1) for a, b in zip(domain.lo, domain.hi)]

    cells = tuple(
        OpenBox(tuple(e[i] for e, i in zip(edges, idx)), tuple(e[i + 1] for e, i in zip(edges, idx)))
        for idx in product(range(k), repeat=domain.dim)
    )

    reps = np.array([0.5 * (c.lo_array + c.hi_array) for c in cells])
    volume = domain.volume / k ** domain.dim

    log.debug('partitioned %s into %d cells', domain, len(cells))

    return Partition(cells, reps, np.full(len(cells), volume))


def hemisphere_embed(x: ArrayLike | Sequence[float]) -> Point:
    """Map a point of the open unit n-ball to the north hemisphere, (x, sqrt(1 - |x|^2))."""

    point = as_point(x)
    norm_sq = float(point @ point)

    if norm_sq >= 1.0:
        raise OutOfChart(hemisphere_embed, tuple(point.tolist()), norm=norm_sq ** 0.5)

    return np.append(point, np.sqrt(1.0 - norm_sq))
