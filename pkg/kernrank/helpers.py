from __future__ import annotations

from dataclasses import fields, is_dataclass
from enum import Enum
from functools import cache
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.special import roots_laguerre, roots_legendre

from .exceptions import ValidationError

__all__ = [
    'derive_rng',

    'gauss_legendre', 'composite_legendre', 'half_line_rule',

    'equilibrate',

    'to_jsonable'
]


def derive_rng(seed: int, *indices: int) -> np.random.Generator:
    """
    Derive an independent random stream from a master seed and a path of indices.

    ``derive_rng(seed, trial)`` always yields the same stream for the same pair, no matter
    which thread asks for it or in which order the trials run.
    """

    if seed < 0 or any(i < 0 for i in indices):
        raise ValidationError(
            'Seeds and stream indices must be non-negative, got {path}!', derive_rng, path=(seed, *indices)
        )

    return np.random.default_rng(np.random.SeedSequence([seed, *indices]))


@cache
def gauss_legendre(nodes: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""

    x, w = roots_legendre(nodes)

    x.setflags(write=False)
    w.setflags(write=False)

    return x, w


def composite_legendre(
    lo: float, hi: float, panels: int, nodes: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Composite Gauss-Legendre rule on [lo, hi].

    :param lo:          Left end of the interval.
    :param hi:          Right end of the interval.
    :param panels:      Number of equal panels.
    :param nodes:       Gauss nodes per panel.

    :return:            Flattened nodes and weights, ordered left to right.
    """

    x, w = gauss_legendre(nodes)

    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])

    ys = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()

    return ys, ws


@cache
def _laguerre_tail(nodes: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    u, w = roots_laguerre(nodes)

    with np.errstate(divide='ignore'):
        scaled = np.exp(np.log(w) + u)

    scaled[~np.isfinite(scaled)] = 0.0

    return u, scaled


def half_line_rule(
    a: float, split: float, panels: int, nodes: int, tail_nodes: int = 64
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Quadrature for integrals over (a, inf).

    [a, a + split] is covered by a composite Gauss-Legendre rule and the tail by a
    Gauss-Laguerre rule whose e^-u weight is folded back into the weights, so the rule
    integrates plain integrands that decay at least exponentially.
    """

    ys, ws = composite_legendre(a, a + split, panels, nodes)
    u, wt = _laguerre_tail(tail_nodes)

    return np.concatenate([ys, a + split + u]), np.concatenate([ws, wt])


def _power_of_two(scale: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.ones_like(scale)
    nonzero = scale > 0.0
    out[nonzero] = np.exp2(np.round(np.log2(scale[nonzero])))
    return out


def equilibrate(matrix: NDArray[np.float64], max_iter: int = 32) -> NDArray[np.float64]:
    """
    Two-sided Ruiz equilibration with power-of-two scale factors.

    Rows and columns are repeatedly divided by the square root of their largest
    magnitude until every nonzero row and column peaks in [0.5, 2]. Scaling by powers of
    two is exact, so the result is a bit-exact D1 @ matrix @ D2 with the same rank.
    Zero rows and columns are left alone.
    """

    scaled = np.array(matrix, dtype=np.float64, copy=True)

    if scaled.size == 0:
        return scaled

    for _ in range(max_iter):
        absolute = np.abs(scaled)

        rows = _power_of_two(np.sqrt(absolute.max(axis=1)))
        cols = _power_of_two(np.sqrt(absolute.max(axis=0)))

        if np.all(rows == 1.0) and np.all(cols == 1.0):
            break

        scaled /= rows[:, None]
        scaled /= cols[None, :]

    return scaled


def to_jsonable(obj: Any) -> Any:
    """Recursively convert reports into plain JSON types."""

    if isinstance(obj, Enum):
        return obj.value

    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj) if f.repr}

    if isinstance(obj, tuple) and hasattr(obj, '_asdict'):
        return {key: to_jsonable(value) for key, value in obj._asdict().items()}

    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}

    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]

    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())

    if isinstance(obj, np.integer):
        return int(obj)

    if isinstance(obj, (float, np.floating)):
        return float(obj)

    return obj
