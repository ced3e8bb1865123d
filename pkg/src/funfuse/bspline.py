"""Clamped B-spline bases with equally spaced interior knots.

Basis functions are evaluated with the Cox-de Boor recursion over the full
knot table, so the values of every order are available for the derivative
recurrence. All integrals of products of basis functions are computed with
Gauss-Legendre rules applied per knot span, which is exact for the
piecewise-polynomial integrands involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import ceil
from typing import Callable, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import (
    InvalidArgumentError,
    OutOfDomainError,
    RankDeficiencyError,
    UnsupportedOrderError,
)

__all__ = [
    "BSplineBasis",
    "build_basis",
    "eval_basis",
    "eval_basis_d2",
    "gram_d2",
    "cross_gram",
    "project_function",
    "panel_rule",
    "integrate",
]


@dataclass(frozen=True)
class BSplineBasis:
    """Order-``order`` B-spline basis on ``domain`` with clamped boundary knots.

    Parameters
    ----------
    order : int
        Spline order q (degree q - 1).
    n_interior_knots : int
        Number m of equally spaced interior knots.
    domain : tuple of float
        Closed interval ``(a, b)`` with ``b > a``.
    """

    order: int
    n_interior_knots: int
    domain: Tuple[float, float] = (0.0, 1.0)
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q, m = self.order, self.n_interior_knots
        if int(q) != q or q < 1:
            raise InvalidArgumentError(f"order must be an integer >= 1, got {q}")
        if int(m) != m or m < 0:
            raise InvalidArgumentError(f"n_interior_knots must be an integer >= 0, got {m}")
        a, b = (float(v) for v in self.domain)
        if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
            raise InvalidArgumentError(f"degenerate domain {self.domain}")
        object.__setattr__(self, "order", int(q))
        object.__setattr__(self, "n_interior_knots", int(m))
        object.__setattr__(self, "domain", (a, b))
        breaks = a + (b - a) * np.arange(m + 2) / (m + 1)
        breaks[-1] = b
        knots = np.concatenate([np.full(q - 1, a), breaks, np.full(q - 1, b)])
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def dim(self) -> int:
        return self.n_interior_knots + self.order

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knots, i.e. the boundaries of the polynomial pieces."""
        return self.knots[self.order - 1 : self.order + self.n_interior_knots + 1]

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def __call__(self, t, nu: int = 0) -> np.ndarray:
        if nu == 0:
            return eval_basis(self, t)
        if nu == 2:
            return eval_basis_d2(self, t)
        raise UnsupportedOrderError("only derivative orders 0 and 2 are supported")

    def integrals(self) -> np.ndarray:
        """Exact integrals of the basis functions, ``(k[j+q] - k[j]) / q``."""
        q = self.order
        return (self.knots[q:] - self.knots[:-q]) / q

    def curve(self, theta, t) -> np.ndarray:
        """Evaluate the spline ``sum_l theta_l B_l(t)``."""
        return eval_basis(self, t) @ np.asarray(theta, dtype=float)

    @cached_property
    def _gram_d2(self) -> np.ndarray:
        return _gram_d2(self)


def build_basis(q: int, m: int, domain: Sequence[float] = (0.0, 1.0)) -> BSplineBasis:
    return BSplineBasis(q, m, tuple(domain))


def _as_points(basis: BSplineBasis, t) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr).ravel()
    a, b = basis.domain
    if np.any(~np.isfinite(arr)) or np.any(arr < a) or np.any(arr > b):
        raise OutOfDomainError(f"evaluation points must lie in [{a}, {b}]")
    return arr, scalar


def _order_tables(knots: np.ndarray, t: np.ndarray, order: int) -> list:
    """Values of all B-splines of orders 1..``order`` at ``t``.

    Entry ``r - 1`` of the result has shape ``(len(t), len(knots) - r)``.
    At the right end of the domain the last non-empty span is used, which
    gives left-limit values.
    """
    nk = len(knots)
    left, right = knots[:-1], knots[1:]
    n1 = ((t[:, None] >= left) & (t[:, None] < right)).astype(float)
    at_end = t >= knots[-1]
    if np.any(at_end):
        last = np.nonzero(right > left)[0][-1]
        n1[at_end] = 0.0
        n1[at_end, last] = 1.0
    tables = [n1]
    prev = n1
    for r in range(2, order + 1):
        j = np.arange(nk - r)
        d1 = knots[j + r - 1] - knots[j]
        d2 = knots[j + r] - knots[j + 1]
        # 0/0 := 0 for repeated knots
        w1 = np.divide(t[:, None] - knots[j], d1, out=np.zeros((len(t), nk - r)), where=d1 > 0)
        w2 = np.divide(knots[j + r] - t[:, None], d2, out=np.zeros((len(t), nk - r)), where=d2 > 0)
        cur = w1 * prev[:, :-1] + w2 * prev[:, 1:]
        tables.append(cur)
        prev = cur
    return tables


def _differentiate(knots: np.ndarray, values: np.ndarray, r: int) -> np.ndarray:
    """Apply the derivative recurrence once to order-(r-1) quantities.

    ``values`` holds either order-(r-1) basis values or their derivatives;
    the result is the corresponding derivative for order ``r``.
    """
    nk = len(knots)
    j = np.arange(nk - r)
    d1 = knots[j + r - 1] - knots[j]
    d2 = knots[j + r] - knots[j + 1]
    c1 = np.divide(r - 1.0, d1, out=np.zeros(nk - r), where=d1 > 0)
    c2 = np.divide(r - 1.0, d2, out=np.zeros(nk - r), where=d2 > 0)
    return c1 * values[:, :-1] - c2 * values[:, 1:]


def eval_basis(basis: BSplineBasis, t) -> np.ndarray:
    """Basis values at ``t``; shape ``(p,)`` for scalar ``t`` else ``(len(t), p)``."""
    pts, scalar = _as_points(basis, t)
    out = _order_tables(basis.knots, pts, basis.order)[-1]
    return out[0] if scalar else out


def eval_basis_d2(basis: BSplineBasis, t) -> np.ndarray:
    """Second derivatives of the basis functions at ``t``.

    Requires ``order >= 3``. Values at knots are one-sided (right-continuous,
    left limit at the right end of the domain), matching :func:`eval_basis`.
    """
    q = basis.order
    if q < 3:
        raise UnsupportedOrderError(f"second derivative needs order >= 3, got {q}")
    pts, scalar = _as_points(basis, t)
    low = _order_tables(basis.knots, pts, q - 2)[-1]
    out = _differentiate(basis.knots, _differentiate(basis.knots, low, q - 1), q)
    return out[0] if scalar else out


def panel_rule(breaks: np.ndarray, n_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights over consecutive ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    lo, hi = breaks[:-1], breaks[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    x, w = leggauss(max(int(n_nodes), 1))
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def integrate(f: Callable, a: float, b: float, panels: int = 32, nodes: int = 8,
              breaks=None) -> float:
    """Composite Gauss-Legendre integral of a vectorized ``f`` over ``[a, b]``.

    The default (32 panels of 8 nodes) is a 256-point rule. When ``breaks`` is
    given, each span between consecutive breakpoints is split into ``panels``
    equal panels instead.
    """
    if breaks is None:
        edges = np.linspace(a, b, panels + 1)
    else:
        breaks = np.asarray(breaks, dtype=float)
        edges = np.unique(np.concatenate(
            [np.linspace(lo, hi, panels + 1) for lo, hi in zip(breaks[:-1], breaks[1:])]
        ))
    x, w = panel_rule(edges, nodes)
    return float(np.dot(w, f(x)))


def _gram_d2(basis: BSplineBasis) -> np.ndarray:
    q = basis.order
    # integrand has degree 2(q - 3) on each span
    n_nodes = max(ceil((2 * (q - 3) + 1) / 2), 1)
    x, w = panel_rule(basis.breakpoints, n_nodes)
    d2 = eval_basis_d2(basis, x)
    g = (d2 * w[:, None]).T @ d2
    return 0.5 * (g + g.T)


def gram_d2(basis: BSplineBasis) -> np.ndarray:
    """Roughness matrix with entries ``int B_s''(t) B_l''(t) dt``."""
    if basis.order < 3:
        raise UnsupportedOrderError(f"second derivative needs order >= 3, got {basis.order}")
    return basis._gram_d2.copy()


def cross_gram(basis_a: BSplineBasis, basis_b: BSplineBasis) -> np.ndarray:
    """Matrix of ``int B_s^a(t) B_l^b(t) dt`` over the shared domain."""
    if not np.allclose(basis_a.domain, basis_b.domain, rtol=0.0, atol=1e-12):
        raise InvalidArgumentError(
            f"bases have different domains {basis_a.domain} and {basis_b.domain}"
        )
    breaks = np.union1d(basis_a.breakpoints, basis_b.breakpoints)
    degree = basis_a.order + basis_b.order - 2
    x, w = panel_rule(breaks, ceil((degree + 1) / 2))
    return (eval_basis(basis_a, x) * w[:, None]).T @ eval_basis(basis_b, x)


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def project_function(basis: BSplineBasis, f_values, grid) -> np.ndarray:
    """Least-squares spline coefficients of sampled ``f`` (trapezoid-weighted).

    Raises
    ------
    RankDeficiencyError
        If the grid does not determine all ``p`` coefficients.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    f_values = np.asarray(f_values, dtype=float).ravel()
    if grid.shape != f_values.shape:
        raise InvalidArgumentError("grid and f_values must have the same length")
    if len(grid) < basis.dim:
        raise RankDeficiencyError(f"need at least {basis.dim} grid points, got {len(grid)}")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("grid must be strictly increasing")
    b = eval_basis(basis, grid)
    sw = np.sqrt(trapezoid_weights(grid))
    bw = b * sw[:, None]
    sv = np.linalg.svd(bw, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise RankDeficiencyError("grid points do not determine the spline coefficients")
    coef, *_ = np.linalg.lstsq(bw, f_values * sw, rcond=None)
    return coef
