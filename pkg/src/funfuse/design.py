"""Design quantities for scalar-on-function regression.

A subject contributes one row ``h_l = int X(t) B_l(t) dt``. Rows are built
either from a sampled covariate curve (treated as piecewise linear between
observations) or, exactly, from spline coefficients of the covariate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .bspline import BSplineBasis, cross_gram, eval_basis, gram_d2, panel_rule
from .errors import InsufficientCoverageError, InvalidArgumentError, MissingLocationError

__all__ = [
    "FunctionalSample",
    "Dataset",
    "Design",
    "design_row_from_grid",
    "design_row_from_coeffs",
    "design_row",
    "assemble",
    "haversine_km",
    "spherical_weights",
    "EARTH_RADIUS_KM",
]

EARTH_RADIUS_KM = 6371.0
MIN_COVERAGE = 0.95


@dataclass(frozen=True)
class FunctionalSample:
    """One subject: a covariate curve observed on ``grid`` and a scalar response.

    ``coeffs`` optionally carries exact spline coefficients of the covariate
    (simulated data), which enables the exact design-row path.
    """

    subject_id: str
    grid: np.ndarray
    values: np.ndarray
    response: float = float("nan")
    location: Optional[Tuple[float, float]] = None
    coeffs: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if grid.shape != values.shape or len(grid) < 2:
            raise InvalidArgumentError(
                f"subject {self.subject_id}: grid and values need equal length >= 2"
            )
        if np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError(f"subject {self.subject_id}: grid not strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError(f"subject {self.subject_id}: non-finite covariate values")
        object.__setattr__(self, "subject_id", str(self.subject_id))
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "response", float(self.response))
        if self.location is not None:
            lon, lat = self.location
            object.__setattr__(self, "location", (float(lon), float(lat)))
        if self.coeffs is not None:
            object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).ravel())


@dataclass(frozen=True)
class Dataset:
    samples: Tuple[FunctionalSample, ...]
    basis: BSplineBasis
    covariate_basis: Optional[BSplineBasis] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise InvalidArgumentError("dataset has no samples")
        ids = [s.subject_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("duplicate subject ids")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            n = len(self.samples)
            if w.shape != (n, n):
                raise InvalidArgumentError(f"weights must be {n}x{n}")
            if np.any(w < 0) or not np.allclose(w, w.T):
                raise InvalidArgumentError("weights must be symmetric and nonnegative")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> List[str]:
        return [s.subject_id for s in self.samples]

    @property
    def y(self) -> np.ndarray:
        return np.array([s.response for s in self.samples])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        w = None if self.weights is None else self.weights[np.ix_(idx, idx)]
        return Dataset(tuple(self.samples[i] for i in idx), self.basis, self.covariate_basis, w)

    def with_weights(self, weights) -> "Dataset":
        return Dataset(self.samples, self.basis, self.covariate_basis, weights)


def design_row_from_grid(sample: FunctionalSample, basis: BSplineBasis) -> np.ndarray:
    """``int X(t) B_l(t) dt`` with ``X`` linearly interpolated between observations.

    The product of the interpolant and each basis function is a polynomial
    between consecutive observation points and knots, so the integral is
    evaluated exactly there with Gauss-Legendre nodes. Nothing is
    extrapolated outside the observed range.
    """
    a, b = basis.domain
    grid, values = sample.grid, sample.values
    if grid[0] < a - 1e-12 or grid[-1] > b + 1e-12:
        raise InvalidArgumentError(f"subject {sample.subject_id}: grid leaves the domain")
    if (grid[-1] - grid[0]) < MIN_COVERAGE * (b - a):
        raise InsufficientCoverageError(
            f"subject {sample.subject_id}: grid covers "
            f"{(grid[-1] - grid[0]) / (b - a):.1%} of the domain"
        )
    kn = basis.breakpoints
    breaks = np.union1d(grid, kn[(kn > grid[0]) & (kn < grid[-1])])
    x, w = panel_rule(breaks, ceil((basis.order + 1) / 2))
    x = np.clip(x, a, b)
    xv = np.interp(x, grid, values)
    return (w * xv) @ eval_basis(basis, x)


def design_row_from_coeffs(a, covariate_basis: BSplineBasis, basis: BSplineBasis,
                           cross: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact row for ``X = sum_l a_l Btilde_l``; ``cross`` may be a precomputed cross-Gram."""
    a = np.asarray(a, dtype=float).ravel()
    if len(a) != covariate_basis.dim:
        raise InvalidArgumentError(
            f"expected {covariate_basis.dim} covariate coefficients, got {len(a)}"
        )
    if cross is None:
        cross = cross_gram(covariate_basis, basis)
    return a @ cross


def design_row(sample: FunctionalSample, dataset: Dataset, cross=None) -> np.ndarray:
    if sample.coeffs is not None and dataset.covariate_basis is not None:
        return design_row_from_coeffs(sample.coeffs, dataset.covariate_basis, dataset.basis, cross)
    return design_row_from_grid(sample, dataset.basis)


@dataclass(frozen=True)
class Design:
    """Assembled design: rows ``H_i`` stacked as an ``n x p`` array.

    The block-diagonal ``H`` and ``G = I_n (x) G0`` are never formed densely;
    ``rows`` doubles as the stacked homogeneous design.
    """

    rows: np.ndarray
    G0: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    basis: BSplineBasis
    ids: Tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return self.rows

    def H(self) -> sp.csr_matrix:
        """Sparse block-diagonal ``n x np`` design."""
        return sp.block_diag([r[None, :] for r in self.rows], format="csr")

    def G(self) -> sp.csr_matrix:
        return sp.kron(sp.identity(self.n, format="csr"), sp.csr_matrix(self.G0), format="csr")

    def apply_H(self, theta: np.ndarray) -> np.ndarray:
        """``(H theta)_i = H_i theta_i`` for ``theta`` of shape ``(n, p)``."""
        return np.einsum("ij,ij->i", self.rows, theta)

    def roughness(self, theta: np.ndarray) -> float:
        """``theta' G theta`` for ``theta`` of shape ``(n, p)``."""
        return float(np.einsum("ij,jk,ik->", theta, self.G0, theta))

    def subset(self, indices) -> "Design":
        idx = np.asarray(indices, dtype=int)
        return Design(self.rows[idx], self.G0, self.y[idx], self.weights[np.ix_(idx, idx)],
                      self.basis, tuple(self.ids[i] for i in idx) if self.ids else ())


def assemble(dataset: Dataset) -> Design:
    cross = None
    if dataset.covariate_basis is not None:
        cross = cross_gram(dataset.covariate_basis, dataset.basis)
    rows = np.vstack([design_row(s, dataset, cross) for s in dataset.samples])
    n = dataset.n
    weights = np.ones((n, n)) if dataset.weights is None else dataset.weights
    return Design(rows, gram_d2(dataset.basis), dataset.y, weights, dataset.basis,
                  tuple(dataset.ids))


def haversine_km(lon1, lat1, lon2, lat2, radius: float = EARTH_RADIUS_KM):
    """Great-circle distance between points given in degrees."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    s = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def spherical_weights(dataset: Dataset, normalize: bool = True) -> np.ndarray:
    """Inverse great-circle distance weights, scaled to unit mean off the diagonal.

    Coincident locations get the 99th percentile of the finite weights. The
    diagonal is set to zero and never used.
    """
    locs = []
    for s in dataset.samples:
        if s.location is None:
            raise MissingLocationError(f"subject {s.subject_id} has no location")
        locs.append(s.location)
    locs = np.asarray(locs)
    n = len(locs)
    d = haversine_km(locs[:, None, 0], locs[:, None, 1], locs[None, :, 0], locs[None, :, 1])
    off = ~np.eye(n, dtype=bool)
    w = np.zeros((n, n))
    pos = off & (d > 0)
    w[pos] = 1.0 / d[pos]
    zero = off & (d <= 0)
    if np.any(zero):
        cap = np.percentile(w[pos], 99) if np.any(pos) else 1.0
        w[zero] = cap
    if normalize and n > 1:
        w[off] /= w[off].mean()
    return w
