"""Comparator estimators: known-group oracle and k-means pipelines.

All group fits minimize ``(1/|S|) sum_{i in S} (y_i - H_i theta)^2 +
lambda1 theta' G0 theta``, i.e. the ridge system with penalty ``|S| lambda1
G0``. The smoothing parameter of each group is chosen by GCV on that same
scale.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.cluster import KMeans

from .design import Dataset, Design, assemble
from .errors import InvalidArgumentError, SingularSystemError
from .simgen import TruthRecord
from .solver import FitResult, _check_spd, fit_from_partition
from .tuning import DEFAULT_LAMBDA1_GRID, gcv_blocks

__all__ = [
    "penalized_group_fit",
    "select_group_lambda",
    "oracle_fit",
    "kmeans",
    "resp_fit",
    "resi_fit",
]


def _design(data: Union[Dataset, Design]) -> Design:
    return data if isinstance(data, Design) else assemble(data)


def penalized_group_fit(indices, dataset: Union[Dataset, Design], lambda1: float) -> np.ndarray:
    """Common coefficients of the subjects in ``indices``.

    Raises
    ------
    SingularSystemError
        If the normal matrix is singular (typically ``lambda1 = 0`` with
        fewer subjects than coefficients).
    """
    design = _design(dataset)
    idx = np.atleast_1d(np.asarray(indices, dtype=int))
    if idx.size == 0:
        raise InvalidArgumentError("penalized_group_fit needs a nonempty index set")
    rows, y = design.rows[idx], design.y[idx]
    lhs = rows.T @ rows + len(idx) * lambda1 * design.G0
    _check_spd(lhs, "group normal matrix")
    return np.linalg.solve(lhs, rows.T @ y)


def select_group_lambda(indices, design: Design, lambda1_grid=DEFAULT_LAMBDA1_GRID) -> float:
    """GCV choice of ``lambda1`` for one group; ties go to the larger value."""
    idx = np.asarray(indices, dtype=int)
    grid = np.asarray(lambda1_grid, dtype=float)
    block = [(design.rows[idx], design.y[idx])]
    scores = np.array([gcv_blocks(block, [len(idx) * lam * design.G0]) for lam in grid])
    finite = np.isfinite(scores)
    if not np.any(finite):
        return float(grid.max())
    best = scores[finite].min()
    return float(grid[finite & (scores == best)].max())


def _grouped_fit(design: Design, partition: Sequence[np.ndarray], lambda1_grid) -> FitResult:
    theta = np.empty((design.n, design.p))
    lams = []
    for g in partition:
        lam = select_group_lambda(g, design, lambda1_grid)
        theta[g] = penalized_group_fit(g, design, lam)
        lams.append(lam)
    lam1 = lams[0] if len(set(lams)) == 1 else float("nan")
    fit = fit_from_partition(design, partition, theta, lambda1=lam1, lambda2=float("nan"))
    fit.group_lambda1 = np.array(lams)
    return fit


def oracle_fit(dataset: Union[Dataset, Design], truth: TruthRecord,
               lambda1_grid=DEFAULT_LAMBDA1_GRID) -> FitResult:
    """Group-wise penalized fits on the true partition."""
    design = _design(dataset)
    partition = [np.asarray(g, dtype=int) for g in truth.partition]
    return _grouped_fit(design, partition, lambda1_grid)


def kmeans(points, k: int, seed: int = 0) -> List[np.ndarray]:
    """Lloyd's k-means, k-means++ seeding, best of 20 restarts.

    Returns the partition as sorted index arrays ordered by smallest member.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= k <= len(x):
        raise InvalidArgumentError(f"k={k} must lie in [1, {len(x)}]")
    model = KMeans(n_clusters=k, init="k-means++", n_init=20, algorithm="lloyd", random_state=seed)
    labels = model.fit_predict(x)
    groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    return sorted(groups, key=lambda g: g[0])


def resp_fit(dataset: Union[Dataset, Design], k: int, lambda1_grid=DEFAULT_LAMBDA1_GRID,
             seed: int = 0) -> FitResult:
    """Cluster the responses by k-means, then fit each cluster."""
    design = _design(dataset)
    return _grouped_fit(design, kmeans(design.y, k, seed), lambda1_grid)


def resi_fit(dataset: Union[Dataset, Design], k: int, lambda1_grid=DEFAULT_LAMBDA1_GRID,
             seed: int = 0) -> FitResult:
    """Cluster the residuals of a homogeneous fit by k-means, then fit each cluster."""
    design = _design(dataset)
    everyone = np.arange(design.n)
    theta = penalized_group_fit(everyone, design, select_group_lambda(everyone, design, lambda1_grid))
    resid = design.y - design.rows @ theta
    return _grouped_fit(design, kmeans(resid, k, seed), lambda1_grid)
