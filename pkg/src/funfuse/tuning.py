"""Two-step selection of the smoothing and fusion parameters.

``lambda2`` is chosen by a modified BIC along a path with ``lambda1`` held at
a small value; ``lambda1`` is then chosen by generalized cross-validation
with the selected grouping fixed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .design import Dataset, Design, assemble
from .errors import InvalidArgumentError, TuningFailureError
from .solver import FitResult, PenaltyConfig, admm_fit, fit_path

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_LAMBDA1",
    "DEFAULT_LAMBDA1_GRID",
    "default_lambda2_grid",
    "TuneReport",
    "bic_constant",
    "modified_bic",
    "gcv",
    "gcv_blocks",
    "two_step_tune",
    "continuation_fit",
]

DEFAULT_LAMBDA1 = 0.005
DEFAULT_LAMBDA1_GRID = (0.0001, 0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.5, 1.0, 5.0)


def default_lambda2_grid() -> np.ndarray:
    return np.geomspace(0.01, 10.0, 30)


@dataclass
class TuneReport:
    """Traces of both selection steps and the final fit.

    ``bic_values[k]`` and ``k_hats[k]`` refer to ``lambda2_grid[k]`` in the
    last round; entries for diverged fits are ``nan`` and ``-1``.
    """

    lambda2_grid: np.ndarray
    bic_values: np.ndarray
    lambda1_grid: np.ndarray
    gcv_values: np.ndarray
    chosen: Tuple[float, float]
    rounds: int
    k_hats: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    fit: Optional[FitResult] = None
    bic: float = float("nan")


def bic_constant(n: int, p: int) -> float:
    """``C_{n,p} = log(log(n + p))``."""
    return float(np.log(np.log(n + p)))


def _bic(rss: float, n: int, p: int, k_hat: int) -> float:
    if rss <= 0.0:
        warnings.warn("perfect fit: residual sum of squares is zero", RuntimeWarning, stacklevel=3)
        return float("-inf")
    return float(np.log(rss / n) + bic_constant(n, p) * np.log(n) / n * k_hat * p)


def modified_bic(fit: FitResult, y, p: int) -> float:
    """``log(RSS/n) + log(log(n+p)) (log n / n) K p``.

    Returns ``-inf`` with a :class:`RuntimeWarning` for a perfect fit.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0 or fit.k_hat == 0:
        raise InvalidArgumentError("modified_bic needs a nonempty fit")
    resid = y - fit.fitted
    return _bic(float(resid @ resid), n, p, fit.k_hat)


def gcv_blocks(blocks: Sequence[Tuple[np.ndarray, np.ndarray]], penalties: Sequence[np.ndarray]) -> float:
    """GCV of a block-diagonal penalized fit.

    ``blocks`` holds ``(rows_k, y_k)`` per group and ``penalties`` the matching
    ``p x p`` penalty matrices. The hat matrix of each block uses the
    Moore-Penrose inverse of its normal matrix, so rank-deficient groups
    are allowed. Returns ``+inf`` when ``trace / n >= 1``.
    """
    n = sum(len(yk) for _, yk in blocks)
    rss = 0.0
    trace = 0.0
    for (rows, yk), pen in zip(blocks, penalties):
        m_pinv = np.linalg.pinv(rows.T @ rows + pen, hermitian=True)
        resid = yk - rows @ (m_pinv @ (rows.T @ yk))
        rss += float(resid @ resid)
        trace += float(np.einsum("ij,ji->", m_pinv, rows.T @ rows))
    if trace / n >= 1.0 - 1e-12:
        logger.debug("degenerate hat matrix: trace/n = %.6g", trace / n)
        return float("inf")
    return rss / (1.0 - trace / n) ** 2


def _design(data: Union[Dataset, Design]) -> Design:
    return data if isinstance(data, Design) else assemble(data)


def gcv(lambda1: float, partition, dataset: Union[Dataset, Design]) -> float:
    """GCV score of the group-wise penalized fit for a fixed partition.

    Every group ``k`` is fitted with ``(Ht_k'Ht_k + lambda1 G0)^+ Ht_k' y_k``,
    where ``Ht_k`` stacks the design rows of its members.
    """
    design = _design(dataset)
    groups = [np.asarray(g, dtype=int) for g in partition]
    if not groups or any(len(g) == 0 for g in groups):
        raise InvalidArgumentError("gcv needs a partition of nonempty groups")
    blocks = [(design.rows[g], design.y[g]) for g in groups]
    return gcv_blocks(blocks, [lambda1 * design.G0] * len(groups))


def _argmin_toward_larger(values: np.ndarray, grid: np.ndarray) -> int:
    """Index of the minimum; ties go to the largest grid value."""
    finite = np.isfinite(values)
    if not np.any(finite):
        return -1
    best = np.min(values[finite])
    ties = np.flatnonzero(finite & (values == best))
    return int(ties[np.argmax(grid[ties])])


def _bic_path(design: Design, grid: np.ndarray, config: PenaltyConfig):
    fits = fit_path(design, grid, config)
    bics = np.array([modified_bic(f, design.y, design.p) if f is not None else np.nan for f in fits])
    ks = np.array([f.k_hat if f is not None else -1 for f in fits])
    return fits, bics, ks


def two_step_tune(dataset: Union[Dataset, Design], lambda2_grid=None, lambda1_grid=None,
                  rounds: int = 1, config: Optional[PenaltyConfig] = None) -> TuneReport:
    """Select ``(lambda1, lambda2)`` and return the traces with the final fit.

    Round one holds ``lambda1 = 0.005`` and minimizes the modified BIC over
    ``lambda2_grid``; round two minimizes GCV over ``lambda1_grid`` for the
    selected partition. Later rounds repeat both steps from the new
    ``lambda1`` and stop once the choice repeats. Ties go to the larger value.

    Raises
    ------
    TuningFailureError
        If every fit along the ``lambda2`` path diverged.
    """
    design = _design(dataset)
    grid2 = np.asarray(default_lambda2_grid() if lambda2_grid is None else lambda2_grid, dtype=float)
    grid1 = np.asarray(DEFAULT_LAMBDA1_GRID if lambda1_grid is None else lambda1_grid, dtype=float)
    if grid2.size == 0 or grid1.size == 0:
        raise InvalidArgumentError("tuning grids must be nonempty")
    if rounds < 1:
        raise InvalidArgumentError("rounds must be >= 1")
    config = config or PenaltyConfig()

    lam1 = DEFAULT_LAMBDA1
    chosen = None
    done = 0
    for r in range(rounds):
        fits, bics, ks = _bic_path(design, grid2, replace(config, lambda1=lam1))
        i2 = _argmin_toward_larger(bics, grid2)
        if i2 < 0:
            raise TuningFailureError("every fit along the lambda2 path diverged")
        selected = fits[i2]
        gcvs = np.array([gcv(l1, selected.partition, design) for l1 in grid1])
        i1 = _argmin_toward_larger(gcvs, grid1)
        if i1 < 0:
            raise TuningFailureError("GCV is degenerate for every lambda1")
        done = r + 1
        new = (float(grid1[i1]), float(grid2[i2]))
        repeated = new == chosen
        chosen, lam1 = new, new[0]
        if repeated:
            break

    if selected.lambda1 == chosen[0]:
        final = selected
    else:
        final = admm_fit(design, replace(config, lambda1=chosen[0], lambda2=chosen[1]),
                         theta0=selected.theta)
    return TuneReport(grid2, bics, grid1, gcvs, chosen, done, ks, final,
                      modified_bic(final, design.y, design.p))


def continuation_fit(dataset: Union[Dataset, Design], config: PenaltyConfig,
                     ladder=None) -> FitResult:
    """Fit at ``config.lambda2`` by following the path from smaller values.

    ``ladder`` defaults to the points of the default ``lambda2`` grid below
    the target.

    Raises
    ------
    TuningFailureError
        If the fit at the target value diverged.
    """
    design = _design(dataset)
    target = config.lambda2
    ladder = default_lambda2_grid() if ladder is None else np.asarray(ladder, dtype=float)
    values = np.append(ladder[ladder < target], target)
    fit = fit_path(design, values, config)[-1]
    if fit is None:
        raise TuningFailureError(f"fit at lambda2={target:g} diverged")
    return fit
