"""Partition agreement and estimation accuracy.

Partitions may be given as label vectors or as collections of member
groups (integer indices or subject ids). Group-based partitions are compared
on their member sets, which must coincide.
"""

from __future__ import annotations

from typing import Hashable, Iterable, List, Optional, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .bspline import BSplineBasis, eval_basis, panel_rule
from .design import Dataset
from .errors import InvalidArgumentError
from .simgen import TruthRecord
from .solver import FitResult, predict

__all__ = [
    "partition_labels",
    "adjusted_rand_index",
    "nmi",
    "coef_mse",
    "prediction_mse",
    "k_hat_counts",
]


def _is_label_vector(part) -> bool:
    if isinstance(part, np.ndarray):
        return part.ndim == 1 and part.dtype != object
    return len(part) > 0 and all(np.isscalar(x) for x in part)


def _membership(part) -> dict:
    out = {}
    for k, group in enumerate(part):
        for member in np.atleast_1d(np.asarray(group)).tolist():
            if member in out:
                raise InvalidArgumentError(f"member {member!r} appears in more than one group")
            out[member] = k
    return out


def partition_labels(a, b) -> tuple:
    """Aligned label vectors for two partitions of the same index set."""
    if _is_label_vector(a) and _is_label_vector(b):
        la, lb = np.asarray(a), np.asarray(b)
        if la.shape != lb.shape:
            raise InvalidArgumentError(f"label vectors differ in length: {len(la)} vs {len(lb)}")
        return la, lb
    ma = _membership(a) if not _is_label_vector(a) else dict(enumerate(np.asarray(a).tolist()))
    mb = _membership(b) if not _is_label_vector(b) else dict(enumerate(np.asarray(b).tolist()))
    if set(ma) != set(mb):
        raise InvalidArgumentError("partitions are over different index sets")
    keys = sorted(ma, key=lambda x: (str(type(x)), x))
    return np.array([ma[k] for k in keys]), np.array([mb[k] for k in keys])


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two partitions."""
    la, lb = partition_labels(a, b)
    return float(adjusted_rand_score(la, lb))


def nmi(a, b) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies."""
    la, lb = partition_labels(a, b)
    return float(normalized_mutual_info_score(la, lb, average_method="arithmetic"))


def _mse_rule(basis: BSplineBasis):
    # 4 panels of 8 nodes per knot span: the spline part is integrated exactly
    edges = np.unique(np.concatenate(
        [np.linspace(lo, hi, 5) for lo, hi in zip(basis.breakpoints[:-1], basis.breakpoints[1:])]
    ))
    return panel_rule(edges, 8)


def coef_mse(fit: FitResult, truth: TruthRecord, basis: BSplineBasis) -> float:
    """Average over subjects of ``int (xi_k(i) - B theta_i)^2``."""
    labels = np.asarray(truth.labels)
    if len(labels) != fit.n:
        raise InvalidArgumentError(f"truth has {len(labels)} subjects, fit has {fit.n}")
    x, w = _mse_rule(basis)
    est = eval_basis(basis, x) @ fit.theta.T
    true = np.column_stack([f(x) * np.ones_like(x) for f in truth.functions])[:, labels]
    return float(np.mean(w @ (true - est) ** 2))


def prediction_mse(fit: FitResult, test_dataset: Dataset, train_dataset: Optional[Dataset] = None) -> float:
    """Mean squared prediction error on ``test_dataset``.

    ``train_dataset`` supplies subject locations for group assignment and
    defaults to the test data itself.
    """
    ref = train_dataset if train_dataset is not None else test_dataset
    yhat = np.array([predict(fit, s, ref) for s in test_dataset.samples])
    return float(np.mean((test_dataset.y - yhat) ** 2))


def k_hat_counts(k_values: Iterable[int]) -> dict:
    """Histogram of estimated group counts as ``{k: count}``."""
    vals, counts = np.unique(np.asarray(list(k_values), dtype=int), return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}
