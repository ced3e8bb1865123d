"""ADMM for pairwise MCP fusion of per-subject spline coefficients.

The objective is

    1/2 ||y - H theta||^2 + lambda1/2 theta' G theta
        + sum_{i<j} MCP(||theta_i - theta_j||; w_ij lambda2, tau)

split with ``eta_ij = theta_i - theta_j`` and multipliers ``zeta_ij``.
Coefficients are stored as ``(n, p)`` arrays and pair blocks as
``(n(n-1)/2, p)`` arrays in ``numpy.triu_indices`` order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.csgraph import connected_components

from .design import Dataset, Design, FunctionalSample, assemble, design_row, haversine_km
from .errors import DivergenceError, InvalidArgumentError, InvalidStateError, SingularSystemError

logger = logging.getLogger(__name__)

__all__ = [
    "PenaltyConfig",
    "SolverState",
    "FitResult",
    "PairIndex",
    "pair_index",
    "ThetaSystem",
    "init_theta",
    "homogeneous_fit",
    "theta_update",
    "mcp_penalty",
    "mcp_prox",
    "eta_zeta_update",
    "residuals",
    "objective",
    "admm_fit",
    "fit_path",
    "extract_groups",
    "fit_from_partition",
    "predict",
]


@dataclass(frozen=True)
class PenaltyConfig:
    """Tuning and stopping parameters of the fusion ADMM."""

    lambda1: float = 0.005
    lambda2: float = 1.0
    tau: float = 1.0
    delta: float = 2.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 2000
    group_tol: float = 1e-8

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgumentError("lambda1 and lambda2 must be nonnegative")
        if self.tau * self.delta <= 1:
            raise InvalidArgumentError(f"need tau*delta > 1, got {self.tau * self.delta}")
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise InvalidArgumentError("eps_abs and eps_rel must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")


@dataclass
class SolverState:
    theta: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    primal_residual_norm: float = float("inf")
    dual_residual_norm: float = float("inf")
    iter: int = 0


@dataclass
class FitResult:
    """Estimated partition and coefficients.

    ``partition`` holds sorted index arrays, ordered by smallest member.
    """

    partition: List[np.ndarray]
    alpha: np.ndarray
    theta: np.ndarray
    fitted: np.ndarray
    iters: int = 0
    converged: bool = True
    objective: float = float("nan")
    objective_init: float = float("nan")
    lambda1: float = float("nan")
    lambda2: float = float("nan")
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    ids: Tuple[str, ...] = field(default=())
    group_lambda1: Optional[np.ndarray] = None

    @property
    def k_hat(self) -> int:
        return len(self.partition)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    @property
    def labels(self) -> np.ndarray:
        lab = np.empty(self.n, dtype=int)
        for k, g in enumerate(self.partition):
            lab[g] = k
        return lab


# -----------------------------------------------------------------------------
# Pair bookkeeping
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class PairIndex:
    n: int
    i: np.ndarray
    j: np.ndarray
    delta_t: sp.csr_matrix  # n x P, the transpose of the pairwise difference operator

    @property
    def size(self) -> int:
        return len(self.i)

    def A(self, theta: np.ndarray) -> np.ndarray:
        return theta[self.i] - theta[self.j]

    def At(self, v: np.ndarray) -> np.ndarray:
        return self.delta_t @ v


@lru_cache(maxsize=8)
def pair_index(n: int) -> PairIndex:
    i, j = np.triu_indices(n, 1)
    m = len(i)
    cols = np.arange(m)
    data = np.concatenate([np.ones(m), -np.ones(m)])
    dt = sp.csr_matrix((data, (np.concatenate([i, j]), np.concatenate([cols, cols]))), shape=(n, m))
    return PairIndex(n, i, j, dt)


# -----------------------------------------------------------------------------
# Linear algebra
# -----------------------------------------------------------------------------

def _check_spd(mat: np.ndarray, what: str, rtol: float = 1e-13):
    ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if not np.all(np.isfinite(ev)) or ev[-1] <= 0 or ev[0] <= rtol * ev[-1]:
        raise SingularSystemError(f"{what} is singular; use lambda1 > 0")


class ThetaSystem:
    """Cached solver for ``(H'H + lambda1 G + delta A'A) theta = rhs``.

    With ``K_i = H_i'H_i + lambda1 G0`` and ``D_i = K_i + delta n I`` the matrix
    is ``diag(D_i) - delta (J_n (x) I_p)``. Woodbury reduces it to ``n``
    ``p x p`` inverses and one ``p x p`` capacitance matrix
    ``S = (1/n) sum_i D_i^{-1} K_i``.
    """

    def __init__(self, rows: np.ndarray, G0: np.ndarray, lambda1: float, delta: float):
        rows = np.asarray(rows, dtype=float)
        n, p = rows.shape
        self.n, self.p, self.lambda1, self.delta = n, p, float(lambda1), float(delta)
        self.rows, self.G0 = rows, G0
        K = rows[:, :, None] * rows[:, None, :] + lambda1 * G0[None]
        D = K + (delta * n) * np.eye(p)[None]
        try:
            np.linalg.cholesky(D)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("per-subject block is singular; use lambda1 > 0") from exc
        self.Dinv = np.linalg.inv(D)
        S = np.einsum("ijk,ikl->jl", self.Dinv, K) / n
        S = 0.5 * (S + S.T)
        _check_spd(S, "theta-update system")
        self._S = cho_factor(S)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = np.einsum("ijk,ik->ij", self.Dinv, rhs)
        if self.delta == 0.0:
            return x
        w = cho_solve(self._S, x.sum(axis=0))
        return x + self.delta * np.einsum("ijk,k->ij", self.Dinv, w)

    def matvec(self, theta: np.ndarray) -> np.ndarray:
        """Apply the system matrix without forming it."""
        ht = np.einsum("ij,ij->i", self.rows, theta)
        out = self.rows * ht[:, None] + self.lambda1 * theta @ self.G0
        return out + self.delta * (self.n * theta - theta.sum(axis=0))


def _ridge(rows: np.ndarray, y: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    lhs = rows.T @ rows + penalty
    _check_spd(lhs, "homogeneous normal equations")
    return np.linalg.solve(lhs, rows.T @ y)


def homogeneous_fit(design: Design, lambda1: float) -> np.ndarray:
    """Common coefficient vector minimizing ``||y - Ht theta||^2 + lambda1 theta'G0 theta``."""
    return _ridge(design.rows, design.y, lambda1 * design.G0)


def init_theta(data: Union[Dataset, Design], lambda1: float) -> np.ndarray:
    """Homogeneous fit replicated for every subject, shape ``(n, p)``."""
    design = _as_design(data)
    return np.tile(homogeneous_fit(design, lambda1), (design.n, 1))


def theta_update(state: SolverState, system: ThetaSystem, Hty: np.ndarray,
                 pairs: PairIndex) -> np.ndarray:
    delta = system.delta
    rhs = Hty + pairs.At(delta * state.eta + state.zeta)
    return system.solve(rhs)


# -----------------------------------------------------------------------------
# MCP
# -----------------------------------------------------------------------------

def mcp_penalty(t, gamma, tau: float) -> np.ndarray:
    """``gamma * int_0^t (1 - x/(tau gamma))_+ dx``."""
    t = np.asarray(t, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    inner = gamma * t - t * t / (2 * tau)
    return np.where(t <= tau * gamma, inner, 0.5 * tau * gamma * gamma)


def _prox_scale(norm: np.ndarray, gamma: np.ndarray, tau: float, delta: float) -> np.ndarray:
    scale = np.ones_like(norm)
    inside = norm < tau * gamma
    if np.any(inside):
        nv = norm[inside]
        gv = gamma[inside]
        shrink = np.divide(gv, delta * nv, out=np.full_like(nv, np.inf), where=nv > 0)
        scale[inside] = (tau * delta / (tau * delta - 1)) * np.maximum(0.0, 1.0 - shrink)
    return scale


def mcp_prox(u, omega, config: PenaltyConfig) -> np.ndarray:
    """Minimizer of ``delta/2 ||eta - u||^2 + MCP(||eta||; omega lambda2, tau)``.

    ``u`` is a ``p``-vector or a stack of them; ``omega`` a scalar or one
    weight per row.
    """
    u = np.asarray(u, dtype=float)
    rows = np.atleast_2d(u)
    gamma = np.broadcast_to(np.asarray(omega, dtype=float) * config.lambda2, (rows.shape[0],))
    norm = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    out = rows * _prox_scale(norm, gamma, config.tau, config.delta)[:, None]
    return out.reshape(u.shape)


def _pair_weights(weights, pairs: PairIndex) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim == 2:
        return w[pairs.i, pairs.j]
    if w.ndim == 0:
        return np.full(pairs.size, float(w))
    return w


def eta_zeta_update(state: SolverState, new_theta: np.ndarray, weights,
                    config: PenaltyConfig) -> Tuple[np.ndarray, np.ndarray]:
    """One proximal step on the pair blocks followed by the multiplier step.

    With the multiplier term ``zeta'(eta - A theta)`` in the augmented
    Lagrangian, ``u = A theta - zeta/delta`` and dual ascent moves ``zeta``
    along ``eta - A theta``. The opposite sign doubles ``zeta`` on every pair
    outside the MCP's concave region and diverges.
    """
    pairs = pair_index(new_theta.shape[0])
    diff = pairs.A(new_theta)
    u = diff - state.zeta / config.delta
    eta = mcp_prox(u, _pair_weights(weights, pairs), config)
    zeta = state.zeta + config.delta * (eta - diff)
    return eta, zeta


def residuals(prev: SolverState, cur: SolverState, config: PenaltyConfig):
    """Primal/dual residual norms and their stopping thresholds.

    Returns ``(primal, dual, eps_primal, eps_dual)`` where
    ``primal = ||A theta - eta||``, ``dual = delta ||A'(eta - eta_prev)||``,
    ``eps_primal = sqrt(np) eps_abs + eps_rel ||A' zeta_prev||`` and
    ``eps_dual = sqrt(n(n-1)p/2) eps_abs + eps_rel max(||A theta_prev||, ||eta_prev||)``.
    """
    n, p = cur.theta.shape
    pairs = pair_index(n)
    primal = float(np.linalg.norm(pairs.A(cur.theta) - cur.eta))
    dual = float(config.delta * np.linalg.norm(pairs.At(cur.eta - prev.eta)))
    eps_p = np.sqrt(n * p) * config.eps_abs + config.eps_rel * np.linalg.norm(pairs.At(prev.zeta))
    eps_d = (np.sqrt(n * (n - 1) * p / 2) * config.eps_abs
             + config.eps_rel * max(np.linalg.norm(pairs.A(prev.theta)), np.linalg.norm(prev.eta)))
    return primal, dual, float(eps_p), float(eps_d)


def objective(design: Design, theta: np.ndarray, config: PenaltyConfig) -> float:
    pairs = pair_index(design.n)
    resid = design.y - design.apply_H(theta)
    d = pairs.A(theta)
    gamma = _pair_weights(design.weights, pairs) * config.lambda2
    pen = mcp_penalty(np.sqrt(np.einsum("ij,ij->i", d, d)), gamma, config.tau).sum()
    return float(0.5 * resid @ resid + 0.5 * config.lambda1 * design.roughness(theta) + pen)


# -----------------------------------------------------------------------------
# Groups and results
# -----------------------------------------------------------------------------

def _sorted_partition(labels: np.ndarray) -> List[np.ndarray]:
    groups = [np.flatnonzero(labels == k) for k in np.unique(labels)]
    return sorted(groups, key=lambda g: g[0])


def extract_groups(eta: np.ndarray, n: int, tol: float = 0.0) -> List[np.ndarray]:
    """Connected components of the graph joining ``i, j`` when ``||eta_ij|| <= tol``."""
    pairs = pair_index(n)
    eta = np.asarray(eta, dtype=float).reshape(pairs.size, -1)
    fused = np.sqrt(np.einsum("ij,ij->i", eta, eta)) <= tol
    graph = sp.csr_matrix(
        (np.ones(int(fused.sum())), (pairs.i[fused], pairs.j[fused])), shape=(n, n)
    )
    _, labels = connected_components(graph, directed=False)
    return _sorted_partition(labels)


def fit_from_partition(design: Design, partition: Sequence[Sequence[int]], theta: np.ndarray,
                       **extra) -> FitResult:
    """Package per-subject coefficients and a partition into a :class:`FitResult`."""
    partition = [np.sort(np.asarray(g, dtype=int)) for g in partition]
    partition.sort(key=lambda g: g[0])
    alpha = np.vstack([theta[g].mean(axis=0) for g in partition])
    return FitResult(partition=partition, alpha=alpha, theta=theta,
                     fitted=design.apply_H(theta), ids=tuple(design.ids), **extra)


def _as_design(data: Union[Dataset, Design]) -> Design:
    return data if isinstance(data, Design) else assemble(data)


def admm_fit(data: Union[Dataset, Design], config: PenaltyConfig,
             theta0: Optional[np.ndarray] = None) -> FitResult:
    """Run the fusion ADMM to convergence or ``config.max_iter`` iterations.

    Starts from the homogeneous fit unless ``theta0`` is given, with
    ``eta = A theta0`` and ``zeta = 0``.

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite.
    """
    design = _as_design(data)
    n, p = design.n, design.p
    pairs = pair_index(n)
    w = _pair_weights(design.weights, pairs)
    system = ThetaSystem(design.rows, design.G0, config.lambda1, config.delta)
    Hty = design.rows * design.y[:, None]

    theta = init_theta(design, config.lambda1) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (n, p) or not np.all(np.isfinite(theta)):
        raise InvalidArgumentError(f"theta0 must be a finite ({n}, {p}) array")
    state = SolverState(theta, pairs.A(theta), np.zeros((pairs.size, p)))
    obj0 = objective(design, theta, config)
    converged = False
    for s in range(1, config.max_iter + 1):
        new_theta = theta_update(state, system, Hty, pairs)
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(s)
        eta, zeta = eta_zeta_update(state, new_theta, w, config)
        new = SolverState(new_theta, eta, zeta, iter=s)
        primal, dual, eps_p, eps_d = residuals(state, new, config)
        if not (np.isfinite(primal) and np.isfinite(dual)):
            raise DivergenceError(s)
        new.primal_residual_norm, new.dual_residual_norm = primal, dual
        state = new
        if primal <= eps_p and dual <= eps_d:
            converged = True
            break
    if not converged:
        logger.info("ADMM stopped at max_iter=%d (primal %.3g, dual %.3g)",
                    config.max_iter, state.primal_residual_norm, state.dual_residual_norm)

    theta = state.theta
    tol = config.group_tol * (1.0 + np.mean(np.linalg.norm(theta, axis=1)))
    partition = extract_groups(state.eta, n, tol) if n > 1 else [np.array([0])]
    return fit_from_partition(
        design, partition, theta,
        iters=state.iter, converged=converged or n == 1,
        objective=objective(design, theta, config), objective_init=obj0,
        lambda1=config.lambda1, lambda2=config.lambda2,
        primal_residual=state.primal_residual_norm, dual_residual=state.dual_residual_norm,
    )


def fit_path(data: Union[Dataset, Design], lambda2_values: Sequence[float],
             config: PenaltyConfig, theta0: Optional[np.ndarray] = None
             ) -> List[Optional[FitResult]]:
    """Fits along ascending ``lambda2`` values, each warm-started from the last.

    From a common start nearly every ``lambda2`` collapses to one group
    within a few iterations, so the path follows the solution as the fusion
    strength grows. A fit that diverges is recorded as ``None`` and the next
    value restarts from the last finite coefficients. Results are returned
    in the order of ``lambda2_values``.
    """
    design = _as_design(data)
    values = np.asarray(lambda2_values, dtype=float)
    order = np.argsort(values, kind="stable")
    out: List[Optional[FitResult]] = [None] * len(values)
    theta = theta0
    for k in order:
        try:
            fit = admm_fit(design, replace(config, lambda2=float(values[k])), theta0=theta)
        except DivergenceError as exc:
            logger.warning("lambda2=%g diverged at iteration %d", values[k], exc.iteration)
            continue
        out[k] = fit
        theta = fit.theta
    return out


# -----------------------------------------------------------------------------
# Prediction
# -----------------------------------------------------------------------------

def predict(fit: FitResult, new_sample: FunctionalSample, dataset: Dataset) -> float:
    """Predicted response for one subject.

    Training subjects (matched by id) use their own coefficients. New
    subjects take the group of the nearest training subject by great-circle
    distance, or the largest group when locations are unavailable.
    """
    if fit.k_hat == 0 or fit.theta.size == 0:
        raise InvalidStateError("empty fit")
    ids = list(fit.ids) if fit.ids else dataset.ids
    h = design_row(new_sample, dataset)
    if new_sample.subject_id in ids:
        i = ids.index(new_sample.subject_id)
        return float(h @ fit.theta[i])
    return float(h @ fit.alpha[assign_group(fit, new_sample, dataset)])


def assign_group(fit: FitResult, new_sample: FunctionalSample, dataset: Dataset) -> int:
    if fit.k_hat == 1:
        return 0
    locs = [s.location for s in dataset.samples]
    usable = len(locs) == fit.n and all(loc is not None for loc in locs)
    if new_sample.location is not None and usable:
        locs = np.asarray(locs)
        d = haversine_km(new_sample.location[0], new_sample.location[1], locs[:, 0], locs[:, 1])
        return int(fit.labels[int(np.argmin(d))])
    sizes = [len(g) for g in fit.partition]
    return int(np.argmax(sizes))


def with_config(config: PenaltyConfig, **changes) -> PenaltyConfig:
    return replace(config, **changes)
