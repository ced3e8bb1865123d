"""Synthetic heterogeneous functional regression data.

Covariates are random combinations of a quintic-order B-spline basis with
15 interior knots on [0, 1]; responses are ``int X_i(t) xi_k(t) dt + noise``
for the subject's group ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bspline import BSplineBasis, build_basis, eval_basis, integrate, panel_rule, project_function
from .design import Dataset, FunctionalSample
from .errors import InvalidArgumentError

__all__ = [
    "SCENARIOS",
    "ScenarioSpec",
    "TruthRecord",
    "scenario_coefficients",
    "l2_distance",
    "generate",
    "group_sizes",
    "responses_from_coeffs",
]


def _s1():
    return [lambda t: 4 * np.sin(np.pi * t) - 1,
            lambda t: 10 * (t - 0.5) ** 2 - 2]


def _s2():
    return [lambda t: 3 * t + 2,
            lambda t: 3 * t - 2]


def _ex2():
    return [lambda t: -6 * t + 2,
            lambda t: 6 * t ** 3 + 10 * t ** 2 - 10 * t - 3,
            lambda t: -np.exp(2 * t) + 3 * np.sin(2 * t) + 1.5]


SCENARIOS: Dict[str, Callable[[], List[Callable]]] = {"s1": _s1, "s2": _s2, "ex2": _ex2}
_ALIASES = {"s1_nonlinear": "s1", "s2_linear": "s2", "ex2_three": "ex2"}
UNBALANCED_RATIOS = {2: (1, 3), 3: (2, 3, 5)}


def _scenario_key(scenario: str) -> str:
    key = _ALIASES.get(str(scenario).lower(), str(scenario).lower())
    if key not in SCENARIOS:
        raise InvalidArgumentError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    return key


def scenario_coefficients(scenario: str) -> List[Callable[[np.ndarray], np.ndarray]]:
    """True coefficient functions of a scenario, vectorized over ``t`` in [0, 1]."""
    return SCENARIOS[_scenario_key(scenario)]()


def l2_distance(f: Callable, g: Callable, a: float = 0.0, b: float = 1.0) -> float:
    """L2 distance on ``[a, b]`` by a 256-point composite Gauss-Legendre rule."""
    return float(np.sqrt(integrate(lambda t: (f(t) - g(t)) ** 2, a, b)))


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "s1"
    structure: str = "balanced"
    n: int = 40
    coeff_dist: str = "norm"
    noise_sd: float = 1.0
    covariate_order: int = 5
    covariate_knots: int = 15
    seed: int = 0
    grid_points: int = 256

    def __post_init__(self):
        object.__setattr__(self, "scenario", _scenario_key(self.scenario))
        if self.structure not in ("balanced", "unbalanced"):
            raise InvalidArgumentError(f"structure must be balanced or unbalanced, got {self.structure!r}")
        if self.coeff_dist not in ("norm", "unif"):
            raise InvalidArgumentError(f"coeff_dist must be norm or unif, got {self.coeff_dist!r}")
        if self.noise_sd < 0:
            raise InvalidArgumentError("noise_sd must be nonnegative")
        group_sizes(self)

    @property
    def n_groups(self) -> int:
        return len(SCENARIOS[self.scenario]())

    def covariate_basis(self) -> BSplineBasis:
        return build_basis(self.covariate_order, self.covariate_knots, (0.0, 1.0))


@dataclass
class TruthRecord:
    partition: List[np.ndarray]
    scenario: str
    labels: np.ndarray
    theta_true: Optional[np.ndarray] = None

    @property
    def functions(self) -> List[Callable]:
        return scenario_coefficients(self.scenario)


def group_sizes(spec: ScenarioSpec) -> Tuple[int, ...]:
    k = spec.n_groups
    ratio = (1,) * k if spec.structure == "balanced" else UNBALANCED_RATIOS[k]
    total = sum(ratio)
    if spec.n <= 0 or spec.n % total:
        raise InvalidArgumentError(
            f"n={spec.n} cannot be split in ratio {':'.join(map(str, ratio))}"
        )
    return tuple(r * spec.n // total for r in ratio)


def _function_moments(basis: BSplineBasis, funcs: Sequence[Callable]) -> np.ndarray:
    """``int Btilde_l(t) xi_k(t) dt`` for every group ``k`` (rows) and basis function ``l``."""
    edges = np.unique(np.concatenate(
        [np.linspace(lo, hi, 5) for lo, hi in zip(basis.breakpoints[:-1], basis.breakpoints[1:])]
    ))
    x, w = panel_rule(edges, 12)
    bx = eval_basis(basis, x) * w[:, None]
    return np.vstack([f(x) @ bx for f in funcs])


def responses_from_coeffs(coeffs: np.ndarray, labels: np.ndarray, scenario: str,
                          covariate_basis: BSplineBasis, noise: np.ndarray) -> np.ndarray:
    moments = _function_moments(covariate_basis, scenario_coefficients(scenario))
    return np.einsum("il,il->i", coeffs, moments[labels]) + noise


def generate(spec: ScenarioSpec, basis: Optional[BSplineBasis] = None) -> Tuple[Dataset, TruthRecord]:
    """Draw a dataset and its ground truth; a pure function of ``spec``.

    Subjects are laid out group by group and then shuffled, so group
    membership carries no information about position.
    """
    basis = basis or build_basis(4, 8, (0.0, 1.0))
    cov_basis = spec.covariate_basis()
    sizes = group_sizes(spec)
    rng = np.random.default_rng(spec.seed)

    labels = np.repeat(np.arange(len(sizes)), sizes)[rng.permutation(spec.n)]
    shape = (spec.n, cov_basis.dim)
    if spec.coeff_dist == "norm":
        coeffs = rng.normal(2.0, 1.0, shape)
    else:
        coeffs = rng.uniform(0.0, 4.0, shape)
    noise = rng.normal(0.0, spec.noise_sd, spec.n) if spec.noise_sd > 0 else np.zeros(spec.n)
    y = responses_from_coeffs(coeffs, labels, spec.scenario, cov_basis, noise)

    grid = np.linspace(0.0, 1.0, spec.grid_points)
    curves = eval_basis(cov_basis, grid) @ coeffs.T
    width = len(str(spec.n))
    samples = tuple(
        FunctionalSample(f"s{i + 1:0{width}d}", grid, curves[:, i], y[i], coeffs=coeffs[i])
        for i in range(spec.n)
    )
    dataset = Dataset(samples, basis, cov_basis)

    funcs = scenario_coefficients(spec.scenario)
    dense = np.linspace(0.0, 1.0, 1024)
    theta_true = np.vstack([project_function(basis, f(dense), dense) for f in funcs])[labels]
    partition = [np.flatnonzero(labels == k) for k in range(len(sizes))]
    partition.sort(key=lambda g: g[0])
    return dataset, TruthRecord(partition, spec.scenario, labels, theta_true)
