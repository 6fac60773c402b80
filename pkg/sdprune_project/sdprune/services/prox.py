"""Group proximal operator for the direction-weighted group lasso, and independent oracles.

For a group w* the problem is

    minimize_w  0.5 * ||w* - w||^2 + lam * s * ||w||

with lam > 0 and s of any sign. The minimizer is colinear with w* and equals
(1 - lam*s/||w*||)_+ w*; for s < 0 the factor exceeds one and the group grows.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from sdprune.core.errors import DimensionError, InputError, PreconditionError
from sdprune.core.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_GRID = 1_000_000


@dataclass(frozen=True)
class ProxProblem:
    w_star: np.ndarray
    lam: float
    s: float

    def __post_init__(self):
        w = np.asarray(self.w_star, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise DimensionError("w_star must be nonempty")
        if not np.all(np.isfinite(w)) or not np.isfinite(self.s):
            raise InputError("w_star and s must be finite")
        if not self.lam > 0:
            raise InputError(f"lam must be > 0, got {self.lam}")
        object.__setattr__(self, "w_star", w)

    @property
    def weight(self) -> float:
        return self.lam * self.s

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w_star))


def shrink_factor(norm: float, weight: float) -> float:
    """(1 - weight/norm)_+, with the zero group mapped to factor 0."""
    if norm == 0.0:
        return 0.0
    return max(0.0, 1.0 - weight / norm)


def prox_objective(p: ProxProblem, x: np.ndarray) -> float:
    diff = p.w_star - x
    return 0.5 * float(np.dot(diff, diff)) + p.weight * float(np.linalg.norm(x))


def group_prox(p: ProxProblem) -> np.ndarray:
    factor = shrink_factor(p.norm, p.weight)
    if factor == 0.0:
        return np.zeros_like(p.w_star)
    return factor * p.w_star


def _line_objective(alpha, norm: float, weight: float):
    # f(alpha * E(w*)) = 0.5 (||w*|| - alpha)^2 + weight |alpha|
    return 0.5 * (norm - alpha) ** 2 + weight * np.abs(alpha)


def brute_force_prox(p: ProxProblem, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Dense 1-D search along E(w*) refined by bounded Brent (golden-section) minimization.

    Ties on the grid resolve to the lowest alpha.
    """
    norm = p.norm
    if norm == 0.0:
        raise PreconditionError("the line oracle needs w_star != 0")
    if grid < 3:
        raise InputError("grid needs at least 3 points")
    weight = p.weight
    half_width = 3.0 * (norm + abs(weight))
    alphas = np.linspace(-half_width, half_width, grid)
    values = _line_objective(alphas, norm, weight)
    k = int(np.argmin(values))
    lo, hi = alphas[max(k - 1, 0)], alphas[min(k + 1, grid - 1)]
    best_alpha, best_value = float(alphas[k]), float(values[k])
    if hi > lo:
        res = minimize_scalar(lambda a: _line_objective(a, norm, weight), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-13 * max(1.0, half_width)})
        if res.fun <= best_value:
            best_alpha = float(res.x)
    return best_alpha * (p.w_star / norm)


def multistart_prox(p: ProxProblem, restarts: int = 20, seed: int = 0) -> np.ndarray:
    """Full-dimensional Nelder-Mead from random starts; checks colinearity for dims <= 3."""
    dim = p.w_star.shape[0]
    if dim > 3:
        raise InputError("the multi-start oracle is limited to groups of at most 3 parameters")
    rng = make_rng(seed)
    scale = max(p.norm + abs(p.weight), 1.0)
    starts = [np.zeros(dim), p.w_star.copy()] + [scale * rng.standard_normal(dim) for _ in range(restarts)]
    best_x, best_f = None, np.inf
    for x0 in starts:
        res = minimize(lambda x: prox_objective(p, x), x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    return best_x


def stationary_values(p: ProxProblem) -> Tuple[float, float]:
    """Objective at the two stationary points (1 -/+ lam*s/||w*||) w* of the s < 0 case."""
    if p.s >= 0:
        raise PreconditionError("stationary_values is defined for s < 0 only")
    norm = p.norm
    if norm == 0.0:
        raise PreconditionError("stationary_values needs w_star != 0")
    sp1 = (1.0 - p.weight / norm) * p.w_star
    sp2 = (1.0 + p.weight / norm) * p.w_star
    return prox_objective(p, sp1), prox_objective(p, sp2)


@dataclass(frozen=True)
class ProxCase:
    case: int
    dim: int
    lam: float
    s: float
    norm: float
    residual: float
    scaled_residual: float
    passed: bool
    f_sp1: Optional[float] = None
    f_sp2: Optional[float] = None


@dataclass(frozen=True)
class ProxSuiteResult:
    cases: List[ProxCase]
    tol: float
    seed: int

    @property
    def n_failed(self) -> int:
        return sum(not c.passed for c in self.cases)

    @property
    def stationary_violations(self) -> int:
        return sum(c.f_sp1 is not None and not c.f_sp1 < c.f_sp2 for c in self.cases)

    @property
    def max_scaled_residual(self) -> float:
        return max((c.scaled_residual for c in self.cases), default=0.0)

    @property
    def passed(self) -> bool:
        return self.n_failed == 0 and self.stationary_violations == 0


def random_problem(rng: np.random.Generator, case: int, max_dim: int = 20) -> ProxProblem:
    """Dims 1..max_dim, lam*s uniform in [-3||w*||, 3||w*||]; every tenth case has s = 0."""
    dim = int(rng.integers(1, max_dim + 1))
    w_star = rng.standard_normal(dim) * rng.uniform(0.1, 5.0)
    norm = float(np.linalg.norm(w_star))
    lam = float(rng.uniform(0.1, 2.0))
    weight = 0.0 if case % 10 == 0 else float(rng.uniform(-3.0, 3.0)) * norm
    return ProxProblem(w_star, lam, weight / lam)


def oracle_equivalence_suite(n_cases: int, seed: int, tol: float = 1e-6, grid: int = 20001) -> ProxSuiteResult:
    """group_prox against brute_force_prox on random problems; residual scaled by 1 + ||w*||."""
    rng = make_rng(seed)
    cases = []
    for i in range(n_cases):
        p = random_problem(rng, i)
        exact = group_prox(p)
        oracle = brute_force_prox(p, grid=grid)
        residual = float(np.linalg.norm(exact - oracle))
        scaled = residual / (1.0 + p.norm)
        f_sp = stationary_values(p) if p.s < 0 else (None, None)
        cases.append(ProxCase(i, p.w_star.shape[0], p.lam, p.s, p.norm, residual, scaled,
                              scaled <= tol, f_sp[0], f_sp[1]))
    result = ProxSuiteResult(cases, tol, seed)
    logger.info("prox oracle suite: %d cases, %d failed, max scaled residual %.3e",
                n_cases, result.n_failed, result.max_scaled_residual)
    return result
