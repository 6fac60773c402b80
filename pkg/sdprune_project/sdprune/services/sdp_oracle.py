"""Exact structured directional pruning for models whose Hessian fits in memory.

Pipeline: Hessian at w* -> flat subspace P0 (near-zero eigenvalues) -> projection
Pi -> direction factors s_i = <E(w*_i), Pi_i(E_G(w*))> -> group prox with weight lam * s_i.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sdprune.core.errors import DimensionError, InputError, PreconditionError
from sdprune.core.linalg import DenseMatrix, check_symmetric, sym_eigen
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.schemas.result_schemas import PruneSolutionRecord
from sdprune.services.datasets import Dataset
from sdprune.services.grouping import GroupPartition, group_norms, normalize_groups, zero_groups
from sdprune.services.model import full_gradient, hessian_fd, loss, quadratic_hessian
from sdprune.services.prox import shrink_factor

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-12
NEGATIVE_EPS = 1e-12


@dataclass(frozen=True)
class FlatSubspace:
    p0: DenseMatrix
    eigenvalues: np.ndarray
    zero_tol_rel: float
    k: int
    degenerate: bool = False

    @property
    def d(self) -> int:
        return int(self.p0.shape[0])


def flat_subspace(h, zero_tol_rel: float = 1e-3) -> FlatSubspace:
    if not 0 < zero_tol_rel < 1:
        raise InputError(f"zero_tol_rel must lie in (0, 1), got {zero_tol_rel}")
    eig = sym_eigen(check_symmetric(h))
    scale = max(float(np.max(np.abs(eig.eigenvalues))), EIGEN_FLOOR)
    keep = np.abs(eig.eigenvalues) <= zero_tol_rel * scale
    degenerate = bool(keep.all())
    if degenerate:
        logger.warning("every Hessian eigenvalue is ~0: the flat subspace is the whole space")
    return FlatSubspace(eig.eigenvectors[:, keep], eig.eigenvalues, zero_tol_rel, int(keep.sum()), degenerate)


def project(sub: FlatSubspace, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != sub.d:
        raise DimensionError(f"vector has shape {x.shape}, subspace lives in dimension {sub.d}")
    return sub.p0 @ (sub.p0.T @ x)


def hessian_at(spec: ModelSpec, w: np.ndarray, dataset: Dataset) -> DenseMatrix:
    """Closed form for bias-free single-output linear models, finite differences otherwise."""
    if spec.kind != "mlp" and not spec.has_bias and spec.out_dim == 1:
        return quadratic_hessian(dataset)
    return hessian_fd(spec, w, dataset)


def _check_vector(w, g: GroupPartition, sub: FlatSubspace) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != g.d or g.d != sub.d:
        raise DimensionError(f"w has shape {w.shape}; partition d={g.d}, subspace d={sub.d}")
    return w


def direction_factors(w_star, g: GroupPartition, sub: FlatSubspace, allow_zero_groups: bool = False) -> np.ndarray:
    w_star = _check_vector(w_star, g, sub)
    zero = zero_groups(w_star, g)
    if zero.any() and not allow_zero_groups:
        raise PreconditionError(f"group {int(np.flatnonzero(zero)[0])} of w* is zero")
    e = normalize_groups(w_star, g)
    s = np.bincount(g.group_ids, weights=e * project(sub, e), minlength=len(g))
    negative = int(np.sum(s < -NEGATIVE_EPS))
    if negative:
        logger.warning("%d of %d direction factors are negative; those groups grow under pruning", negative, len(g))
    return s


@dataclass(frozen=True)
class PruneSolution:
    w_pruned: np.ndarray
    s: np.ndarray
    shrink: np.ndarray
    lam: float
    pruned_groups: Tuple[int, ...] = field(default=())

    def to_record(self, config_hash: Optional[str] = None) -> PruneSolutionRecord:
        return PruneSolutionRecord(lam=self.lam, w_pruned=self.w_pruned.tolist(), s=self.s.tolist(),
                                   shrink=self.shrink.tolist(), pruned_groups=list(self.pruned_groups),
                                   config_hash=config_hash)


def _apply(w_star: np.ndarray, g: GroupPartition, s: np.ndarray, lam: float) -> PruneSolution:
    norms = group_norms(w_star, g)
    if lam == 0.0:
        shrink = (norms > 0).astype(np.float64)
    else:
        shrink = np.array([shrink_factor(n, lam * si) for n, si in zip(norms, s)])
    per_entry = shrink[g.group_ids]
    w_pruned = np.where(per_entry > 0, per_entry * w_star, 0.0)
    pruned = tuple(int(i) for i in np.flatnonzero(shrink == 0.0))
    return PruneSolution(w_pruned, s, shrink, lam, pruned)


def exact_sdp_prune(w_star, g: GroupPartition, sub: FlatSubspace, lam: float,
                    s: Optional[np.ndarray] = None, allow_zero_groups: bool = False) -> PruneSolution:
    """Per group (1 - lam*s_i/||w*_i||)_+ w*_i; lam = 0 returns w* unchanged."""
    if lam < 0:
        raise InputError(f"lam must be >= 0, got {lam}")
    w_star = _check_vector(w_star, g, sub)
    if s is None:
        s = direction_factors(w_star, g, sub, allow_zero_groups)
    return _apply(w_star, g, np.asarray(s, dtype=np.float64), lam)


def naive_prune(w_star, g: GroupPartition, lam: float) -> PruneSolution:
    """Plain group-lasso prox (s_i = 1 for every group)."""
    if lam < 0:
        raise InputError(f"lam must be >= 0, got {lam}")
    w_star = np.asarray(w_star, dtype=np.float64)
    if w_star.ndim != 1 or w_star.shape[0] != g.d:
        raise DimensionError(f"w has shape {w_star.shape}, partition expects ({g.d},)")
    return _apply(w_star, g, np.ones(len(g)), lam)


@dataclass(frozen=True)
class PerturbationResidual:
    parallel: float
    orthogonal: float
    per_group_orthogonal: np.ndarray


def perturbation_check(sol: PruneSolution, w_star, g: GroupPartition, sub: FlatSubspace) -> PerturbationResidual:
    """Parallel and orthogonal parts of Pi_i(E_G(w*)) relative to s_i E(w*_i)."""
    if sol.pruned_groups:
        raise PreconditionError(f"groups {list(sol.pruned_groups)} are pruned; the identity holds off the clamp only")
    w_star = _check_vector(w_star, g, sub)
    e = normalize_groups(w_star, g)
    pe = project(sub, e)
    parallel = np.abs(sol.s - np.bincount(g.group_ids, weights=e * pe, minlength=len(g)))
    resid = pe - sol.s[g.group_ids] * e
    orthogonal = np.sqrt(np.bincount(g.group_ids, weights=resid * resid, minlength=len(g)))
    logger.debug("perturbation residuals: parallel %.3e, orthogonal %.3e", parallel.max(), orthogonal.max())
    return PerturbationResidual(float(parallel.max()), float(orthogonal.max()), orthogonal)


def first_clamp(w_star, g: GroupPartition, s: np.ndarray) -> Optional[float]:
    """Smallest lam at which some group with s_i > 0 is pruned to zero; None when no s_i > 0."""
    norms = group_norms(w_star, g)
    positive = (s > NEGATIVE_EPS) & (norms > 0)
    if not positive.any():
        return None
    return float(np.min(norms[positive] / s[positive]))


@dataclass(frozen=True)
class FlatnessRow:
    lam: float
    sdp_delta: float
    naive_delta: float
    sdp_pruned: int
    naive_pruned: int


@dataclass(frozen=True)
class FlatnessReport:
    rows: List[FlatnessRow]
    gradient_norm: float
    clamp: Optional[float]
    warnings: List[str]

    @property
    def lambdas(self) -> List[float]:
        return [r.lam for r in self.rows]


def lambda_grid(clamp: Optional[float], w_star, g: GroupPartition, n_lambdas: int) -> np.ndarray:
    """Log grid strictly below the first clamp (or below the largest group norm when nothing clamps)."""
    top = clamp if clamp is not None else float(group_norms(w_star, g).max())
    top = 0.99 * top
    if top <= 0:
        return np.zeros(0)
    return np.geomspace(top * 1e-3, top, n_lambdas)


def loss_flatness_check(spec: ModelSpec, dataset: Dataset, w_star, g: GroupPartition, sub: FlatSubspace,
                        lambdas: Optional[Sequence[float]] = None, n_lambdas: int = 12, grad_tol: float = 1e-4,
                        allow_zero_groups: bool = False, s: Optional[np.ndarray] = None) -> FlatnessReport:
    """Loss change under exact SDP pruning and under naive group-lasso pruning over a lam grid."""
    w_star = _check_vector(w_star, g, sub)
    warnings = []
    gradient_norm = float(np.linalg.norm(full_gradient(spec, w_star, dataset)))
    if gradient_norm > grad_tol:
        message = f"w* is not a stationary point: ||grad|| = {gradient_norm:.3e} > {grad_tol:.1e}"
        logger.warning(message)
        warnings.append(message)
    if s is None:
        s = direction_factors(w_star, g, sub, allow_zero_groups)
    clamp = first_clamp(w_star, g, s)
    grid = np.asarray(lambdas if lambdas is not None else lambda_grid(clamp, w_star, g, n_lambdas), dtype=np.float64)
    if np.any(grid < 0):
        raise InputError("lambdas must be >= 0")
    base = loss(spec, w_star, dataset)
    rows = [FlatnessRow(0.0, 0.0, 0.0, 0, 0)] if lambdas is None else []
    for lam in grid:
        sdp = exact_sdp_prune(w_star, g, sub, float(lam), s=s)
        naive = naive_prune(w_star, g, float(lam))
        rows.append(FlatnessRow(float(lam), loss(spec, sdp.w_pruned, dataset) - base,
                                loss(spec, naive.w_pruned, dataset) - base,
                                len(sdp.pruned_groups), len(naive.pruned_groups)))
    return FlatnessReport(rows, gradient_norm, clamp, warnings)
