"""Diagnostics: trajectory logs, asymptotic residual checks on deterministic problems, angles and FLOPs."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdprune.core.errors import DivergenceError, InputError, NumericError, SignCrossingError, StructuralError
from sdprune.core.linalg import sym_eigen
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.datasets import Dataset
from sdprune.services.grouping import GroupPartition, group_norms, normalize_groups
from sdprune.services.model import full_gradient, quadratic_hessian
from sdprune.services.optim import altsdp_init, altsdp_step, tuning
from sdprune.services.sdp_oracle import direction_factors, exact_sdp_prune, flat_subspace, hessian_at

logger = logging.getLogger(__name__)

MU_RANGE = (0.5, 1.0)


@dataclass(frozen=True)
class TrajectoryRecord:
    n: int
    t: float
    train_loss: float
    sparsity: float
    test_accuracy: Optional[float] = None
    group_norms: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None


@dataclass
class TrajectoryLog:
    records: List[TrajectoryRecord] = field(default_factory=list)

    def append(self, record: TrajectoryRecord) -> None:
        if self.records and record.n <= self.records[-1].n:
            raise InputError(f"trajectory records must be ordered by n ({record.n} after {self.records[-1].n})")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> List[Tuple]:
        return [(r.n, r.t, r.train_loss, r.test_accuracy, r.sparsity) for r in self.records]

    def snapshots(self) -> List[Tuple[float, np.ndarray]]:
        return [(r.t, r.w) for r in self.records if r.w is not None]


@dataclass(frozen=True)
class ResidualSeries:
    gamma: float
    times: np.ndarray
    residuals: np.ndarray
    seed: Optional[int] = None

    @property
    def final(self) -> float:
        return float(self.residuals[-1])

    def to_rows(self) -> List[Tuple[float, float, float]]:
        return [(float(t), float(r), self.gamma) for t, r in zip(self.times, self.residuals)]


def mu_in_range(mu: float) -> bool:
    return MU_RANGE[0] < mu < MU_RANGE[1]


def _n_steps(gamma: float, t_end: float) -> int:
    if not gamma > 0 or not t_end > 0:
        raise InputError("gamma and t_end must be > 0")
    return max(1, int(round(t_end / gamma)))


def _is_quadratic(spec: ModelSpec) -> bool:
    return spec.kind != "mlp" and not spec.has_bias and spec.out_dim == 1 and spec.loss == "mse"


def theorem2_residual(spec: ModelSpec, dataset: Dataset, w0, gamma: float, c: float, mu: float, t_end: float,
                      partition: GroupPartition, zero_tol_rel: float = 1e-6, n_points: int = 100,
                      seed: Optional[int] = None) -> ResidualSeries:
    """AltSDP iterate against the closed-form directional pruning of the GD iterate at the same t.

    Both runs use full-batch gradients and the same gamma from w0. The direction factors
    come from the Hessian at the GD endpoint. Residuals are stamped at t = (n+1) * gamma, the
    time of the iterates after step n, and compared at lam = c * sqrt(gamma) * (n * gamma)^mu,
    the threshold that step applied.
    """
    if not mu_in_range(mu):
        logger.warning("mu=%.3g lies outside (0.5, 1): the asymptotic guarantee does not apply", mu)
    total = _n_steps(gamma, t_end)
    every = max(1, total // n_points)
    state = altsdp_init(w0, partition, gamma, c, mu)
    w_gd = state.w.copy()
    marks, lams, gd_snaps, alt_snaps = [], [], [], []
    try:
        for n in range(total):
            altsdp_step(state, full_gradient(spec, state.w, dataset))
            w_gd = w_gd - gamma * full_gradient(spec, w_gd, dataset)
            if (n + 1) % every == 0 or n + 1 == total:
                if not (np.all(np.isfinite(w_gd)) and np.all(np.isfinite(state.w))):
                    raise DivergenceError("theorem-2 run left the finite range", step=n + 1)
                marks.append((n + 1) * gamma)
                lams.append(tuning(n, gamma, c, mu))
                gd_snaps.append(w_gd.copy())
                alt_snaps.append(state.w.copy())
    except NumericError as e:
        if isinstance(e, DivergenceError):
            raise
        raise DivergenceError(f"theorem-2 run diverged: {e}", step=state.n) from e

    sub = flat_subspace(hessian_at(spec, w_gd, dataset), zero_tol_rel)
    s_hat = direction_factors(w_gd, partition, sub, allow_zero_groups=True)
    residuals = np.empty(len(marks))
    for k, (lam, w_ref, w_alt) in enumerate(zip(lams, gd_snaps, alt_snaps)):
        rhs = exact_sdp_prune(w_ref, partition, sub, lam, s=s_hat, allow_zero_groups=True).w_pruned
        residuals[k] = np.linalg.norm(w_alt - rhs) / (1.0 + np.linalg.norm(w_ref))
    logger.info("theorem-2 residual at t=%.3g, gamma=%.1e: %.3e", marks[-1], gamma, residuals[-1])
    return ResidualSeries(gamma, np.array(marks), residuals, seed)


class _QuadraticFlow:
    """Closed-form gradient flow of 0.5 * ||Xw - y||^2 / N in the Hessian eigenbasis."""

    def __init__(self, dataset: Dataset):
        x = dataset.inputs
        self.eig = sym_eigen(quadratic_hessian(dataset))
        self.b = self.eig.eigenvectors.T @ (x.T @ dataset.targets[:, 0] / x.shape[0])
        lam = self.eig.eigenvalues
        scale = max(float(np.max(np.abs(lam))), 1e-300)
        self.lam = np.where(np.abs(lam) <= 1e-14 * scale, 0.0, lam)

    def at(self, w0: np.ndarray, t: float) -> np.ndarray:
        p = self.eig.eigenvectors
        z0 = p.T @ w0
        decay = np.exp(-self.lam * t)
        gain = np.empty_like(self.lam)
        flat = self.lam == 0.0
        gain[flat] = t
        gain[~flat] = -np.expm1(-self.lam[~flat] * t) / self.lam[~flat]
        return p @ (decay * z0 + gain * self.b)


def _check_no_crossing(times: np.ndarray, states: np.ndarray, g: GroupPartition) -> None:
    """Abort when a group of the flow passes through zero or flips direction between samples."""
    prev = normalize_groups(states[0], g)
    if np.any(group_norms(states[0], g) == 0.0):
        raise SignCrossingError(float(times[0]), int(np.flatnonzero(group_norms(states[0], g) == 0.0)[0]))
    for k in range(1, len(times)):
        cur = normalize_groups(states[k], g)
        dots = np.bincount(g.group_ids, weights=prev * cur, minlength=len(g))
        bad = np.flatnonzero(dots <= 0.0)
        if bad.size:
            raise SignCrossingError(float(times[k]), int(bad[0]))
        prev = cur


def default_stride(gamma: float, t_end: float, curvature: float) -> int:
    """Integration stride in optimizer steps: at most t_end/1000 and 0.1/curvature in time."""
    stride = min(t_end / 1000.0, 0.1 / max(curvature, 1e-12))
    return max(1, int(round(stride / gamma)))


def theorem3_deterministic_check(spec: ModelSpec, dataset: Dataset, w0, gamma: float, c: float, mu: float,
                                 t_end: float, partition: GroupPartition, stride: Optional[float] = None,
                                 seed: Optional[int] = None) -> ResidualSeries:
    """Dual iterate v against w(t) + sqrt(gamma) c t^mu E_G(w(t)) - sqrt(gamma) c int_0^t Phi(t,s) d(E_G(w(s)) s^mu).

    Phi(t,s) = exp(-H (t-s)) for the constant Hessian of a quadratic loss; the integral uses
    the trapezoid rule on a grid whose spacing (``stride``) is a multiple of gamma.
    """
    if not _is_quadratic(spec):
        raise InputError("the deterministic theorem-3 check needs a bias-free single-output mse linear model")
    w0 = np.asarray(w0, dtype=np.float64)
    flow = _QuadraticFlow(dataset)
    stride_steps = (default_stride(gamma, t_end, float(np.max(np.abs(flow.lam)))) if stride is None
                    else max(1, int(round(stride / gamma))))
    h = stride_steps * gamma
    n_intervals = max(1, int(round(t_end / h)))
    times = np.arange(n_intervals + 1) * h
    states = np.stack([flow.at(w0, t) for t in times])
    _check_no_crossing(times, states, partition)

    phi_h = flow.eig.exp_scaled(h)
    trap = 0.5 * (phi_h + np.eye(phi_h.shape[0]))
    scale = c * np.sqrt(gamma)
    integral = np.zeros_like(w0)
    f_prev = np.zeros_like(w0)
    state = altsdp_init(w0, partition, gamma, c, mu)
    residuals = np.empty(n_intervals)
    try:
        for m in range(1, n_intervals + 1):
            for _ in range(stride_steps):
                altsdp_step(state, full_gradient(spec, state.w, dataset))
            if not np.all(np.isfinite(state.v)):
                raise DivergenceError("theorem-3 run left the finite range", step=state.n)
            e_t = normalize_groups(states[m], partition)
            f_cur = e_t * times[m] ** mu
            integral = phi_h @ integral + trap @ (f_cur - f_prev)
            f_prev = f_cur
            rhs = states[m] + scale * times[m] ** mu * e_t - scale * integral
            residuals[m - 1] = np.linalg.norm(state.v - rhs) / (1.0 + np.linalg.norm(states[m]))
    except NumericError as e:
        if isinstance(e, DivergenceError):
            raise
        raise DivergenceError(f"theorem-3 run diverged: {e}", step=state.n) from e
    logger.info("theorem-3 residual at t=%.3g, gamma=%.1e, stride=%.3g: %.3e", times[-1], gamma, h, residuals[-1])
    return ResidualSeries(gamma, times[1:], residuals, seed)


def theorem3_stride_change(spec: ModelSpec, dataset: Dataset, w0, gamma: float, c: float, mu: float,
                           t_end: float, partition: GroupPartition, stride: Optional[float] = None) -> Optional[float]:
    """Relative change of the final residual when the integration stride is halved; None if it cannot be halved."""
    base = theorem3_deterministic_check(spec, dataset, w0, gamma, c, mu, t_end, partition, stride)
    h = float(base.times[0])
    steps = int(round(h / gamma))
    if steps < 2:
        logger.warning("stride equals gamma and cannot be halved")
        return None
    finer = theorem3_deterministic_check(spec, dataset, w0, gamma, c, mu, t_end, partition, (steps // 2) * gamma)
    if base.final == 0.0:
        return 0.0 if finer.final == 0.0 else float("inf")
    return abs(finer.final - base.final) / base.final


def trend_verdict(residuals: Sequence[float], max_inversions: int = 1, inversion_tol: float = 0.10) -> bool:
    """Residuals ordered by decreasing gamma must be nonincreasing, up to a few small inversions."""
    inversions = 0
    for prev, cur in zip(residuals, residuals[1:]):
        if cur > prev:
            if cur > prev * (1.0 + inversion_tol):
                return False
            inversions += 1
    return inversions <= max_inversions


@dataclass(frozen=True)
class AngleSeries:
    times: np.ndarray
    degrees: np.ndarray

    def to_rows(self) -> List[Tuple[float, float]]:
        return [(float(t), float(a)) for t, a in zip(self.times, self.degrees)]


def angle_between_groups(w: np.ndarray, g: GroupPartition) -> float:
    """Angle in degrees between w and E_G(w); NaN for the zero vector."""
    w = np.asarray(w, dtype=np.float64)
    nw = float(np.linalg.norm(w))
    if nw == 0.0:
        return float("nan")
    e = normalize_groups(w, g)
    cos = float(np.dot(w, e)) / (nw * float(np.linalg.norm(e)))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def angle_series(log: TrajectoryLog, g: GroupPartition) -> AngleSeries:
    snaps = log.snapshots()
    if not snaps:
        raise InputError("the trajectory log holds no parameter snapshots")
    return AngleSeries(np.array([t for t, _ in snaps]), np.array([angle_between_groups(w, g) for _, w in snaps]))


def flops_reduction(layer_sizes: Sequence[int], pruned: Dict[int, Sequence[int]]) -> float:
    """1 - pruned/dense multiply-add count, removing pruned units and their downstream inputs."""
    sizes = list(layer_sizes)
    n_layers = len(sizes) - 1
    kept = list(sizes)
    for li, units in pruned.items():
        if not units:
            continue
        if li >= n_layers - 1:
            raise StructuralError("output-layer units cannot be pruned")
        if li < 0 or any(u < 0 or u >= sizes[li + 1] for u in units):
            raise StructuralError(f"pruned units out of range for layer {li}")
        kept[li + 1] = sizes[li + 1] - len(set(units))
        if kept[li + 1] == 0:
            raise StructuralError(f"every unit of layer {li} is pruned")
    dense = sum(2 * a * b for a, b in zip(sizes[:-1], sizes[1:]))
    remaining = sum(2 * a * b for a, b in zip(kept[:-1], kept[1:]))
    return 1.0 - remaining / dense
