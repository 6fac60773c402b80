"""Optimizers over flat parameter vectors: SGD, AltSDP, group-lasso RDA and l1 directional pruning.

AltSDP keeps a dual accumulator v and a primal iterate w:

    v_{n+1} = v_n - gamma * grad f(w_n)
    w_{n+1} = group soft-threshold of v_{n+1} at g(n, gamma) = c * sqrt(gamma) * (n * gamma)^mu

States are single-owner and mutated in place by the step functions, which also
return them for chaining.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from pydantic import ValidationError

from sdprune.core.errors import ConfigError, DimensionError, FormatError, NumericError, PartitionError
from sdprune.schemas.config_schemas import LrSchedule
from sdprune.schemas.result_schemas import Checkpoint
from sdprune.services.grouping import GroupPartition, group_norms

logger = logging.getLogger(__name__)


def tuning(n: int, gamma: float, c: float, mu: float) -> float:
    if not gamma > 0 or not mu > 0 or n < 0 or c < 0:
        raise ConfigError(f"tuning needs gamma > 0, mu > 0, c >= 0, n >= 0 (got n={n}, gamma={gamma}, c={c}, mu={mu})")
    return c * math.sqrt(gamma) * (n * gamma) ** mu


@dataclass
class AltSdpState:
    v: np.ndarray
    w: np.ndarray
    n: int
    gamma: float
    c: float
    mu: float
    partition: GroupPartition
    momentum: float = 0.0
    momentum_buffer: Optional[np.ndarray] = None
    kind: str = "altsdp"
    rda_lambda: Optional[float] = None
    sparsity_floor: Optional[float] = None
    threshold: float = 0.0
    floor_engaged: bool = False

    @property
    def d(self) -> int:
        return self.partition.d


@dataclass
class SgdState:
    w: np.ndarray
    n: int
    gamma: float
    momentum: float = 0.0
    momentum_buffer: Optional[np.ndarray] = None

    kind = "sgd"


OptimizerState = Union[AltSdpState, SgdState]
ThresholdFn = Callable[[AltSdpState], float]


def _as_vector(x, d: int, name: str) -> np.ndarray:
    x = np.array(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != d:
        raise DimensionError(f"{name} has length {x.shape[0]}, expected {d}")
    return x


def altsdp_init(w0: np.ndarray, partition: GroupPartition, gamma: float, c: float, mu: float,
                momentum: float = 0.0, sparsity_floor: Optional[float] = None, kind: str = "altsdp") -> AltSdpState:
    """State with v_0 = w_0."""
    w0 = _as_vector(w0, partition.d, "w0")
    tuning(0, gamma, c, mu)
    if not 0 <= momentum < 1:
        raise ConfigError("momentum must lie in [0, 1)")
    return AltSdpState(v=w0.copy(), w=w0.copy(), n=0, gamma=gamma, c=c, mu=mu, partition=partition,
                       momentum=momentum, kind=kind, sparsity_floor=sparsity_floor)


def rda_init(partition: GroupPartition, gamma: float, lam: float, momentum: float = 0.0) -> AltSdpState:
    """Group-lasso RDA starts from w_0 = v_0 = 0."""
    if lam < 0:
        raise ConfigError("rda_lambda must be >= 0")
    state = altsdp_init(np.zeros(partition.d), partition, gamma, 0.0, 1.0, momentum, kind="rda")
    state.rda_lambda = lam
    return state


def sgd_init(w0: np.ndarray, gamma: float, momentum: float = 0.0) -> SgdState:
    w0 = np.array(w0, dtype=np.float64).reshape(-1)
    if not gamma > 0:
        raise ConfigError("gamma must be > 0")
    if not 0 <= momentum < 1:
        raise ConfigError("momentum must lie in [0, 1)")
    return SgdState(w=w0, n=0, gamma=gamma, momentum=momentum)


def group_soft_threshold(v: np.ndarray, g: GroupPartition, tau: float) -> np.ndarray:
    """w_i = (1 - tau/||v_i||)_+ v_i, with zero groups mapped to zero."""
    norms = group_norms(v, g)
    factor = np.zeros_like(norms)
    live = norms > 0
    factor[live] = np.maximum(0.0, 1.0 - tau / norms[live])
    per_entry = factor[g.group_ids]
    return np.where(per_entry > 0, per_entry * v, 0.0)


def _floor_cap(v: np.ndarray, g: GroupPartition, tau: float, floor: float) -> float:
    """Largest threshold <= tau that keeps a nonzero ratio of at least ``floor``."""
    norms = group_norms(v, g)
    kept = g.sizes[norms > tau].sum() / g.d
    if kept >= floor:
        return tau
    order = np.argsort(-norms, kind="stable")
    covered = np.cumsum(g.sizes[order]) / g.d
    k = int(np.searchsorted(covered, floor - 1e-12))
    weakest = norms[order[min(k, len(order) - 1)]]
    below = norms[norms < weakest]
    return float(below.max()) if below.size else 0.0


def default_threshold(state: AltSdpState) -> float:
    return tuning(state.n, state.gamma, state.c, state.mu)


def rda_threshold(lam: float) -> ThresholdFn:
    def threshold(state: AltSdpState) -> float:
        return state.n * state.gamma * lam
    return threshold


def _accumulate(state, grad: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient at step {state.n}")
    if state.momentum == 0.0:
        return grad
    if state.momentum_buffer is None:
        state.momentum_buffer = np.zeros_like(grad)
    state.momentum_buffer = state.momentum * state.momentum_buffer + grad
    return state.momentum_buffer


def altsdp_step(state: AltSdpState, grad: np.ndarray, threshold_fn: Optional[ThresholdFn] = None) -> AltSdpState:
    grad = _as_vector(grad, state.d, "grad")
    direction = _accumulate(state, grad)
    state.v = state.v - state.gamma * direction
    tau = (threshold_fn or default_threshold)(state)
    state.floor_engaged = False
    if state.sparsity_floor is not None:
        capped = _floor_cap(state.v, state.partition, tau, state.sparsity_floor)
        if capped < tau:
            logger.debug("sparsity floor engaged at step %d: threshold %.3e -> %.3e", state.n, tau, capped)
            state.floor_engaged = True
            tau = capped
    state.w = group_soft_threshold(state.v, state.partition, tau)
    state.threshold = tau
    state.n += 1
    return state


def rda_step(state: AltSdpState, grad: np.ndarray) -> AltSdpState:
    if state.kind != "rda" or state.rda_lambda is None:
        raise ConfigError("rda_step needs a state built by rda_init")
    return altsdp_step(state, grad, rda_threshold(state.rda_lambda))


def l1_dp_step(state: AltSdpState, grad: np.ndarray) -> AltSdpState:
    """AltSDP with singleton groups: coordinatewise soft-thresholding of v."""
    if np.any(state.partition.sizes != 1):
        raise PartitionError("l1 directional pruning needs the per_parameter partition")
    return altsdp_step(state, grad)


def sgd_step(state: SgdState, grad: np.ndarray) -> SgdState:
    grad = _as_vector(grad, state.w.shape[0], "grad")
    state.w = state.w - state.gamma * _accumulate(state, grad)
    state.n += 1
    return state


def schedule_gamma(sched: LrSchedule, epoch: int) -> float:
    """base x milestone multipliers reached x periodic decay x annealing ramp."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    gamma = sched.base
    for milestone, multiplier in sched.milestones:
        if milestone <= epoch:
            gamma *= multiplier
    if sched.every is not None:
        period, factor = sched.every
        gamma *= factor ** (epoch // period)
    if sched.anneal is not None:
        total, final_ratio = sched.anneal
        frac = epoch / total
        if frac >= 0.9:
            gamma *= final_ratio
        elif frac >= 0.5:
            gamma *= 1.0 - (1.0 - final_ratio) * (frac - 0.5) / 0.4
    return gamma


def to_checkpoint(state: OptimizerState, config_hash: Optional[str] = None) -> Checkpoint:
    buffer = state.momentum_buffer.tolist() if state.momentum_buffer is not None else None
    if isinstance(state, SgdState):
        return Checkpoint(optimizer="sgd", n=state.n, gamma=state.gamma, w=state.w.tolist(),
                          momentum=state.momentum, buffer=buffer, config_hash=config_hash)
    return Checkpoint(optimizer=state.kind, n=state.n, gamma=state.gamma, c=state.c, mu=state.mu,
                      v=state.v.tolist(), w=state.w.tolist(), partition=state.partition.to_record(),
                      momentum=state.momentum, buffer=buffer, rda_lambda=state.rda_lambda,
                      sparsity_floor=state.sparsity_floor, threshold=state.threshold, config_hash=config_hash)


def from_checkpoint(ckpt: Checkpoint) -> OptimizerState:
    w = np.array(ckpt.w, dtype=np.float64)
    buffer = np.array(ckpt.buffer, dtype=np.float64) if ckpt.buffer is not None else None
    if ckpt.optimizer == "sgd":
        return SgdState(w=w, n=ckpt.n, gamma=ckpt.gamma, momentum=ckpt.momentum, momentum_buffer=buffer)
    if ckpt.v is None or ckpt.partition is None:
        raise FormatError(f"{ckpt.optimizer} checkpoint needs v and partition")
    partition = GroupPartition.from_record(ckpt.partition)
    return AltSdpState(v=_as_vector(ckpt.v, partition.d, "v"), w=_as_vector(w, partition.d, "w"), n=ckpt.n,
                       gamma=ckpt.gamma, c=ckpt.c, mu=ckpt.mu, partition=partition, momentum=ckpt.momentum,
                       momentum_buffer=buffer, kind=ckpt.optimizer, rda_lambda=ckpt.rda_lambda,
                       sparsity_floor=ckpt.sparsity_floor, threshold=ckpt.threshold)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        return Checkpoint.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint not found: {path}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise FormatError(f"{path}: not a valid checkpoint ({e})") from e
