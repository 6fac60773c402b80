from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict


class _Record(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PartitionRecord(_Record):
    d: int
    groups: List[List[int]]


class Checkpoint(_Record):
    optimizer: Literal["sgd", "altsdp", "rda", "l1dp"] = "altsdp"
    n: int
    gamma: float
    c: float = 0.0
    mu: float = 0.0
    v: Optional[List[float]] = None
    w: List[float]
    partition: Optional[PartitionRecord] = None
    momentum: float = 0.0
    buffer: Optional[List[float]] = None
    rda_lambda: Optional[float] = None
    sparsity_floor: Optional[float] = None
    threshold: float = 0.0
    config_hash: Optional[str] = None


class RunReport(_Record):
    train_loss: float
    test_accuracy: Optional[float] = None
    train_accuracy: Optional[float] = None
    sparsity: float
    flops_reduction: Optional[float] = None
    steps: int
    wall_time: float
    config_hash: str
    seed: int
    warnings: List[str] = []
    artifacts: Dict[str, str] = {}


class PruneSolutionRecord(_Record):
    lam: float
    w_pruned: List[float]
    s: List[float]
    shrink: List[float]
    pruned_groups: List[int]
    config_hash: Optional[str] = None


class PruneSummary(_Record):
    config_hash: str
    d: int
    k_flat: int
    zero_tol_rel: float
    gradient_norm: float
    degenerate: bool
    negative_factors: int
    lambdas: List[float]
    warnings: List[str] = []


class ProxSummary(_Record):
    config_hash: str
    n_cases: int
    n_failed: int
    max_scaled_residual: float
    tol: float
    seed: int
    stationary_violations: int
    passed: bool


class CurveSummary(_Record):
    config_hash: str
    loss_a: float
    loss_b: float
    max_loss: float
    margin: float
    epochs: int


class TheorySummary(_Record):
    config_hash: str
    which: Literal["thm2", "thm3"]
    gammas: List[float]
    seeds: List[int]
    final_residuals: Dict[str, List[float]]
    verdict: bool
    mu_in_range: bool
    stride_change: Optional[float] = None
    warnings: List[str] = []
