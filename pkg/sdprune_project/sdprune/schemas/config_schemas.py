import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from sdprune.core.errors import ConfigError
from sdprune.core.seeding import config_hash


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class QuadraticData(_Section):
    inputs: List[List[float]]
    targets: List[float]

    @model_validator(mode="after")
    def _check_shapes(self):
        if not self.inputs or len(self.inputs) != len(self.targets):
            raise ValueError("quadratic_data needs one target per input row")
        width = len(self.inputs[0])
        if width == 0 or any(len(row) != width for row in self.inputs):
            raise ValueError("quadratic_data rows must share a nonzero width")
        return self


class ModelSpec(_Section):
    kind: Literal["quadratic", "linear_regression", "mlp"]
    layer_sizes: List[int]
    activation: Literal["relu", "tanh", "identity"] = "identity"
    loss: Literal["mse", "softmax_cross_entropy"] = "mse"
    bias: Optional[bool] = None
    quadratic_data: Optional[QuadraticData] = None

    @model_validator(mode="after")
    def _check_architecture(self):
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if self.kind == "mlp":
            if len(self.layer_sizes) < 3:
                raise ValueError("an mlp needs at least one hidden layer")
        else:
            if len(self.layer_sizes) != 2:
                raise ValueError(f"{self.kind} takes exactly [in_dim, out_dim]")
            if self.activation != "identity":
                raise ValueError(f"{self.kind} uses the identity activation")
        if self.kind == "quadratic":
            if self.loss != "mse" or self.layer_sizes[1] != 1:
                raise ValueError("quadratic models have one output and mse loss")
            if self.quadratic_data is not None and len(self.quadratic_data.inputs[0]) != self.layer_sizes[0]:
                raise ValueError("quadratic_data width must equal layer_sizes[0]")
        return self

    @property
    def has_bias(self) -> bool:
        if self.bias is not None:
            return self.bias
        return self.kind == "mlp"

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def is_classifier(self) -> bool:
        return self.loss == "softmax_cross_entropy"


class GroupingStrategy(_Section):
    kind: Literal["per_parameter", "per_output_unit", "per_layer", "explicit"] = "per_output_unit"
    explicit_groups: Optional[List[List[int]]] = None

    @model_validator(mode="after")
    def _check_explicit(self):
        if self.kind == "explicit" and not self.explicit_groups:
            raise ValueError("explicit grouping requires explicit_groups")
        if self.kind != "explicit" and self.explicit_groups is not None:
            raise ValueError("explicit_groups is only valid with kind 'explicit'")
        return self


class LrSchedule(_Section):
    base: float = Field(gt=0)
    milestones: List[Tuple[int, float]] = []
    every: Optional[Tuple[int, float]] = None
    anneal: Optional[Tuple[int, float]] = None

    @model_validator(mode="after")
    def _check_milestones(self):
        epochs = [e for e, _ in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("milestones must be strictly increasing in epoch")
        if any(e < 0 for e in epochs) or any(m <= 0 for _, m in self.milestones):
            raise ValueError("milestone epochs must be >= 0 and multipliers > 0")
        if self.every is not None and (self.every[0] < 1 or self.every[1] <= 0):
            raise ValueError("every needs a period >= 1 and a factor > 0")
        if self.anneal is not None and (self.anneal[0] < 1 or not 0 < self.anneal[1] <= 1):
            raise ValueError("anneal needs total epochs >= 1 and a final ratio in (0, 1]")
        return self


class DataConfig(_Section):
    kind: Literal["synthetic", "idx", "csv"] = "synthetic"
    generator: Literal["two_moons", "teacher_student", "linear_regression", "quadratic"] = "two_moons"
    n_samples: int = Field(default=512, ge=1)
    n_test: int = Field(default=0, ge=0)
    noise_std: float = Field(default=0.1, ge=0)
    in_dim: int = Field(default=2, ge=1)
    hidden: int = Field(default=8, ge=1)
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    test_images_path: Optional[str] = None
    test_labels_path: Optional[str] = None
    csv_path: Optional[str] = None
    test_csv_path: Optional[str] = None

    @model_validator(mode="after")
    def _check_paths(self):
        required: Sequence[str] = ()
        if self.kind == "idx":
            required = ("images_path", "labels_path")
        elif self.kind == "csv":
            required = ("csv_path",)
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"data kind '{self.kind}' requires {name}")
        for name in ("images_path", "labels_path", "test_images_path", "test_labels_path",
                     "csv_path", "test_csv_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ValueError(f"{name} does not exist: {value}")
        return self


class OptimizerConfig(_Section):
    kind: Literal["sgd", "altsdp", "rda", "l1dp"] = "sgd"
    schedule: LrSchedule = LrSchedule(base=0.1)
    c: float = Field(default=0.0, ge=0)
    mu: float = Field(default=0.51, gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    rda_lambda: float = Field(default=0.0, ge=0)
    sparsity_floor: Optional[float] = Field(default=None, gt=0, le=1)

    @model_validator(mode="after")
    def _check_tuning(self):
        if self.kind in ("altsdp", "l1dp") and self.c <= 0:
            raise ValueError(f"{self.kind} requires c > 0")
        return self


class RunConfig(_Section):
    epochs: int = Field(default=10, ge=0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = Field(default=0, ge=0)
    log_stride: int = Field(default=10, ge=1)
    snapshot_stride: int = Field(default=0, ge=0)


class OutputConfig(_Section):
    dir: str = "outputs"
    emit: List[str] = ["trajectory", "checkpoint", "report"]


class PruneConfig(_Section):
    zero_tol_rel: float = Field(default=1e-3, gt=0, lt=1)
    lambdas: Optional[List[float]] = None
    n_lambdas: int = Field(default=12, ge=1)
    grad_tol: float = Field(default=1e-4, gt=0)

    @model_validator(mode="after")
    def _check_lambdas(self):
        if self.lambdas is not None and any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be >= 0")
        return self


class TheoryConfig(_Section):
    which: Literal["thm2", "thm3"] = "thm2"
    gammas: List[float] = [1e-2, 1e-3, 1e-4]
    c: float = Field(default=1.0, ge=0)
    mu: float = Field(default=0.6, gt=0)
    t_end: float = Field(default=50.0, gt=0)
    stride: Optional[float] = Field(default=None, gt=0)
    seeds: List[int] = [0]
    check_stride: bool = True
    zero_tol_rel: float = Field(default=1e-6, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_gammas(self):
        if not self.gammas or any(g <= 0 for g in self.gammas):
            raise ValueError("gammas must be a nonempty list of positive values")
        return self


class BezierConfig(_Section):
    epochs: int = Field(default=20, ge=0)
    lr: float = Field(default=0.05, gt=0)
    batch_size: int = Field(default=64, ge=1)


class ContourConfig(_Section):
    resolution: Tuple[int, int] = (21, 21)
    margin: float = Field(default=0.2, ge=0)

    @model_validator(mode="after")
    def _check_resolution(self):
        if min(self.resolution) < 1:
            raise ValueError("resolution entries must be >= 1")
        return self


class ExperimentConfig(_Section):
    model: ModelSpec
    data: DataConfig = DataConfig()
    partition: GroupingStrategy = GroupingStrategy()
    optimizer: OptimizerConfig = OptimizerConfig()
    run: RunConfig = RunConfig()
    outputs: OutputConfig = OutputConfig()
    prune: PruneConfig = PruneConfig()
    theory: TheoryConfig = TheoryConfig()
    bezier: BezierConfig = BezierConfig()
    contour: ContourConfig = ContourConfig()

    @model_validator(mode="after")
    def _check_batch(self):
        if self.data.kind == "synthetic" and self.run.batch_size > self.data.n_samples:
            raise ValueError("batch_size must not exceed the number of training samples")
        return self

    def config_hash(self) -> str:
        return config_hash(self.model_dump(mode="json"))

    @classmethod
    def from_file(cls, path: str, overrides: Sequence[str] = (), seed: Optional[int] = None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for item in overrides:
            apply_override(raw, item)
        if seed is not None:
            raw.setdefault("run", {})["seed"] = seed
        return cls.model_validate(raw)


def apply_override(raw: Dict[str, Any], item: str) -> None:
    """Apply one ``a.b.c=value`` override in place; values parse as JSON when they can."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got '{item}'")
    key, text = item.split("=", 1)
    try:
        value: Any = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    parts = key.strip().split(".")
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override '{key}' descends into a non-object")
        node = child
    node[parts[-1]] = value
