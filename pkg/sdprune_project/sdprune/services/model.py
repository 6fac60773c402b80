"""Differentiable models over flat parameter vectors.

Parameters are flattened layer by layer: each layer's weight matrix (n_out x n_in)
row-major, then its bias. Row j of a weight matrix holds the incoming weights of
output unit j, so a unit and its bias occupy a contiguous run plus one index.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from sdprune.core.config import settings
from sdprune.core.errors import DimensionError, DivergenceError, InputError, NumericError, SizeError
from sdprune.core.seeding import make_rng
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.datasets import Batch, Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerShape:
    n_in: int
    n_out: int
    bias: bool

    @property
    def size(self) -> int:
        return self.n_out * self.n_in + (self.n_out if self.bias else 0)


@dataclass(frozen=True)
class ParamLayout:
    layers: Tuple[LayerShape, ...]

    @property
    def d(self) -> int:
        return sum(layer.size for layer in self.layers)

    @property
    def offsets(self) -> List[int]:
        out, pos = [], 0
        for layer in self.layers:
            out.append(pos)
            pos += layer.size
        return out

    def unpack(self, w: np.ndarray) -> List[Tuple[np.ndarray, Optional[np.ndarray]]]:
        """Views (W, b) per layer; b is None for bias-free layers."""
        check_params(self, w)
        params = []
        for layer, start in zip(self.layers, self.offsets):
            n_w = layer.n_out * layer.n_in
            weight = w[start:start + n_w].reshape(layer.n_out, layer.n_in)
            bias = w[start + n_w:start + layer.size] if layer.bias else None
            params.append((weight, bias))
        return params

    def pack(self, params: List[Tuple[np.ndarray, Optional[np.ndarray]]]) -> np.ndarray:
        pieces = []
        for (weight, bias), layer in zip(params, self.layers):
            pieces.append(np.asarray(weight, dtype=np.float64).reshape(-1))
            if layer.bias:
                pieces.append(np.asarray(bias, dtype=np.float64).reshape(-1))
        return np.concatenate(pieces)


def layout_for(spec: ModelSpec) -> ParamLayout:
    sizes = spec.layer_sizes
    return ParamLayout(tuple(LayerShape(a, b, spec.has_bias) for a, b in zip(sizes[:-1], sizes[1:])))


def check_params(layout: ParamLayout, w: np.ndarray) -> None:
    if w.ndim != 1 or w.shape[0] != layout.d:
        raise DimensionError(f"parameter vector has shape {w.shape}, model expects ({layout.d},)")


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Weights N(0, scale^2 / n_in), biases zero."""
    layout = layout_for(spec)
    params = []
    for layer in layout.layers:
        weight = rng.standard_normal((layer.n_out, layer.n_in)) * (scale / np.sqrt(layer.n_in))
        params.append((weight, np.zeros(layer.n_out) if layer.bias else None))
    return layout.pack(params)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward(spec: ModelSpec, w: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    out, _ = _forward_cached(spec, layout_for(spec), w, inputs)
    return out


def _forward_cached(spec: ModelSpec, layout: ParamLayout, w: np.ndarray, inputs: np.ndarray):
    params = layout.unpack(w)
    acts, pre = [inputs], []
    a = inputs
    for i, (weight, bias) in enumerate(params):
        z = a @ weight.T
        if bias is not None:
            z = z + bias
        pre.append(z)
        a = z if i == len(params) - 1 else _activate(spec.activation, z)
        acts.append(a)
    return a, (params, acts, pre)


def _loss_from_output(spec: ModelSpec, out: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient with respect to the output."""
    n = out.shape[0]
    if spec.loss == "mse":
        resid = out - targets
        return 0.5 * float(np.sum(resid * resid)) / n, resid / n
    shifted = out - out.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    log_prob = shifted[np.arange(n), targets] - log_norm
    probs = np.exp(shifted - log_norm[:, None])
    probs[np.arange(n), targets] -= 1.0
    return -float(np.sum(log_prob)) / n, probs / n


def _check_data(spec: ModelSpec, dataset: Dataset) -> None:
    if dataset.in_dim != spec.in_dim:
        raise DimensionError(f"dataset has {dataset.in_dim} features, model expects {spec.in_dim}")
    if spec.is_classifier != (dataset.n_classes is not None):
        raise InputError("cross-entropy needs class-index targets and mse needs real targets")
    if dataset.out_dim != spec.out_dim:
        raise DimensionError(f"dataset has output dimension {dataset.out_dim}, model expects {spec.out_dim}")


def _rows(dataset: Dataset, batch: Optional[Batch]) -> Tuple[np.ndarray, np.ndarray]:
    if batch is None:
        return dataset.inputs, dataset.targets
    if batch.size_of != len(dataset):
        raise InputError("batch was drawn for a dataset of a different size")
    return dataset.inputs[batch.indices], dataset.targets[batch.indices]


def loss_and_grad(spec: ModelSpec, w: np.ndarray, dataset: Dataset,
                  batch: Optional[Batch] = None) -> Tuple[float, np.ndarray]:
    """Mean batch loss and its exact reverse-mode gradient."""
    layout = layout_for(spec)
    check_params(layout, w)
    _check_data(spec, dataset)
    inputs, targets = _rows(dataset, batch)
    out, (params, acts, pre) = _forward_cached(spec, layout, w, inputs)
    value, delta = _loss_from_output(spec, out, targets)
    if not np.isfinite(value):
        raise NumericError("loss is not finite")

    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        weight, bias = params[i]
        grad_w = delta.T @ acts[i]
        grad_b = delta.sum(axis=0) if bias is not None else None
        grads[i] = (grad_w, grad_b)
        if i > 0:
            delta = (delta @ weight) * _activate_grad(spec.activation, pre[i - 1], acts[i])
    g = layout.pack(grads)
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient is not finite")
    return value, g


def loss(spec: ModelSpec, w: np.ndarray, dataset: Dataset, batch: Optional[Batch] = None) -> float:
    layout = layout_for(spec)
    check_params(layout, w)
    _check_data(spec, dataset)
    inputs, targets = _rows(dataset, batch)
    out, _ = _forward_cached(spec, layout, w, inputs)
    value, _ = _loss_from_output(spec, out, targets)
    if not np.isfinite(value):
        raise NumericError("loss is not finite")
    return value


def grad(spec: ModelSpec, w: np.ndarray, dataset: Dataset, batch: Optional[Batch] = None) -> np.ndarray:
    return loss_and_grad(spec, w, dataset, batch)[1]


def full_gradient(spec: ModelSpec, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    return loss_and_grad(spec, w, dataset)[1]


def accuracy(spec: ModelSpec, w: np.ndarray, dataset: Dataset) -> Optional[float]:
    if not spec.is_classifier:
        return None
    out = forward(spec, w, dataset.inputs)
    return float(np.mean(np.argmax(out, axis=1) == dataset.targets))


def quadratic_hessian(dataset: Dataset) -> np.ndarray:
    """X^T X / N, the exact Hessian of the single-output mse linear model."""
    x = dataset.inputs
    return (x.T @ x) / x.shape[0]


def hessian_fd(spec: ModelSpec, w: np.ndarray, dataset: Dataset, cap: Optional[int] = None,
               threads: Optional[int] = None) -> np.ndarray:
    """Central differences of the full gradient, symmetrized; columns may run in parallel."""
    cap = settings.hessian_cap if cap is None else cap
    threads = settings.threads if threads is None else threads
    d = w.shape[0]
    if d > cap:
        raise SizeError(f"Hessian of dimension {d} exceeds the cap of {cap}")
    steps = 1e-4 * (1.0 + np.abs(w))

    def column(j: int) -> np.ndarray:
        plus, minus = w.copy(), w.copy()
        plus[j] += steps[j]
        minus[j] -= steps[j]
        return (full_gradient(spec, plus, dataset) - full_gradient(spec, minus, dataset)) / (2.0 * steps[j])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            columns = list(pool.map(column, range(d)))
    else:
        columns = [column(j) for j in range(d)]
    h = np.stack(columns, axis=1)
    return 0.5 * (h + h.T)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def gradient_flow(spec: ModelSpec, w0: np.ndarray, dataset: Dataset, t_end: float, dt: float) -> Trajectory:
    """Classical RK4 on dw/dt = -G(w); the last step lands exactly on t_end."""
    if dt <= 0 or t_end < 0:
        raise InputError("gradient_flow needs dt > 0 and t_end >= 0")
    n_steps = int(np.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / n_steps if n_steps else 0.0
    states = np.empty((n_steps + 1, w0.shape[0]))
    states[0] = w0
    w = np.array(w0, dtype=np.float64)

    def field(x):
        return -full_gradient(spec, x, dataset)

    try:
        for k in range(n_steps):
            k1 = field(w)
            k2 = field(w + 0.5 * h * k1)
            k3 = field(w + 0.5 * h * k2)
            k4 = field(w + h * k3)
            w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(w)):
                raise DivergenceError("gradient flow left the finite range", step=k + 1)
            states[k + 1] = w
    except NumericError as e:
        if isinstance(e, DivergenceError):
            raise
        raise DivergenceError(f"gradient flow diverged: {e}", step=k) from e
    return Trajectory(np.arange(n_steps + 1) * h, states)


@dataclass(frozen=True)
class TeacherStudent:
    dataset: Dataset
    spec: ModelSpec
    teacher_params: np.ndarray


def make_teacher_student(seed: int, in_dim: int, hidden: int, n_samples: int, noise_std: float,
                         activation: str = "tanh") -> TeacherStudent:
    """One-hidden-layer teacher, Gaussian inputs, labels = teacher output + Gaussian noise."""
    if min(in_dim, hidden, n_samples) < 1 or noise_std < 0:
        raise InputError("teacher-student needs positive sizes and noise_std >= 0")
    spec = ModelSpec(kind="mlp", layer_sizes=[in_dim, hidden, 1], activation=activation, loss="mse")
    rng = make_rng(seed)
    teacher = init_params(spec, rng)
    inputs = rng.standard_normal((n_samples, in_dim))
    targets = forward(spec, teacher, inputs)
    if noise_std > 0:
        targets = targets + noise_std * rng.standard_normal(targets.shape)
    return TeacherStudent(Dataset(inputs, targets, "teacher_student"), spec, teacher)
