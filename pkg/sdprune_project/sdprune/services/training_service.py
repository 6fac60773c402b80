import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from sdprune.core.errors import ConfigError, DivergenceError, NumericError, StructuralError
from sdprune.core.seeding import derive_seed, make_rng
from sdprune.schemas.config_schemas import ExperimentConfig
from sdprune.schemas.result_schemas import RunReport
from sdprune.services import artifacts
from sdprune.services.analysis import TrajectoryLog, TrajectoryRecord, angle_series, flops_reduction, mu_in_range
from sdprune.services.datasets import (Dataset, iterate_batches, load_csv, load_idx, make_linear_regression,
                                       make_two_moons, quadratic_dataset)
from sdprune.services.grouping import GroupPartition, hidden_pruned_units, make_partition, pruned_units, singleton_partition, sparsity
from sdprune.services.model import accuracy, init_params, layout_for, loss, loss_and_grad, make_teacher_student
from sdprune.services.optim import (OptimizerState, SgdState, altsdp_init, altsdp_step, l1_dp_step, rda_init,
                                    rda_step, schedule_gamma, sgd_init, sgd_step, to_checkpoint)

logger = logging.getLogger(__name__)


def build_datasets(config: ExperimentConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """Training and optional test set for a config; synthetic sets are drawn from the derived data seed."""
    data, spec = config.data, config.model
    seed = derive_seed(config.run.seed, "data")
    n_classes = spec.out_dim if spec.is_classifier else None
    if data.kind == "idx":
        train = load_idx(data.images_path, data.labels_path, n_classes)
        test = load_idx(data.test_images_path, data.test_labels_path, n_classes) if data.test_images_path else None
        return train, test
    if data.kind == "csv":
        train = load_csv(data.csv_path, n_classes)
        test = load_csv(data.test_csv_path, n_classes) if data.test_csv_path else None
        return train, test

    total = data.n_samples + data.n_test
    if data.generator == "two_moons":
        full = make_two_moons(make_rng(seed), total, data.noise_std)
    elif data.generator == "teacher_student":
        full = make_teacher_student(seed, data.in_dim, data.hidden, total, data.noise_std).dataset
    elif data.generator == "linear_regression":
        full = make_linear_regression(make_rng(seed), total, data.in_dim, data.noise_std).dataset
    else:
        if spec.quadratic_data is None:
            raise ConfigError("the quadratic generator needs model.quadratic_data")
        full = quadratic_dataset(spec.quadratic_data.inputs, spec.quadratic_data.targets)
    return full.split(data.n_test, make_rng(seed, 1))


class TrainingService:
    """Runs one configured optimizer over shuffled minibatches and writes the run artifacts."""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None):
        self.config = config
        self.spec = config.model
        self.out_dir = Path(out_dir or config.outputs.dir)
        self.config_hash = config.config_hash()
        self.seed = config.run.seed
        self.layout = layout_for(self.spec)
        self.partition = make_partition(self.layout, config.partition)
        self.warnings: List[str] = []

    def initial_params(self) -> np.ndarray:
        return init_params(self.spec, make_rng(derive_seed(self.seed, "init")))

    def build_state(self, w0: np.ndarray) -> OptimizerState:
        opt = self.config.optimizer
        gamma = schedule_gamma(opt.schedule, 0)
        if opt.kind == "sgd":
            return sgd_init(w0, gamma, opt.momentum)
        if opt.kind == "rda":
            return rda_init(self.partition, gamma, opt.rda_lambda, opt.momentum)
        if not mu_in_range(opt.mu):
            self._warn(f"mu={opt.mu} lies outside (0.5, 1); the asymptotic pruning guarantee does not apply")
        if opt.kind == "l1dp":
            return altsdp_init(w0, singleton_partition(self.layout.d), gamma, opt.c, opt.mu, opt.momentum,
                               opt.sparsity_floor, kind="l1dp")
        return altsdp_init(w0, self.partition, gamma, opt.c, opt.mu, opt.momentum, opt.sparsity_floor)

    def _warn(self, message: str) -> None:
        logger.warning(message)
        if message not in self.warnings:
            self.warnings.append(message)

    @staticmethod
    def step(state: OptimizerState, grad: np.ndarray) -> OptimizerState:
        if isinstance(state, SgdState):
            return sgd_step(state, grad)
        if state.kind == "rda":
            return rda_step(state, grad)
        if state.kind == "l1dp":
            return l1_dp_step(state, grad)
        return altsdp_step(state, grad)

    def _record(self, n: int, t: float, w: np.ndarray, train: Dataset, test: Optional[Dataset],
                snapshot: bool) -> TrajectoryRecord:
        test_acc = accuracy(self.spec, w, test) if test is not None else None
        return TrajectoryRecord(n=n, t=t, train_loss=loss(self.spec, w, train), sparsity=sparsity(w, self.partition),
                                test_accuracy=test_acc, w=w.copy() if snapshot else None)

    def _flops(self, w: np.ndarray) -> Optional[float]:
        if self.spec.kind != "mlp":
            return None
        units = pruned_units(self.layout, w)
        if units[len(self.layout.layers) - 1]:
            self._warn("output-layer units are zero; FLOPs reduction is not reported")
            return None
        try:
            return flops_reduction(self.spec.layer_sizes, dict(enumerate(hidden_pruned_units(self.layout, w))))
        except StructuralError as e:
            self._warn(f"FLOPs reduction not reported: {e}")
            return None

    def train(self, train: Dataset, test: Optional[Dataset] = None) -> Tuple[OptimizerState, TrajectoryLog]:
        run = self.config.run
        state = self.build_state(self.initial_params())
        log = TrajectoryLog()
        snap_every = run.snapshot_stride
        log.append(self._record(0, 0.0, state.w, train, test, snap_every > 0))
        shuffle_seed = derive_seed(self.seed, "shuffle")
        n, t = 0, 0.0
        floor_steps = 0
        try:
            for epoch in range(run.epochs):
                state.gamma = schedule_gamma(self.config.optimizer.schedule, epoch)
                for batch in iterate_batches(train, run.batch_size, make_rng(shuffle_seed, epoch)):
                    _, g = loss_and_grad(self.spec, state.w, train, batch)
                    self.step(state, g)
                    n += 1
                    t += state.gamma
                    floor_steps += int(getattr(state, "floor_engaged", False))
                    if not np.all(np.isfinite(state.w)):
                        raise DivergenceError("iterate left the finite range", step=n)
                    snapshot = snap_every > 0 and n % snap_every == 0
                    if n % run.log_stride == 0 or snapshot:
                        record = self._record(n, t, state.w, train, test, snapshot)
                        log.append(record)
                        logger.info("n=%d t=%.4g loss=%.5g sparsity=%.4f", n, t, record.train_loss, record.sparsity)
        except NumericError as e:
            if isinstance(e, DivergenceError):
                raise
            raise DivergenceError(f"training diverged: {e}", step=n) from e
        if log.records[-1].n != n:
            log.append(self._record(n, t, state.w, train, test, snap_every > 0))
        if floor_steps:
            self._warn(f"sparsity floor engaged on {floor_steps} steps")
        return state, log

    def run(self) -> RunReport:
        start = time.perf_counter()
        train, test = build_datasets(self.config)
        state, log = self.train(train, test)
        w = state.w
        emit = set(self.config.outputs.emit)
        paths: Dict[str, str] = {}
        if "trajectory" in emit:
            paths["trajectory"] = str(artifacts.write_csv(
                self.out_dir / "trajectory.csv", ("n", "t", "train_loss", "test_acc", "sparsity"),
                log.to_rows(), self.config_hash, self.seed))
        if "angles" in emit and log.snapshots():
            angles = angle_series(log, self.partition)
            paths["angles"] = str(artifacts.write_csv(self.out_dir / "angles.csv", ("t", "angle_deg"),
                                                      angles.to_rows(), self.config_hash, self.seed))
        if "checkpoint" in emit:
            paths["checkpoint"] = str(artifacts.write_json(self.out_dir / "checkpoint.json",
                                                           to_checkpoint(state, self.config_hash)))
        if "report" in emit:
            paths["report"] = str(self.out_dir / "report.json")
        final = log.records[-1]
        report = RunReport(
            train_loss=final.train_loss,
            test_accuracy=final.test_accuracy,
            train_accuracy=accuracy(self.spec, w, train),
            sparsity=final.sparsity,
            flops_reduction=self._flops(w),
            steps=final.n,
            wall_time=time.perf_counter() - start,
            config_hash=self.config_hash,
            seed=self.seed,
            warnings=self.warnings,
            artifacts=paths,
        )
        if "report" in emit:
            artifacts.write_json(self.out_dir / "report.json", report)
        logger.info("training done: %d steps, loss %.5g, sparsity %.4f", report.steps, report.train_loss, report.sparsity)
        return report
