"""One handler per subcommand: each validates its inputs, runs a service and writes artifacts."""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

from sdprune.core.errors import CheckFailure, DimensionError, InputError
from sdprune.core.seeding import config_hash, derive_seed, make_rng
from sdprune.schemas.config_schemas import ExperimentConfig
from sdprune.schemas.result_schemas import CurveSummary, ProxSummary, PruneSummary, RunReport, TheorySummary
from sdprune.services import artifacts
from sdprune.services.analysis import (mu_in_range, theorem2_residual, theorem3_deterministic_check,
                                       theorem3_stride_change, trend_verdict)
from sdprune.services.datasets import Dataset, make_linear_regression
from sdprune.services.grouping import make_partition
from sdprune.services.landscape import PlaneGrid, bezier_connect, plane_contour
from sdprune.services.model import init_params, layout_for
from sdprune.services.optim import load_checkpoint
from sdprune.services.prox import oracle_equivalence_suite
from sdprune.services.sdp_oracle import (NEGATIVE_EPS, direction_factors, exact_sdp_prune, flat_subspace, hessian_at,
                                         loss_flatness_check)
from sdprune.services.training_service import TrainingService, build_datasets

logger = logging.getLogger(__name__)

console = Console()


def _print_table(title: str, rows: Sequence[Tuple[str, object]]) -> None:
    table = Table(title=title)
    table.add_column("field")
    table.add_column("value", justify="right")
    for key, value in rows:
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)


def _out_dir(config: ExperimentConfig, out: Optional[str]) -> Path:
    path = Path(out or config.outputs.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _checkpoint_params(path: str, config: ExperimentConfig) -> np.ndarray:
    ckpt = load_checkpoint(path)
    w = np.array(ckpt.w, dtype=np.float64)
    d = layout_for(config.model).d
    if w.shape[0] != d:
        raise DimensionError(f"checkpoint {path} holds {w.shape[0]} parameters, model expects {d}")
    return w


def cmd_train(config: ExperimentConfig, out: Optional[str] = None) -> RunReport:
    report = TrainingService(config, str(_out_dir(config, out))).run()
    _print_table("train", [("train_loss", report.train_loss), ("test_accuracy", report.test_accuracy),
                           ("sparsity", report.sparsity), ("flops_reduction", report.flops_reduction),
                           ("steps", report.steps), ("config_hash", report.config_hash)])
    return report


def cmd_prune_exact(config: ExperimentConfig, checkpoint: str, lambdas: Optional[List[float]] = None,
                    out: Optional[str] = None) -> PruneSummary:
    out_dir = _out_dir(config, out)
    digest, seed = config.config_hash(), config.run.seed
    w_star = _checkpoint_params(checkpoint, config)
    train, _ = build_datasets(config)
    partition = make_partition(layout_for(config.model), config.partition)
    sub = flat_subspace(hessian_at(config.model, w_star, train), config.prune.zero_tol_rel)
    s = direction_factors(w_star, partition, sub, allow_zero_groups=True)
    grid = lambdas if lambdas is not None else config.prune.lambdas
    report = loss_flatness_check(config.model, train, w_star, partition, sub, lambdas=grid,
                                 n_lambdas=config.prune.n_lambdas, grad_tol=config.prune.grad_tol,
                                 allow_zero_groups=True, s=s)

    artifacts.write_csv(out_dir / "flatness.csv", ("lambda", "sdp_delta", "naive_delta", "sdp_pruned", "naive_pruned"),
                        [(r.lam, r.sdp_delta, r.naive_delta, r.sdp_pruned, r.naive_pruned) for r in report.rows],
                        digest, seed)
    artifacts.write_csv(out_dir / "spectrum.csv", ("index", "eigenvalue"),
                        [(i, float(v)) for i, v in enumerate(sub.eigenvalues)], digest, seed)
    for lam in report.lambdas:
        solution = exact_sdp_prune(w_star, partition, sub, lam, s=s)
        artifacts.write_json(out_dir / f"prune_{artifacts.float_tag(lam)}.json", solution.to_record(digest))

    warnings = list(report.warnings)
    if sub.degenerate:
        warnings.append("degenerate flat subspace: every eigenvalue is ~0")
    summary = PruneSummary(config_hash=digest, d=sub.d, k_flat=sub.k, zero_tol_rel=sub.zero_tol_rel,
                           gradient_norm=report.gradient_norm, degenerate=sub.degenerate,
                           negative_factors=int(np.sum(s < -NEGATIVE_EPS)), lambdas=report.lambdas, warnings=warnings)
    artifacts.write_json(out_dir / "prune_summary.json", summary)
    _print_table("prune-exact", [("d", summary.d), ("k_flat", summary.k_flat), ("gradient_norm", summary.gradient_norm),
                                 ("negative_factors", summary.negative_factors), ("lambdas", len(summary.lambdas))])
    return summary


def cmd_prox_check(n_cases: int, seed: int, tol: float, grid: int, out: str) -> ProxSummary:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash({"n_cases": n_cases, "seed": seed, "tol": tol, "grid": grid})
    result = oracle_equivalence_suite(n_cases, seed, tol, grid)
    artifacts.write_csv(out_dir / "prox_check.csv",
                        ("case", "dim", "lambda", "s", "norm", "residual", "scaled_residual", "passed", "f_sp1", "f_sp2"),
                        [(c.case, c.dim, c.lam, c.s, c.norm, c.residual, c.scaled_residual, int(c.passed), c.f_sp1, c.f_sp2)
                         for c in result.cases], digest, seed)
    summary = ProxSummary(config_hash=digest, n_cases=n_cases, n_failed=result.n_failed,
                          max_scaled_residual=result.max_scaled_residual, tol=tol, seed=seed,
                          stationary_violations=result.stationary_violations, passed=result.passed)
    artifacts.write_json(out_dir / "prox_summary.json", summary)
    _print_table("prox-check", [("cases", n_cases), ("failed", summary.n_failed),
                                ("max_scaled_residual", summary.max_scaled_residual),
                                ("stationary_violations", summary.stationary_violations)])
    if not summary.passed:
        raise CheckFailure(f"prox oracle suite failed: {summary.n_failed} of {n_cases} cases above tol={tol}, "
                           f"{summary.stationary_violations} stationary-point violations")
    return summary


def cmd_connect(config: ExperimentConfig, checkpoint_a: str, checkpoint_b: str, out: Optional[str] = None) -> CurveSummary:
    out_dir = _out_dir(config, out)
    digest, seed = config.config_hash(), config.run.seed
    w_a = _checkpoint_params(checkpoint_a, config)
    w_b = _checkpoint_params(checkpoint_b, config)
    train, _ = build_datasets(config)
    bz = config.bezier
    _, profile = bezier_connect(config.model, train, w_a, w_b, bz.epochs, bz.lr, min(bz.batch_size, len(train)),
                               make_rng(derive_seed(seed, "bezier")))
    artifacts.write_csv(out_dir / "curve.csv", ("tau", "loss"), profile.to_rows(), digest, seed)
    loss_a, loss_b = float(profile.losses[0]), float(profile.losses[-1])
    summary = CurveSummary(config_hash=digest, loss_a=loss_a, loss_b=loss_b, max_loss=profile.max_loss,
                           margin=profile.max_loss - max(loss_a, loss_b), epochs=bz.epochs)
    artifacts.write_json(out_dir / "curve_summary.json", summary)
    _print_table("connect", [("loss_a", loss_a), ("loss_b", loss_b), ("max_loss", summary.max_loss),
                             ("margin", summary.margin)])
    return summary


def cmd_contour(config: ExperimentConfig, w1: str, w2: str, w3: str, resolution: Optional[Tuple[int, int]] = None,
                out: Optional[str] = None) -> PlaneGrid:
    out_dir = _out_dir(config, out)
    digest, seed = config.config_hash(), config.run.seed
    anchors = [_checkpoint_params(p, config) for p in (w1, w2, w3)]
    train, test = build_datasets(config)
    grid = plane_contour(config.model, train, *anchors, resolution=tuple(resolution or config.contour.resolution),
                         margin=config.contour.margin, test_dataset=test)
    artifacts.write_csv(out_dir / "grid.csv", ("u", "v", "loss", "test_err"), grid.to_rows(), digest, seed)
    artifacts.write_csv(out_dir / "anchors.csv", ("anchor", "u", "v", "loss"),
                        [(name, u, v, value) for name, (u, v, value) in zip(("w1", "w2", "w3"), grid.anchors)],
                        digest, seed)
    _print_table("contour", [("cells", grid.losses.size), ("min_loss", float(grid.losses.min())),
                             ("max_loss", float(grid.losses.max()))])
    return grid


def theory_fixture(config: ExperimentConfig, seed: int) -> Tuple[Dataset, np.ndarray]:
    """Dataset and start point for one theory seed.

    For the linear-regression generator the start is the planted interpolant plus a
    perturbation of norm 0.5, so no coordinate of the flow changes sign.
    """
    data = config.data
    if data.kind == "synthetic" and data.generator == "linear_regression":
        fixture = make_linear_regression(make_rng(derive_seed(seed, "data")), data.n_samples, data.in_dim, data.noise_std)
        u = make_rng(derive_seed(seed, "init")).standard_normal(fixture.w_true.shape[0])
        return fixture.dataset, fixture.w_true + 0.5 * u / np.linalg.norm(u)
    seeded = config.model_copy(update={"run": config.run.model_copy(update={"seed": seed})})
    train, _ = build_datasets(seeded)
    return train, init_params(config.model, make_rng(derive_seed(seed, "init")))


def cmd_theory(config: ExperimentConfig, which: Optional[str] = None, gammas: Optional[List[float]] = None,
               out: Optional[str] = None) -> TheorySummary:
    out_dir = _out_dir(config, out)
    digest = config.config_hash()
    th = config.theory
    which = which or th.which
    if which not in ("thm2", "thm3"):
        raise InputError(f"unknown theory check '{which}'")
    gammas = sorted(gammas or th.gammas, reverse=True)
    partition = make_partition(layout_for(config.model), config.partition)
    warnings = []
    if not mu_in_range(th.mu):
        warnings.append(f"mu={th.mu} lies outside (0.5, 1); the verdict carries no theorem guarantee")
        logger.warning(warnings[-1])

    finals = {}
    by_gamma = {gamma: [] for gamma in gammas}
    for seed in th.seeds:
        dataset, w0 = theory_fixture(config, seed)
        for gamma in gammas:
            if which == "thm2":
                series = theorem2_residual(config.model, dataset, w0, gamma, th.c, th.mu, th.t_end, partition,
                                           th.zero_tol_rel, seed=seed)
            else:
                series = theorem3_deterministic_check(config.model, dataset, w0, gamma, th.c, th.mu, th.t_end,
                                                      partition, th.stride, seed=seed)
            by_gamma[gamma].append(series)
            finals.setdefault(str(seed), []).append(series.final)

    for gamma, series_list in by_gamma.items():
        rows = [row + (s.seed,) for s in series_list for row in s.to_rows()]
        artifacts.write_csv(out_dir / f"residuals_{artifacts.float_tag(gamma)}.csv", ("t", "residual", "gamma", "seed"),
                            rows, digest, config.run.seed)

    stride_change = None
    if which == "thm3" and th.check_stride:
        dataset, w0 = theory_fixture(config, th.seeds[0])
        stride_change = theorem3_stride_change(config.model, dataset, w0, gammas[-1], th.c, th.mu, th.t_end,
                                               partition, th.stride)
        if stride_change is not None and stride_change >= 0.10:
            warnings.append(f"halving the integration stride changed the residual by {stride_change:.1%}")
            logger.warning(warnings[-1])

    verdict = all(trend_verdict(values) for values in finals.values())
    summary = TheorySummary(config_hash=digest, which=which, gammas=gammas, seeds=list(th.seeds),
                            final_residuals=finals, verdict=verdict, mu_in_range=mu_in_range(th.mu),
                            stride_change=stride_change, warnings=warnings)
    artifacts.write_json(out_dir / "theory_summary.json", summary)
    _print_table(f"theory ({which})", [(f"seed {k}", ", ".join(f"{v:.3e}" for v in vals)) for k, vals in finals.items()]
                 + [("verdict", "pass" if verdict else "fail")])
    if not verdict:
        raise CheckFailure(f"{which} residuals do not decrease across gammas {gammas}")
    return summary
