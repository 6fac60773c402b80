import logging

import numpy as np
import pytest

from sdprune.core.errors import InputError, PreconditionError
from sdprune.core.seeding import make_rng
from sdprune.services.grouping import GroupPartition, singleton_partition
from sdprune.services.model import full_gradient, quadratic_hessian
from sdprune.services.prox import ProxProblem, brute_force_prox
from sdprune.services.sdp_oracle import (direction_factors, exact_sdp_prune, first_clamp, flat_subspace,
                                         loss_flatness_check, naive_prune, perturbation_check, project)


def test_flat_subspace_of_diagonal():
    sub = flat_subspace(np.diag([2.0, 0.0, 0.0]))
    assert sub.k == 2 and not sub.degenerate
    np.testing.assert_allclose(project(sub, np.array([1.0, 0.0, 0.0])), 0.0, atol=1e-15)
    np.testing.assert_allclose(project(sub, np.array([0.0, 1.0, 0.0])), [0.0, 1.0, 0.0], atol=1e-15)


def test_identity_has_no_flat_directions():
    sub = flat_subspace(np.eye(3))
    assert sub.k == 0
    assert project(sub, np.ones(3)).tolist() == [0.0, 0.0, 0.0]


def test_zero_hessian_is_degenerate(caplog):
    with caplog.at_level(logging.WARNING):
        sub = flat_subspace(np.zeros((3, 3)))
    assert sub.degenerate and sub.k == 3
    assert "flat subspace is the whole space" in caplog.text


def test_zero_tolerance_range():
    with pytest.raises(InputError):
        flat_subspace(np.eye(2), zero_tol_rel=0.0)


def test_overparameterized_regression_null_space(overparam_lr):
    h = quadratic_hessian(overparam_lr.dataset)
    sub = flat_subspace(h)
    assert sub.k == 20 - np.linalg.matrix_rank(overparam_lr.dataset.inputs) == 10


def test_projection_properties(rng, overparam_lr):
    sub = flat_subspace(quadratic_hessian(overparam_lr.dataset))
    x, y = rng.standard_normal(20), rng.standard_normal(20)
    px = project(sub, x)
    np.testing.assert_allclose(project(sub, px), px, atol=1e-12)
    assert np.dot(px, y) == pytest.approx(np.dot(x, project(sub, y)), abs=1e-12)
    assert np.linalg.norm(px) <= np.linalg.norm(x) + 1e-12


def test_direction_factors_extremes():
    g = GroupPartition(4, ((0, 1), (2, 3)))
    w = np.array([1.0, 2.0, -3.0, 0.5])
    np.testing.assert_allclose(direction_factors(w, g, flat_subspace(np.zeros((4, 4)))), [1.0, 1.0], atol=1e-12)
    assert direction_factors(w, g, flat_subspace(np.eye(4))).tolist() == [0.0, 0.0]


def test_two_dimensional_example():
    g = GroupPartition(2, ((0, 1),))
    w = np.array([3.0, 4.0])
    sub = flat_subspace(np.diag([0.0, 1.0]))
    s = direction_factors(w, g, sub)
    np.testing.assert_allclose(s, [0.36], atol=1e-12)
    sol = exact_sdp_prune(w, g, sub, 5.0)
    np.testing.assert_allclose(sol.shrink, [0.64], atol=1e-12)
    np.testing.assert_allclose(sol.w_pruned, [1.92, 2.56], atol=1e-12)
    oracle = brute_force_prox(ProxProblem(w, 5.0, float(s[0])), grid=20001)
    np.testing.assert_allclose(sol.w_pruned, oracle, atol=1e-7)


def test_zero_group_precondition():
    g = GroupPartition(3, ((0, 1), (2,)))
    w = np.array([1.0, 1.0, 0.0])
    sub = flat_subspace(np.zeros((3, 3)))
    with pytest.raises(PreconditionError):
        direction_factors(w, g, sub)
    s = direction_factors(w, g, sub, allow_zero_groups=True)
    assert s[1] == 0.0
    assert exact_sdp_prune(w, g, sub, 0.5, allow_zero_groups=True).w_pruned[2] == 0.0


def test_zero_lambda_is_identity_and_large_lambda_prunes_everything():
    g = GroupPartition(4, ((0, 1), (2, 3)))
    w = np.array([1.0, 2.0, -3.0, 0.5])
    sub = flat_subspace(np.zeros((4, 4)))
    assert np.array_equal(exact_sdp_prune(w, g, sub, 0.0).w_pruned, w)
    everything = exact_sdp_prune(w, g, sub, 10.0)
    assert everything.pruned_groups == (0, 1)
    assert not np.any(everything.w_pruned)
    with pytest.raises(InputError):
        exact_sdp_prune(w, g, sub, -1.0)


def test_negative_factor_grows_group(caplog):
    u = np.array([1.0, -2.0]) / np.sqrt(5.0)
    sub = flat_subspace(np.eye(2) - np.outer(u, u))
    g = singleton_partition(2)
    w = np.array([1.0, 1.0])
    with caplog.at_level(logging.WARNING):
        s = direction_factors(w, g, sub)
    np.testing.assert_allclose(s, [-0.2, 0.4], atol=1e-12)
    assert "negative" in caplog.text
    sol = exact_sdp_prune(w, g, sub, 1.0, s=s)
    assert sol.w_pruned[0] == pytest.approx(1.2)
    assert sol.w_pruned[1] == pytest.approx(0.6)
    assert first_clamp(w, g, s) == pytest.approx(2.5)


def test_naive_prune_uses_unit_factors():
    g = GroupPartition(3, ((0, 1), (2,)))
    sol = naive_prune(np.array([3.0, 4.0, 1.0]), g, 2.5)
    np.testing.assert_allclose(sol.w_pruned, [1.5, 2.0, 0.0])
    assert sol.s.tolist() == [1.0, 1.0]
    assert sol.pruned_groups == (1,)


def test_perturbation_identity():
    w = np.array([1.0, 2.0, -3.0, 0.5])
    g = singleton_partition(4)
    sub = flat_subspace(np.diag([0.0, 1.0, 0.0, 3.0]))
    sol = exact_sdp_prune(w, g, sub, 0.1, allow_zero_groups=True)
    residual = perturbation_check(sol, w, g, sub)
    assert residual.parallel <= 1e-12 and residual.orthogonal <= 1e-12

    full = flat_subspace(np.zeros((4, 4)))
    grouped = GroupPartition(4, ((0, 1), (2, 3)))
    residual = perturbation_check(exact_sdp_prune(w, grouped, full, 0.1), w, grouped, full)
    assert residual.orthogonal <= 1e-12

    with pytest.raises(PreconditionError):
        perturbation_check(exact_sdp_prune(w, grouped, full, 100.0), w, grouped, full)


def test_record_fields():
    g = GroupPartition(2, ((0, 1),))
    sol = exact_sdp_prune(np.array([3.0, 4.0]), g, flat_subspace(np.diag([0.0, 1.0])), 5.0)
    record = sol.to_record("hash")
    assert record.lam == 5.0 and record.config_hash == "hash"
    assert len(record.w_pruned) == 2 and record.pruned_groups == []


@pytest.mark.timeout(30)
def test_exact_pruning_keeps_loss_flat(overparam_lr):
    spec, data, w = overparam_lr.spec, overparam_lr.dataset, overparam_lr.w_true
    g = singleton_partition(20)
    sub = flat_subspace(quadratic_hessian(data))
    report = loss_flatness_check(spec, data, w, g, sub)
    assert not report.warnings
    assert report.rows[0].lam == 0.0 and report.rows[0].sdp_delta == 0.0
    assert len(report.rows) == 13
    assert max(abs(r.sdp_delta) for r in report.rows) <= 1e-8
    assert report.rows[-1].naive_delta >= 1e-4
    assert report.clamp is not None and report.rows[-1].lam < report.clamp


def test_flatness_warns_away_from_minimum(overparam_lr):
    spec, data = overparam_lr.spec, overparam_lr.dataset
    w = overparam_lr.w_true + 1.0
    assert np.linalg.norm(full_gradient(spec, w, data)) > 1e-4
    g = singleton_partition(20)
    report = loss_flatness_check(spec, data, w, g, flat_subspace(quadratic_hessian(data)), lambdas=[0.1])
    assert len(report.rows) == 1
    assert report.warnings and "stationary" in report.warnings[0]
