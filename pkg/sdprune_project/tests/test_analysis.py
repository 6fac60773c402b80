import numpy as np
import pytest

from sdprune.core.errors import InputError, SignCrossingError, StructuralError
from sdprune.core.seeding import make_rng
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.analysis import (TrajectoryLog, TrajectoryRecord, angle_between_groups, angle_series,
                                       flops_reduction, mu_in_range, theorem2_residual, theorem3_deterministic_check,
                                       theorem3_stride_change, trend_verdict)
from sdprune.services.datasets import Dataset, make_linear_regression
from sdprune.services.grouping import GroupPartition, singleton_partition

DIAG = ModelSpec(kind="linear_regression", layer_sizes=[2, 1], bias=False)


def diag_data(target):
    """Loss 0.5 * (w_1 - target)^2: Hessian diag(1, 0)."""
    return Dataset([[1.0, 0.0]], [target])


@pytest.fixture
def small_lr():
    fixture = make_linear_regression(make_rng(17), 3, 6)
    u = make_rng(18).standard_normal(6)
    return fixture, fixture.w_true + 0.5 * u / np.linalg.norm(u)


def test_mu_range():
    assert mu_in_range(0.6) and mu_in_range(0.51)
    assert not mu_in_range(0.5) and not mu_in_range(1.0) and not mu_in_range(0.4)


def test_theorem2_zero_tuning_gives_zero_residual(small_lr):
    fixture, w0 = small_lr
    series = theorem2_residual(fixture.spec, fixture.dataset, w0, 0.01, 0.0, 0.6, 1.0, singleton_partition(6))
    assert np.all(series.residuals == 0.0)
    assert series.times[-1] == pytest.approx(1.0)


def test_theorem2_first_step_is_compared_at_its_own_threshold(small_lr):
    fixture, w0 = small_lr
    series = theorem2_residual(fixture.spec, fixture.dataset, w0, 0.1, 0.5, 0.6, 0.5, singleton_partition(6))
    assert len(series.residuals) == 5
    assert series.times[0] == pytest.approx(0.1)
    assert series.residuals[0] == 0.0
    assert series.residuals[-1] > 0.0


@pytest.mark.timeout(60)
def test_theorem2_residual_shrinks_with_gamma(small_lr):
    fixture, w0 = small_lr
    g = singleton_partition(6)
    finals = [theorem2_residual(fixture.spec, fixture.dataset, w0, gamma, 0.5, 0.6, 2.0, g).final
              for gamma in (1e-2, 1e-3)]
    assert finals[1] < finals[0]


def test_theorem3_zero_tuning_is_gradient_descent_error():
    series = theorem3_deterministic_check(DIAG, diag_data(3.0), np.array([2.0, 1.0]), 1e-3, 0.0, 0.6, 2.0,
                                          singleton_partition(2))
    assert series.final <= 1e-3


@pytest.mark.timeout(60)
def test_theorem3_diagonal_fixture():
    g = singleton_partition(2)
    w0 = np.array([2.0, 1.0])
    coarse = theorem3_deterministic_check(DIAG, diag_data(3.0), w0, 1e-2, 1.0, 0.6, 2.0, g, seed=0)
    fine = theorem3_deterministic_check(DIAG, diag_data(3.0), w0, 1e-3, 1.0, 0.6, 2.0, g, seed=0)
    assert fine.final <= 1e-3
    assert fine.final < coarse.final
    assert fine.seed == 0 and fine.to_rows()[-1][2] == 1e-3


def test_theorem3_detects_sign_crossing():
    with pytest.raises(SignCrossingError) as info:
        theorem3_deterministic_check(DIAG, diag_data(-3.0), np.array([2.0, 1.0]), 1e-3, 1.0, 0.6, 2.0,
                                     singleton_partition(2))
    assert info.value.group == 0
    assert info.value.crossing_time == pytest.approx(np.log(5.0 / 3.0), abs=0.01)


def test_theorem3_needs_quadratic_model(moons, moons_spec):
    with pytest.raises(InputError):
        theorem3_deterministic_check(moons_spec, moons, np.zeros(22), 1e-2, 1.0, 0.6, 1.0, singleton_partition(22))


@pytest.mark.timeout(60)
def test_stride_halving_changes_little():
    change = theorem3_stride_change(DIAG, diag_data(3.0), np.array([2.0, 1.0]), 1e-3, 1.0, 0.6, 2.0,
                                    singleton_partition(2))
    assert change is not None and change < 0.1


def test_trend_verdict_examples():
    assert trend_verdict([3.0, 2.0, 1.0])
    assert trend_verdict([1.0, 1.05, 0.5])
    assert not trend_verdict([1.0, 1.2, 0.5])
    assert not trend_verdict([1.0, 1.05, 1.1])
    assert trend_verdict([0.0, 0.0])


def test_angles():
    assert angle_between_groups(np.array([1.0, -1.0]), singleton_partition(2)) == pytest.approx(0.0, abs=1e-6)
    assert angle_between_groups(np.array([3.0, 4.0]), GroupPartition(2, ((0, 1),))) == pytest.approx(0.0, abs=1e-6)
    assert np.isnan(angle_between_groups(np.zeros(2), singleton_partition(2)))
    skewed = angle_between_groups(np.array([3.0, 0.1]), singleton_partition(2))
    assert 0.0 < skewed < 90.0


def test_angle_series_from_log():
    log = TrajectoryLog()
    log.append(TrajectoryRecord(0, 0.0, 1.0, 0.0, w=np.array([1.0, 1.0])))
    log.append(TrajectoryRecord(5, 0.5, 0.8, 0.0))
    log.append(TrajectoryRecord(10, 1.0, 0.5, 0.5, w=np.array([2.0, 0.0])))
    series = angle_series(log, singleton_partition(2))
    assert series.times.tolist() == [0.0, 1.0]
    assert len(series.to_rows()) == 2
    with pytest.raises(InputError):
        log.append(TrajectoryRecord(10, 1.0, 0.5, 0.5))
    with pytest.raises(InputError):
        angle_series(TrajectoryLog(), singleton_partition(2))


def test_flops_examples():
    assert flops_reduction([2, 4, 2], {}) == 0.0
    assert flops_reduction([2, 4, 2], {0: [1, 3]}) == pytest.approx(0.5)
    assert flops_reduction([4, 3, 2], {0: [1]}) == pytest.approx(1.0 / 3.0)
    assert flops_reduction([2, 4, 2], {0: [1]}) < flops_reduction([2, 4, 2], {0: [1, 2]})


@pytest.mark.parametrize("pruned", [{1: [0]}, {0: [0, 1, 2, 3]}, {0: [7]}])
def test_flops_rejects_impossible_pruning(pruned):
    with pytest.raises(StructuralError):
        flops_reduction([2, 4, 2], pruned)
