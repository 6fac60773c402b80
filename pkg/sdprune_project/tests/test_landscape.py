import numpy as np
import pytest

from sdprune.core.errors import DegeneracyError, InputError
from sdprune.core.seeding import make_rng
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.datasets import Dataset
from sdprune.services.landscape import BezierCurve, bezier_connect, curve_profile, plane_contour
from sdprune.services.model import init_params, loss

PLANE = ModelSpec(kind="linear_regression", layer_sizes=[2, 1], bias=False)


@pytest.fixture
def bowl():
    """0.25 * ||w||^2."""
    return Dataset(np.eye(2), [0.0, 0.0])


def test_curve_endpoints_and_midpoint():
    curve = BezierCurve.through_midpoint([1.0, 0.0], [0.0, 1.0])
    np.testing.assert_array_equal(curve.control, [0.5, 0.5])
    np.testing.assert_allclose(curve.point(0.5), [0.5, 0.5])
    with pytest.raises(InputError):
        curve.point(1.5)


def test_convex_bowl_curve_stays_below_chord(bowl):
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    curve, profile = bezier_connect(PLANE, bowl, a, b, epochs=10, lr=0.1, batch_size=1, rng=make_rng(0))
    assert np.array_equal(curve.point(0.0), a) and np.array_equal(curve.point(1.0), b)
    assert profile.max_loss <= 0.25 + 1e-6
    assert len(profile.to_rows()) == 101


def test_identical_endpoints_at_minimum(overparam_lr):
    spec, data, w = overparam_lr.spec, overparam_lr.dataset, overparam_lr.w_true
    curve, profile = bezier_connect(spec, data, w, w, epochs=3, lr=0.01, batch_size=5, rng=make_rng(1))
    assert profile.max_loss == pytest.approx(loss(spec, w, data), abs=1e-12)


@pytest.mark.timeout(30)
def test_classifier_curve_endpoints_exact(moons, moons_spec):
    a = init_params(moons_spec, make_rng(2))
    b = init_params(moons_spec, make_rng(3))
    curve, profile = bezier_connect(moons_spec, moons, a, b, epochs=2, lr=0.05, batch_size=16, rng=make_rng(4))
    assert profile.losses[0] == loss(moons_spec, a, moons)
    assert profile.losses[-1] == loss(moons_spec, b, moons)
    again = curve_profile(moons_spec, moons, curve)
    np.testing.assert_array_equal(again.losses, profile.losses)


def test_plane_contour_matches_closed_form(bowl):
    w1, w2, w3 = np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 2.0])
    grid = plane_contour(PLANE, bowl, w1, w2, w3, resolution=(3, 3), margin=0.0)
    assert grid.resolution == (3, 3)
    assert len(grid.to_rows()) == 9
    for i, u in enumerate(grid.us):
        for j, v in enumerate(grid.vs):
            w = grid.at(u, v)
            assert grid.losses[i, j] == pytest.approx(0.25 * float(np.dot(w, w)), abs=1e-12)
    assert grid.anchors[0] == (0.0, 0.0, loss(PLANE, w1, bowl))
    assert grid.anchors[1][2] == pytest.approx(0.25) and grid.anchors[2][2] == pytest.approx(1.0)
    assert grid.test_errors is None


def test_plane_contour_puts_w1_on_a_node(bowl):
    w1, w2, w3 = np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([-1.0, 1.0])
    grid = plane_contour(PLANE, bowl, w1, w2, w3, resolution=(4, 5), margin=0.2)
    np.testing.assert_allclose(grid.us, [-1.4, 0.0, 1.4, 2.8], atol=1e-12)
    i0, j0 = list(grid.us).index(0.0), list(grid.vs).index(0.0)
    assert grid.losses[i0, j0] == loss(PLANE, w1, bowl)
    np.testing.assert_allclose(np.diff(grid.vs), np.diff(grid.vs)[0], atol=1e-12)
    for u, v, _ in grid.anchors:
        assert grid.us[0] - 1e-12 <= u <= grid.us[-1] + 1e-12
        assert grid.vs[0] - 1e-12 <= v <= grid.vs[-1] + 1e-12


def test_plane_contour_w1_cell_is_exact_on_default_grid(moons, moons_spec):
    ws = [init_params(moons_spec, make_rng(k)) for k in (11, 12, 13)]
    grid = plane_contour(moons_spec, moons, *ws)
    assert grid.resolution == (21, 21)
    i0, j0 = list(grid.us).index(0.0), list(grid.vs).index(0.0)
    assert grid.losses[i0, j0] == loss(moons_spec, ws[0], moons)


def test_plane_contour_two_nodes_cannot_straddle_w1(bowl):
    with pytest.raises(InputError):
        plane_contour(PLANE, bowl, [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], resolution=(2, 2))


def test_plane_contour_threads_and_test_errors(moons, moons_spec):
    ws = [init_params(moons_spec, make_rng(k)) for k in (5, 6, 7)]
    serial = plane_contour(moons_spec, moons, *ws, resolution=(4, 3), test_dataset=moons, threads=1)
    parallel = plane_contour(moons_spec, moons, *ws, resolution=(4, 3), test_dataset=moons, threads=3)
    np.testing.assert_array_equal(serial.losses, parallel.losses)
    np.testing.assert_array_equal(serial.test_errors, parallel.test_errors)
    assert np.all((serial.test_errors >= 0.0) & (serial.test_errors <= 1.0))


def test_plane_contour_degenerate_anchors(bowl):
    with pytest.raises(DegeneracyError):
        plane_contour(PLANE, bowl, [0.0, 0.0], [1.0, 1.0], [2.0, 2.0])
