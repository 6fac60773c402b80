"""Loss-landscape tools: quadratic Bezier mode connectivity and loss contours on a 2-D plane."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from sdprune.core.config import settings
from sdprune.core.errors import DimensionError, DivergenceError, InputError
from sdprune.core.linalg import orthonormalize_pair
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.datasets import Dataset, iterate_batches
from sdprune.services.model import accuracy, grad, loss

logger = logging.getLogger(__name__)

PROFILE_POINTS = 101


@dataclass
class BezierCurve:
    """(1-tau)^2 start + 2 tau (1-tau) control + tau^2 end; only the control moves."""

    start: np.ndarray
    end: np.ndarray
    control: np.ndarray

    @classmethod
    def through_midpoint(cls, start: np.ndarray, end: np.ndarray) -> "BezierCurve":
        start = np.array(start, dtype=np.float64)
        end = np.array(end, dtype=np.float64)
        if start.shape != end.shape or start.ndim != 1:
            raise DimensionError(f"endpoints must be vectors of equal length, got {start.shape} and {end.shape}")
        return cls(start, end, 0.5 * (start + end))

    def point(self, tau: float) -> np.ndarray:
        if not 0.0 <= tau <= 1.0:
            raise InputError(f"tau must lie in [0, 1], got {tau}")
        if tau == 0.0:
            return self.start.copy()
        if tau == 1.0:
            return self.end.copy()
        return (1 - tau) ** 2 * self.start + 2 * tau * (1 - tau) * self.control + tau ** 2 * self.end


@dataclass(frozen=True)
class CurveProfile:
    taus: np.ndarray
    losses: np.ndarray

    @property
    def max_loss(self) -> float:
        return float(self.losses.max())

    def to_rows(self) -> List[Tuple[float, float]]:
        return [(float(t), float(v)) for t, v in zip(self.taus, self.losses)]


def curve_profile(spec: ModelSpec, dataset: Dataset, curve: BezierCurve, n: int = PROFILE_POINTS) -> CurveProfile:
    taus = np.linspace(0.0, 1.0, n)
    return CurveProfile(taus, np.array([loss(spec, curve.point(float(t)), dataset) for t in taus]))


def bezier_connect(spec: ModelSpec, dataset: Dataset, w_a, w_b, epochs: int, lr: float, batch_size: int,
                   rng: np.random.Generator) -> Tuple[BezierCurve, CurveProfile]:
    """SGD on the control point with one uniformly drawn tau per minibatch step."""
    curve = BezierCurve.through_midpoint(w_a, w_b)
    step = 0
    for epoch in range(epochs):
        for batch in iterate_batches(dataset, batch_size, rng):
            tau = float(rng.uniform(0.0, 1.0))
            g = grad(spec, curve.point(tau), dataset, batch)
            curve.control = curve.control - lr * 2.0 * tau * (1.0 - tau) * g
            step += 1
            if not np.all(np.isfinite(curve.control)):
                raise DivergenceError("Bezier control point diverged", step=step)
        logger.debug("bezier epoch %d done", epoch)
    profile = curve_profile(spec, dataset, curve)
    logger.info("bezier curve: endpoint losses %.4g / %.4g, max %.4g",
                profile.losses[0], profile.losses[-1], profile.max_loss)
    return curve, profile


@dataclass(frozen=True)
class PlaneGrid:
    origin: np.ndarray
    axes: Tuple[np.ndarray, np.ndarray]
    us: np.ndarray
    vs: np.ndarray
    losses: np.ndarray
    test_errors: Optional[np.ndarray]
    anchors: List[Tuple[float, float, float]]

    @property
    def resolution(self) -> Tuple[int, int]:
        return len(self.us), len(self.vs)

    def at(self, u: float, v: float) -> np.ndarray:
        return self.origin + u * self.axes[0] + v * self.axes[1]

    def to_rows(self) -> List[Tuple[float, float, float, Optional[float]]]:
        rows = []
        for i, u in enumerate(self.us):
            for j, v in enumerate(self.vs):
                err = None if self.test_errors is None else float(self.test_errors[i, j])
                rows.append((float(u), float(v), float(self.losses[i, j]), err))
        return rows


def _test_error(spec: ModelSpec, w: np.ndarray, test: Dataset) -> float:
    """1 - accuracy for classifiers, test loss for regressors."""
    acc = accuracy(spec, w, test)
    return loss(spec, w, test) if acc is None else 1.0 - acc


def _anchored_axis(lo: float, hi: float, n: int, margin: float) -> np.ndarray:
    """n evenly spaced nodes covering [lo, hi] plus margins, one of them exactly 0.0.

    The spacing is the smallest that keeps 0 on a node and the padded range inside the grid.
    """
    pad = margin * (hi - lo)
    a, b = lo - pad, hi + pad
    if n == 1:
        return np.zeros(1)
    best: Optional[Tuple[float, int]] = None
    for k in range(n):
        if (a < 0 and k == 0) or (b > 0 and k == n - 1):
            continue
        h = max(-a / k if a < 0 else 0.0, b / (n - 1 - k) if b > 0 else 0.0)
        if best is None or h < best[0]:
            best = (h, k)
    if best is None:
        raise InputError(f"{n} nodes cannot cover [{a:.3g}, {b:.3g}] with w1 on a node; use at least 3")
    h, k = best
    return (np.arange(n) - k) * h


def plane_contour(spec: ModelSpec, dataset: Dataset, w1, w2, w3, resolution: Tuple[int, int] = (21, 21),
                  margin: float = 0.2, test_dataset: Optional[Dataset] = None,
                  threads: Optional[int] = None) -> PlaneGrid:
    """Losses on the plane through w1, w2, w3 covering the anchor triangle plus margins.

    w1 sits at (u, v) = (0, 0), which is always a grid node. w2 and w3 are generally
    off-grid; ``anchors`` holds their exact coordinates and losses.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    w3 = np.asarray(w3, dtype=np.float64)
    if min(resolution) < 1:
        raise InputError("resolution entries must be >= 1")
    e1, e2 = orthonormalize_pair(w2 - w1, w3 - w1)
    coords = [(0.0, 0.0)] + [(float(np.dot(w - w1, e1)), float(np.dot(w - w1, e2))) for w in (w2, w3)]
    us_anchor = [u for u, _ in coords]
    vs_anchor = [v for _, v in coords]
    us = _anchored_axis(min(us_anchor), max(us_anchor), resolution[0], margin)
    vs = _anchored_axis(min(vs_anchor), max(vs_anchor), resolution[1], margin)
    cells = [(i, j) for i in range(len(us)) for j in range(len(vs))]

    def evaluate(cell):
        w = w1 + us[cell[0]] * e1 + vs[cell[1]] * e2
        err = _test_error(spec, w, test_dataset) if test_dataset is not None else None
        return loss(spec, w, dataset), err

    threads = settings.threads if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(evaluate, cells))
    else:
        values = [evaluate(cell) for cell in cells]
    losses = np.empty((len(us), len(vs)))
    errors = np.empty((len(us), len(vs))) if test_dataset is not None else None
    for (i, j), (value, err) in zip(cells, values):
        losses[i, j] = value
        if errors is not None:
            errors[i, j] = err
    anchors = [(u, v, loss(spec, w1 + u * e1 + v * e2, dataset)) for u, v in coords]
    return PlaneGrid(w1, (e1, e2), us, vs, losses, errors, anchors)
