"""Dense real linear algebra used by the oracle, the theory checks and the landscape tools.

All arrays are float64. Symmetric eigenproblems are solved by cyclic Jacobi
rotations in round-robin order: every step applies d/2 disjoint rotations at once.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from sdprune.core.errors import DegeneracyError, DimensionError, NumericError, SymmetryError

logger = logging.getLogger(__name__)

DenseMatrix = np.ndarray

SYMMETRY_RTOL = 1e-9


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: DenseMatrix
    sweeps: int = 0

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> DenseMatrix:
        p = self.eigenvectors
        return (p * self.eigenvalues) @ p.T

    def exp_scaled(self, t: float) -> DenseMatrix:
        """exp(-A t) for the decomposed A."""
        if t < 0:
            raise ValueError(f"t must be non-negative, got {t}")
        p = self.eigenvectors
        return (p * np.exp(-self.eigenvalues * t)) @ p.T


def as_dense(a) -> DenseMatrix:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    return a


def check_symmetric(a, rtol: float = SYMMETRY_RTOL) -> DenseMatrix:
    a = as_dense(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > rtol * scale:
        raise SymmetryError(f"matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    return a


def _round_robin(m: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Pairings of indices 0..m-1 (m even) covering every pair once over m-1 rounds."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        p = np.array(players[:half])
        q = np.array(players[m - 1:half - 1:-1])
        lo, hi = np.minimum(p, q), np.maximum(p, q)
        rounds.append((lo, hi))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: DenseMatrix) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def sym_eigen(a, tol: float = 1e-14, max_sweeps: int = 100) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Ties keep the order of the diagonal position they converged to.
    """
    a = check_symmetric(a)
    d = a.shape[0]
    work = 0.5 * (a + a.T)
    v = np.eye(d)
    if d <= 1:
        return EigenDecomposition(np.diag(work).copy(), v, 0)

    m = d + (d % 2)
    rounds = []
    for p, q in _round_robin(m):
        keep = q < d
        rounds.append((p[keep], q[keep]))

    total = float(np.sqrt(np.sum(work * work)))
    off = _off_norm(work)
    sweeps = 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        while off > tol * total and sweeps < max_sweeps:
            for p, q in rounds:
                apq = work[p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                p, q, apq = p[active], q[active], apq[active]
                tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p, col_q = work[:, p].copy(), work[:, q].copy()
                work[:, p] = col_p * c - col_q * s
                work[:, q] = col_p * s + col_q * c
                row_p, row_q = work[p, :].copy(), work[q, :].copy()
                work[p, :] = c[:, None] * row_p - s[:, None] * row_q
                work[q, :] = s[:, None] * row_p + c[:, None] * row_q
                work[p, q] = 0.0
                work[q, p] = 0.0

                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * s
                v[:, q] = vp * s + vq * c
            sweeps += 1
            previous, off = off, _off_norm(work)
            # rounding floor reached
            if off >= previous and off <= 1e-10 * total:
                break

    if sweeps >= max_sweeps:
        logger.warning("Jacobi stopped after %d sweeps, off-diagonal norm %.3e", sweeps, _off_norm(work))
    eigenvalues = np.diag(work).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], v[:, order], sweeps)


def matrix_exp_scaled(h, t: float) -> DenseMatrix:
    """exp(-h t) for symmetric h, t >= 0."""
    return sym_eigen(h).exp_scaled(t)


def orthonormalize_pair(u, v) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of span{u, v} by one Gram-Schmidt step."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"vectors must be 1-D of equal length, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegeneracyError("cannot orthonormalize a zero vector")
    e1 = u / nu
    r = v - np.dot(v, e1) * e1
    nr = float(np.linalg.norm(r))
    if nr < 1e-12 * nv:
        raise DegeneracyError("vectors are (nearly) parallel")
    return e1, r / nr
