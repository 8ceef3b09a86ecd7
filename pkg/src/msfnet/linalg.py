"""Dense float64 matrix substrate: products, stable softmax, and a Jacobi eigensolver.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64 and
row-major semantics. The functions here add the contract checks the rest of
the library relies on (shape errors that name both operands, finiteness on
construction, deterministic eigenvector orientation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, ShapeError

__all__ = [
    "as_matrix",
    "matmul",
    "transpose",
    "row_softmax",
    "EigenDecomposition",
    "symmetric_eigen",
]


def as_matrix(data) -> np.ndarray:
    """Coerce nested sequences (or an array) to a finite float64 2-D array."""
    m = np.array(data, dtype=np.float64, order="C")
    if m.ndim != 2:
        raise ShapeError("matrix must be 2-D", m.shape)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    return a @ b


def transpose(m: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(m.T)


def row_softmax(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted ascending; eigenvector column i pairs with eigenvalue i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def symmetric_eigen(
    a: np.ndarray,
    *,
    tol: float = 1e-12,
    max_sweeps: int = 100,
    symmetry_tol: float = 1e-10,
) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps Givens rotations over every off-diagonal pair until the
    off-diagonal Frobenius norm drops below ``tol``. Eigenvalues are returned
    ascending; each eigenvector column is oriented so its first nonzero
    component is nonnegative, which makes decompositions reproducible.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("symmetric_eigen expects a square matrix", a.shape)
    n = a.shape[0]
    if n > 0 and np.max(np.abs(a - a.T)) > symmetry_tol:
        raise ValueError(
            f"matrix is not symmetric within {symmetry_tol:g} "
            f"(max asymmetry {np.max(np.abs(a - a.T)):.3e})"
        )

    work = a.copy()
    vecs = np.eye(n)

    def off_norm() -> float:
        off = work - np.diag(np.diag(work))
        return float(np.sqrt(np.sum(off * off)))

    residual = off_norm()
    converged = residual < tol
    for _ in range(max_sweeps):
        if converged:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                # Rotation angle zeroing work[p, q] (Golub & Van Loan form).
                tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * work[:, p] - s * work[:, q]
                rot_q = s * work[:, p] + c * work[:, q]
                work[:, p] = rot_p
                work[:, q] = rot_q
                rot_p = c * work[p, :] - s * work[q, :]
                rot_q = s * work[p, :] + c * work[q, :]
                work[p, :] = rot_p
                work[q, :] = rot_q
                work[p, q] = 0.0
                work[q, p] = 0.0
                rot_p = c * vecs[:, p] - s * vecs[:, q]
                rot_q = s * vecs[:, p] + c * vecs[:, q]
                vecs[:, p] = rot_p
                vecs[:, q] = rot_q
        residual = off_norm()
        converged = residual < tol
    if not converged:
        raise ConvergenceError(
            f"Jacobi sweeps did not reduce the off-diagonal norm below {tol:g} "
            f"within {max_sweeps} sweeps",
            residual,
        )

    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")
    values = values[order]
    vecs = vecs[:, order]
    for j in range(n):
        col = vecs[:, j]
        nonzero = np.nonzero(col)[0]
        if nonzero.size and col[nonzero[0]] < 0.0:
            vecs[:, j] = -col
    return EigenDecomposition(eigenvalues=values, eigenvectors=vecs)
