"""Dense symmetric linear algebra used by every estimator.

The eigensolver is a cyclic Jacobi iteration running in the compiled kernel
when available. ``method="auto"`` hands matrices larger than
``JACOBI_MAX_DIM`` to :func:`numpy.linalg.eigh`, where Jacobi's cubic cost
per sweep stops being practical.
"""
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, NoConvergence, NonSymmetric

DEFAULT_TOL = 1e-12
DEFAULT_MAX_SWEEPS = 100
JACOBI_MAX_DIM = 256


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def check_symmetric(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    gap = np.abs(m - m.T)
    allowed = 1e-12 * np.maximum(1.0, np.abs(m))
    if np.any(gap > allowed):
        i, j = np.unravel_index(np.argmax(gap - allowed), m.shape)
        raise NonSymmetric(f"entries ({i},{j}) and ({j},{i}) differ by {gap[i, j]:.3e}")
    return m


def sym_eigendecompose(m, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS, method="auto"):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    m = check_symmetric(m)
    m = 0.5 * (m + m.T)
    n = m.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0), np.zeros((0, 0)))
    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, v, sweeps, converged = _kernels.jacobi_eigh(np.ascontiguousarray(m), tol, max_sweeps)
        if not converged:
            raise NoConvergence(f"Jacobi iteration did not converge in {sweeps} sweeps (n={n})")
    elif method == "lapack":
        w, v = np.linalg.eigh(m)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(np.asarray(w)[order], np.ascontiguousarray(np.asarray(v)[:, order]))


def _check_rhs(m, rhs):
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != np.shape(m)[0]:
        raise DimensionMismatch(f"matrix has dim {np.shape(m)[0]}, right-hand side has {rhs.shape[0]}")
    return rhs


def solve_least_squares(m, rhs, rank_tol=DEFAULT_TOL, eig=None, method="auto"):
    """Pseudoinverse solve ``M⁺ rhs`` for positive semidefinite ``M``.

    Eigenvalues at or below ``rank_tol`` times the largest are treated as zero.
    A precomputed ``eig`` skips the decomposition.
    """
    if rank_tol < 0:
        raise ValueError("rank_tol must be non-negative")
    rhs = _check_rhs(m, rhs)
    if eig is None:
        eig = sym_eigendecompose(m, method=method)
    w, v = eig
    top = w[0] if w.size else 0.0
    keep = w > rank_tol * max(top, 0.0)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return v @ (inv[:, None] * (v.T @ rhs)) if rhs.ndim == 2 else v @ (inv * (v.T @ rhs))


def apply_matrix_function(fn, m, rhs, eig=None, method="auto"):
    """Return ``fn(M) @ rhs`` where ``fn`` acts elementwise on the spectrum."""
    rhs = _check_rhs(m, rhs)
    if eig is None:
        eig = sym_eigendecompose(m, method=method)
    w, v = eig
    g = np.asarray(fn(w), dtype=np.float64)
    proj = v.T @ rhs
    return v @ (g[:, None] * proj if rhs.ndim == 2 else g * proj)
