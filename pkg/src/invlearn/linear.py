"""Linear estimators on the diagonal testbed.

Two equivalent routes compute a spectral estimate: the kernel route filters
the m x m Gram matrix and maps representer weights back to coefficients, the
direct route filters the J x J empirical covariance. They agree because
``g(Psi^T Psi / m) Psi^T = Psi^T g(Psi Psi^T / m)``.
"""
import warnings

import numpy as np

from .errors import RankDeficientWarning, TruncationTooLarge
from .filters import filter_spectrum
from .linalg import solve_least_squares, sym_eigendecompose
from .testbed import Estimate, design_matrix

DIRECT_MAX_J = 500


class EmpiricalOperators:
    """Design matrix and the sample operators built from it, computed once."""

    def __init__(self, problem, dataset, n=None):
        self.m = dataset.m
        self.psi = design_matrix(problem, dataset.xs, n)
        self.ys = np.asarray(dataset.ys, dtype=np.float64)
        self._cov = None
        self._rhs = None
        self._eig = {}

    @property
    def cov(self):
        """``T_x = Psi^T Psi / m``."""
        if self._cov is None:
            self._cov = self.psi.T @ self.psi / self.m
        return self._cov

    @property
    def rhs(self):
        """``B_x^* y = Psi^T y / m``."""
        if self._rhs is None:
            self._rhs = self.psi.T @ self.ys / self.m
        return self._rhs

    def gram(self):
        """``Psi Psi^T / m``, the normalized kernel matrix."""
        return self.psi @ self.psi.T / self.m

    def eig(self, key, build):
        """Eigendecomposition of ``build()``, cached under ``key``; every filter and lambda reuses it."""
        if key not in self._eig:
            self._eig[key] = sym_eigendecompose(build())
        return self._eig[key]


def _ops(problem, dataset, ops):
    return ops if ops is not None else EmpiricalOperators(problem, dataset)


def _with_kappa(flt, problem):
    return flt if flt.kappa2 is not None else flt.with_kappa2(problem.kappa2)


def spectral_estimate(problem, dataset, flt, lam, ops=None):
    """Kernel route: representer weights ``g(M) y`` with ``M = K / m``."""
    ops = _ops(problem, dataset, ops)
    flt = _with_kappa(flt, problem)
    w, v = ops.eig("gram", ops.gram)
    alpha = v @ (filter_spectrum(flt, lam, w) * (v.T @ ops.ys))
    coeffs = ops.psi.T @ alpha / ops.m
    return Estimate(coeffs, alpha, {"lambda": lam, "filter": flt.kind, "route": "kernel"})


def spectral_estimate_direct(problem, dataset, flt, lam, ops=None):
    """Coefficient route: ``g(T_x) B_x^* y`` on the truncated basis."""
    if problem.J > DIRECT_MAX_J:
        raise TruncationTooLarge(f"direct route limited to J <= {DIRECT_MAX_J}, got {problem.J}")
    ops = _ops(problem, dataset, ops)
    flt = _with_kappa(flt, problem)
    w, v = ops.eig("cov", lambda: ops.cov)
    coeffs = v @ (filter_spectrum(flt, lam, w) * (v.T @ ops.rhs))
    return Estimate(coeffs, None, {"lambda": lam, "filter": flt.kind, "route": "direct"})


def hilbert_scale_estimate(problem, dataset, scale, flt, lam, ops=None):
    """``L^-1 g(L^-1 T_x L^-1) L^-1 B_x^* y`` with diagonal ``L``."""
    ops = _ops(problem, dataset, ops)
    flt = _with_kappa(flt, problem)
    d = scale.inv_weights(problem.J)
    w, v = ops.eig(("hilbert_scale", scale.w, scale.a),
                   lambda: d[:, None] * ops.cov * d[None, :])
    u = v @ (filter_spectrum(flt, lam, w) * (v.T @ (d * ops.rhs)))
    return Estimate(d * u, None, {"lambda": lam, "filter": flt.kind, "route": "hilbert_scale",
                                  "scale_w": scale.w})


def projection_estimate(problem, dataset, n, rank_tol=1e-12):
    """Least squares over the span of the first ``n`` basis vectors."""
    n = int(n)
    if not (1 <= n <= min(dataset.m, problem.J)):
        raise ValueError(f"need 1 <= n <= min(m, J) = {min(dataset.m, problem.J)}, got {n}")
    psi = design_matrix(problem, dataset.xs, n)
    normal = psi.T @ psi / dataset.m
    rhs = psi.T @ np.asarray(dataset.ys, dtype=np.float64) / dataset.m
    eig = sym_eigendecompose(normal)
    w = eig.eigenvalues
    rank_deficient = bool(w[-1] < 1e-12 * w[0])
    if rank_deficient:
        warnings.warn(f"projection normal matrix is rank deficient (n={n}, m={dataset.m})",
                      RankDeficientWarning, stacklevel=2)
    c = solve_least_squares(normal, rhs, rank_tol, eig=eig)
    # one refinement step on the true residual; the normal matrix squares cond(psi)
    resid = np.asarray(dataset.ys, dtype=np.float64) - psi @ c
    c = c + solve_least_squares(normal, psi.T @ resid / dataset.m, rank_tol, eig=eig)
    coeffs = np.zeros(problem.J)
    coeffs[:n] = c
    return Estimate(coeffs, None, {"n": n, "rank_deficient": rank_deficient,
                                   "min_eig": float(w[-1]), "route": "projection"})


def default_truncation_constant(problem):
    return 4.0 * (1.0 + problem.R)


def truncation_radius(problem, n, C=None):
    """``C (Sigma / sigma_n + 1)`` using the known ``n``-th eigenvalue."""
    C = default_truncation_constant(problem) if C is None else C
    return C * (problem.Sigma_noise / problem.sigma[int(n) - 1] + 1.0)


def truncate_estimate(est, Rhat):
    if Rhat < 0:
        raise ValueError("truncation radius must be non-negative")
    if est.norm() <= Rhat:
        return est
    info = dict(est.info, truncated=True)
    return Estimate(np.zeros_like(est.coeffs), None, info)


def landweber_iterates(problem, dataset, eta, max_iter, ops=None):
    """Yield ``(k, f_k)`` for ``f_{k+1} = f_k + eta (B^* y - T_x f_k)``, starting at 0."""
    ops = _ops(problem, dataset, ops)
    f = np.zeros(problem.J)
    cov, rhs = ops.cov, ops.rhs
    for k in range(1, int(max_iter) + 1):
        f = f + eta * (rhs - cov @ f)
        yield k, f
