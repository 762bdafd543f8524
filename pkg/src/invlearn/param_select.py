"""Regularization-parameter rules: a-priori formulas and data-driven selection."""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConditionViolated,
    EmptyValidationSet,
    LambdaFloorWarning,
    RowConstraintViolated,
)
from .linalg import sym_eigendecompose
from .testbed import Dataset, design_matrix

HS_CASES = ("oversmoothing", "regular_benchmark", "regular_optimal")


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("grid must be nonempty")
        if np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("grid must be positive and strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def geometric(cls, lam_min, ratio, K):
        if ratio <= 1:
            raise ValueError("grid ratio must exceed 1")
        return cls(lam_min * ratio ** np.arange(K + 1))

    @classmethod
    def default(cls, kappa2, K=20):
        return cls.geometric(kappa2 * 2.0 ** (-K), 2.0, K)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)


def _grid_values(grid):
    return grid.values if isinstance(grid, LambdaGrid) else LambdaGrid(grid).values


def _ratio(Sigma, R, m):
    return Sigma / (R * math.sqrt(m))


def apriori_lambda(r, b, Sigma, R, m):
    """``(Sigma/(R sqrt m))**(2/(2r+b+1))``; warns below the floor ``m**(-1/(b+1))``."""
    lam = _ratio(Sigma, R, m) ** (2.0 / (2.0 * r + b + 1.0))
    floor = m ** (-1.0 / (b + 1.0))
    if lam < floor:
        warnings.warn(f"lambda={lam:.3e} is below the validity floor {floor:.3e}",
                      LambdaFloorWarning, stacklevel=2)
    return lam


def linear_rate_exponent(r, b):
    return 2.0 * r / (2.0 * r + b + 1.0)


def _check_hs_row(case, s, p, a, b):
    edge = s + (b + 1.0) / (2.0 * a)
    if case == "oversmoothing":
        if not s < 1:
            raise RowConstraintViolated(f"oversmoothing requires s < 1, got s={s}")
    elif case == "regular_benchmark":
        if not p >= edge:
            raise RowConstraintViolated(f"regular_benchmark requires p >= s + (b+1)/(2a) = {edge}, got p={p}")
    elif case == "regular_optimal":
        if not (s <= p <= edge):
            raise RowConstraintViolated(f"regular_optimal requires s <= p <= {edge}, got s={s}, p={p}")
    else:
        raise ValueError(f"unknown case {case!r}; expected one of {HS_CASES}")


def apriori_lambda_hs(case, s, p, a, b, Sigma, R, m):
    _check_hs_row(case, s, p, a, b)
    rho = _ratio(Sigma, R, m)
    if case == "oversmoothing":
        return rho ** (2.0 / (b + 1.0))
    if case == "regular_benchmark":
        return rho ** (1.0 / (a * (p - 1.0)))
    return rho ** (2.0 / (2.0 * a * s + b + 1.0 - 2.0 * a))


def hs_rate_exponent(case, s, p, a, b):
    _check_hs_row(case, s, p, a, b)
    if case == "oversmoothing":
        return 2.0 * a * s / (b + 1.0)
    if case == "regular_benchmark":
        return s / (p - 1.0)
    return 2.0 * a * s / (2.0 * a * s + b + 1.0 - 2.0 * a)


def apriori_n_projection(s, t, Sigma, R, m, cap=None):
    """Subspace dimension ``round((Sigma/(R sqrt m))**(-2/(2s+t+1)))``."""
    if not 2.0 * s - t + 1.0 > 0:
        raise ConditionViolated(f"projection rule requires 2s - t + 1 > 0, got s={s}, t={t}")
    n = max(1, int(round(_ratio(Sigma, R, m) ** (-2.0 / (2.0 * s + t + 1.0)))))
    limit = m if cap is None else min(m, cap)
    return min(n, int(limit))


def projection_rate_exponent(s, t):
    return 2.0 * s / (2.0 * s + t + 1.0)


def split_dataset(dataset, split_fraction):
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    n_train = math.ceil(split_fraction * dataset.m)
    if n_train >= dataset.m:
        raise EmptyValidationSet(f"split {split_fraction} of m={dataset.m} leaves no validation points")
    train = Dataset(dataset.xs[:n_train], dataset.ys[:n_train], n_train, dataset.seed)
    valid = Dataset(dataset.xs[n_train:], dataset.ys[n_train:], dataset.m - n_train, dataset.seed)
    return train, valid


def holdout_select(problem, dataset, grid, split_fraction, fit, details=False):
    """Grid value with the smallest validation risk; ties go to the larger value.

    ``fit(problem, train_dataset, lam)`` returns an Estimate.
    """
    lams = _grid_values(grid)
    train, valid = split_dataset(dataset, split_fraction)
    psi_v = design_matrix(problem, valid.xs)
    risks = np.empty(lams.size)
    for k, lam in enumerate(lams):
        est = fit(problem, train, lam)
        risks[k] = np.mean((psi_v @ est.coeffs - valid.ys) ** 2)
    best = risks.min()
    k_sel = int(np.flatnonzero(risks <= best * (1 + 1e-12))[-1])
    if details:
        return float(lams[k_sel]), {"risks": risks, "index": k_sel}
    return float(lams[k_sel])


def estimate_noise_level(problem, dataset, fit, grid=None, split_fraction=0.5):
    """Root validation risk at the hold-out choice; slightly biased upward by the fit error."""
    lams = _grid_values(grid) if grid is not None else LambdaGrid.default(problem.kappa2).values
    _, info = holdout_select(problem, dataset, lams, split_fraction, fit, details=True)
    return float(math.sqrt(info["risks"][info["index"]]))


def variance_proxy(cov_eigenvalues, m, Sigma_hat, M_hat=None):
    """Sample-error scale ``Sigma sqrt(N(lam)/(m lam)) + M/(m lam)`` from the empirical spectrum."""
    w = np.clip(np.asarray(cov_eigenvalues, dtype=np.float64), 0.0, None)
    M_hat = Sigma_hat if M_hat is None else M_hat

    def proxy(lam):
        n_eff = float(np.sum(w / (w + lam)))
        return Sigma_hat * math.sqrt(n_eff / (m * lam)) + M_hat / (m * lam)

    return proxy


def lepskii_select(problem, dataset, grid, fit, variance_proxy_fn, c=1.5, details=False):
    """Largest grid value ``lam`` whose estimate stays within ``c sqrt(lam') S(lam')`` of every
    estimate at ``lam' <= lam``, distances measured in ``|(T_x + lam')^(1/2) .|``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    lams = _grid_values(grid)
    psi = design_matrix(problem, dataset.xs)
    ests = [fit(problem, dataset, lam).coeffs for lam in lams]
    thresholds = [c * math.sqrt(lam) * variance_proxy_fn(lam) for lam in lams]
    k_sel = 0
    for k in range(1, lams.size):
        ok = True
        for j in range(k):
            d = ests[k] - ests[j]
            pd = psi @ d
            dist = math.sqrt(pd @ pd / dataset.m + lams[j] * (d @ d))
            if dist > thresholds[j]:
                ok = False
                break
        if not ok:
            break
        k_sel = k
    if details:
        return float(lams[k_sel]), {"index": k_sel, "empty": False}
    return float(lams[k_sel])


class SmoothedResidual:
    """``|(K/m)^s r|_m`` through the thin spectral factorization of the design."""

    def __init__(self, psi, s_smooth):
        self.psi = psi
        self.m = psi.shape[0]
        self.s = float(s_smooth)
        w, v = sym_eigendecompose(psi.T @ psi / self.m)
        keep = w > 1e-14 * max(w[0], 1e-300)
        self.w = w[keep]
        self.v = v[:, keep]

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.s == 0.0:
            return float(math.sqrt(r @ r / self.m))
        # coordinates of r on the left singular vectors of psi / sqrt(m)
        u_r = (self.v.T @ (self.psi.T @ r)) / (math.sqrt(self.m) * np.sqrt(self.w))
        return float(math.sqrt(np.sum(self.w ** (2 * self.s) * u_r ** 2) / self.m))

    def noise_scale(self):
        """``sqrt(tr((K/m)^(2s)) / m)``, the expected value per unit noise level."""
        if self.s == 0.0:
            return 1.0
        return float(math.sqrt(np.sum(self.w ** (2 * self.s)) / self.m))


def discrepancy_threshold(problem, dataset, s_smooth, factor=1.5, Sigma=None):
    sm = SmoothedResidual(design_matrix(problem, dataset.xs), s_smooth)
    Sigma = problem.Sigma_noise if Sigma is None else Sigma
    return factor * Sigma * sm.noise_scale()


def discrepancy_stop(problem, dataset, iterate_stream, s_smooth, tau, details=False):
    """First iteration whose smoothed residual is at most ``tau``; iteration 0 is ``f = 0``."""
    psi = design_matrix(problem, dataset.xs)
    ys = np.asarray(dataset.ys, dtype=np.float64)
    sm = SmoothedResidual(psi, s_smooth)
    t_stop, resid, reached = 0, sm(ys), False
    if resid <= tau:
        reached = True
    else:
        for t, f in iterate_stream:
            t_stop = t
            resid = sm(ys - psi @ f)
            if resid <= tau:
                reached = True
                break
    if details:
        return t_stop, {"residual": resid, "reached": reached}
    return t_stop
