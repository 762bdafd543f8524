"""Convex ``p``-homogeneous penalties with scale-dependent weights.

The quadratic data term ``(1/2m) sum (Af(x_i) - y_i)^2`` is handled in
coefficient space as ``f.T_x.f / 2 - f.B^*y``; the penalty
``G(f) = (1/p) sum c_j |f_j|^p`` is separable, so the proximal step reduces to
one scalar root per coordinate.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import NotConvergedWarning
from .linalg import sym_eigendecompose
from .linear import EmpiricalOperators
from .testbed import Estimate

PROX_TOL = 1e-12
PROX_MAX_ITER = 100


def besov_weights(J, p, s, d=1):
    """``2**(|alpha| d (p (s/d + 1/2) - 1))`` with dyadic scale ``floor(log2 j)``."""
    j = np.arange(1, J + 1)
    scale = np.floor(np.log2(j))
    return 2.0 ** (scale * d * (p * (s / d + 0.5) - 1.0))


@dataclass(frozen=True)
class PenaltySpec:
    p: float
    s: float = 0.0
    d: int = 1
    weights: str = "besov"
    custom: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not (1.0 < self.p <= 2.0):
            raise ValueError(f"penalty exponent p must lie in (1, 2], got {self.p}")
        if self.weights not in ("besov", "unit", "custom"):
            raise ValueError(f"unknown weight family {self.weights!r}")

    def coefficients(self, J):
        if self.weights == "unit":
            return np.ones(J)
        if self.weights == "custom":
            return np.asarray(self.custom, dtype=np.float64)[:J]
        return besov_weights(J, self.p, self.s, self.d)

    def value(self, f):
        f = np.asarray(f, dtype=np.float64)
        return float(np.sum(self.coefficients(f.size) * np.abs(f) ** self.p) / self.p)

    def gradient(self, f):
        f = np.asarray(f, dtype=np.float64)
        return self.coefficients(f.size) * np.sign(f) * np.abs(f) ** (self.p - 1.0)

    def to_json(self):
        return {"p": self.p, "s": self.s, "weights": self.weights}

    @classmethod
    def from_json(cls, obj):
        return cls(p=float(obj["p"]), s=float(obj.get("s", 0.0)), d=int(obj.get("d", 1)),
                   weights=obj.get("weights", "besov"))


@dataclass
class ConvexSolveReport:
    iterations: int
    final_objective: float
    optimality_residual: float
    converged: bool
    restarts: int = 0
    objective_trace: list = field(default_factory=list, repr=False)


def prox_power(v, tau, p, tol=PROX_TOL, max_iter=PROX_MAX_ITER):
    """Solve ``t + tau sign(t)|t|^(p-1) = v`` coordinatewise (prox of ``tau|t|^p/p``)."""
    scalar = np.ndim(v) == 0
    v_arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    tau_arr = np.broadcast_to(np.asarray(tau, dtype=np.float64), v_arr.shape)
    if np.any(tau_arr <= 0):
        raise ValueError("tau must be positive")
    if p == 2.0:
        out = v_arr / (1.0 + tau_arr)
    else:
        out = _kernels.prox_power(np.ascontiguousarray(v_arr), np.ascontiguousarray(tau_arr),
                                  float(p), tol, max_iter)
    return float(out[0]) if scalar else out


def bregman_distance(penalty, f, g):
    """Symmetric Bregman distance ``<grad G(f) - grad G(g), f - g>``."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return float(np.sum((penalty.gradient(f) - penalty.gradient(g)) * (f - g)))


def matched_source(problem, penalty, w):
    """Element whose penalty gradient equals ``A^* w``, i.e. ``c_j sign(f_j)|f_j|^(p-1) = sqrt(sigma_j) w_j``."""
    w = np.asarray(w, dtype=np.float64)
    c = penalty.coefficients(problem.J)
    mag = (np.sqrt(problem.sigma) * np.abs(w) / c) ** (1.0 / (penalty.p - 1.0))
    return np.sign(w) * mag


def convex_apriori_lambda(p, R, Sigma, m, variant="besov", D1=1.0, D3=1.0):
    if not (1.0 < p < 2.0):
        raise ValueError(f"rule needs 1 < p < 2, got {p}")
    rho = Sigma / (R * math.sqrt(m))
    if variant == "besov":
        return R ** (2.0 / (3.0 * p) - 1.0 / 3.0) * rho ** (2.0 / 3.0)
    if variant == "general":
        q = p / (p - 1.0)
        return (D3 ** (2.0 / q) * R ** (-(q + 2.0) / q) / D1) ** (1.0 / 3.0) * rho ** (2.0 / 3.0)
    raise ValueError(f"unknown variant {variant!r}")


def _solve(cov, rhs, lam, penalty, max_iters, tol, x0=None, lip=None):
    J = rhs.size
    c = penalty.coefficients(J)
    p = penalty.p
    if lip is None:
        lip = float(sym_eigendecompose(cov).eigenvalues[0])
    if lip <= 0:
        return np.zeros(J), 0, True, 0, [0.0]
    tau = lam * c / lip

    def objective(x, tx):
        return 0.5 * x @ tx - rhs @ x + lam * np.sum(c * np.abs(x) ** p) / p

    x = np.zeros(J) if x0 is None else np.array(x0, dtype=np.float64)
    tx = cov @ x
    fx = objective(x, tx)
    trace = [fx]
    z, tz = x, tx
    tk = 1.0
    restarts = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        xn = prox_power(z - (tz - rhs) / lip, tau, p)
        txn = cov @ xn
        fn = objective(xn, txn)
        if fn > fx:
            # function-value restart: drop momentum, retry from the last accepted point
            restarts += 1
            if tk == 1.0:
                converged = True
                break
            tk = 1.0
            z, tz = x, tx
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        theta = (tk - 1.0) / tn
        step = np.linalg.norm(xn - x)
        z = xn + theta * (xn - x)
        tz = txn + theta * (txn - tx)
        x, tx, fx, tk = xn, txn, fn, tn
        trace.append(fx)
        if step <= tol:
            converged = True
            break
    return x, it, converged, restarts, trace


def convex_estimate(problem, dataset, penalty, lam, max_iters=5000, tol=1e-8, ops=None):
    """Accelerated proximal gradient with function-value restart, started at 0."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    ops = ops if ops is not None else EmpiricalOperators(problem, dataset)
    cov, rhs = ops.cov, ops.rhs
    lip = float(ops.eig("cov", lambda: ops.cov).eigenvalues[0])
    x, it, converged, restarts, trace = _solve(cov, rhs, lam, penalty, max_iters, tol, lip=lip)
    resid = float(np.linalg.norm(cov @ x - rhs + lam * penalty.gradient(x)))
    if not converged:
        warnings.warn(f"proximal gradient stopped at max_iters={max_iters}", NotConvergedWarning,
                      stacklevel=2)
    report = ConvexSolveReport(it, trace[-1], resid, converged, restarts, trace)
    est = Estimate(x, None, {"lambda": lam, "route": "convex", "p": penalty.p})
    return est, report
