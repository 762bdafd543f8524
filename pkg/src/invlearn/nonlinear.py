"""Nonlinear Tikhonov regularization by Levenberg-Marquardt.

The objective is ``(1/m) sum |F(theta)(x_i) - y_i|^2 + lam |P (theta - theta_bar)|^2``
where ``P`` is the identity, or the diagonal generator of a Hilbert scale.
It is minimized as the stacked least-squares residual
``[(F - y)/sqrt(m); sqrt(lam) P (theta - theta_bar)]``.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainViolation, NotConvergedWarning, SmoothnessOutOfRange
from .testbed import Estimate, HilbertScaleSpec, design_matrix


@dataclass(frozen=True)
class ForwardModel:
    """``eval(theta, xs)`` gives predictions, ``jacobian(theta, xs)`` their derivative.

    Predictions may be ``(m,)`` or ``(m, q)``; the jacobian then has one more
    trailing axis of length ``len(theta)``. ``bounds`` is an optional
    ``(lo, hi)`` box that iterates are projected onto; ``domain`` an optional
    predicate that must hold for every iterate.
    """

    eval: Callable
    jacobian: Callable
    lipschitz_hint: Optional[float] = None
    bounds: Optional[tuple] = None
    domain: Optional[Callable] = None
    name: str = "model"


@dataclass
class NLOptions:
    max_iters: int = 200
    tol: float = 1e-10
    damping0: float = 1e-3
    scale: object = None  # None, HilbertScaleSpec or weight vector

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj or {})
        return cls(max_iters=int(obj.get("max_iters", 200)), tol=float(obj.get("tol", 1e-10)),
                   damping0=float(obj.get("damping0", 1e-3)), scale=obj.get("scale"))


@dataclass
class NLSolveReport:
    iterations: int
    final_objective: float
    gradient_norm: float
    converged: bool
    damping_trace: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)


def linear_model(problem):
    """The testbed forward map ``theta -> Psi theta`` as a ForwardModel."""
    def ev(theta, xs):
        return design_matrix(problem, xs) @ theta

    def jac(theta, xs):
        return design_matrix(problem, xs)

    return ForwardModel(ev, jac, lipschitz_hint=0.0, name="linear")


def _penalty_weights(scale, n):
    if scale is None:
        return np.ones(n)
    if isinstance(scale, HilbertScaleSpec):
        return scale.weights(n)
    w = np.asarray(scale, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"scale weights need length {n}")
    return w


def _project(model, theta):
    if model.bounds is None:
        return theta
    lo, hi = model.bounds
    return np.clip(theta, lo, hi)


def nonlinear_tikhonov(model, dataset, lam, theta_bar, opts=None, theta0=None):
    """Levenberg-Marquardt from ``theta0`` (default ``theta_bar``); returns (Estimate, NLSolveReport)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    opts = opts or NLOptions()
    xs, ys = dataset.xs, np.asarray(dataset.ys, dtype=np.float64)
    m = dataset.m
    theta_bar = np.asarray(theta_bar, dtype=np.float64)
    n = theta_bar.size
    pw = _penalty_weights(opts.scale, n)
    sq_m, sq_lam = math.sqrt(m), math.sqrt(lam)

    def check(theta):
        if model.domain is not None and not model.domain(theta):
            raise DomainViolation("iterate left the model domain")

    def residual(theta):
        fit = (np.asarray(model.eval(theta, xs)) - ys).ravel() / sq_m
        return np.concatenate([fit, sq_lam * pw * (theta - theta_bar)])

    def jacobian(theta):
        jf = np.asarray(model.jacobian(theta, xs)).reshape(-1, n) / sq_m
        return np.vstack([jf, np.diag(sq_lam * pw)])

    theta = _project(model, theta_bar.copy() if theta0 is None else np.asarray(theta0, float))
    check(theta)
    r = residual(theta)
    obj = float(r @ r)
    jac = jacobian(theta)
    grad = 2.0 * jac.T @ r
    jtj = jac.T @ jac
    mu = opts.damping0 * max(float(np.max(np.diag(jtj))), 1e-300)
    damping, objectives = [mu], [obj]

    def pgrad(theta, grad):
        # projected gradient; equals grad without bounds
        return float(np.linalg.norm(theta - _project(model, theta - grad)))

    converged = pgrad(theta, grad) <= opts.tol
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        try:
            step = np.linalg.solve(jtj + mu * np.eye(n), -0.5 * grad)
        except np.linalg.LinAlgError:
            mu *= 10.0
            damping.append(mu)
            continue
        cand = _project(model, theta + step)
        check(cand)
        rc = residual(cand)
        oc = float(rc @ rc)
        if oc < obj:
            theta, r, obj = cand, rc, oc
            jac = jacobian(theta)
            grad = 2.0 * jac.T @ r
            jtj = jac.T @ jac
            mu = max(mu / 10.0, 1e-300)
            objectives.append(obj)
        else:
            mu *= 10.0
            if mu > 1e300 or not np.any(cand != theta):
                # no representable descent step remains
                break
        damping.append(mu)
        converged = pgrad(theta, grad) <= opts.tol
    gnorm = pgrad(theta, grad)
    if not converged:
        warnings.warn(f"Levenberg-Marquardt stopped after {it} iterations with gradient norm {gnorm:.3e}",
                      NotConvergedWarning, stacklevel=2)
    report = NLSolveReport(it, obj, gnorm, converged, damping, objectives)
    return Estimate(theta, None, {"lambda": lam, "route": "nonlinear_tikhonov"}), report


def frechet_remainders(model, theta, direction, xs, h_grid):
    """``|F(theta + h g) - F(theta) - h F'(theta) g| / h`` for each step ``h``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(direction, dtype=np.float64)
    base = np.asarray(model.eval(theta, xs), dtype=np.float64)
    jac = np.asarray(model.jacobian(theta, xs), dtype=np.float64)
    lin = jac @ g
    out = []
    for h in h_grid:
        diff = np.asarray(model.eval(theta + h * g, xs), dtype=np.float64) - base - h * lin
        out.append(float(np.linalg.norm(diff)) / h)
    return np.asarray(out), float(np.linalg.norm(base)), float(np.linalg.norm(lin))


def frechet_check(model, theta, direction, xs, h_grid):
    """Observed order of ``remainder / h`` as ``h`` shrinks (1 for a Lipschitz derivative).

    Returns ``inf`` when the remainder vanishes up to rounding, as for a linear model.
    """
    h = np.asarray(h_grid, dtype=np.float64)
    rem, nb, nl = frechet_remainders(model, theta, direction, xs, h)
    noise = 1e-13 * (nb / h + nl + 1e-300)
    if np.all(rem <= noise):
        return math.inf
    keep = rem > noise
    if keep.sum() < 2:
        return math.inf
    return float(np.polyfit(np.log(h[keep]), np.log(rem[keep]), 1)[0])


def estimate_mu2(model, theta, direction, xs, h_grid):
    """Derivative Lipschitz estimate ``max 2 |remainder| / (h^2 |g|^2)``."""
    rem, _, _ = frechet_remainders(model, theta, direction, xs, h_grid)
    gn = float(np.linalg.norm(direction)) ** 2
    h = np.asarray(h_grid, dtype=np.float64)
    return float(np.max(2.0 * rem / (h * gn)))


def smallness_condition(R, mu2, kappa_bar):
    """Report whether ``R < 1 / (2 mu2 kappa_bar)``; informational only."""
    bound = math.inf if mu2 * kappa_bar == 0 else 1.0 / (2.0 * mu2 * kappa_bar)
    return {"R": R, "mu2": mu2, "kappa_bar": kappa_bar, "bound": bound, "holds": R < bound}


def nonlinear_apriori_lambda(r, b, Sigma, R, m):
    if not (0.5 <= r <= 1.0):
        warnings.warn(f"smoothness r={r} outside [1/2, 1] where the rule is justified",
                      SmoothnessOutOfRange, stacklevel=2)
    return (Sigma / (R * math.sqrt(m))) ** (2.0 / (2.0 * r + b + 1.0))


def nonlinear_apriori_lambda_hs(p, s, b, m):
    return (1.0 / math.sqrt(m)) ** (2.0 * p / (p + s - 1.0 + b * p))
