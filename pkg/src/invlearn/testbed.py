"""Synthetic diagonal inverse problem with exactly controlled ill-posedness.

The design measure is uniform on [0, 1] and the basis is the cosine system
``phi_j(x) = sqrt(2) cos(j pi x)``, orthonormal in L2 of that measure. The
forward map sends ``e_j`` to ``sqrt(sigma_j) phi_j``, so the covariance
operator is diagonal with eigenvalues ``sigma_j = beta * j**(-1/b)`` and every
population quantity (errors, effective dimension, distance function) is a
finite sum over ``j = 1..J``.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidDecay,
    InvalidLinkParameter,
    InvalidTruncation,
    NonPositiveLambda,
)

MIN_J = 16
SOURCE_PROFILES = ("isotropic", "power")


def make_rng(seed):
    """Counter-based generator; streams for distinct seeds are independent."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class SpectralProblem:
    J: int
    sigma: np.ndarray
    b: float
    beta: float
    r: float
    R: float
    ftrue: np.ndarray
    Sigma_noise: float
    M_noise: float
    kappa: float
    seed: int = 0
    source_profile: str = "isotropic"
    source: np.ndarray = field(default=None, repr=False)  # v with ftrue = sigma**r * v

    @property
    def alpha(self):
        return self.beta / 2.0

    @property
    def kappa2(self):
        return self.kappa ** 2

    @property
    def index(self):
        return np.arange(1, self.J + 1, dtype=np.float64)

    def config(self):
        return {
            "b": self.b, "beta": self.beta, "r": self.r, "R": self.R,
            "sigma_noise": self.Sigma_noise, "J": self.J, "seed": self.seed,
            "source_profile": self.source_profile,
        }

    def replace_source(self, ftrue):
        """Same operator and noise law, different ground truth."""
        ftrue = np.asarray(ftrue, dtype=np.float64)
        if ftrue.shape != (self.J,):
            raise DimensionMismatch(f"ftrue must have length {self.J}")
        with np.errstate(divide="ignore", invalid="ignore"):
            v = ftrue / self.sigma ** self.r
        return SpectralProblem(self.J, self.sigma, self.b, self.beta, self.r, self.R, ftrue,
                               self.Sigma_noise, self.M_noise, self.kappa, self.seed,
                               "custom", v)


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    m: int
    seed: int

    def __post_init__(self):
        if len(self.xs) != self.m or len(self.ys) != self.m:
            raise DimensionMismatch("xs, ys and m disagree")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in zip(self.xs, self.ys):
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path, seed=0):
        xs, ys = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row["x"]))
                ys.append(float(row["y"]))
        return cls(np.array(xs), np.array(ys), len(xs), int(seed))


@dataclass(frozen=True)
class HilbertScaleSpec:
    """Diagonal generator ``L e_j = j**w e_j`` tied to link parameter ``a``."""

    w: float
    a: Optional[float] = None
    gamma: Optional[float] = None
    link_constant: Optional[float] = None

    def weights(self, J):
        return np.arange(1, J + 1, dtype=np.float64) ** self.w

    def inv_weights(self, J):
        return np.arange(1, J + 1, dtype=np.float64) ** (-self.w)


@dataclass
class Estimate:
    coeffs: np.ndarray
    repr_coeffs: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("estimate has non-finite coefficients")

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def to_json(self):
        out = {"coeffs": self.coeffs.tolist()}
        out["repr_coeffs"] = None if self.repr_coeffs is None else np.asarray(self.repr_coeffs).tolist()
        return out

    @classmethod
    def from_json(cls, obj):
        rc = obj.get("repr_coeffs")
        return cls(np.asarray(obj["coeffs"], dtype=np.float64),
                   None if rc is None else np.asarray(rc, dtype=np.float64))


def basis(xs, J):
    """Matrix ``phi_j(x_i)``, shape (len(xs), J)."""
    xs = np.asarray(xs, dtype=np.float64)
    j = np.arange(1, J + 1, dtype=np.float64)
    return math.sqrt(2.0) * np.cos(np.pi * np.outer(xs, j))


def design_matrix(problem, xs, n=None):
    """``Psi_ij = sqrt(sigma_j) phi_j(x_i)`` for the first ``n`` modes."""
    n = problem.J if n is None else n
    return basis(xs, n) * np.sqrt(problem.sigma[:n])


def kernel_sup(sigma, n_grid):
    """Max over an ``n_grid``-point grid of ``sum_j sigma_j phi_j(x)**2``."""
    xs = np.linspace(0.0, 1.0, n_grid)
    best = 0.0
    chunk = max(1, 2_000_000 // len(sigma))
    for start in range(0, n_grid, chunk):
        phi = basis(xs[start:start + chunk], len(sigma))
        best = max(best, float(np.max((phi * phi) @ sigma)))
    return best


def _source_vector(profile, J, rng):
    if profile == "isotropic":
        return rng.standard_normal(J)
    if profile == "power":
        # random signs, amplitudes j**(-1/2): every dyadic block carries equal energy
        return rng.choice([-1.0, 1.0], size=J) * np.arange(1, J + 1) ** -0.5
    raise ValueError(f"unknown source profile {profile!r}; expected one of {SOURCE_PROFILES}")


def build_spectral_problem(b, beta=1.0, r=0.5, R=1.0, Sigma_noise=1.0, J=2000, seed=0,
                           source_profile="isotropic"):
    if not (0.0 < b <= 1.0):
        raise InvalidDecay(f"decay exponent b must lie in (0, 1], got {b}")
    if J < MIN_J:
        raise InvalidTruncation(f"J must be at least {MIN_J}, got {J}")
    if r < 0 or R <= 0 or beta <= 0 or Sigma_noise < 0:
        raise ValueError("need r >= 0, R > 0, beta > 0, Sigma_noise >= 0")
    J = int(J)
    j = np.arange(1, J + 1, dtype=np.float64)
    sigma = beta * j ** (-1.0 / b)
    v = _source_vector(source_profile, J, make_rng(seed))
    v *= R / np.linalg.norm(v)
    ftrue = sigma ** r * v
    kappa = math.sqrt(kernel_sup(sigma, 10 * J))
    return SpectralProblem(J, sigma, float(b), float(beta), float(r), float(R), ftrue,
                           float(Sigma_noise), float(Sigma_noise), kappa, int(seed),
                           source_profile, v)


PROBLEM_KEYS = ("b", "beta", "r", "R", "sigma_noise", "J", "seed", "source_profile")


def problem_from_config(cfg):
    cfg = dict(cfg)
    unknown = sorted(set(cfg) - set(PROBLEM_KEYS))
    if unknown:
        raise ValueError(f"unknown problem keys: {', '.join(unknown)}")
    return build_spectral_problem(
        b=cfg["b"], beta=cfg.get("beta", 1.0), r=cfg.get("r", 0.5), R=cfg.get("R", 1.0),
        Sigma_noise=cfg.get("sigma_noise", 1.0), J=cfg.get("J", 2000), seed=cfg.get("seed", 0),
        source_profile=cfg.get("source_profile", "isotropic"),
    )


def save_problem_config(problem, path):
    with open(path, "w") as fh:
        json.dump(problem.config(), fh, indent=2)


def g_true(problem, xs):
    return design_matrix(problem, xs) @ problem.ftrue


def sample_dataset(problem, m, seed):
    if m < 1:
        raise ValueError("m must be positive")
    rng = make_rng(seed)
    xs = rng.uniform(0.0, 1.0, size=int(m))
    noise = rng.standard_normal(int(m)) * problem.Sigma_noise
    ys = g_true(problem, xs) + noise
    return Dataset(xs, ys, int(m), int(seed))


def _coeffs(problem, est):
    c = est.coeffs if isinstance(est, Estimate) else np.asarray(est, dtype=np.float64)
    if c.shape != (problem.J,):
        raise DimensionMismatch(f"estimate has {c.shape[0]} coefficients, problem has J={problem.J}")
    return c


def h_norm_error(problem, est):
    return float(np.linalg.norm(_coeffs(problem, est) - problem.ftrue))


def weighted_error(problem, est, weights):
    """``||diag(weights)(f - f_true)||``, e.g. a Hilbert-scale norm."""
    return float(np.linalg.norm(weights * (_coeffs(problem, est) - problem.ftrue)))


def effective_dimension(problem, lam):
    sigma = problem.sigma if isinstance(problem, SpectralProblem) else np.asarray(problem)
    if lam <= 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam}")
    return float(np.sum(sigma / (sigma + lam)))


def decay_class_audit(problem):
    """Coordinatewise check of both decay bounds and the doubling condition."""
    j = problem.index
    env = j ** (-1.0 / problem.b)
    upper = bool(np.all(problem.sigma <= problem.beta * env * (1 + 1e-12)))
    lower = bool(np.all(problem.sigma >= problem.alpha * env * (1 - 1e-12)))
    half = problem.J // 2
    doubling = bool(np.all(problem.sigma[:half] <= 2.0 ** (1.0 / problem.b)
                           * problem.sigma[1:2 * half:2] * (1 + 1e-12)))
    return {"upper": upper, "lower": lower, "doubling": doubling, "alpha": problem.alpha}


def make_hilbert_scale(problem, a):
    """Scale whose link condition holds with constant ``beta**a``.

    ``(sigma_j j**(-2w))**a = beta**a j**(-w)`` exactly when ``w = 1/(b gamma)``
    with ``gamma = 1/a - 2``.
    """
    if not (0.0 < a < 0.5):
        raise InvalidLinkParameter(f"link parameter a must lie in (0, 1/2), got {a}")
    gamma = 1.0 / a - 2.0
    w = 1.0 / (problem.b * gamma)
    return HilbertScaleSpec(w=w, a=float(a), gamma=gamma, link_constant=problem.beta ** a)


def link_audit(problem, scale, p=1.0, c=2.0):
    """Per-coordinate check of ``|L^-p e_j| <= |S^(a p) e_j| <= c^p |L^-p e_j|``."""
    lo = scale.inv_weights(problem.J) ** p
    s = problem.sigma * scale.inv_weights(problem.J) ** 2
    mid = s ** (scale.a * p)
    tol = 1e-12
    lower = bool(np.all(lo <= mid * (1 + tol)))
    upper = bool(np.all(mid <= c ** p * lo * (1 + tol)))
    return {"lower": lower, "upper": upper, "ratio_max": float(np.max(mid / lo)),
            "ratio_min": float(np.min(mid / lo))}


def distance_function(problem, scale, p, Rd, ftrue=None, tol=1e-13, max_iter=400):
    """``min_{|u| <= Rd} |L (L^-p u - f)|`` by bisection on the Lagrange multiplier."""
    if p < 1 or Rd <= 0:
        raise ValueError("need p >= 1 and Rd > 0")
    f = problem.ftrue if ftrue is None else np.asarray(ftrue, dtype=np.float64)
    lw = scale.weights(len(f))
    a = lw ** (1.0 - p)
    c = lw * f
    if np.linalg.norm(c / a) <= Rd:
        return 0.0

    def unorm(mu):
        return np.linalg.norm(a * c / (a * a + mu))

    lo, hi = 0.0, 1.0
    while unorm(hi) > Rd:
        hi *= 4.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if unorm(mid) > Rd:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    mu = hi
    return float(np.linalg.norm(mu * c / (a * a + mu)))


def distance_bound(R, Rd, p, s):
    """Interpolation bound on the distance function for a source in the ``s``-ball."""
    return R ** ((p - 1.0) / (p - s)) * Rd ** ((1.0 - s) / (p - s))
