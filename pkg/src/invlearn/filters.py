"""Spectral regularization filters and an auditor for their defining bounds.

A filter ``g(lam, t)`` approximates ``1/t`` on ``[0, kappa2]``. Its residual
``r(lam, t) = 1 - t g(lam, t)`` must stay bounded, and the qualification ``q``
limits how fast ``r`` vanishes relative to ``lam``.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import OutOfDomain
from .linalg import sym_eigendecompose

UNBOUNDED = math.inf
KINDS = ("tsvd", "tikhonov", "landweber")


@dataclass(frozen=True)
class SpectralFilter:
    kind: str
    l: int = 1
    eta: Optional[float] = None
    kappa2: Optional[float] = None
    D: float = 1.0
    E: float = 1.0
    gamma0: float = 1.0
    q: float = UNBOUNDED

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "tikhonov" and (int(self.l) != self.l or self.l < 1):
            raise ValueError("iterated Tikhonov order l must be a positive integer")
        if self.kind == "landweber":
            if self.eta is None or self.eta <= 0:
                raise ValueError("Landweber needs a positive step size eta")
            if self.kappa2 is not None and self.eta * self.kappa2 > 1 + 1e-12:
                raise ValueError(f"step size eta={self.eta} exceeds 1/kappa2={1 / self.kappa2}")

    def gamma_q(self, q):
        """Qualification constant for exponent ``q``."""
        if q > self.q:
            raise ValueError(f"q={q} exceeds the qualification {self.q}")
        if self.kind == "landweber" and q > 1:
            return q ** q
        return 1.0

    def iterations(self, lam):
        """Landweber step count ``ceil(1/(eta lam))``."""
        if self.kind != "landweber":
            raise ValueError("only Landweber has an iteration count")
        return max(1, math.ceil((1.0 / (self.eta * lam)) * (1 - 1e-14)))

    def effective_lambda(self, lam):
        if self.kind == "landweber":
            return 1.0 / (self.eta * self.iterations(lam))
        return lam

    def with_kappa2(self, kappa2):
        return SpectralFilter(self.kind, self.l, self.eta, kappa2, self.D, self.E, self.gamma0, self.q)

    def to_json(self):
        out = {"kind": self.kind}
        if self.kind == "tikhonov":
            out["l"] = self.l
        if self.kind == "landweber":
            out["eta"] = self.eta
        return out


def tsvd(kappa2=None):
    return SpectralFilter("tsvd", kappa2=kappa2)


def tikhonov(l=1, kappa2=None):
    return SpectralFilter("tikhonov", l=int(l), kappa2=kappa2, E=float(l), q=float(l))


def landweber(eta, kappa2=None):
    return SpectralFilter("landweber", eta=float(eta), kappa2=kappa2)


def filter_from_json(obj, kappa2=None):
    kind = obj["kind"]
    if kind == "tsvd":
        return tsvd(kappa2)
    if kind == "tikhonov":
        return tikhonov(obj.get("l", 1), kappa2)
    if kind == "landweber":
        eta = obj.get("eta")
        if eta is None:
            if kappa2 is None:
                raise ValueError("Landweber without eta needs kappa2")
            eta = 1.0 / kappa2
        return landweber(eta, kappa2)
    raise ValueError(f"unknown filter kind {kind!r}")


def _values(flt, lam, t):
    t = np.asarray(t, dtype=np.float64)
    if flt.kind == "tsvd":
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(t >= lam, 1.0 / np.where(t > 0, t, 1.0), 0.0)
    if flt.kind == "tikhonov":
        if flt.l == 1:
            return 1.0 / (lam + t)
        x = t / (lam + t)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = -np.expm1(flt.l * np.log1p(-x)) / t
        return np.where(t > 0, g, flt.l / lam)
    u = flt.iterations(lam)
    et = flt.eta * t
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -np.expm1(u * np.log1p(-np.minimum(et, 1.0))) / t
    return np.where(t > 0, g, u * flt.eta)


def eval_filter(flt, lam, t):
    """``g(lam, t)``; vectorized over ``t``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or (flt.kappa2 is not None and np.any(arr > flt.kappa2 * (1 + 1e-12))):
        raise OutOfDomain(f"t must lie in [0, kappa2={flt.kappa2}]")
    out = _values(flt, lam, arr)
    return float(out) if np.ndim(t) == 0 else out


def _residual_values(flt, lam, t):
    # closed forms: 1 - t g loses all relative accuracy where r is tiny
    if flt.kind == "tsvd":
        return np.where(t >= lam, 0.0, 1.0)
    if flt.kind == "tikhonov":
        return (lam / (lam + t)) ** flt.l
    return (1.0 - flt.eta * t) ** flt.iterations(lam)


def residual(flt, lam, t):
    """``r(lam, t) = 1 - t g(lam, t)``."""
    eval_filter(flt, lam, t)  # domain checks
    out = _residual_values(flt, lam, np.asarray(t, dtype=np.float64))
    return float(out) if np.ndim(t) == 0 else out


def filter_spectrum(flt, lam, w):
    """Filter values on a computed spectrum; rounding noise outside [0, kappa2] is clipped."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    hi = flt.kappa2 if flt.kappa2 is not None else np.inf
    return _values(flt, lam, np.clip(w, 0.0, hi))


def apply_filter(flt, lam, m, v, eig=None):
    """``g(lam, M) v`` through the eigendecomposition of ``M``."""
    if eig is None:
        eig = sym_eigendecompose(m)
    w, vec = eig
    g = filter_spectrum(flt, lam, w)
    return vec @ (g * (vec.T @ np.asarray(v, dtype=np.float64)))


@dataclass
class FilterAudit:
    sup_tg: float
    sup_lam_g: float
    sup_residual: float
    sup_qualification: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.passed.values())


def verify_filter_axioms(flt, lambda_grid, t_grid, qs=None, slack=1e-9):
    """Grid maxima of ``|t g|``, ``lam |g|``, ``|r|`` and ``|r| t^q / lam^q``.

    Landweber is audited at its effective ``lam = 1/(eta u)``, since
    rounding ``u`` up can push ``lam |g|`` above 1 at the nominal value.
    """
    lambda_grid = np.asarray(lambda_grid, dtype=np.float64)
    t = np.asarray(t_grid, dtype=np.float64)
    if lambda_grid.size == 0 or t.size == 0:
        raise ValueError("grids must be nonempty")
    if qs is None:
        qs = [flt.q] if math.isfinite(flt.q) else [1.0, 2.0, 4.0]
    sup_tg = sup_lg = sup_r = 0.0
    sup_q = {float(q): 0.0 for q in qs}
    for lam in lambda_grid:
        g = eval_filter(flt, lam, t)
        lam_e = flt.effective_lambda(lam)
        r = _residual_values(flt, lam, t)
        sup_tg = max(sup_tg, float(np.max(np.abs(t * g))))
        sup_lg = max(sup_lg, float(np.max(lam_e * np.abs(g))))
        sup_r = max(sup_r, float(np.max(np.abs(r))))
        for q in sup_q:
            sup_q[q] = max(sup_q[q], float(np.max(np.abs(r) * t ** q / lam_e ** q)))
    passed = {
        "D": sup_tg <= flt.D + slack,
        "E": sup_lg <= flt.E + slack,
        "gamma0": sup_r <= flt.gamma0 + slack,
    }
    for q, val in sup_q.items():
        passed[f"q={q:g}"] = val <= flt.gamma_q(q) + slack
    return FilterAudit(sup_tg, sup_lg, sup_r, sup_q, passed)
