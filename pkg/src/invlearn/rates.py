"""Monte Carlo rate sweeps: estimate at each (m, replicate), fit log-log slopes, compare exponents.

Each cell draws its own data from a seed derived from ``(base_seed, m, k)``,
so results depend only on the config, never on execution order or threads.
"""
import csv
import io
import json
import math
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import convex as cvx
from . import linear
from . import param_select as ps
from .errors import FailureRateExceeded, NonPositiveError
from .filters import filter_from_json
from .testbed import h_norm_error, make_hilbert_scale, problem_from_config, sample_dataset

METRICS = ("h_norm", "h_norm_sq", "bregman")
MAX_FAILURE_RATE = 0.05
MIN_FIT_POINTS = 4


def derive_seed(base_seed, m, k):
    """64-bit cell seed; independent across (m, k) and stable across runs."""
    ss = np.random.SeedSequence([int(base_seed), int(m), int(k)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    experiment_id: str
    problem: dict
    estimator: dict
    selection: dict = field(default_factory=lambda: {"rule": "apriori"})
    m_grid: list = field(default_factory=lambda: [128, 256, 512, 1024, 2048, 4096, 8192])
    replicates: int = 100
    base_seed: int = 0
    error_metric: str = "h_norm_sq"
    aggregate: str = "median"
    burn_in: int = 2
    tol: float = 0.08
    theoretical_exponent: Optional[float] = None

    def __post_init__(self):
        if list(self.m_grid) != sorted(self.m_grid) or len(set(self.m_grid)) != len(self.m_grid):
            raise ValueError("m_grid must be strictly ascending")
        if self.replicates < 10:
            raise ValueError("need at least 10 replicates")
        if self.error_metric not in METRICS:
            raise ValueError(f"error_metric must be one of {METRICS}")
        if self.aggregate not in ("median", "mean"):
            raise ValueError("aggregate must be 'median' or 'mean'")
        if len(self.m_grid) - self.burn_in < MIN_FIT_POINTS:
            raise ValueError(f"burn_in leaves fewer than {MIN_FIT_POINTS} grid points for the fit")

    @classmethod
    def from_dict(cls, obj):
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class Experiment:
    """Everything shared by the cells of one sweep, built once."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.problem = problem_from_config(cfg.problem)
        est = cfg.estimator
        self.kind = est.get("kind", "spectral")
        self.penalty = None
        self.scale = None
        if self.kind == "convex":
            self.penalty = cvx.PenaltySpec.from_json(est.get("penalty", {"p": 1.5, "s": 0.5}))
            if est.get("matched_source", True):
                f = cvx.matched_source(self.problem, self.penalty, self.problem.source)
                self.problem = self.problem.replace_source(f)
        if self.kind in ("spectral", "hilbert_scale"):
            self.filter = filter_from_json(est.get("filter", {"kind": "tikhonov", "l": 1}),
                                           self.problem.kappa2)
        if self.kind == "hilbert_scale":
            self.scale = make_hilbert_scale(self.problem, est["a"])
        if cfg.error_metric == "bregman" and self.penalty is None:
            raise ValueError("bregman metric needs a convex estimator")
        self.theoretical = (cfg.theoretical_exponent if cfg.theoretical_exponent is not None
                            else self.rate_exponent())

    # smoothness bookkeeping -------------------------------------------------
    def hs_params(self):
        est, pr = self.cfg.estimator, self.problem
        a = est["a"]
        s = est.get("s", pr.r * self.scale.gamma)
        b = est.get("b", pr.b * (1.0 - 2.0 * a))
        return est.get("case", "regular_optimal"), s, est.get("p", 2.0), a, b

    def projection_params(self):
        est, pr = self.cfg.estimator, self.problem
        return est.get("s", pr.r / pr.b), est.get("t", 1.0 / pr.b)

    def rate_exponent(self):
        """Exponent of the squared (or Bregman) error in ``m``; halved for the plain norm."""
        pr = self.problem
        if self.kind == "spectral":
            e = ps.linear_rate_exponent(pr.r, pr.b)
        elif self.kind == "hilbert_scale":
            e = ps.hs_rate_exponent(*self.hs_params())
        elif self.kind == "projection":
            e = ps.projection_rate_exponent(*self.projection_params())
        elif self.kind == "convex":
            e = 1.0 / 3.0
        else:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        return e / 2.0 if self.cfg.error_metric == "h_norm" else e

    # per-cell work ----------------------------------------------------------
    def fit(self, dataset, lam, ops=None):
        pr = self.problem
        if self.kind == "spectral":
            route = self.cfg.estimator.get("route", "direct")
            fn = linear.spectral_estimate_direct if route == "direct" else linear.spectral_estimate
            return fn(pr, dataset, self.filter, lam, ops=ops)
        if self.kind == "hilbert_scale":
            return linear.hilbert_scale_estimate(pr, dataset, self.scale, self.filter, lam, ops=ops)
        if self.kind == "projection":
            est = linear.projection_estimate(pr, dataset, int(lam))
            if self.cfg.estimator.get("truncate", False):
                est = linear.truncate_estimate(est, linear.truncation_radius(pr, int(lam)))
            return est
        opts = self.cfg.estimator
        est, _ = cvx.convex_estimate(pr, dataset, self.penalty, lam,
                                     max_iters=opts.get("max_iters", 5000),
                                     tol=opts.get("tol", 1e-8), ops=ops)
        return est

    def error(self, est):
        if self.cfg.error_metric == "bregman":
            return cvx.bregman_distance(self.penalty, est.coeffs, self.problem.ftrue)
        e = h_norm_error(self.problem, est)
        return e * e if self.cfg.error_metric == "h_norm_sq" else e

    def apriori(self, m):
        pr, est = self.problem, self.cfg.estimator
        if self.kind == "spectral":
            return ps.apriori_lambda(pr.r, pr.b, pr.Sigma_noise, pr.R, m)
        if self.kind == "hilbert_scale":
            return ps.apriori_lambda_hs(*self.hs_params(), pr.Sigma_noise, pr.R, m)
        if self.kind == "projection":
            s, t = self.projection_params()
            return ps.apriori_n_projection(s, t, pr.Sigma_noise, pr.R, m, cap=pr.J)
        return cvx.convex_apriori_lambda(self.penalty.p, pr.R, pr.Sigma_noise, m,
                                         est.get("variant", "besov"))

    def grid(self):
        sel = self.cfg.selection
        if "grid" in sel:
            return np.asarray(sel["grid"], dtype=np.float64)
        if self.kind == "projection":
            return np.arange(1, self.problem.J + 1, dtype=np.float64)
        return ps.LambdaGrid.default(self.problem.kappa2, sel.get("K", 20)).values

    def choose(self, dataset, ops):
        sel = self.cfg.selection
        rule = sel.get("rule", sel.get("select", "apriori"))
        if rule == "apriori":
            return self.apriori(dataset.m)
        if rule == "fixed":
            return float(sel["lambda"])
        grid = self.grid()
        if self.kind == "projection":
            grid = grid[grid <= dataset.m]
        if rule == "oracle":
            errs = [self.error(self.fit(dataset, lam, ops)) for lam in grid]
            return float(grid[int(np.argmin(errs))])
        cache = {}

        def fit(pr, ds, lam):
            # the closure sees one split dataset per rule; build its operators once
            if self.kind == "projection":
                return self.fit(ds, lam)
            key = id(ds)
            if key not in cache:
                cache[key] = (ds, linear.EmpiricalOperators(self.problem, ds))
            return self.fit(ds, lam, cache[key][1])

        if rule == "holdout":
            return ps.holdout_select(self.problem, dataset, grid, sel.get("split", 0.5), fit)
        if rule == "lepskii":
            sig = sel.get("sigma_hat")
            if sig is None:
                sig = ps.estimate_noise_level(self.problem, dataset, fit, grid)
            w = ops.eig("cov", lambda: ops.cov).eigenvalues
            proxy = ps.variance_proxy(w, dataset.m, sig)
            return ps.lepskii_select(self.problem, dataset, grid,
                                     lambda pr, ds, lam: self.fit(ds, lam, ops), proxy,
                                     sel.get("c", 1.5))
        raise ValueError(f"unknown selection rule {rule!r}")

    def run_cell(self, m, k):
        seed = derive_seed(self.cfg.base_seed, m, k)
        ds = sample_dataset(self.problem, m, seed)
        ops = linear.EmpiricalOperators(self.problem, ds) if self.kind != "projection" else None
        lam = self.choose(ds, ops)
        est = self.fit(ds, lam, ops)
        return self.error(est), float(lam), seed


@dataclass
class Verdict:
    passed: bool
    slope: float
    expected_slope: float
    margin: float
    tol: float

    @property
    def label(self):
        return "PASS" if self.passed else "FAIL"

    def __str__(self):
        return (f"{self.label}: slope {self.slope:.4f} vs expected {self.expected_slope:.4f} "
                f"(|diff| {abs(self.slope - self.expected_slope):.4f}, tol {self.tol})")


def fit_rate(m_values, errors):
    """OLS slope of log error on log m with its standard error."""
    m_values = np.asarray(m_values, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if m_values.size != errors.size:
        raise ValueError("m_values and errors differ in length")
    if m_values.size < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} points")
    if np.any(~(errors > 0)):
        raise NonPositiveError("all errors must be positive to take logs")
    x, y = np.log(m_values), np.log(errors)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    dof = x.size - 2
    stderr = float(math.sqrt((resid @ resid) / dof / sxx)) if dof > 0 else 0.0
    return slope, stderr


def compare_exponent(slope, stderr, theoretical, tol):
    if tol <= 0:
        raise ValueError("tol must be positive")
    expected = -float(theoretical)
    margin = tol - abs(slope - expected)
    return Verdict(margin >= 0, float(slope), expected, float(margin), float(tol))


@dataclass
class SweepResult:
    config: ExperimentConfig
    errors: np.ndarray  # (n_m, replicates); nan where a cell failed
    lambdas: np.ndarray
    seeds: np.ndarray
    failures: dict
    theoretical: float
    slope: float = math.nan
    stderr: float = math.nan
    verdict: Optional[Verdict] = None

    @property
    def m_grid(self):
        return np.asarray(self.config.m_grid)

    @property
    def means(self):
        return np.nanmean(self.errors, axis=1)

    @property
    def medians(self):
        return np.nanmedian(self.errors, axis=1)

    @property
    def headline(self):
        return self.medians if self.config.aggregate == "median" else self.means

    @property
    def n_cells(self):
        return int(self.errors.size)

    @property
    def n_failures(self):
        return len(self.failures)

    def monotone_flags(self):
        """Grid indices where the headline error increases with m (advisory)."""
        h = self.headline
        return [int(i + 1) for i in range(len(h) - 1) if h[i + 1] > h[i]]

    def summary(self):
        return {
            "experiment_id": self.config.experiment_id,
            "slope": self.slope,
            "stderr": self.stderr,
            "theoretical_exponent": self.theoretical,
            "verdict": self.verdict.label if self.verdict else "FAIL",
            "n_cells": self.n_cells,
            "n_failures": self.n_failures,
            "aggregate": self.config.aggregate,
            "error_metric": self.config.error_metric,
            "tol": self.config.tol,
            "m_grid": [int(m) for m in self.config.m_grid],
            "mean_error": [float(v) for v in self.means],
            "median_error": [float(v) for v in self.medians],
            "burn_in": self.config.burn_in,
            "non_monotone_at": self.monotone_flags(),
        }

    def csv_text(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["m", "replicate", "error", "lambda_or_n", "seed"])
        for i, m in enumerate(self.config.m_grid):
            for k in range(self.config.replicates):
                wr.writerow([int(m), k, repr(float(self.errors[i, k])),
                             repr(float(self.lambdas[i, k])), int(self.seeds[i, k])])
        return buf.getvalue()

    def summary_text(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def svg_text(self):
        return loglog_svg(self.m_grid, self.headline, self.slope, self.config.burn_in,
                          title=f"{self.config.experiment_id}: slope {self.slope:.3f} "
                                f"(expected {-self.theoretical:.3f})")

    def write(self, out_dir, plot=True):
        os.makedirs(out_dir, exist_ok=True)
        stem = self.config.experiment_id
        atomic_write(os.path.join(out_dir, f"{stem}.csv"), self.csv_text())
        atomic_write(os.path.join(out_dir, f"{stem}.summary.json"), self.summary_text())
        if plot:
            atomic_write(os.path.join(out_dir, f"{stem}.svg"), self.svg_text())


def atomic_write(path, text):
    """Write via a temp file in the same directory and rename over the target."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_sweep(config, threads=1, progress=None):
    """Evaluate every (m, replicate) cell, fit the slope and render the verdict.

    More than 5% failed cells raises FailureRateExceeded carrying the partial result.
    """
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    exp = Experiment(config)
    n_m, reps = len(config.m_grid), config.replicates
    errors = np.full((n_m, reps), np.nan)
    lambdas = np.full((n_m, reps), np.nan)
    seeds = np.zeros((n_m, reps), dtype=np.uint64)
    failures = {}
    cells = [(i, m, k) for i, m in enumerate(config.m_grid) for k in range(reps)]

    def task(cell):
        i, m, k = cell
        try:
            return cell, exp.run_cell(m, k), None
        except Exception as exc:  # recorded per cell; the sweep continues
            return cell, None, f"{type(exc).__name__}: {exc}"

    # warning filters are process-global, so cells run under one shared filter
    warn_ctx = warnings.catch_warnings()
    warn_ctx.__enter__()
    warnings.simplefilter("ignore")
    if threads <= 1:
        outcomes = map(task, cells)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        outcomes = pool.map(task, cells)
    try:
        for (i, m, k), res, err in outcomes:
            if err is None:
                errors[i, k], lambdas[i, k], seed = res
                seeds[i, k] = seed
            else:
                seeds[i, k] = derive_seed(config.base_seed, m, k)
                failures[(int(m), k)] = err
            if progress is not None:
                progress(i, k)
    finally:
        if threads > 1:
            pool.shutdown()
        warn_ctx.__exit__(None, None, None)

    result = SweepResult(config, errors, lambdas, seeds, failures, exp.theoretical)
    if len(failures) > MAX_FAILURE_RATE * len(cells):
        raise FailureRateExceeded(f"{len(failures)} of {len(cells)} cells failed", result)
    fit_m = result.m_grid[config.burn_in:]
    fit_e = result.headline[config.burn_in:]
    result.slope, result.stderr = fit_rate(fit_m, fit_e)
    result.verdict = compare_exponent(result.slope, result.stderr, exp.theoretical, config.tol)
    return result


def loglog_svg(m_values, errors, slope, burn_in=0, title="", width=480, height=360):
    """Static log-log plot of error against m with the fitted line."""
    x = np.log10(np.asarray(m_values, dtype=np.float64))
    y = np.log10(np.asarray(errors, dtype=np.float64))
    pad = 50
    x0, x1 = x.min(), x.max()
    y0, y1 = y.min(), y.max()
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    xs, ys = x[burn_in:], y[burn_in:]
    icpt = float(np.mean(ys) - slope * np.mean(xs)) if xs.size else 0.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{_xml_escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11">log10 m</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11" transform="rotate(-90 14 {height / 2:.1f})">log10 error</text>',
    ]
    if xs.size:
        parts.append(f'<line x1="{px(xs[0]):.2f}" y1="{py(icpt + slope * xs[0]):.2f}" '
                     f'x2="{px(xs[-1]):.2f}" y2="{py(icpt + slope * xs[-1]):.2f}" '
                     f'stroke="#c0392b" stroke-dasharray="4 3"/>')
    for i, (a, b) in enumerate(zip(x, y)):
        fill = "#2c3e50" if i >= burn_in else "#95a5a6"
        parts.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3.5" fill="{fill}"/>')
    for v in (x0, x1):
        parts.append(f'<text x="{px(v):.2f}" y="{height - pad + 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{v:.2f}</text>')
    for v in (y0, y1):
        parts.append(f'<text x="{pad - 6}" y="{py(v) + 3:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{v:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml_escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
