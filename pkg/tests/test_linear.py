import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invlearn.errors import RankDeficientWarning, TruncationTooLarge
from invlearn.filters import landweber, tikhonov, tsvd
from invlearn.linear import (
    EmpiricalOperators,
    default_truncation_constant,
    hilbert_scale_estimate,
    landweber_iterates,
    projection_estimate,
    spectral_estimate,
    spectral_estimate_direct,
    truncate_estimate,
    truncation_radius,
)
from invlearn.testbed import (
    Dataset,
    Estimate,
    HilbertScaleSpec,
    build_spectral_problem,
    design_matrix,
    h_norm_error,
    make_hilbert_scale,
    sample_dataset,
)


def _rel(a, b):
    return np.linalg.norm(a - b) / (1 + np.linalg.norm(b))


@pytest.fixture(scope="module")
def small():
    p = build_spectral_problem(b=0.5, r=0.5, J=50, seed=1)
    return p, sample_dataset(p, 20, 7)


def test_kernel_and_direct_agree(small):
    p, ds = small
    for flt in [tikhonov(1, p.kappa2), tikhonov(2, p.kappa2), tsvd(p.kappa2), landweber(1 / p.kappa2, p.kappa2)]:
        for lam in [1e-3, 1e-1]:
            a = spectral_estimate(p, ds, flt, lam)
            b = spectral_estimate_direct(p, ds, flt, lam)
            assert _rel(a.coeffs, b.coeffs) <= 1e-8


@settings(max_examples=20)
@given(st.integers(5, 50), st.integers(16, 200), st.integers(0, 10 ** 6),
       st.floats(1e-4, 1.0), st.sampled_from(["tikhonov", "tikhonov2", "landweber"]))
def test_duality_property(m, J, seed, lam, kind):
    p = build_spectral_problem(b=0.5, J=J, seed=seed % 97)
    ds = sample_dataset(p, m, seed)
    flt = {"tikhonov": tikhonov(1, p.kappa2), "tikhonov2": tikhonov(2, p.kappa2),
           "landweber": landweber(1 / p.kappa2, p.kappa2)}[kind]
    a = spectral_estimate(p, ds, flt, lam)
    b = spectral_estimate_direct(p, ds, flt, lam)
    assert np.linalg.norm(a.coeffs - b.coeffs) <= 1e-8 * (1 + np.linalg.norm(b.coeffs))


def test_repr_coeffs_reconstruct(small):
    p, ds = small
    est = spectral_estimate(p, ds, tikhonov(1), 0.05)
    psi = design_matrix(p, ds.xs)
    np.testing.assert_allclose(est.coeffs, psi.T @ est.repr_coeffs / ds.m)


def test_noiseless_interpolation():
    p = build_spectral_problem(b=0.5, r=0.5, Sigma_noise=0.0, J=16, seed=2)
    xs = np.arange(1, 17) / 17.0  # equispaced interior grid: cond(Psi) is about 40
    ds = Dataset(xs, design_matrix(p, xs) @ p.ftrue, 16, 0)
    ops = EmpiricalOperators(p, ds)
    w = np.linalg.eigvalsh(ops.gram())
    est = spectral_estimate(p, ds, tsvd(p.kappa2), 0.5 * w[w > 1e-14].min(), ops=ops)
    assert h_norm_error(p, est) <= 1e-6 * p.R


def test_over_regularization_vanishes(small):
    p, ds = small
    lam = 1e6 * p.kappa2
    est = spectral_estimate(p, ds, tikhonov(1), lam)
    ynorm = math.sqrt(np.mean(ds.ys ** 2))
    assert est.norm() <= p.kappa * ynorm / lam


def test_zero_data_zero_estimate():
    p = build_spectral_problem(b=0.5, Sigma_noise=0.0, J=32).replace_source(np.zeros(32))
    ds = sample_dataset(p, 20, 1)
    assert np.all(spectral_estimate_direct(p, ds, tikhonov(1), 0.1).coeffs == 0.0)


def test_direct_normal_equation(small):
    p, ds = small
    ops = EmpiricalOperators(p, ds)
    f = spectral_estimate_direct(p, ds, tikhonov(1), 0.02, ops=ops).coeffs
    assert np.linalg.norm(ops.cov @ f + 0.02 * f - ops.rhs) <= 1e-9


def test_direct_size_guard():
    p = build_spectral_problem(b=0.5, J=501)
    ds = sample_dataset(p, 5, 0)
    with pytest.raises(TruncationTooLarge):
        spectral_estimate_direct(p, ds, tikhonov(1), 0.1)


def test_linear_in_y(small):
    p, ds = small
    rng = np.random.default_rng(0)
    y1, y2 = rng.standard_normal(ds.m), rng.standard_normal(ds.m)
    mk = lambda y: Dataset(ds.xs, y, ds.m, 0)  # noqa: E731
    est = lambda d: spectral_estimate(p, d, tikhonov(2), 0.03).coeffs  # noqa: E731
    np.testing.assert_allclose(est(mk(y1 + y2)), est(mk(y1)) + est(mk(y2)), atol=1e-10)


def test_hilbert_scale_identity_reduces(small):
    p, ds = small
    a = hilbert_scale_estimate(p, ds, HilbertScaleSpec(w=0.0), tikhonov(1), 0.05)
    b = spectral_estimate_direct(p, ds, tikhonov(1), 0.05)
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-10)


def test_hilbert_scale_normal_equation(small):
    p, ds = small
    scale = make_hilbert_scale(p, 0.25)
    ops = EmpiricalOperators(p, ds)
    f = hilbert_scale_estimate(p, ds, scale, tikhonov(1), 0.05, ops=ops).coeffs
    d = scale.inv_weights(p.J)
    u = f / d
    s = d[:, None] * ops.cov * d[None, :]
    assert np.linalg.norm(s @ u + 0.05 * u - d * ops.rhs) <= 1e-9


@pytest.mark.slow
def test_hilbert_scale_oversmoothing_monotone():
    # s = r gamma = 0.5 < 1 with a = 1/4, b = 1/2
    from invlearn.param_select import apriori_lambda_hs
    p = build_spectral_problem(b=0.5, r=0.25, J=128, seed=0)
    scale = make_hilbert_scale(p, 0.25)
    errs = []
    for m in [128, 512, 2048]:
        lam = apriori_lambda_hs("oversmoothing", 0.5, 2.0, 0.25, 0.25, 1.0, 1.0, m)
        e = [h_norm_error(p, hilbert_scale_estimate(p, sample_dataset(p, m, 1000 * m + k), scale,
                                                    tikhonov(1), lam)) for k in range(50)]
        errs.append(np.mean(e))
    assert errs[0] > errs[1] > errs[2]


def test_projection_interpolates():
    p = build_spectral_problem(b=0.5, Sigma_noise=0.0, J=32, seed=2)
    n = 10
    coeffs = np.zeros(32)
    coeffs[:n] = p.ftrue[:n]
    p = p.replace_source(coeffs)
    ds = sample_dataset(p, n, 4)
    est = projection_estimate(p, ds, n)
    assert np.max(np.abs(design_matrix(p, ds.xs) @ est.coeffs - ds.ys)) <= 1e-9


def test_projection_scalar_case(small):
    p, ds = small
    phi1 = math.sqrt(2) * np.cos(np.pi * ds.xs)
    s1 = p.sigma[0]
    expected = np.sum(math.sqrt(s1) * phi1 * ds.ys) / np.sum(s1 * phi1 ** 2)
    est = projection_estimate(p, ds, 1)
    assert math.isclose(est.coeffs[0], expected, rel_tol=1e-12)
    assert np.all(est.coeffs[1:] == 0)


def test_projection_matches_pinv(small):
    p, ds = small
    for n in [3, 8, 15]:
        psi = design_matrix(p, ds.xs, n)
        oracle = np.linalg.pinv(psi) @ ds.ys
        est = projection_estimate(p, ds, n)
        assert _rel(est.coeffs[:n], oracle) <= 1e-8


def test_projection_nesting_noiseless():
    p = build_spectral_problem(b=0.5, Sigma_noise=0.0, J=40, seed=5)
    ds = sample_dataset(p, 30, 6)
    psi = design_matrix(p, ds.xs)
    res = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        for n in range(1, 31):
            est = projection_estimate(p, ds, n)
            if est.info["rank_deficient"]:
                break  # the pseudoinverse drops directions from here on
            res.append(np.linalg.norm(psi @ est.coeffs - ds.ys))
    assert len(res) >= 10
    assert np.all(np.diff(res) <= 1e-10)


def test_projection_rank_deficient_flag():
    p = build_spectral_problem(b=0.5, J=32)
    ds = Dataset(np.full(6, 0.3), np.ones(6), 6, 0)
    with pytest.warns(RankDeficientWarning):
        est = projection_estimate(p, ds, 4)
    assert est.info["rank_deficient"]


def test_projection_range(small):
    p, ds = small
    with pytest.raises(ValueError):
        projection_estimate(p, ds, ds.m + 1)


def test_truncation_rule():
    small_est = Estimate(np.array([0.3, 0.4]))
    big = Estimate(np.array([2.0, 0.0]))
    assert truncate_estimate(small_est, 1.0) is small_est
    assert np.all(truncate_estimate(big, 1.0).coeffs == 0)


def test_truncation_never_fires_noiseless():
    p = build_spectral_problem(b=1.0, r=1.0, Sigma_noise=0.0, J=64, seed=0)
    C = default_truncation_constant(p)
    assert C == 4 * (1 + p.R)
    fired = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        for k in range(100):
            ds = sample_dataset(p, 64, k)
            n = 8
            est = projection_estimate(p, ds, n)
            if truncate_estimate(est, truncation_radius(p, n, C)).norm() == 0 and est.norm() > 0:
                fired += 1
    assert fired == 0


def test_landweber_iterates_match_filter(small):
    p, ds = small
    eta = 1 / p.kappa2
    its = dict(landweber_iterates(p, ds, eta, 25))
    flt = landweber(eta, p.kappa2)
    for u in [1, 5, 25]:
        lam = 1 / (eta * u)
        np.testing.assert_allclose(its[u], spectral_estimate_direct(p, ds, flt, lam).coeffs, atol=1e-12)
