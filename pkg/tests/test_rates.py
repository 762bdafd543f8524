import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from invlearn import param_select as ps
from invlearn.errors import FailureRateExceeded, NonPositiveError
from invlearn.rates import (
    ExperimentConfig,
    compare_exponent,
    derive_seed,
    fit_rate,
    loglog_svg,
    run_sweep,
)

SMALL_PROBLEM = {"b": 0.5, "r": 0.5, "R": 1.0, "J": 32, "seed": 0}
M8 = np.array([128, 256, 512, 1024, 2048, 4096, 8192, 16384])


def small_config(**kw):
    cfg = dict(experiment_id="small", problem=dict(SMALL_PROBLEM),
               estimator={"kind": "spectral", "filter": {"kind": "tikhonov", "l": 1}},
               m_grid=[64, 128, 256, 512], replicates=10, burn_in=0)
    cfg.update(kw)
    return cfg


def test_fit_rate_exact_power_law():
    slope, se = fit_rate(M8, 3.0 * M8 ** -0.4)
    assert math.isclose(slope, -0.4, abs_tol=1e-12) and se < 1e-12


def test_fit_rate_constant():
    slope, _ = fit_rate(M8, np.full(8, 2.5))
    assert abs(slope) < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 1.0))
def test_fit_rate_noisy_power_law(seed, exponent):
    rng = np.random.default_rng(seed)
    errs = M8 ** -exponent * (1 + 0.05 * rng.uniform(-1, 1, 8))
    slope, _ = fit_rate(M8, errs)
    assert abs(slope + exponent) <= 0.05


def test_fit_rate_rejects_bad_input():
    with pytest.raises(NonPositiveError):
        fit_rate(M8[:4], [1.0, 0.5, 0.0, 0.2])
    with pytest.raises(ValueError):
        fit_rate(M8[:3], [1.0, 0.5, 0.2])


def test_compare_exponent_examples():
    v = compare_exponent(-0.41, 0.01, 0.4, 0.08)
    assert v.passed and v.label == "PASS" and math.isclose(v.margin, 0.07)
    assert not compare_exponent(-0.2, 0.01, 0.4, 0.08).passed
    assert "FAIL" in str(compare_exponent(-0.2, 0.01, 0.4, 0.08))
    assert math.isclose(ps.hs_rate_exponent("regular_optimal", 1.0, 2.0, 0.25, 0.5), 1 / 3)
    with pytest.raises(ValueError):
        compare_exponent(-0.4, 0.0, 0.4, 0.0)


def test_config_validation():
    with pytest.raises(ValueError, match="ascending"):
        ExperimentConfig.from_dict(small_config(m_grid=[256, 128, 512, 1024]))
    with pytest.raises(ValueError, match="replicates"):
        ExperimentConfig.from_dict(small_config(replicates=5))
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict(small_config(replicate=10))
    with pytest.raises(ValueError, match="burn_in"):
        ExperimentConfig.from_dict(small_config(burn_in=2))
    with pytest.raises(ValueError, match="error_metric"):
        ExperimentConfig.from_dict(small_config(error_metric="l1"))


def test_seeds_distinct_and_stable():
    seeds = {derive_seed(0, m, k) for m in (128, 256) for k in range(50)}
    assert len(seeds) == 100
    assert derive_seed(3, 128, 7) == derive_seed(3, 128, 7)


def test_noiseless_fixed_lambda_is_flat():
    problem = dict(SMALL_PROBLEM, sigma_noise=0.0)
    res = run_sweep(small_config(problem=problem, selection={"rule": "fixed", "lambda": 1e-2},
                                 m_grid=[256, 512, 1024, 2048]))
    assert abs(res.slope) < 0.05
    assert res.errors.min() > 0


def test_determinism_across_threads():
    a = run_sweep(small_config(), threads=1)
    b = run_sweep(small_config(), threads=4)
    assert a.csv_text() == b.csv_text()
    assert a.summary_text() == b.summary_text()


def test_artifacts(tmp_path):
    res = run_sweep(small_config())
    res.write(tmp_path)
    rows = (tmp_path / "small.csv").read_text().splitlines()
    assert rows[0] == "m,replicate,error,lambda_or_n,seed" and len(rows) == 41
    summary = json.loads((tmp_path / "small.summary.json").read_text())
    for key in ("experiment_id", "slope", "stderr", "theoretical_exponent", "verdict", "n_cells", "n_failures"):
        assert key in summary
    assert summary["n_cells"] == 40 and summary["n_failures"] == 0
    ET.fromstring((tmp_path / "small.svg").read_text())
    assert not list(tmp_path.glob(".tmp-*"))


def test_svg_escapes_title():
    root = ET.fromstring(loglog_svg([1, 2, 4, 8], [1, 0.5, 0.25, 0.125], -1.0, title="a<b & c"))
    assert any(el.text == "a<b & c" for el in root.iter())


def test_failure_rate_exceeded():
    with pytest.raises(FailureRateExceeded) as info:
        run_sweep(small_config(selection={"rule": "fixed", "lambda": -1.0}))
    res = info.value.result
    assert res.n_failures == 40 and np.all(np.isnan(res.errors))
    assert res.csv_text().count("\n") == 41


def test_unknown_rule_fails_cells():
    with pytest.raises(FailureRateExceeded):
        run_sweep(small_config(selection={"rule": "bogus"}))


@pytest.mark.slow
def test_apriori_slope_matches_oracle_slope():
    base = dict(experiment_id="ref", problem={"b": 0.5, "r": 0.5, "R": 30.0, "J": 128, "seed": 0,
                         "source_profile": "power"},
                estimator={"kind": "spectral", "filter": {"kind": "tikhonov", "l": 1}},
                m_grid=[512, 1024, 2048, 4096, 8192], replicates=30, burn_in=0)
    slopes = [run_sweep(dict(base, selection={"rule": rule}), threads=4).slope for rule in ("apriori", "oracle")]
    assert abs(slopes[0] - slopes[1]) <= 0.05
