import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmjp.diagnostics import (DiagnosticWarning, ess, iterations_to_converge, mcse, psrf, relative_error,
                              summarize)


def ar1(n, phi, rng):
    x = np.empty(n)
    x[0] = rng.standard_normal() / math.sqrt(1 - phi ** 2)
    eps = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + eps[i]
    return x


def test_iid_ess_close_to_n():
    x = np.random.default_rng(0).standard_normal(10_000)
    e = ess(x)
    assert 0.9 * x.size <= e <= 1.1 * x.size


def test_ar1_ess_analytic():
    rng = np.random.default_rng(1)
    n, phi = 10_000, 0.9
    e = ess(ar1(n, phi, rng))
    target = n * (1 - phi) / (1 + phi)
    assert abs(e - target) <= 0.2 * target


def test_constant_series_flagged():
    with pytest.warns(DiagnosticWarning):
        assert ess(np.full(50, 3.2)) == 0.0


def test_ess_needs_ten():
    with pytest.raises(ValueError):
        ess(np.arange(9.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50), st.floats(0.01, 100))
def test_ess_affine_invariant(seed, shift, scale):
    x = ar1(500, 0.5, np.random.default_rng(seed))
    e = ess(x)
    assert 0 < e <= x.size
    assert ess(scale * x + shift) == pytest.approx(e, rel=1e-10)


def test_psrf_well_mixed():
    chains = np.random.default_rng(2).standard_normal((4, 2000))
    assert abs(psrf(chains) - 1.0) < 0.05


def test_psrf_disjoint_means():
    rng = np.random.default_rng(3)
    chains = rng.standard_normal((4, 500)) + 10 * np.arange(4)[:, None]
    assert psrf(chains) > 1.1 * 5


def test_psrf_single_chain_error():
    with pytest.raises(ValueError):
        psrf(np.zeros((1, 100)))


def test_psrf_zero_variance_flagged():
    with pytest.warns(DiagnosticWarning):
        assert math.isnan(psrf(np.ones((3, 20))))


def test_psrf_common_affine_invariant():
    rng = np.random.default_rng(4)
    chains = rng.standard_normal((3, 300, 2)) + np.array([0.0, 0.3, -0.2])[:, None, None]
    for p in range(2):
        assert psrf(7.5 * chains - 3.0, p) == pytest.approx(psrf(chains, p), abs=1e-10)


def test_split_detects_within_chain_drift():
    # each chain drifts: plain R-hat on halves must notice
    t = np.linspace(0, 1, 400)
    rng = np.random.default_rng(5)
    chains = np.stack([5 * t + 0.1 * rng.standard_normal(400) for _ in range(4)])
    assert psrf(chains) > 1.5


def test_relative_error():
    truth = np.array([0.5, 2.0, 3.0])
    rel, avg = relative_error(truth, truth)
    assert avg == 0.0 and np.all(rel == 0)
    rel, avg = relative_error(1.1 * truth, truth)
    np.testing.assert_allclose(rel, 0.1, rtol=1e-12)
    assert avg == pytest.approx(0.1)
    with pytest.raises(ValueError):
        relative_error([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        relative_error([1.0], [0.0])


def test_mcse_iid():
    x = np.random.default_rng(6).standard_normal(4000)
    assert mcse(x) == pytest.approx(x.std(ddof=1) / math.sqrt(ess(x)))
    assert 0.8 / math.sqrt(4000) < mcse(x) < 1.2 / math.sqrt(4000)


def test_iterations_to_converge():
    rng = np.random.default_rng(7)
    offsets = np.array([-8.0, 8.0])[:, None]
    decay = np.exp(-np.arange(300) / 10.0)[None, :]
    chains = offsets * decay + rng.standard_normal((2, 300))
    n = iterations_to_converge(chains, step=5)
    assert n is not None and 20 < n < 300


def test_summary_schema():
    rng = np.random.default_rng(8)
    arr = rng.standard_normal((3, 100, 2))
    s = summarize(arr, ["a", "b"], wall_minutes=0.5, seed=11, config={"x": 1})
    text = json.dumps(s)
    back = json.loads(text)
    assert back["schema_version"] == 1
    assert set(back["parameters"]) == {"a", "b"}
    for entry in back["parameters"].values():
        assert {"mean", "sd", "q2.5", "q50", "q97.5", "ess", "ess_per_min", "psrf"} <= set(entry)
        assert entry["q2.5"] < entry["q50"] < entry["q97.5"]
    assert back["metadata"]["seed"] == 11 and len(back["metadata"]["config_digest"]) == 16
