import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from geoloop.randfield import (
    GENERATOR,
    KINDS,
    ConductivitySample,
    derive_stream,
    draw_sample,
    kl_from_variates,
    kl_weights,
    sample_affine_uniform,
    sample_constant,
    sample_kl_field,
)


@pytest.mark.parametrize("k", [2.21, 1.0, 6.21])
def test_constant_sample(k):
    s = sample_constant(k)
    x = np.linspace(0, 1, 7)
    np.testing.assert_array_equal(s.k_eval(x, x[::-1]), k)
    assert s.bounds == (k, k)
    assert s.is_constant


@pytest.mark.parametrize("k", [0.0, -1.0])
def test_constant_rejects_nonpositive(k):
    with pytest.raises(ValueError):
        sample_constant(k)


def test_affine_uniform_range_and_mean():
    rng = np.random.default_rng(0)
    ks = np.array([sample_affine_uniform(0.1, rng).value for _ in range(10000)])
    assert ks.min() >= 2.8 and ks.max() <= 3.2
    assert abs(ks.mean() - 3.0) <= 0.01


def test_affine_uniform_zero_sigma_and_draw_record():
    rng = np.random.default_rng(1)
    s = sample_affine_uniform(0.0, rng)
    assert s.value == 3.0
    assert len(s.lambda_draw) == 2 and all(-1 <= v <= 1 for v in s.lambda_draw)
    t = sample_affine_uniform(0.3, np.random.default_rng(2))
    assert t.value == pytest.approx(3 + 0.3 * sum(t.lambda_draw), abs=1e-15)
    with pytest.raises(ValueError):
        sample_affine_uniform(-0.1, rng)

    class Low:
        def uniform(self, lo, hi, size):
            return np.full(size, lo)

    with pytest.raises(ValueError):
        sample_affine_uniform(2.0, Low())  # realizes k = -1


def test_kl_weights_closed_form():
    w = kl_weights(3, 0.25)
    assert w[0] == pytest.approx(math.sqrt(math.pi * 0.25) / 2, abs=1e-15)
    assert w[0] == pytest.approx(0.443113, abs=5e-7)
    for i in range(1, 4):
        assert w[i] == pytest.approx(math.sqrt(math.pi) * 0.25 * math.exp(-((i * math.pi * 0.25) ** 2) / 4))


def test_kl_zero_sigma_is_constant():
    s = sample_kl_field(1.7, 0.0, 3, 0.25, np.random.default_rng(3))
    np.testing.assert_allclose(s.k_eval(np.zeros(5), np.linspace(0, 1, 5)), 1.7)


def test_kl_field_depends_on_y_only():
    s = sample_kl_field(1.0, 0.15, 3, 0.25, np.random.default_rng(4))
    y = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(s.k_eval(np.zeros(11), y), s.k_eval(np.ones(11), y))
    assert not s.is_constant
    assert len(s.lambda_draw) == 7


def test_kl_extreme_variates():
    s3 = math.sqrt(3.0)
    a0, sigma, nf, Lc = 1.0, 0.15, 3, 0.25
    s = kl_from_variates(a0, sigma, nf, Lc, np.full(7, s3))
    c = sigma * np.sqrt(kl_weights(nf, Lc))
    y = np.linspace(0, 1, 50)
    ref = a0 + c[0] * s3 + sum(c[i] * s3 * (np.cos(i * np.pi * y) + np.sin(i * np.pi * y)) for i in range(1, 4))
    assert s.bounds[1] == pytest.approx(ref.max(), abs=1e-12)
    assert s.bounds[0] == pytest.approx(ref.min(), abs=1e-12)
    with pytest.raises(ValueError):
        kl_from_variates(a0, sigma, nf, Lc, np.zeros(6))


def test_kl_positivity_guard_redraws():
    # a0 barely positive with large sigma: most draws dip below the floor
    rng = np.random.default_rng(5)
    s = sample_kl_field(0.3, 1.0, 3, 0.25, rng)
    assert s.bounds[0] > 0.01

    class Low:
        def uniform(self, lo, hi, size):
            return np.full(size, lo)

    with pytest.raises(ValueError, match="attempts"):
        sample_kl_field(0.1, 1.0, 3, 0.25, Low())
    for bad in ((0.0, 0.1, 3, 0.25), (1.0, 0.1, 0, 0.25), (1.0, 0.1, 3, 0.0)):
        with pytest.raises(ValueError):
            sample_kl_field(*bad, rng)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), j=st.integers(0, 10_000), kind=st.sampled_from(KINDS))
def test_samples_respect_bounds_and_are_reproducible(seed, j, kind):
    params = {"k": 2.0} if kind == "constant" else {}
    a = draw_sample(kind, params, derive_stream(seed, j), j)
    b = draw_sample(kind, params, derive_stream(seed, j), j)
    assert a == b
    assert a.sample_index == j
    assert 0 < a.bounds[0] <= a.bounds[1] < np.inf
    if kind == "affine_uniform":
        assert a.bounds[0] >= 3 - 2 * 0.1
    X, Y = np.meshgrid(np.linspace(0, 1, 50), np.linspace(0, 1, 50))
    k = a.k_eval(X, Y)
    assert a.bounds[0] - 1e-14 <= k.min() and k.max() <= a.bounds[1] + 1e-14


def test_streams_are_distinct_and_deterministic():
    a = derive_stream(42, 0).random(1000)
    np.testing.assert_array_equal(a, derive_stream(42, 0).random(1000))
    b = derive_stream(42, 1).random(1000)
    assert np.all(a != b)
    with pytest.raises(ValueError):
        derive_stream(42, -1)
    assert "Philox" in GENERATOR


@pytest.mark.parametrize("j", [0, 7, 123])
def test_uniform_stream_chi_square(j):
    u = derive_stream(20240601, j).random(100_000)
    counts = np.bincount((u * 20).astype(int), minlength=20)
    chi2 = np.sum((counts - 5000.0) ** 2 / 5000.0)
    assert chi2 < stats.chi2.ppf(0.99, 19)


def test_draw_sample_dispatch_and_metadata():
    s = draw_sample("kl_field", {"sigma": 0.2}, derive_stream(1, 3), 3)
    md = s.metadata()
    assert md["kind"] == "kl_field" and md["sample_index"] == 3
    assert md["params"]["sigma"] == 0.2
    assert md["k_min"] == s.bounds[0]
    with pytest.raises(ValueError, match="unknown sampler"):
        draw_sample("lognormal", {}, None)
    with pytest.raises(ValueError):
        ConductivitySample("bogus", 1.0).k_eval(0.0, 0.0)
