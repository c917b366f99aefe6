import math

import numpy as np
import pytest

from smoothts.noise import (
    NoiseModel,
    bounded_uniform,
    gaussian,
    laplace,
    make_noise,
    sample_noise,
    sample_noise_array,
    shifted_exponential,
    tail_bound,
    verify_subexponential,
)

FAMILIES = [gaussian(0.7), laplace(0.5), shifted_exponential(2.0), bounded_uniform(1.5)]


class TestModels:
    def test_certificates(self):
        assert laplace(0.5).sigma2 == pytest.approx(1.0) and laplace(0.5).b == pytest.approx(0.5 * math.sqrt(2))
        assert shifted_exponential(2.0).sigma2 == pytest.approx(1.0) and shifted_exponential(2.0).b == 1.0
        assert gaussian(0.7).sigma2 == pytest.approx(0.49)
        assert bounded_uniform(1.5).sigma2 == pytest.approx(0.75)

    def test_invalid(self):
        with pytest.raises(ValueError):
            NoiseModel("cauchy", 1.0, 1.0)
        with pytest.raises(ValueError):
            NoiseModel("gaussian", 0.0, 1.0)
        with pytest.raises(ValueError):
            make_noise("nope")

    def test_json_roundtrip(self):
        import json

        for m in FAMILIES:
            assert NoiseModel.from_dict(json.loads(m.to_json())) == m
        assert NoiseModel.from_dict({"family": "laplace", "params": {"scale": 0.5}}) == laplace(0.5)


class TestSampling:
    def test_degenerate_uniform(self):
        rng = np.random.default_rng(0)
        assert all(sample_noise(bounded_uniform(0.0), rng) == 0.0 for _ in range(10))

    def test_reproducible(self):
        a = sample_noise_array(gaussian(1.0), np.random.default_rng(5), 100)
        b = sample_noise_array(gaussian(1.0), np.random.default_rng(5), 100)
        assert np.array_equal(a, b)

    def test_laplace_variance(self):
        x = sample_noise_array(laplace(0.5), np.random.default_rng(1), 1_000_000)
        assert np.var(x) == pytest.approx(0.5, abs=0.01)

    @pytest.mark.parametrize("model", FAMILIES)
    def test_mean_zero_and_variance(self, model):
        x = sample_noise_array(model, np.random.default_rng(2), 400_000)
        se = math.sqrt(model.variance() / x.size)
        assert abs(x.mean()) <= 4 * se
        assert np.var(x) == pytest.approx(model.variance(), rel=0.03)


class TestVerify:
    @pytest.mark.parametrize("model", FAMILIES)
    def test_certificates_pass_on_full_range(self, model):
        lams = np.linspace(-1 / model.b, 1 / model.b, 21)
        rep = verify_subexponential(model, lams, 200_000, np.random.default_rng(3))
        assert rep.passed and not rep.flagged.any()

    def test_gaussian_declared_any_b(self):
        m = NoiseModel("gaussian", 1.0, 0.5, {"sigma": 1.0})
        assert verify_subexponential(m, np.linspace(-2, 2, 9), 200_000, 0).passed

    def test_understated_laplace_fails(self):
        c = 0.5
        m = NoiseModel("laplace", c**2 / 10, c * math.sqrt(2), {"scale": c})
        lams = np.linspace(-1 / m.b, 1 / m.b, 21)
        assert not verify_subexponential(m, lams, 200_000, 0).passed

    def test_out_of_range_flagged(self):
        m = laplace(0.5)
        rep = verify_subexponential(m, [0.1, 10.0], 10_000, 0)
        assert rep.flagged.tolist() == [False, True] and np.isnan(rep.log_mgf[1])


class TestTail:
    def test_zero(self):
        assert tail_bound(gaussian(1.0), 0.0) == 2.0

    def test_branch_switch(self):
        m = NoiseModel("laplace", 1.0, 0.5, {"scale": 0.5})
        assert tail_bound(m, 2.0) == pytest.approx(2 * math.exp(-2))
        assert tail_bound(m, 3.0) == pytest.approx(2 * math.exp(-3))  # exponential branch: x / (2b)

    @pytest.mark.parametrize("model", FAMILIES)
    def test_monte_carlo_below_bound(self, model):
        x = np.abs(sample_noise_array(model, np.random.default_rng(4), 1_000_000))
        for t in np.linspace(0.1, 4 * math.sqrt(model.sigma2), 10):
            p = float(np.mean(x >= t))
            se = math.sqrt(max(p * (1 - p), 1e-12) / x.size)
            assert p <= tail_bound(model, t) + 3 * se

    def test_gaussian_points(self):
        x = np.abs(sample_noise_array(gaussian(1.0), np.random.default_rng(6), 1_000_000))
        for t in (1.0, 2.0, 3.0):
            assert np.mean(x >= t) <= tail_bound(gaussian(1.0), t)
