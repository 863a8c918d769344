import numpy as np
import pytest

from src.evaluation.metrics import StatisticsCalculator
from src.evaluation.oracles import brownian_marginal, skew_bm_flip_sampler


@pytest.fixture
def calc():
    return StatisticsCalculator(confidence_level=0.99)


class TestStatisticsCalculator:
    def test_normal_quantile(self, calc):
        assert calc.z == pytest.approx(2.5758, abs=1e-4)

    def test_invalid_level(self):
        with pytest.raises(ValueError):
            StatisticsCalculator(confidence_level=1.5)

    def test_binomial_halfwidths(self, calc):
        widths = calc.binomial_halfwidths([50, 0], 100)
        assert widths[0] == pytest.approx(2.5758 * 0.05, abs=1e-4)
        assert widths[1] == 0.0
        assert calc.binomial_tolerance(0.5, 100) == pytest.approx(widths[0])

    def test_mean_with_error(self, calc):
        summary = calc.mean_with_error([1.0, 2.0, 3.0, 4.0])
        assert summary["mean"] == 2.5
        assert summary["n"] == 4
        assert summary["std_error"] == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
        with pytest.raises(ValueError):
            calc.mean_with_error([])

    def test_ks_critical_value(self, calc):
        assert calc.ks_critical_value(10_000, 10_000) == pytest.approx(0.02302, abs=1e-4)

    def test_ks_distance(self, calc):
        same = calc.ks_distance([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
        assert same["statistic"] == 0.0
        apart = calc.ks_distance([0.0, 1.0], [5.0, 6.0])
        assert apart["statistic"] == 1.0
        with pytest.raises(ValueError):
            calc.ks_distance([], [1.0])

    def test_summarize(self, calc):
        out = calc.summarize({"a": np.array([1.0, 2.0]), "b": np.float64(0.5), "c": "x"})
        assert out == {"a": [1.0, 2.0], "b": 0.5, "c": "x"}
        assert type(out["b"]) is float


class TestOracles:
    def test_brownian_variance(self):
        samples = brownian_marginal(0.5, 4000, dt=0.01, seed=3)
        assert samples.shape == (4000,)
        assert samples.var() == pytest.approx(0.5, abs=0.05)
        assert abs(samples.mean()) < 0.05

    def test_skew_sign_frequency(self):
        samples = skew_bm_flip_sampler(0.7, 0.5, 4000, dt=0.01, seed=3)
        assert (samples > 0).mean() == pytest.approx(0.7, abs=0.03)

    def test_symmetric_skew_is_brownian(self, calc):
        skew = skew_bm_flip_sampler(0.5, 0.5, 4000, dt=0.01, seed=5)
        plain = brownian_marginal(0.5, 4000, dt=0.01, seed=6)
        assert calc.ks_distance(skew, plain)["statistic"] < 0.05

    def test_reproducible(self):
        np.testing.assert_array_equal(brownian_marginal(0.1, 10, seed=1), brownian_marginal(0.1, 10, seed=1))

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            skew_bm_flip_sampler(1.5, 0.5, 10)
