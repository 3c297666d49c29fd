import numpy as np
import pytest

from comorbid_hmm.diagnostics import compute_ess, compute_rhat, ess, ess_bulk, split_chains, split_rhat


def ar1(rng, phi, shape):
    x = np.empty(shape)
    x[:, 0] = rng.normal(size=shape[0]) / np.sqrt(1 - phi ** 2)
    for t in range(1, shape[1]):
        x[:, t] = phi * x[:, t - 1] + rng.normal(size=shape[0])
    return x


class TestRhat:
    def test_exchangeable_chains(self, rng):
        r = split_rhat(rng.normal(size=(4, 1000)))
        assert 1.0 - 1e-3 <= r < 1.05

    def test_offset_chains(self, rng):
        x = rng.normal(size=(4, 500)) + np.array([0, 0, 5, 5])[:, None]
        assert split_rhat(x) > 2.0

    def test_trend_detected_by_split(self, rng):
        x = rng.normal(size=(1, 1000)) + np.linspace(0, 4, 1000)
        assert split_rhat(x) > 1.1

    def test_zero_variance(self):
        assert np.isnan(split_rhat(np.ones((4, 100))))
        assert np.isnan(ess_bulk(np.ones((4, 100))))

    def test_split_drops_middle_draw(self):
        x = np.arange(7.0)[None, :]
        np.testing.assert_array_equal(split_chains(x), [[0, 1, 2], [4, 5, 6]])

    def test_three_dimensional_access(self, rng):
        draws = rng.normal(size=(4, 200, 3))
        assert compute_rhat(draws, 2) == pytest.approx(split_rhat(draws[:, :, 2]))
        assert compute_ess(draws, 1) == pytest.approx(ess_bulk(draws[:, :, 1]))


class TestESS:
    def test_iid(self, rng):
        x = rng.normal(size=(4, 1000))
        assert ess_bulk(x) == pytest.approx(4000, rel=0.2)
        assert ess(x) == pytest.approx(4000, rel=0.2)

    def test_ar1(self, rng):
        phi = 0.8
        x = ar1(rng, phi, (4, 5000))
        expected = 20000 * (1 - phi) / (1 + phi)
        assert ess(x) == pytest.approx(expected, rel=0.2)

    def test_antithetic_capped(self, rng):
        x = ar1(rng, -0.5, (4, 2000))
        assert ess(x) <= 8000 * np.log10(8000)

    def test_invariant_to_monotone_map(self, rng):
        x = rng.normal(size=(4, 500))
        assert ess_bulk(np.exp(x)) == pytest.approx(ess_bulk(x))

    def test_too_short(self):
        assert np.isnan(ess(np.arange(6.0)[None, :]))
