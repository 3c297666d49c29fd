import numpy as np
import pytest

from comorbid_hmm.data import DEMO_COVARIATES, demo_simulation_config, simulate_dataset
from comorbid_hmm.errors import InitializationError, ValidationError
from comorbid_hmm.likelihood import ModelConfig
from comorbid_hmm.sampler import (NUTS, ChainConfig, Diagnostics, Draws, _split_means, curvature_metric,
                                  initialize_chains, nuts_sample, trace_filename)


def std_normal(q):
    return -0.5 * float(q @ q), -q


def scaled_normal(scales):
    inv = 1.0 / np.asarray(scales) ** 2

    def f(q):
        return -0.5 * float(np.sum(q * q * inv)), -q * inv

    return f


SMALL = ChainConfig(n_chains=2, n_warmup=150, n_sampling=100, seed=4)


class TestNUTS:
    def test_deterministic(self):
        a = nuts_sample(std_normal, SMALL, dim=3)
        b = nuts_sample(std_normal, SMALL, dim=3)
        np.testing.assert_array_equal(a.samples, b.samples)
        c = nuts_sample(std_normal, ChainConfig(n_chains=2, n_warmup=150, n_sampling=100, seed=5), dim=3)
        assert not np.array_equal(a.samples, c.samples)

    def test_leapfrog_energy_conservation(self, rng):
        f = scaled_normal([1.0, 3.0, 0.5])
        nuts = NUTS(f, np.ones(3), 1e-3, 10, rng)
        q = rng.normal(size=3)
        p = rng.normal(size=3)
        lp, g = f(q)
        H0 = nuts._hamiltonian(lp, p)
        for _ in range(1000):
            q, p, lp, g = nuts._leapfrog(q, p, g, 1e-3)
        assert abs(nuts._hamiltonian(lp, p) - H0) < 1e-3

    def test_reversible_leapfrog(self, rng):
        f = scaled_normal([1.0, 2.0])
        nuts = NUTS(f, np.array([1.0, 4.0]), 0.1, 10, rng)
        q0, p0 = rng.normal(size=2), rng.normal(size=2)
        q, p, lp, g = nuts._leapfrog(q0, p0, f(q0)[1], 0.1)
        q, p, lp, g = nuts._leapfrog(q, -p, g, 0.1)
        np.testing.assert_allclose(q, q0, atol=1e-12)
        np.testing.assert_allclose(-p, p0, atol=1e-12)

    def test_adapts_to_scale(self):
        scales = np.array([1.0, 100.0])
        d = nuts_sample(scaled_normal(scales), ChainConfig(n_chains=2, n_warmup=600, n_sampling=500, seed=1),
                        dim=2)
        metric = np.array(d.adaptation[0]["inv_metric"])
        np.testing.assert_allclose(metric / scales ** 2, 1.0, rtol=0.35)
        sd = d.samples.reshape(-1, 2).std(axis=0)
        np.testing.assert_allclose(sd, scales, rtol=0.15)

    def test_divergence_flagged(self):
        # a funnel-like cliff; a huge fixed step must diverge
        def cliff(q):
            return -0.5 * float(q @ q) * 1e6, -q * 1e6

        nuts = NUTS(cliff, np.ones(2), 10.0, 5, np.random.default_rng(0))
        q = np.array([1e-3, 0.0])
        lp, g = cliff(q)
        _, _, _, info = nuts.transition(q, lp, g)
        assert info["divergent"]

    def test_stats_shapes(self):
        d = nuts_sample(std_normal, SMALL, dim=2)
        assert d.samples.shape == (2, 100, 2)
        for v in d.stats.values():
            assert v.shape == (2, 100)
        assert d.stats["divergent"].dtype == bool
        assert np.all(d.stats["tree_depth"] <= SMALL.max_tree_depth)

    def test_no_warmup_keeps_unit_step(self):
        d = nuts_sample(std_normal, ChainConfig(n_chains=1, n_warmup=0, n_sampling=5), dim=2)
        assert d.adaptation[0]["step_size"] == 1.0

    def test_curvature_metric(self):
        var = curvature_metric(scaled_normal([2.0, 0.1]), np.zeros(2))
        np.testing.assert_allclose(var, [4.0, 0.01], rtol=1e-6)

        def flat(q):
            return 0.0, np.zeros_like(q)

        np.testing.assert_array_equal(curvature_metric(flat, np.zeros(3)), 1.0)

    def test_non_finite_start(self):
        def bad(q):
            return -np.inf, np.zeros_like(q)

        with pytest.raises(InitializationError):
            nuts_sample(bad, SMALL, dim=2)
        with pytest.raises(InitializationError):
            nuts_sample(std_normal, SMALL, init=[np.array([np.nan, 0.0])] * 2)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            ChainConfig(target_accept=1.0)
        with pytest.raises(ValidationError):
            ChainConfig(n_chains=0)
        with pytest.raises(ValidationError):
            ChainConfig(init_metric="dense")


@pytest.fixture(scope="module")
def demo():
    data = simulate_dataset(demo_simulation_config(n_patients=30, seed=2)).select(DEMO_COVARIATES)
    return data, ModelConfig.for_data(data, 2, 2, DEMO_COVARIATES)


class TestInit:

    def test_bimodal_split(self, rng):
        y = np.r_[rng.normal(0, 0.1, 200), rng.normal(3, 0.1, 200)]
        c, sd = _split_means(y, 2)
        assert c[0] < 0.5 < 2.5 < c[1]
        assert sd == pytest.approx(0.1, rel=0.2)

    def test_degenerate_split(self):
        c, _ = _split_means(np.full(50, 2.0), 2)
        np.testing.assert_allclose(c, [1.99, 2.01])

    def test_chains_differ_and_are_finite(self, demo):
        data, model = demo
        inits = initialize_chains(model, data, ChainConfig(n_chains=3))
        assert len(inits) == 3
        assert not np.allclose(inits[0], inits[1])
        tr = model.transform()
        block = np.r_[tr.slices["alpha"].start:tr.slices["beta"].stop]
        for th in inits:
            assert np.all(np.abs(th[block]) <= 2.0)
            np.testing.assert_allclose(th[:block[0]], inits[0][:block[0]])

    def test_emission_start_straddles_modes(self, demo):
        data, model = demo
        th = initialize_chains(model, data, ChainConfig(n_chains=1))[0]
        p, _ = model.transform().constrain(th)
        assert p.mu_a[0] < 4.62 < p.mu_a[1]

    def test_initialisation_failure(self, demo):
        data, model = demo

        class Never:
            def __call__(self, theta):
                return -np.inf, np.zeros_like(theta)

        with pytest.raises(InitializationError, match="chain 0"):
            initialize_chains(model, data, ChainConfig(n_chains=1), logpost=Never(), attempts=3)


class TestArtifacts:
    def test_csv_round_trip(self, tmp_path):
        d = nuts_sample(std_normal, SMALL, dim=2, names=["x", "y"])
        d.to_csv(tmp_path / "d.csv", constrained=False)
        d.stats_to_csv(tmp_path / "s.csv")
        e = Draws.from_csv(tmp_path / "d.csv", tmp_path / "s.csv")
        np.testing.assert_array_equal(e.samples, d.samples)
        assert e.names == ["x", "y"]
        for k in d.stats:
            np.testing.assert_array_equal(e.stats[k], d.stats[k])
        head = (tmp_path / "d.csv").read_text().splitlines()[:2]
        assert head[0] == "chain,iter,x,y" and head[1].startswith("1,1,")

    def test_diagnostics(self, tmp_path):
        d = nuts_sample(std_normal, SMALL, dim=2, names=["x", "y"])
        diag = Diagnostics.from_draws(d)
        assert diag.converged(1.1) and diag.max_rhat() < 1.1
        diag.to_csv(tmp_path / "diag.csv")
        assert (tmp_path / "diag.csv").read_text().startswith("parameter,rhat,ess_bulk\nx,")
        paths = diag.write_traceplots(tmp_path / "trace")
        assert [p.name for p in paths] == ["x.csv", "y.csv"]
        assert len(paths[0].read_text().splitlines()) == 1 + 200

    def test_constant_parameter_is_converged(self):
        s = np.zeros((2, 50, 1))
        stats = {k: np.zeros((2, 50)) for k in ("lp", "divergent")}
        diag = Diagnostics.from_draws(Draws(s, ["c"], stats))
        assert np.isnan(diag.rhat[0]) and diag.converged()
        s2 = np.zeros((2, 50, 1))
        s2[1] = 1.0
        assert not Diagnostics.from_draws(Draws(s2, ["c"], stats)).converged()

    def test_trace_filename(self):
        assert trace_filename("beta[4,2,treatment_centered]") == "beta_4_2_treatment_centered"
        assert trace_filename("mu_a[1]") == "mu_a_1"
