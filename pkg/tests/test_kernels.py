import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comorbid_hmm import kernels
from comorbid_hmm.likelihood import PackedPanel

from conftest import random_dataset, random_params

cython = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


def kernel_args(params, data):
    packed = PackedPanel.from_patients(data.patients, params.n_covariates)
    sp = params.space
    return (np.log(params.pi), params.alpha, params.beta, params.mu_a, params.mu_b,
            np.log(params.sigma_a), np.log(params.sigma_b), sp.state_a, sp.state_b,
            packed.ya, packed.yb, packed.X, packed.offsets)


def both(args, want_grad=True):
    return (kernels.forward_backward(*args, want_grad=want_grad, backend="python"),
            kernels.forward_backward(*args, want_grad=want_grad, backend="cython"))


@cython
class TestParity:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([(2, 2), (1, 2), (2, 1), (3, 2)]), st.integers(0, 3),
           st.integers(1, 8))
    def test_value_and_gradient(self, seed, shape, p, n):
        rng = np.random.default_rng(seed)
        params = random_params(rng, *shape, p=p, scale=2.0)
        data = random_dataset(rng, params, n=n, t_range=(2, 9))
        (ll_py, g_py), (ll_c, g_c) = both(kernel_args(params, data))
        np.testing.assert_allclose(ll_c, ll_py, rtol=1e-12, atol=1e-10)
        for a, b in zip(g_c, g_py):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-9)

    def test_no_gradient(self, rng):
        params = random_params(rng, p=1)
        (ll_py, g_py), (ll_c, g_c) = both(kernel_args(params, random_dataset(rng, params)), False)
        assert g_py is None and g_c is None
        np.testing.assert_allclose(ll_c, ll_py, rtol=1e-12)

    def test_zero_initial_probability(self, rng):
        params = random_params(rng, p=1)
        args = list(kernel_args(params, random_dataset(rng, params)))
        with np.errstate(divide="ignore"):
            args[0] = np.log(np.array([0.0, 0.5, 0.5, 0.0]))
        (ll_py, g_py), (ll_c, g_c) = both(args)
        assert np.all(np.isfinite(ll_c))
        np.testing.assert_allclose(ll_c, ll_py, rtol=1e-12)
        for a, b in zip(g_c[1:], g_py[1:]):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-9)


class TestDispatch:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_accepts_flat_covariates(self, rng):
        params = random_params(rng, p=1)
        args = list(kernel_args(params, random_dataset(rng, params)))
        ll2d, _ = kernels.forward_backward(*args, backend="python")
        args[11] = args[11].ravel()
        ll1d, _ = kernels.forward_backward(*args, backend="python")
        np.testing.assert_array_equal(ll1d, ll2d)

    def test_single_step_is_mixture(self, rng):
        from scipy.special import logsumexp
        from scipy.stats import norm

        params = random_params(rng, p=0)
        sp = params.space
        ya, yb = rng.normal(size=3), rng.normal(size=3)
        args = (np.log(params.pi), params.alpha, params.beta, params.mu_a, params.mu_b,
                np.log(params.sigma_a), np.log(params.sigma_b), sp.state_a, sp.state_b,
                ya, yb, np.zeros((3, 0)), np.arange(4))
        for backend in ("python", "cython") if kernels.BACKEND == "cython" else ("python",):
            ll, _ = kernels.forward_backward(*args, backend=backend)
            for i in range(3):
                comp = (np.log(params.pi) + norm.logpdf(ya[i], params.mu_a[sp.state_a], params.sigma_a)
                        + norm.logpdf(yb[i], params.mu_b[sp.state_b], params.sigma_b))
                assert ll[i] == pytest.approx(logsumexp(comp), rel=1e-12)
