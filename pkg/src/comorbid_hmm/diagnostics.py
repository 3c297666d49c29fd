"""Split-R-hat and effective sample size for multi-chain MCMC output."""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws) array, got shape {x.shape}")
    return x


def split_chains(x) -> np.ndarray:
    """Split every chain in half, dropping the middle draw of odd-length chains."""
    x = _as_chains(x)
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, x.shape[1] - n:]])


def rank_normalize(x) -> np.ndarray:
    x = _as_chains(x)
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def split_rhat(x) -> float:
    """Split-chain potential scale reduction factor.

    Returns ``nan`` when the within-chain variance is zero (undefined).
    """
    xs = split_chains(x)
    m, n = xs.shape
    if n < 2 or m < 2:
        return float("nan")
    w = xs.var(axis=1, ddof=1).mean()
    b = n * xs.mean(axis=1).var(ddof=1)
    if not w > 0:
        return float("nan")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def ess(x, split: bool = True) -> float:
    """Effective sample size with Geyer's initial monotone sequence truncation."""
    x = split_chains(x) if split else _as_chains(x)
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0:
        return float("nan")
    acov_mean = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = rho[1] = 1.0 - (mean_var - acov_mean[1]) / var_plus
    s = 1
    while s < n - 4 and even + odd > 0:
        even = 1.0 - (mean_var - acov_mean[s + 1]) / var_plus
        odd = 1.0 - (mean_var - acov_mean[s + 2]) / var_plus
        if even + odd >= 0:
            rho[s + 1] = even
            rho[s + 2] = odd
        s += 2
    max_s = s
    if even > 0:
        rho[max_s + 1] = even
    for s in range(1, max_s - 2, 2):
        if rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s]:
            rho[s + 1] = rho[s + 2] = 0.5 * (rho[s - 1] + rho[s])
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_s].sum() + rho[max_s + 1]
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    """ESS of the rank-normalized split chains."""
    x = _as_chains(x)
    if np.ptp(x) == 0:
        return float("nan")
    return ess(rank_normalize(x), split=True)


def _column(draws, param_index):
    samples = getattr(draws, "samples", draws)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 3:
        return samples[:, :, param_index]
    return samples


def compute_rhat(draws, param_index=0) -> float:
    """Split-R-hat for one parameter of a ``(chains, iterations, dim)`` array or :class:`Draws`."""
    return split_rhat(_column(draws, param_index))


def compute_ess(draws, param_index=0, method: str = "bulk") -> float:
    col = _column(draws, param_index)
    if method == "bulk":
        return ess_bulk(col)
    return ess(col)
