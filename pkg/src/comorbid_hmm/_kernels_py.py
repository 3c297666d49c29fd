"""Pure-numpy forward-backward kernel, used when the compiled extension is absent.

Patients are padded to the longest series and processed as one batch; padded
steps are masked out of the posterior weights, so they never reach the
returned log-likelihoods or gradients.
"""
import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def _pad_index(offsets):
    lengths = np.diff(offsets)
    n, tmax = len(lengths), int(lengths.max())
    t = np.arange(tmax)
    mask = t[None, :] < lengths[:, None]
    rows = np.where(mask, offsets[:-1, None] + t[None, :], 0)
    return lengths, mask, rows


def forward_backward(log_pi, alpha, beta, mu_a, mu_b, log_sigma_a, log_sigma_b,
                     state_a, state_b, ya, yb, X, offsets, want_grad=True):
    """Per-patient log-likelihoods and, optionally, the summed gradient.

    Returns ``(ll, grad)`` where ``grad`` is ``None`` or the tuple
    ``(d_log_pi, d_alpha, d_beta, d_mu_a, d_mu_b, d_log_sigma_a, d_log_sigma_b)``.
    """
    lengths, mask, rows = _pad_index(np.asarray(offsets))
    n, tmax = mask.shape
    G = len(log_pi)
    sa, sb = np.exp(log_sigma_a), np.exp(log_sigma_b)

    ya_p = np.where(mask, ya[rows], 0.0)
    yb_p = np.where(mask, yb[rows], 0.0)
    za = (ya_p[:, :, None] - mu_a[state_a][None, None, :]) / sa
    zb = (yb_p[:, :, None] - mu_b[state_b][None, None, :]) / sb
    e = -0.5 * (za**2 + zb**2) - log_sigma_a - log_sigma_b - LOG_2PI

    Xp = X[rows[:, : tmax - 1]] * mask[:, 1:, None]  # x_t drives the step t -> t+1
    eta = alpha[None, None] + np.einsum("ntq,jkq->ntjk", Xp, beta)
    diag = np.arange(G)
    eta[:, :, diag, diag] = 0.0
    eta = eta - eta.max(axis=-1, keepdims=True)
    lgam = eta - np.log(np.exp(eta).sum(axis=-1, keepdims=True))

    la = np.empty((n, tmax, G))
    la[:, 0] = log_pi[None, :] + e[:, 0]
    for t in range(tmax - 1):
        la[:, t + 1] = e[:, t + 1] + _lse(la[:, t, :, None] + lgam[:, t], axis=1)
    last = la[np.arange(n), lengths - 1]
    ll = _lse(last, axis=1)
    if not want_grad:
        return ll, None

    lb = np.zeros((n, tmax, G))
    for t in range(tmax - 2, -1, -1):
        v = e[:, t + 1] + lb[:, t + 1]
        nxt = _lse(lgam[:, t] + v[:, None, :], axis=2)
        lb[:, t] = np.where((t < lengths - 1)[:, None], nxt, 0.0)

    with np.errstate(invalid="ignore", over="ignore"):
        post = np.where(mask[:, :, None], np.exp(la + lb - ll[:, None, None]), 0.0)
        v = e[:, 1:] + lb[:, 1:] - ll[:, None, None]
        xi = np.exp(la[:, :-1, :, None] + lgam + v[:, :, None, :])
    xi = np.where(mask[:, 1:, None, None], xi, 0.0)
    rowsum = xi.sum(axis=-1, keepdims=True)
    d_eta = xi - rowsum * np.exp(lgam)
    d_eta[:, :, diag, diag] = 0.0

    d_log_pi = post[:, 0].sum(axis=0)
    d_alpha = d_eta.sum(axis=(0, 1))
    d_beta = np.einsum("ntjk,ntq->jkq", d_eta, Xp)
    wa = post * za
    wb = post * zb
    d_mu_a = np.zeros(len(mu_a))
    d_mu_b = np.zeros(len(mu_b))
    np.add.at(d_mu_a, state_a, wa.sum(axis=(0, 1)) / sa)
    np.add.at(d_mu_b, state_b, wb.sum(axis=(0, 1)) / sb)
    d_ls_a = float((post * (za**2 - 1.0)).sum())
    d_ls_b = float((post * (zb**2 - 1.0)).sum())
    return ll, (d_log_pi, d_alpha, d_beta, d_mu_a, d_mu_b, d_ls_a, d_ls_b)
