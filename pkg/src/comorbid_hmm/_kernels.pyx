# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward-backward kernel (same contract as ``_kernels_py``)."""
import numpy as np

from libc.math cimport exp, log, INFINITY

cdef double LOG_2PI = 1.8378770664093453


def forward_backward(const double[::1] log_pi, const double[:, ::1] alpha,
                     const double[:, :, ::1] beta, const double[::1] mu_a,
                     const double[::1] mu_b, double log_sigma_a, double log_sigma_b,
                     const long long[::1] state_a, const long long[::1] state_b,
                     const double[::1] ya, const double[::1] yb,
                     const double[:, ::1] X, const long long[::1] offsets,
                     bint want_grad=True):
    cdef Py_ssize_t N = offsets.shape[0] - 1
    cdef Py_ssize_t G = log_pi.shape[0]
    cdef Py_ssize_t P = beta.shape[2]
    cdef Py_ssize_t i, t, j, k, q, g, n, base, tmax = 1
    for i in range(N):
        if offsets[i + 1] - offsets[i] > tmax:
            tmax = offsets[i + 1] - offsets[i]

    cdef double inv_sa = exp(-log_sigma_a), inv_sb = exp(-log_sigma_b)
    cdef double[:, ::1] e = np.empty((tmax, G))
    cdef double[:, ::1] za = np.empty((tmax, G))
    cdef double[:, ::1] zb = np.empty((tmax, G))
    cdef double[:, ::1] la = np.empty((tmax, G))
    cdef double[:, ::1] lb = np.empty((tmax, G))
    cdef double[:, :, ::1] gam = np.empty((max(tmax - 1, 1), G, G))
    cdef double[:, :, ::1] lgam = np.empty((max(tmax - 1, 1), G, G))
    cdef double[::1] buf = np.empty(G)
    cdef double[::1] w = np.empty(G)
    cdef double[::1] xi = np.empty(G)

    ll_arr = np.empty(N)
    cdef double[::1] ll = ll_arr
    d_log_pi_arr = np.zeros(G)
    d_alpha_arr = np.zeros((G, G))
    d_beta_arr = np.zeros((G, G, P))
    d_mu_a_arr = np.zeros(mu_a.shape[0])
    d_mu_b_arr = np.zeros(mu_b.shape[0])
    cdef double[::1] d_log_pi = d_log_pi_arr
    cdef double[:, ::1] d_alpha = d_alpha_arr
    cdef double[:, :, ::1] d_beta = d_beta_arr
    cdef double[::1] d_mu_a = d_mu_a_arr
    cdef double[::1] d_mu_b = d_mu_b_arr
    cdef double d_ls_a = 0.0, d_ls_b = 0.0

    cdef double mx, s, ls, eta, LL, post, d, rowsum, xrow

    for i in range(N):
        base = offsets[i]
        n = offsets[i + 1] - base

        for t in range(n):
            for g in range(G):
                za[t, g] = (ya[base + t] - mu_a[state_a[g]]) * inv_sa
                zb[t, g] = (yb[base + t] - mu_b[state_b[g]]) * inv_sb
                e[t, g] = (-0.5 * (za[t, g] * za[t, g] + zb[t, g] * zb[t, g])
                           - log_sigma_a - log_sigma_b - LOG_2PI)

        for t in range(n - 1):
            for j in range(G):
                mx = 0.0
                for k in range(G):
                    if k == j:
                        eta = 0.0
                    else:
                        eta = alpha[j, k]
                        for q in range(P):
                            eta += X[base + t, q] * beta[j, k, q]
                    buf[k] = eta
                    if eta > mx:
                        mx = eta
                s = 0.0
                for k in range(G):
                    w[k] = exp(buf[k] - mx)
                    s += w[k]
                ls = log(s)
                for k in range(G):
                    gam[t, j, k] = w[k] / s
                    lgam[t, j, k] = buf[k] - mx - ls

        # forward pass in log space
        for g in range(G):
            la[0, g] = log_pi[g] + e[0, g]
        for t in range(n - 1):
            mx = -INFINITY
            for j in range(G):
                if la[t, j] > mx:
                    mx = la[t, j]
            if mx == -INFINITY:
                for k in range(G):
                    la[t + 1, k] = -INFINITY
                continue
            for j in range(G):
                w[j] = exp(la[t, j] - mx)
            for k in range(G):
                s = 0.0
                for j in range(G):
                    s += w[j] * gam[t, j, k]
                la[t + 1, k] = e[t + 1, k] + mx + log(s)
        mx = -INFINITY
        for g in range(G):
            if la[n - 1, g] > mx:
                mx = la[n - 1, g]
        if mx == -INFINITY:
            ll[i] = -INFINITY
            continue
        s = 0.0
        for g in range(G):
            s += exp(la[n - 1, g] - mx)
        LL = mx + log(s)
        ll[i] = LL
        if not want_grad:
            continue

        # backward pass
        for g in range(G):
            lb[n - 1, g] = 0.0
        for t in range(n - 2, -1, -1):
            mx = -INFINITY
            for k in range(G):
                buf[k] = e[t + 1, k] + lb[t + 1, k]
                if buf[k] > mx:
                    mx = buf[k]
            for k in range(G):
                w[k] = exp(buf[k] - mx)
            for j in range(G):
                s = 0.0
                for k in range(G):
                    s += gam[t, j, k] * w[k]
                lb[t, j] = mx + log(s)

        for t in range(n):
            for g in range(G):
                post = exp(la[t, g] + lb[t, g] - LL)
                if t == 0:
                    d_log_pi[g] += post
                d_mu_a[state_a[g]] += post * za[t, g] * inv_sa
                d_mu_b[state_b[g]] += post * zb[t, g] * inv_sb
                d_ls_a += post * (za[t, g] * za[t, g] - 1.0)
                d_ls_b += post * (zb[t, g] * zb[t, g] - 1.0)

        for t in range(n - 1):
            for k in range(G):
                buf[k] = e[t + 1, k] + lb[t + 1, k] - LL
            for j in range(G):
                rowsum = 0.0
                for k in range(G):
                    xi[k] = exp(la[t, j] + lgam[t, j, k] + buf[k])
                    rowsum += xi[k]
                for k in range(G):
                    if k == j:
                        continue
                    d = xi[k] - rowsum * gam[t, j, k]
                    d_alpha[j, k] += d
                    for q in range(P):
                        d_beta[j, k, q] += d * X[base + t, q]

    if not want_grad:
        return ll_arr, None
    return ll_arr, (d_log_pi_arr, d_alpha_arr, d_beta_arr, d_mu_a_arr, d_mu_b_arr, d_ls_a, d_ls_b)
