"""Maps between constrained parameters and the unconstrained sampling space.

Unconstrained layout (``G`` global states, ``p`` covariates)::

    [mu_a[1], log-gaps of mu_a, mu_b[1], log-gaps of mu_b,
     log sigma_a, log sigma_b,
     stick-breaking coordinates of pi (G - 1),
     off-diagonal intercepts, row-major (G (G - 1)),
     off-diagonal coefficients, row-major pair then covariate (G (G - 1) p)]

When a :class:`QRBasis` is attached, the intercept block holds intercepts at
the covariate sample mean and the coefficient block holds coefficients on the
orthogonalised basis; :meth:`Transform.constrain` maps both back to the raw
covariate scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .errors import ValidationError
from .model import Parameters, StateSpace

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MU_PRIOR_SD = 10.0
ALPHA_PRIOR_SD = 2.5
BETA_PRIOR_SD = 1.0


@dataclass(frozen=True, eq=False)
class QRBasis:
    """Thin-QR basis of the centered design: ``X - center = q_star @ r_star``."""

    center: np.ndarray
    q_star: np.ndarray
    r_star: np.ndarray
    r_star_inverse: np.ndarray

    @property
    def n_covariates(self) -> int:
        return self.r_star.shape[0]

    def transform_rows(self, X) -> np.ndarray:
        """Coordinates of raw covariate rows on the scaled orthogonal basis."""
        return (np.asarray(X, dtype=float) - self.center) @ self.r_star_inverse

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "r_star": self.r_star.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QRBasis":
        r = np.asarray(d["r_star"], dtype=float).reshape(len(d["center"]), len(d["center"]))
        return cls(np.asarray(d["center"], dtype=float), np.empty((0, r.shape[0])), r, np.linalg.inv(r))


def qr_reparam(X, center: bool = True, tol: float = 1e-10, names=None) -> QRBasis:
    """Scaled thin QR decomposition of the (column-centered) covariate matrix.

    ``Q`` is scaled by ``sqrt(n - 1)`` and ``R`` by ``1 / sqrt(n - 1)`` so that
    coefficients on the new basis live on a unit scale.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"covariate matrix must be 2-D, got shape {X.shape}")
    n, p = X.shape
    mean = X.mean(axis=0) if center else np.zeros(p)
    if p == 0:
        return QRBasis(mean, np.zeros((n, 0)), np.zeros((0, 0)), np.zeros((0, 0)))
    if n < 2:
        raise ValidationError("QR reparameterization needs at least two rows")
    Xc = X - mean
    q, r = np.linalg.qr(Xc, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = max(np.abs(Xc).max(), 1.0)
    bad = np.flatnonzero(diag <= tol * scale * math.sqrt(n))
    if bad.size:
        cols = [names[i] for i in bad] if names is not None else bad.tolist()
        raise ValidationError(
            f"covariate matrix is rank deficient; columns {cols} are collinear "
            "with preceding columns (or constant)"
        )
    # fix the sign so R has a positive diagonal
    sign = np.sign(np.diag(r))
    q = q * sign
    r = r * sign[:, None]
    s = math.sqrt(n - 1)
    r_star = r / s
    return QRBasis(mean, q * s, r_star, np.linalg.inv(r_star))


def _stick_breaking(y):
    """Unconstrained coordinates -> (log simplex, log|J|, z)."""
    K = len(y) + 1
    u = y - np.log(K - 1 - np.arange(K - 1))
    log_z = log_expit(u)
    log_1mz = log_expit(-u)
    rem = np.concatenate(([0.0], np.cumsum(log_1mz)))  # log stick left before each break
    log_pi = np.concatenate((rem[:-1] + log_z, rem[-1:]))
    log_jac = float(np.sum(log_z + log_1mz + rem[:-1]))
    return log_pi, log_jac, expit(u)


def _stick_breaking_inverse(pi):
    pi = np.asarray(pi, dtype=float)
    K = len(pi)
    rem = 1.0 - np.concatenate(([0.0], np.cumsum(pi[:-1])))
    z = pi[:-1] / rem[:-1]
    return np.log(z) - np.log1p(-z) + np.log(K - 1 - np.arange(K - 1))


class Transform:
    """Bijection between :class:`Parameters` and flat unconstrained vectors."""

    def __init__(self, space: StateSpace, n_covariates: int, qr: QRBasis | None = None,
                 covariate_names=None):
        self.space = space
        self.p = int(n_covariates)
        if qr is not None and qr.n_covariates != self.p:
            raise ValidationError("QR basis dimension does not match covariate count")
        self.qr = qr
        self.covariate_names = (
            tuple(covariate_names) if covariate_names is not None
            else tuple(f"x{q + 1}" for q in range(self.p))
        )
        G = space.n_global
        rows, cols = np.nonzero(~np.eye(G, dtype=bool))
        self.offdiag = (rows, cols)
        sizes = [
            ("mu_a", space.n_a), ("mu_b", space.n_b), ("log_sigma", 2),
            ("pi", G - 1), ("alpha", G * (G - 1)), ("beta", G * (G - 1) * self.p),
        ]
        self.slices = {}
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    # -- names -------------------------------------------------------------
    def unconstrained_names(self) -> list[str]:
        sp = self.space
        names = ["mu_a[1]"] + [f"log_gap_a[{s}]" for s in range(2, sp.n_a + 1)]
        names += ["mu_b[1]"] + [f"log_gap_b[{s}]" for s in range(2, sp.n_b + 1)]
        names += ["log_sigma_a", "log_sigma_b"]
        names += [f"stick[{k}]" for k in range(1, sp.n_global)]
        pairs = [(j + 1, k + 1) for j, k in zip(*self.offdiag)]
        tag = "alpha_c" if self.qr is not None else "alpha"
        names += [f"{tag}[{j},{k}]" for j, k in pairs]
        btag = "beta_tilde" if self.qr is not None else "beta"
        names += [f"{btag}[{j},{k},{c}]" for j, k in pairs for c in self.covariate_names]
        return names

    def constrained_names(self) -> list[str]:
        sp = self.space
        G = sp.n_global
        names = [f"mu_a[{s}]" for s in range(1, sp.n_a + 1)]
        names += [f"mu_b[{s}]" for s in range(1, sp.n_b + 1)]
        names += ["sigma_a", "sigma_b"]
        names += [f"pi[{g}]" for g in range(1, G + 1)]
        pairs = [(j + 1, k + 1) for j, k in zip(*self.offdiag)]
        names += [f"alpha[{j},{k}]" for j, k in pairs]
        names += [f"beta[{j},{k},{c}]" for j, k in pairs for c in self.covariate_names]
        return names

    def flatten(self, params: Parameters) -> np.ndarray:
        """Constrained parameters in :meth:`constrained_names` order."""
        r, c = self.offdiag
        return np.concatenate([
            params.mu_a, params.mu_b, [params.sigma_a, params.sigma_b], params.pi,
            params.alpha[r, c], params.beta[r, c].ravel(),
        ])

    # -- pieces ------------------------------------------------------------
    def split(self, theta):
        """Named views of the unconstrained blocks."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValidationError(f"theta must have shape ({self.dim},), got {theta.shape}")
        return {name: theta[sl] for name, sl in self.slices.items()}

    def sampler_coefficients(self, theta):
        """Intercept and coefficient arrays on the sampling basis, shaped (G, G) and (G, G, p)."""
        G = self.space.n_global
        b = self.split(theta)
        alpha = np.zeros((G, G))
        alpha[self.offdiag] = b["alpha"]
        beta = np.zeros((G, G, self.p))
        beta[self.offdiag] = b["beta"].reshape(G * (G - 1), self.p)
        return alpha, beta

    def _to_raw(self, alpha_s, beta_s):
        if self.qr is None:
            return alpha_s, beta_s
        beta = beta_s @ self.qr.r_star_inverse.T
        alpha = alpha_s - beta @ self.qr.center
        np.fill_diagonal(alpha, 0.0)
        return alpha, beta

    def _from_raw(self, alpha, beta):
        if self.qr is None:
            return alpha, beta
        alpha_s = alpha + beta @ self.qr.center
        np.fill_diagonal(alpha_s, 0.0)
        return alpha_s, beta @ self.qr.r_star.T

    # -- the bijection -----------------------------------------------------
    def constrain(self, theta) -> tuple[Parameters, float]:
        b = self.split(theta)
        mu_a = b["mu_a"][0] + np.concatenate(([0.0], np.cumsum(np.exp(b["mu_a"][1:]))))
        mu_b = b["mu_b"][0] + np.concatenate(([0.0], np.cumsum(np.exp(b["mu_b"][1:]))))
        log_pi, jac_pi, _ = _stick_breaking(b["pi"])
        pi = np.exp(log_pi)
        pi = pi / pi.sum()
        alpha, beta = self._to_raw(*self.sampler_coefficients(theta))
        log_jac = float(b["mu_a"][1:].sum() + b["mu_b"][1:].sum() + b["log_sigma"].sum() + jac_pi)
        params = Parameters(
            mu_a, mu_b, math.exp(b["log_sigma"][0]), math.exp(b["log_sigma"][1]),
            pi, alpha, beta, check=False,
        )
        return params, log_jac

    def unconstrain(self, params: Parameters) -> np.ndarray:
        params.validate()
        if params.space != self.space or params.n_covariates != self.p:
            raise ValidationError("parameters do not conform to this transform")
        r, c = self.offdiag
        alpha_s, beta_s = self._from_raw(params.alpha.copy(), params.beta)
        return np.concatenate([
            [params.mu_a[0]], np.log(np.diff(params.mu_a)),
            [params.mu_b[0]], np.log(np.diff(params.mu_b)),
            [math.log(params.sigma_a), math.log(params.sigma_b)],
            _stick_breaking_inverse(params.pi),
            alpha_s[r, c], beta_s[r, c].ravel(),
        ])

    def log_prior(self, params: Parameters, theta) -> float:
        """Log prior density; transform Jacobians are added by the caller."""
        b = self.split(theta)
        mus = np.concatenate([params.mu_a, params.mu_b])
        lp = float(np.sum(-0.5 * (mus / MU_PRIOR_SD) ** 2) - len(mus) * (math.log(MU_PRIOR_SD) + LOG_SQRT_2PI))
        sig = np.array([params.sigma_a, params.sigma_b])
        lp += float(np.sum(math.log(2.0) - 0.5 * sig**2 - LOG_SQRT_2PI))
        lp += float(gammaln(self.space.n_global))  # flat Dirichlet(1, ..., 1)
        a = b["alpha"]
        lp += float(np.sum(-0.5 * (a / ALPHA_PRIOR_SD) ** 2) - a.size * (math.log(ALPHA_PRIOR_SD) + LOG_SQRT_2PI))
        bt = b["beta"]
        lp += float(np.sum(-0.5 * (bt / BETA_PRIOR_SD) ** 2) - bt.size * (math.log(BETA_PRIOR_SD) + LOG_SQRT_2PI))
        return lp

    def log_prior_gradient_chain(self, theta, g_ll):
        """Gradient of log-lik + log-prior + log|J| in theta.

        ``g_ll`` holds likelihood gradients with respect to
        ``(log_pi, alpha_s, beta_s, mu_a, mu_b, log_sigma_a, log_sigma_b)``
        where ``alpha_s``/``beta_s`` are on the sampling basis.
        """
        d_log_pi, d_alpha, d_beta, d_mu_a, d_mu_b, d_ls_a, d_ls_b = g_ll
        b = self.split(theta)
        out = np.empty(self.dim)

        for key, d_mu in (("mu_a", d_mu_a), ("mu_b", d_mu_b)):
            blk = b[key]
            mu = blk[0] + np.concatenate(([0.0], np.cumsum(np.exp(blk[1:]))))
            dmu = d_mu - mu / MU_PRIOR_SD**2
            tail = np.cumsum(dmu[::-1])[::-1]  # sum over k >= m
            grad = np.empty(len(blk))
            grad[0] = tail[0]
            grad[1:] = np.exp(blk[1:]) * tail[1:] + 1.0
            out[self.slices[key]] = grad

        sig2 = np.exp(2.0 * b["log_sigma"])
        out[self.slices["log_sigma"]] = np.array([d_ls_a, d_ls_b]) - sig2 + 1.0

        y = b["pi"]
        if len(y):
            K = len(y) + 1
            _, _, z = _stick_breaking(y)
            g = np.asarray(d_log_pi)
            after = np.cumsum(g[::-1])[::-1][1:]  # sum over k > m
            m = np.arange(K - 1)
            out[self.slices["pi"]] = (
                g[:-1] * (1.0 - z) - z * after + 1.0 - 2.0 * z - (K - 2 - m) * z
            )

        out[self.slices["alpha"]] = d_alpha[self.offdiag] - b["alpha"] / ALPHA_PRIOR_SD**2
        out[self.slices["beta"]] = d_beta[self.offdiag].ravel() - b["beta"] / BETA_PRIOR_SD**2
        return out

    def manifest(self) -> dict:
        return {
            "n_a": self.space.n_a,
            "n_b": self.space.n_b,
            "covariates": list(self.covariate_names),
            "dim": self.dim,
            "blocks": {k: [s.start, s.stop] for k, s in self.slices.items()},
            "unconstrained_names": self.unconstrained_names(),
            "qr": None if self.qr is None else self.qr.to_dict(),
        }

    @classmethod
    def from_manifest(cls, d: dict) -> "Transform":
        qr = None if d.get("qr") is None else QRBasis.from_dict(d["qr"])
        return cls(StateSpace(d["n_a"], d["n_b"]), len(d["covariates"]), qr, d["covariates"])


def constrain(theta, transform: Transform):
    return transform.constrain(theta)


def unconstrain(params: Parameters, transform: Transform | None = None):
    if transform is None:
        transform = Transform(params.space, params.n_covariates)
    return transform.unconstrain(params)


def log_prior(params: Parameters, theta, transform: Transform) -> float:
    return transform.log_prior(params, theta)
