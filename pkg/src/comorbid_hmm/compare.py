"""Patient-level predictive performance: WAIC, PSIS-LOO and the variant comparison table."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .likelihood import PointwiseLogLik, pointwise_loglik

log = logging.getLogger(__name__)

DEFAULT_VARIANTS = ((2, 2), (1, 2), (2, 1))
K_THRESHOLDS = (0.5, 0.7, 1.0)
MIN_DRAWS_PSIS = 100


def _matrix(pw) -> np.ndarray:
    m = pw.matrix if isinstance(pw, PointwiseLogLik) else np.asarray(pw, dtype=float)
    if m.ndim != 2:
        raise ValidationError("pointwise log-likelihood must be (draws x patients)")
    if not np.all(np.isfinite(m)):
        raise ValidationError("pointwise log-likelihood contains non-finite entries")
    return m


def _lpd(m) -> np.ndarray:
    return logsumexp(m, axis=0) - math.log(m.shape[0])


# -- WAIC ---------------------------------------------------------------

@dataclass
class WAICResult:
    elpd_waic: float
    p_waic: float
    waic_deviance: float
    se: float
    pointwise: np.ndarray

    def __iter__(self):
        return iter((self.elpd_waic, self.p_waic, self.waic_deviance))


def waic(pw) -> WAICResult:
    """Widely-applicable information criterion with the patient as the pointwise unit.

    Returns ``elpd_waic``, ``p_waic`` and the deviance-scale value
    ``-2 * elpd_waic``. With a single draw the variance penalty is 0.
    """
    m = _matrix(pw)
    lpd = _lpd(m)
    p = m.var(axis=0, ddof=1) if m.shape[0] > 1 else np.zeros(m.shape[1])
    pointwise = lpd - p
    elpd = float(pointwise.sum())
    se = float(math.sqrt(len(pointwise) * pointwise.var())) if len(pointwise) else 0.0
    return WAICResult(elpd, float(p.sum()), -2.0 * elpd, se, pointwise)


# -- generalized Pareto tail fit ------------------------------------------

def gpd_fit(x, prior_weight: float = 10.0):
    """Fit a generalized Pareto distribution (location 0) to positive exceedances.

    Empirical-Bayes estimate of Zhang and Stephens, followed by a weak
    shrinkage of the shape towards 0.5 (weight ``prior_weight`` pseudo
    observations). Returns ``(k, sigma)`` with ``k > 0`` for heavy tails.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n < 2 or not x[-1] > 0:
        raise ValidationError("need at least two positive exceedances")
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b /= 3.0 * x[max(int(n / 4 + 0.5) - 1, 0)]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    profile = n * (np.log(-b / k) - k - 1.0)
    with np.errstate(over="ignore"):  # overflow means a negligible weight
        w = 1.0 / np.exp(profile - profile[:, None]).sum(axis=1)
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_hat = float(np.sum(b * w))
    k_hat = float(np.log1p(-b_hat * x).mean())
    sigma = -k_hat / b_hat
    if prior_weight:
        k_hat = (n * k_hat + prior_weight * 0.5) / (n + prior_weight)
    return k_hat, sigma


def gpd_quantile(p, k: float, sigma: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not sigma > 0:
        return np.full(p.shape, np.nan)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios):
    """Pareto-smooth one vector of log importance ratios.

    Returns normalized log weights and the tail shape ``k``. A constant
    vector gives ``k = -inf``; a tail too short to fit gives ``k = inf``.
    """
    x = np.asarray(log_ratios, dtype=float).copy()
    S = len(x)
    x -= x.max()
    if np.ptp(x) == 0:
        return np.full(S, -math.log(S)), -math.inf
    tail_len = int(math.ceil(min(0.2 * S, 3.0 * math.sqrt(S))))
    order = np.argsort(x, kind="stable")
    cutoff = max(x[order[-tail_len - 1]], math.log(np.finfo(float).tiny)) if tail_len < S else -np.inf
    tail = np.flatnonzero(x > cutoff)
    k = math.inf
    if len(tail) > 4:
        tail = tail[np.argsort(x[tail], kind="stable")]
        exp_cut = math.exp(cutoff)
        k, sigma = gpd_fit(np.exp(x[tail]) - exp_cut)
        if np.isfinite(k):
            probs = (np.arange(len(tail)) + 0.5) / len(tail)
            smoothed = gpd_quantile(probs, k, sigma)
            if np.all(np.isfinite(smoothed)):
                x[tail] = np.log(smoothed + exp_cut)
                x = np.minimum(x, 0.0)  # truncate at the largest raw ratio
    return x - logsumexp(x), k


@dataclass
class LOOResult:
    elpd_loo: float
    se: float
    p_loo: float
    pareto_k: np.ndarray
    pointwise: np.ndarray
    warnings: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.elpd_loo, self.se, self.p_loo, self.pareto_k))

    def k_counts(self) -> dict:
        return pareto_k_counts(self.pareto_k)


def pareto_k_counts(k) -> dict:
    """Counts in the bins ``(-inf, 0.5]``, ``(0.5, 0.7]``, ``(0.7, 1]``, ``(1, inf]``."""
    k = np.asarray(k, dtype=float)
    edges = (-np.inf,) + K_THRESHOLDS + (np.inf,)
    labels = ("k<=0.5", "0.5<k<=0.7", "0.7<k<=1", "k>1")
    out = {}
    for lbl, lo, hi in zip(labels, edges[:-1], edges[1:]):
        sel = (k <= hi) & (k > lo) if lo > -np.inf else (k <= hi)
        out[lbl] = int(sel.sum())
    return out


def psis_loo(pw) -> LOOResult:
    """Leave-one-patient-out elpd by Pareto-smoothed importance sampling."""
    m = _matrix(pw)
    S, N = m.shape
    msgs = []
    if S < MIN_DRAWS_PSIS:
        msgs.append(f"only {S} draws; Pareto tail fits are unstable below {MIN_DRAWS_PSIS}")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=2)
    elpd_i = np.empty(N)
    ks = np.empty(N)
    for i in range(N):
        col = m[:, i]
        if np.ptp(col) == 0:
            elpd_i[i], ks[i] = col[0], -math.inf
            continue
        lw, ks[i] = psis_smooth(-col)
        elpd_i[i] = logsumexp(lw + col)
    n_bad = int(np.sum(ks > 0.7))
    if n_bad:
        msgs.append(f"{n_bad} patients have Pareto k > 0.7")
    p_loo = float(_lpd(m).sum() - elpd_i.sum())
    se = float(math.sqrt(N * elpd_i.var())) if N else 0.0
    return LOOResult(float(elpd_i.sum()), se, p_loo, ks, elpd_i, msgs)


# -- comparison table -------------------------------------------------------

@dataclass
class CompareRow:
    name: str
    n_a: int
    n_b: int
    converged: bool
    elpd_loo: float = math.nan
    se_elpd: float = math.nan
    p_loo: float = math.nan
    elpd_waic: float = math.nan
    p_waic: float = math.nan
    waic: float = math.nan
    pareto_k: dict = field(default_factory=dict)
    elpd_diff: float = math.nan
    se_diff: float = math.nan
    max_rhat: float = math.nan
    error: str | None = None
    pointwise: np.ndarray | None = None

    @property
    def interactions(self) -> bool:
        """Both diseases have latent dynamics, so the global chain couples them."""
        return self.n_a > 1 and self.n_b > 1


FIELDS = ("model", "interactions", "n_a", "n_b", "elpd_loo", "se_elpd", "p_loo", "elpd_waic",
          "p_waic", "waic", "elpd_diff", "se_diff", "k<=0.5", "0.5<k<=0.7", "0.7<k<=1", "k>1",
          "max_rhat", "converged", "error")


@dataclass
class CompareReport:
    rows: list

    def row(self, name) -> CompareRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def best(self) -> CompareRow:
        ok = [r for r in self.rows if np.isfinite(r.elpd_loo)]
        if not ok:
            raise ValidationError("no variant produced a finite elpd")
        return max(ok, key=lambda r: r.elpd_loo)

    def finalize(self) -> "CompareReport":
        """Fill elpd differences against the best model with paired standard errors."""
        try:
            best = self.best()
        except ValidationError:
            return self
        for r in self.rows:
            if r.pointwise is None or best.pointwise is None:
                continue
            d = r.pointwise - best.pointwise
            r.elpd_diff = float(d.sum())
            r.se_diff = float(math.sqrt(len(d) * d.var()))
        return self

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS)
            for r in self.rows:
                k = r.pareto_k or {}
                w.writerow([r.name, r.interactions, r.n_a, r.n_b, r.elpd_loo, r.se_elpd, r.p_loo,
                            r.elpd_waic, r.p_waic, r.waic, r.elpd_diff, r.se_diff,
                            k.get("k<=0.5", ""), k.get("0.5<k<=0.7", ""), k.get("0.7<k<=1", ""),
                            k.get("k>1", ""), r.max_rhat, r.converged, r.error or ""])

    def to_text(self) -> str:
        """Table with model, interaction flag, states, elpd, SE and WAIC.

        Metrics of non-converged variants are parenthesized and marked with a dagger.
        """
        head = f"{'model':<14s}{'interactions':>13s}{'states':>8s}{'elpd':>14s}{'SE(elpd)':>12s}{'WAIC':>14s}"
        lines = [head, "-" * len(head)]
        any_dagger = False
        for r in self.rows:
            states = f"{r.n_a}x{r.n_b}"
            if r.error:
                lines.append(f"{r.name:<14s}{'yes' if r.interactions else 'no':>13s}{states:>8s}  failed: {r.error}")
                continue
            vals = [f"{r.elpd_loo:.2f}", f"{r.se_elpd:.2f}", f"{r.waic:.2f}"]
            if not r.converged:
                vals = [f"({v})" for v in vals]
                vals[-1] += "†"
                any_dagger = True
            lines.append(f"{r.name:<14s}{'yes' if r.interactions else 'no':>13s}{states:>8s}"
                         f"{vals[0]:>14s}{vals[1]:>12s}{vals[2]:>14s}")
        if any_dagger:
            lines.append("† not converged (some R-hat >= 1.1); values shown in parentheses")
        return "\n".join(lines)


def variant_name(n_a: int, n_b: int) -> str:
    if n_a > 1 and n_b > 1:
        return "coupled"
    if n_a == 1:
        return "simplified_A"
    return "simplified_B"


def compare_row(name, fit, data) -> CompareRow:
    """Metrics row for a finished fit."""
    pw = pointwise_loglik(fit.draws, data)
    loo = psis_loo(pw)
    wa = waic(pw)
    sp = fit.model.space
    return CompareRow(
        name, sp.n_a, sp.n_b, fit.converged, loo.elpd_loo, loo.se, loo.p_loo,
        wa.elpd_waic, wa.p_waic, wa.waic_deviance, loo.k_counts(),
        max_rhat=fit.diagnostics.max_rhat(), pointwise=loo.pointwise,
    )


def fit_variants(data, base_config=None, variants=DEFAULT_VARIANTS, covariates=None,
                 use_qr: bool = True, fits: dict | None = None) -> CompareReport:
    """Fit each ``(n_a, n_b)`` variant with identical data, priors and budget and tabulate.

    ``fits`` may supply already finished fits keyed by ``(n_a, n_b)``. A
    failing variant gets an error row; the others still run.
    """
    from .fitting import fit_model

    variants = [tuple(int(v) for v in var) for var in variants]
    if any(v == (1, 1) for v in variants):
        raise ValidationError("the (1, 1) variant has no latent dynamics to compare")
    rows = []
    for n_a, n_b in variants:
        name = variant_name(n_a, n_b)
        try:
            fit = (fits or {}).get((n_a, n_b))
            if fit is None:
                fit = fit_model(data, n_a, n_b, covariates, base_config, use_qr=use_qr)
            rows.append(compare_row(name, fit, data))
        except Exception as exc:  # noqa: BLE001 - one failed variant must not sink the table
            log.warning("variant (%d,%d) failed: %s", n_a, n_b, exc)
            rows.append(CompareRow(name, n_a, n_b, False, error=f"{type(exc).__name__}: {exc}"))
    return CompareReport(rows).finalize()
