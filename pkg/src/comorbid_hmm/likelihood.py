"""Exact likelihood of the coupled model and the log-posterior used for sampling."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .data import PanelDataset, PatientSeries
from .errors import NumericalError, ValidationError
from .model import Parameters, StateSpace, emission_logpdf, log_softmax_rows
from .transforms import QRBasis, Transform, qr_reparam

BRUTE_FORCE_MAX_T = 8


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """Model structure: state counts, covariate names and optional QR basis."""

    space: StateSpace
    covariates: tuple = ()
    qr: QRBasis | None = None

    @classmethod
    def for_data(cls, data: PanelDataset, n_a: int = 2, n_b: int = 2, covariates=None,
                 use_qr: bool = True) -> "ModelConfig":
        covariates = tuple(data.covariate_names if covariates is None else covariates)
        qr = qr_reparam(data.covariate_matrix(covariates), names=covariates) if use_qr and covariates else None
        return cls(StateSpace(n_a, n_b), covariates, qr)

    def transform(self) -> Transform:
        return Transform(self.space, len(self.covariates), self.qr, self.covariates)


@dataclass(frozen=True, eq=False)
class PackedPanel:
    """Flat row-major arrays of a dataset, as consumed by the kernels."""

    ids: tuple
    ya: np.ndarray
    yb: np.ndarray
    X: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_patients(cls, patients, p: int) -> "PackedPanel":
        patients = list(patients)
        lengths = [pt.length for pt in patients]
        offsets = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
        cat = lambda name: np.concatenate([getattr(pt, name) for pt in patients]) if patients else np.zeros(0)
        X = np.vstack([pt.x for pt in patients]) if patients else np.zeros((0, p))
        if X.shape[1] != p:
            raise ValidationError(f"covariate dimension {X.shape[1]} does not match coefficients ({p})")
        return cls(tuple(pt.id for pt in patients), cat("y_a"), cat("y_b"), X, offsets)

    @property
    def n_patients(self) -> int:
        return len(self.offsets) - 1


def _loglik(params: Parameters, packed: PackedPanel, want_grad=False, backend=None):
    sp = params.space
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    return kernels.forward_backward(
        log_pi, params.alpha, params.beta, params.mu_a, params.mu_b,
        np.log(params.sigma_a), np.log(params.sigma_b), sp.state_a, sp.state_b,
        packed.ya, packed.yb, packed.X, packed.offsets, want_grad, backend=backend,
    )


def _first_bad_step(params: Parameters, patient: PatientSeries):
    """1-based time index of the first non-finite forward term, if any."""
    with np.errstate(all="ignore"):
        e = emission_matrix(params, patient)
        la = np.log(params.pi) + e[0]
        if not np.any(np.isfinite(la)) or np.any(np.isnan(la)):
            return 1
        for t in range(1, patient.length):
            lg = log_softmax_rows(params.eta(patient.x[t - 1]))
            la = logsumexp(la[:, None] + lg, axis=0) + e[t]
            if not np.any(np.isfinite(la)) or np.any(np.isnan(la)):
                return t + 1
    return None


def _check_finite(ll, ids, params=None, patients=None):
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        where = ""
        if params is not None and patients is not None:
            t = _first_bad_step(params, patients[bad[0]])
            where = f" (first at patient {ids[bad[0]]}, t={t})" if t is not None else ""
        raise NumericalError(
            f"non-finite log-likelihood for patient(s) {[ids[i] for i in bad[:5]]}{where}"
        )


def forward_loglik_patient(params: Parameters, patient: PatientSeries, backend=None) -> float:
    """Log-likelihood of one patient's series by the log-space forward recursion."""
    if patient.x.shape[1] != params.n_covariates:
        raise ValidationError(
            f"patient {patient.id} has {patient.x.shape[1]} covariates, parameters expect {params.n_covariates}"
        )
    packed = PackedPanel.from_patients([patient], params.n_covariates)
    ll, _ = _loglik(params, packed, backend=backend)
    _check_finite(ll, packed.ids, params, [patient])
    return float(ll[0])


def forward_loglik(params: Parameters, data: PanelDataset, backend=None) -> np.ndarray:
    """Per-patient log-likelihoods for a whole dataset."""
    packed = PackedPanel.from_patients(data.patients, params.n_covariates)
    if packed.n_patients == 0:
        return np.zeros(0)
    ll, _ = _loglik(params, packed, backend=backend)
    _check_finite(ll, packed.ids, params, data.patients)
    return ll


def emission_matrix(params: Parameters, patient: PatientSeries) -> np.ndarray:
    """Joint emission log-densities, shape ``(T, G)``."""
    sp = params.space
    la = np.column_stack([emission_logpdf(patient.y_a, s, params.mu_a, params.sigma_a) for s in range(1, sp.n_a + 1)])
    lb = np.column_stack([emission_logpdf(patient.y_b, s, params.mu_b, params.sigma_b) for s in range(1, sp.n_b + 1)])
    return la[:, sp.state_a] + lb[:, sp.state_b]


def log_transition_matrices(params: Parameters, patient: PatientSeries) -> np.ndarray:
    """Log transition matrices for steps t -> t+1, driven by the covariates at t; shape ``(T-1, G, G)``."""
    return np.array([log_softmax_rows(params.eta(x)) for x in patient.x[:-1]]).reshape(
        patient.length - 1, params.space.n_global, params.space.n_global
    )


def brute_force_loglik(params: Parameters, patient: PatientSeries) -> float:
    """Sum over every global-state path, accumulated in log space (T <= 8)."""
    T = patient.length
    if T > BRUTE_FORCE_MAX_T:
        raise ValidationError(f"brute-force enumeration refused for T={T} > {BRUTE_FORCE_MAX_T}")
    G = params.space.n_global
    e = emission_matrix(params, patient)
    lg = log_transition_matrices(params, patient)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    terms = []
    for path in itertools.product(range(G), repeat=T):
        v = log_pi[path[0]] + e[0, path[0]]
        for t in range(1, T):
            v += lg[t - 1, path[t - 1], path[t]] + e[t, path[t]]
        terms.append(v)
    return float(logsumexp(terms))


class LogPosterior:
    """Log-posterior and gradient in the unconstrained space for a fixed dataset.

    Calling the object returns ``(value, gradient)``. Non-finite values come
    back as ``-inf`` with a zero gradient, which the sampler treats as a
    rejection; :attr:`last_error` records why.
    """

    def __init__(self, data: PanelDataset, model: ModelConfig, backend=None):
        self.model = model
        self.transform = model.transform()
        self.backend = backend
        data = data.select(model.covariates) if data.covariate_names != tuple(model.covariates) else data
        packed = PackedPanel.from_patients(data.patients, len(model.covariates))
        if model.qr is not None and packed.n_patients:
            packed = PackedPanel(packed.ids, packed.ya, packed.yb,
                                 model.qr.transform_rows(packed.X), packed.offsets)
        self.packed = packed
        self.last_error = None
        self.n_evals = 0

    @property
    def dim(self) -> int:
        return self.transform.dim

    def _likelihood(self, theta, want_grad):
        tr = self.transform
        sp = tr.space
        b = tr.split(theta)
        alpha_s, beta_s = tr.sampler_coefficients(theta)
        params, log_jac = tr.constrain(theta)
        if self.packed.n_patients == 0:
            G = sp.n_global
            zero = (np.zeros(G), np.zeros((G, G)), np.zeros((G, G, tr.p)),
                    np.zeros(sp.n_a), np.zeros(sp.n_b), 0.0, 0.0)
            return params, log_jac, np.zeros(0), zero if want_grad else None
        with np.errstate(divide="ignore"):
            log_pi = np.log(params.pi)
        ll, g = kernels.forward_backward(
            log_pi, alpha_s, beta_s, params.mu_a, params.mu_b, b["log_sigma"][0], b["log_sigma"][1],
            sp.state_a, sp.state_b, self.packed.ya, self.packed.yb, self.packed.X,
            self.packed.offsets, want_grad, backend=self.backend,
        )
        return params, log_jac, ll, g

    def components(self, theta) -> dict:
        """Log-likelihood, log-prior and log-Jacobian evaluated separately."""
        params, log_jac, ll, _ = self._likelihood(theta, False)
        return {
            "loglik": float(np.sum(ll)),
            "log_prior": self.transform.log_prior(params, theta),
            "log_jacobian": log_jac,
        }

    def value(self, theta) -> float:
        self.n_evals += 1
        with np.errstate(over="ignore", invalid="ignore"):
            params, log_jac, ll, _ = self._likelihood(theta, False)
            total = float(np.sum(ll)) + self.transform.log_prior(params, theta) + log_jac
        if not np.isfinite(total):
            self.last_error = "non-finite log posterior"
            return -np.inf
        return total

    def __call__(self, theta):
        self.n_evals += 1
        with np.errstate(over="ignore", invalid="ignore"):
            params, log_jac, ll, g = self._likelihood(theta, True)
            total = float(np.sum(ll)) + self.transform.log_prior(params, theta) + log_jac
            grad = self.transform.log_prior_gradient_chain(theta, g)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            self.last_error = "non-finite log posterior or gradient"
            return -np.inf, np.zeros_like(grad)
        return total, grad


def total_log_posterior(theta, data: PanelDataset, model: ModelConfig) -> float:
    return LogPosterior(data, model).value(theta)


def grad_log_posterior(theta, data: PanelDataset, model: ModelConfig) -> np.ndarray:
    return LogPosterior(data, model)(theta)[1]


class PointwiseLogLik:
    """Draws x patients matrix of patient-level log predictive densities."""

    def __init__(self, matrix, patient_ids=None):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ValidationError("pointwise log-likelihood must be a 2-D (draws x patients) matrix")
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError("pointwise log-likelihood contains non-finite entries")
        n = self.matrix.shape[1]
        self.patient_ids = tuple(patient_ids) if patient_ids is not None else tuple(str(i + 1) for i in range(n))

    @property
    def shape(self):
        return self.matrix.shape

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "patient_id", "loglik"])
            for d, row in enumerate(self.matrix, start=1):
                for pid, v in zip(self.patient_ids, row):
                    w.writerow([d, pid, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "PointwiseLogLik":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        ids = list(dict.fromkeys(r["patient_id"] for r in rows))
        n_draws = max(int(r["draw"]) for r in rows)
        pos = {pid: i for i, pid in enumerate(ids)}
        m = np.empty((n_draws, len(ids)))
        for r in rows:
            m[int(r["draw"]) - 1, pos[r["patient_id"]]] = float(r["loglik"])
        return cls(m, ids)


def pointwise_loglik(draws, data: PanelDataset, covariates=None) -> PointwiseLogLik:
    """Per-draw, per-patient log-likelihood.

    ``draws`` is any iterable of :class:`Parameters` or an object exposing
    ``iter_params()`` (such as :class:`~comorbid_hmm.sampler.Draws`).
    """
    if hasattr(draws, "iter_params"):
        if covariates is None and getattr(draws, "transform", None) is not None:
            covariates = draws.transform.covariate_names
        draws = draws.iter_params()
    if covariates is not None and tuple(covariates) != data.covariate_names:
        data = data.select(covariates)
    packed = None
    rows = []
    for params in draws:
        if packed is None:
            packed = PackedPanel.from_patients(data.patients, params.n_covariates)
        ll, _ = _loglik(params, packed)
        _check_finite(ll, packed.ids, params, data.patients)
        rows.append(ll)
    return PointwiseLogLik(np.array(rows).reshape(len(rows), data.n_patients), data.ids)
