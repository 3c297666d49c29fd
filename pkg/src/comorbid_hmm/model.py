"""State space, parameter container and the transition/emission building blocks.

Global states are numbered row-major in (state of A, state of B), 1-based in
the public API: for a 2x2 space (1,1)->1, (1,2)->2, (2,1)->3, (2,2)->4.
Arrays are indexed 0-based internally.
"""
from __future__ import annotations

import json
import math
from dataclasses import InitVar, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class StateSpace:
    """Per-disease state counts and the Cartesian-product global state map."""

    n_a: int = 2
    n_b: int = 2

    def __post_init__(self):
        if int(self.n_a) < 1 or int(self.n_b) < 1:
            raise ValidationError(f"state counts must be >= 1, got ({self.n_a}, {self.n_b})")

    @property
    def n_global(self) -> int:
        return self.n_a * self.n_b

    def global_index(self, s_a: int, s_b: int) -> int:
        if not (1 <= s_a <= self.n_a and 1 <= s_b <= self.n_b):
            raise ValidationError(
                f"state ({s_a}, {s_b}) outside {{1..{self.n_a}}} x {{1..{self.n_b}}}"
            )
        return (s_a - 1) * self.n_b + s_b

    def split_global(self, g: int) -> tuple[int, int]:
        if not 1 <= g <= self.n_global:
            raise ValidationError(f"global state {g} outside 1..{self.n_global}")
        return (g - 1) // self.n_b + 1, (g - 1) % self.n_b + 1

    @property
    def state_a(self) -> np.ndarray:
        """0-based disease-A state of each global state."""
        return np.repeat(np.arange(self.n_a), self.n_b)

    @property
    def state_b(self) -> np.ndarray:
        """0-based disease-B state of each global state."""
        return np.tile(np.arange(self.n_b), self.n_a)

    def label(self, g: int) -> str:
        return "({},{})".format(*self.split_global(g))


def global_index(s_a: int, s_b: int, space: StateSpace) -> int:
    return space.global_index(s_a, s_b)


def split_global(g: int, space: StateSpace) -> tuple[int, int]:
    return space.split_global(g)


@dataclass(frozen=True, eq=False)
class Parameters:
    """Constrained model parameters.

    ``alpha`` has shape ``(G, G)`` and ``beta`` shape ``(G, G, p)`` where ``G``
    is the number of global states; both carry structural zeros on the
    diagonal. Pass ``check=False`` to skip validation (test fixtures only).
    """

    mu_a: np.ndarray
    mu_b: np.ndarray
    sigma_a: float
    sigma_b: float
    pi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    check: InitVar[bool] = True
    space: StateSpace = field(init=False, repr=False)

    def __post_init__(self, check):
        conv = {
            "mu_a": np.atleast_1d(np.asarray(self.mu_a, dtype=float)),
            "mu_b": np.atleast_1d(np.asarray(self.mu_b, dtype=float)),
            "pi": np.atleast_1d(np.asarray(self.pi, dtype=float)),
            "alpha": np.asarray(self.alpha, dtype=float),
            "beta": np.asarray(self.beta, dtype=float),
        }
        for name, arr in conv.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sigma_a", float(self.sigma_a))
        object.__setattr__(self, "sigma_b", float(self.sigma_b))
        object.__setattr__(self, "space", StateSpace(len(self.mu_a), len(self.mu_b)))
        if self.beta.ndim == 2 and self.beta.size == 0:
            object.__setattr__(
                self, "beta", np.zeros(self.alpha.shape + (0,))
            )
        if check:
            self.validate()

    @property
    def n_covariates(self) -> int:
        return self.beta.shape[2]

    def validate(self):
        G = self.space.n_global
        if self.pi.shape != (G,):
            raise ValidationError(f"pi must have length {G}, got {self.pi.shape}")
        if self.alpha.shape != (G, G):
            raise ValidationError(f"alpha must be {G}x{G}, got {self.alpha.shape}")
        if self.beta.ndim != 3 or self.beta.shape[:2] != (G, G):
            raise ValidationError(f"beta must be {G}x{G}xp, got {self.beta.shape}")
        for name in ("mu_a", "mu_b"):
            mu = getattr(self, name)
            if not np.all(np.isfinite(mu)):
                raise ValidationError(f"{name} must be finite")
            if np.any(np.diff(mu) <= 0):
                raise ValidationError(f"{name} must be strictly increasing, got {mu.tolist()}")
        for name in ("sigma_a", "sigma_b"):
            s = getattr(self, name)
            if not (np.isfinite(s) and s > 0):
                raise ValidationError(f"{name} must be positive, got {s}")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-12:
            raise ValidationError(f"pi must be a probability simplex, got {self.pi.tolist()}")
        diag = np.arange(G)
        if np.any(self.alpha[diag, diag] != 0) or np.any(self.beta[diag, diag] != 0):
            raise ValidationError("alpha and beta must be zero on the diagonal")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValidationError("alpha and beta must be finite")

    def eta(self, x) -> np.ndarray:
        return build_eta(self.alpha, self.beta, x)

    def transition_matrix(self, x) -> np.ndarray:
        return transition_matrix(self.eta(x))

    def to_dict(self) -> dict:
        return {
            "mu_a": self.mu_a.tolist(),
            "mu_b": self.mu_b.tolist(),
            "sigma_a": self.sigma_a,
            "sigma_b": self.sigma_b,
            "pi": self.pi.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, check: bool = True) -> "Parameters":
        missing = [k for k in ("mu_a", "mu_b", "sigma_a", "sigma_b", "pi", "alpha", "beta") if k not in d]
        if missing:
            raise ValidationError(f"parameter document missing fields: {missing}")
        G = len(d["mu_a"]) * len(d["mu_b"])
        beta = np.asarray(d["beta"], dtype=float)
        if beta.size == 0:
            beta = np.zeros((G, G, 0))
        return cls(d["mu_a"], d["mu_b"], d["sigma_a"], d["sigma_b"], d["pi"], d["alpha"], beta, check=check)

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), indent=kw.pop("indent", 2), **kw)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "Parameters":
        if isinstance(source, (str, Path)) and Path(source).exists():
            source = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(source))

    def allclose(self, other: "Parameters", atol: float = 0.0, rtol: float = 0.0) -> bool:
        a, b = self.to_dict(), other.to_dict()
        return all(
            np.shape(a[k]) == np.shape(b[k]) and np.allclose(a[k], b[k], atol=atol, rtol=rtol)
            for k in a
        )


def build_eta(alpha, beta, x) -> np.ndarray:
    """Transition logits ``alpha_jk + x . beta_jk`` with the diagonal pinned to zero."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1]:
        raise ValidationError(f"alpha must be square, got {alpha.shape}")
    if beta.shape[:2] != alpha.shape or beta.ndim != 3:
        raise ValidationError(f"beta shape {beta.shape} does not conform to alpha {alpha.shape}")
    if x.shape != (beta.shape[2],):
        raise ValidationError(f"covariate vector has dimension {x.shape}, expected ({beta.shape[2]},)")
    eta = alpha + beta @ x
    np.fill_diagonal(eta, 0.0)
    return eta


def softmax_rows(eta) -> np.ndarray:
    """Row-wise softmax with max-subtraction."""
    eta = np.asarray(eta, dtype=float)
    z = eta - eta.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def log_softmax_rows(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    z = eta - eta.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def transition_matrix(eta) -> np.ndarray:
    """Row-stochastic transition matrix from a logit matrix."""
    eta = np.asarray(eta, dtype=float)
    bad = np.argwhere(~np.isfinite(eta))
    if bad.size:
        raise NumericalError(f"non-finite transition logits at indices {bad.tolist()}")
    return softmax_rows(eta)


def emission_logpdf(y, s: int, mu, sigma: float):
    """Normal log-density of ``y`` under disease state ``s`` (1-based)."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    z = (np.asarray(y, dtype=float) - mu[s - 1]) / sigma
    return -0.5 * z * z - math.log(sigma) - LOG_SQRT_2PI
