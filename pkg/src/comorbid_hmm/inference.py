"""Post-fit analyses: Viterbi decoding, posterior predictive checks, transition
summaries and the spill-over estimator."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset, PatientSeries
from .errors import ValidationError
from .likelihood import PackedPanel
from .model import Parameters, log_softmax_rows, softmax_rows

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
QUANTILE_LABELS = ("5%", "25%", "50%", "75%", "95%")
OVERFLOW_TOLERANCE = 0.01


def _params_list(draws) -> list:
    if hasattr(draws, "iter_params"):
        return list(draws.iter_params())
    if isinstance(draws, Parameters):
        return [draws]
    return list(draws)


def _model_data(draws, data: PanelDataset) -> PanelDataset:
    names = getattr(getattr(draws, "transform", None), "covariate_names", None)
    if names is not None and tuple(names) != data.covariate_names:
        return data.select(names)
    return data


# -- Viterbi --------------------------------------------------------------

def _padded_terms(params: Parameters, packed: PackedPanel):
    """Emission log-densities ``(N, Tmax, G)`` and log transitions ``(N, Tmax-1, G, G)``."""
    sp = params.space
    G = sp.n_global
    za = (packed.ya[:, None] - params.mu_a[sp.state_a][None, :]) / params.sigma_a
    zb = (packed.yb[:, None] - params.mu_b[sp.state_b][None, :]) / params.sigma_b
    c = -np.log(params.sigma_a) - np.log(params.sigma_b) - np.log(2.0 * np.pi)
    e = c - 0.5 * (za**2 + zb**2)
    eta = params.alpha[None] + np.einsum("np,jkp->njk", packed.X, params.beta)
    lg = log_softmax_rows(eta.reshape(-1, G)).reshape(-1, G, G)

    lengths = np.diff(packed.offsets)
    N, Tmax = len(lengths), int(lengths.max())
    E = np.zeros((N, Tmax, G))
    LG = np.zeros((N, max(Tmax - 1, 0), G, G))
    mask = np.arange(Tmax)[None, :] < lengths[:, None]
    E[mask] = e
    # transition out of the last observed step is unused
    rows = np.concatenate([np.arange(o, o + T - 1) for o, T in zip(packed.offsets[:-1], lengths)])
    LG[mask[:, 1:]] = lg[rows]
    return E, LG, lengths


def viterbi_batch(params: Parameters, patients) -> list:
    """Most probable global-state paths (1-based) for several patients at once.

    The recursion runs in log space. Ties go to the lower state index, both
    for back-pointers and for the terminal state.
    """
    patients = list(patients)
    if not patients:
        return []
    for pt in patients:
        if pt.x.shape[1] != params.n_covariates:
            raise ValidationError(
                f"patient {pt.id} has {pt.x.shape[1]} covariates, parameters expect {params.n_covariates}"
            )
    packed = PackedPanel.from_patients(patients, params.n_covariates)
    E, LG, lengths = _padded_terms(params, packed)
    N, Tmax, G = E.shape
    with np.errstate(divide="ignore"):
        delta = np.log(params.pi)[None, :] + E[:, 0]
    back = np.zeros((N, Tmax, G), dtype=np.int64)
    back[:] = np.arange(G)
    for t in range(1, Tmax):
        scores = delta[:, :, None] + LG[:, t - 1]
        arg = np.argmax(scores, axis=1)
        new = np.take_along_axis(scores, arg[:, None, :], axis=1)[:, 0] + E[:, t]
        active = t < lengths
        delta = np.where(active[:, None], new, delta)
        back[active, t] = arg[active]
    paths = []
    last = np.argmax(delta, axis=1)
    for i, T in enumerate(lengths):
        s = np.empty(T, dtype=np.int64)
        s[-1] = last[i]
        for t in range(T - 1, 0, -1):
            s[t - 1] = back[i, t, s[t]]
        paths.append(s + 1)
    return paths


def viterbi(params: Parameters, patient: PatientSeries) -> np.ndarray:
    """Most probable global-state sequence (1-based) for one patient."""
    return viterbi_batch(params, [patient])[0]


def decode_table(params: Parameters, data: PanelDataset) -> list:
    """Rows ``(patient_id, t, state_a, state_b, global)`` of the Viterbi paths."""
    sp = params.space
    rows = []
    for pt, path in zip(data.patients, viterbi_batch(params, data.patients)):
        for t, g in zip(pt.t, path):
            s_a, s_b = sp.split_global(int(g))
            rows.append((pt.id, int(t), s_a, s_b, int(g)))
    return rows


def posterior_mean_params(draws) -> Parameters:
    """Parameters at the posterior mean of the constrained draws.

    Means are averaged directly (order is preserved since every draw is
    ordered); ``pi`` is renormalised.
    """
    plist = _params_list(draws)
    if not plist:
        raise ValidationError("no draws")
    mean = lambda name: np.mean([np.asarray(getattr(p, name), dtype=float) for p in plist], axis=0)
    pi = mean("pi")
    return Parameters(mean("mu_a"), mean("mu_b"), float(mean("sigma_a")), float(mean("sigma_b")),
                      pi / pi.sum(), mean("alpha"), mean("beta"))


# -- posterior predictive checks ---------------------------------------------

@dataclass(eq=False)
class PPCResult:
    """Replicated observations and interval coverage of the actual data.

    ``y_rep_a``/``y_rep_b`` have shape ``(n_rep, n_rows)`` in the dataset's
    row order. ``coverage`` maps channel (``a``, ``b``, ``all``) to the
    fraction of observations inside the central 50% and 90% intervals.
    """

    ids: list
    t: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray
    y_rep_a: np.ndarray
    y_rep_b: np.ndarray
    draw_index: np.ndarray
    coverage: dict = field(default_factory=dict)

    def intervals(self, channel: str) -> np.ndarray:
        rep = self.y_rep_a if channel == "a" else self.y_rep_b
        return np.quantile(rep, QUANTILES, axis=0)

    def to_csv(self, path) -> None:
        """One row per observation and channel with the replicate quantiles."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["patient_id", "t", "channel", "observed", "q05", "q25", "q50", "q75", "q95"])
            for ch, obs in (("a", self.y_a), ("b", self.y_b)):
                q = self.intervals(ch)
                for i in range(len(obs)):
                    w.writerow([self.ids[i], int(self.t[i]), ch, repr(float(obs[i])),
                                *(repr(float(v)) for v in q[:, i])])

    def coverage_rows(self) -> list:
        return [(ch, lvl, self.coverage[ch][lvl]) for ch in ("a", "b", "all") for lvl in ("50", "90")]


def _coverage(obs, rep) -> dict:
    q = np.quantile(rep, QUANTILES, axis=0)
    in50 = (q[1] <= obs) & (obs <= q[3])
    in90 = (q[0] <= obs) & (obs <= q[4])
    return {"50": in50, "90": in90}


def posterior_predictive(draws, data: PanelDataset, n_rep: int = 200, seed: int = 0) -> PPCResult:
    """Replicate the data from posterior draws, conditioned on Viterbi paths.

    For each replicate a posterior draw is picked at random, every patient's
    most probable state path under that draw is decoded, and both channels
    are re-emitted from the normal emission model along that path.
    """
    if n_rep < 1:
        raise ValidationError("n_rep must be >= 1")
    plist = _params_list(draws)
    data = _model_data(draws, data)
    rng = np.random.default_rng([int(seed), 7])
    idx = rng.choice(len(plist), size=n_rep, replace=n_rep > len(plist))
    n = data.n_rows
    rep_a = np.empty((n_rep, n))
    rep_b = np.empty((n_rep, n))
    for r, d in enumerate(idx):
        p = plist[d]
        sp = p.space
        s = np.concatenate(viterbi_batch(p, data.patients)) - 1
        rep_a[r] = p.mu_a[sp.state_a[s]] + p.sigma_a * rng.standard_normal(n)
        rep_b[r] = p.mu_b[sp.state_b[s]] + p.sigma_b * rng.standard_normal(n)
    y_a = np.concatenate([pt.y_a for pt in data.patients])
    y_b = np.concatenate([pt.y_b for pt in data.patients])
    ca, cb = _coverage(y_a, rep_a), _coverage(y_b, rep_b)
    coverage = {
        "a": {k: float(v.mean()) for k, v in ca.items()},
        "b": {k: float(v.mean()) for k, v in cb.items()},
        "all": {k: float(np.concatenate([ca[k], cb[k]]).mean()) for k in ca},
    }
    ids = [pt.id for pt in data.patients for _ in range(pt.length)]
    t = np.concatenate([pt.t for pt in data.patients])
    return PPCResult(ids, t, y_a, y_b, rep_a, rep_b, idx, coverage)


# -- covariate profiles and transition summaries ------------------------------

def profile_vector(profile, names) -> np.ndarray:
    """Covariate vector in ``names`` order from an array or a name -> value mapping.

    Names absent from a mapping are set to 0 (the centred-scale neutral value).
    """
    names = list(names)
    if isinstance(profile, dict):
        unknown = [k for k in profile if k not in names]
        if unknown:
            raise ValidationError(f"profile names {unknown} are not model covariates {names}")
        return np.array([float(profile.get(n, 0.0)) for n in names])
    x = np.asarray(profile, dtype=float).ravel()
    if x.shape != (len(names),):
        raise ValidationError(f"profile has {x.size} entries, model has {len(names)} covariates")
    return x


def mean_profile(data: PanelDataset, names=None) -> dict:
    """Sample means of the covariates over all patient-time rows."""
    names = list(data.covariate_names if names is None else names)
    return dict(zip(names, data.covariate_means(names).tolist()))


def _covariate_names(draws, plist) -> list:
    names = getattr(getattr(draws, "transform", None), "covariate_names", None)
    if names is None:
        names = [f"x{q + 1}" for q in range(plist[0].n_covariates)]
    return list(names)


def _summary(values) -> dict:
    q = np.quantile(values, QUANTILES)
    return {"mean": float(np.mean(values)), **{lbl: float(v) for lbl, v in zip(QUANTILE_LABELS, q)}}


@dataclass(eq=False)
class TransitionSummary:
    """Posterior of selected transition probabilities at a fixed covariate profile."""

    transitions: list
    samples: np.ndarray  # (n_draws, n_transitions)
    profile: dict
    labels: list

    def summary(self) -> list:
        return [{"from": j, "to": k, **_summary(self.samples[:, i])}
                for i, (j, k) in enumerate(self.transitions)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["from", "to", "from_state", "to_state", "mean", *QUANTILE_LABELS])
            for (j, k), row in zip(self.transitions, self.summary()):
                w.writerow([j, k, self.labels[j - 1], self.labels[k - 1], repr(row["mean"]),
                            *(repr(row[l]) for l in QUANTILE_LABELS)])


def conditional_transition_summary(draws, profile, transitions=None) -> TransitionSummary:
    """Posterior of gamma(j -> k) at covariate profile ``profile`` for each requested pair.

    ``transitions`` holds 1-based global-state pairs; default is every pair.
    """
    plist = _params_list(draws)
    if not plist:
        raise ValidationError("no draws")
    sp = plist[0].space
    G = sp.n_global
    names = _covariate_names(draws, plist)
    x = profile_vector(profile, names)
    if transitions is None:
        transitions = [(j, k) for j in range(1, G + 1) for k in range(1, G + 1)]
    transitions = [(int(j), int(k)) for j, k in transitions]
    bad = [tr for tr in transitions if not (1 <= tr[0] <= G and 1 <= tr[1] <= G)]
    if bad:
        raise ValidationError(f"unknown transition pair(s) {bad} for {G} global states")
    rows = np.array([j - 1 for j, _ in transitions])
    cols = np.array([k - 1 for _, k in transitions])
    samples = np.array([p.transition_matrix(x)[rows, cols] for p in plist])
    return TransitionSummary(transitions, samples, dict(zip(names, x.tolist())),
                             [sp.label(g) for g in range(1, G + 1)])


# -- spill-over -------------------------------------------------------------

@dataclass(eq=False)
class SpillOverReport:
    """Two-step path probabilities with and without treatment over posterior draws."""

    path: tuple
    profile: dict
    treatment: str
    lag: str | None
    treated_value: float
    untreated_value: float
    xi_z: np.ndarray
    xi_zprime: np.ndarray
    n_overflow: int = 0
    warnings: list = field(default_factory=list)

    @property
    def difference(self) -> np.ndarray:
        return self.xi_z - self.xi_zprime

    @property
    def quotient(self) -> np.ndarray:
        """Ratio per draw; ``inf`` flags draws with an untreated probability of 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self.xi_z / self.xi_zprime
        return np.where(self.xi_zprime > 0, q, np.inf)

    def _quotient_for_quantiles(self) -> np.ndarray:
        q = self.quotient
        if self.n_overflow > OVERFLOW_TOLERANCE * len(q):
            return q[np.isfinite(q)]
        return q

    def quantiles(self) -> dict:
        """Rows ``xi_z``, ``xi_zprime``, ``difference``, ``quotient``; columns 5/25/50/75/95%."""
        out = {}
        for name, v in (("xi_z", self.xi_z), ("xi_zprime", self.xi_zprime),
                        ("difference", self.difference), ("quotient", self._quotient_for_quantiles())):
            out[name] = np.quantile(v, QUANTILES) if len(v) else np.full(len(QUANTILES), np.nan)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", *QUANTILE_LABELS])
            for name, q in self.quantiles().items():
                w.writerow([name, *(repr(float(v)) for v in q)])

    def to_text(self) -> str:
        head = f"{'':>12s}" + "".join(f"{l:>10s}" for l in QUANTILE_LABELS)
        lines = [f"spill-over along {' -> '.join(map(str, self.path))}", head]
        for name, q in self.quantiles().items():
            lines.append(f"{name:>12s}" + "".join(f"{v:10.4f}" for v in q))
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def spillover(draws, profile, treatment: str = "treatment_centered", treated_value: float = 0.5,
              untreated_value: float = 0.0, path=(4, 2, 1), lag: str | None = "auto") -> SpillOverReport:
    """Probability of the two-step path ``path`` under treatment ``z`` versus ``z'``.

    The first transition uses the contemporaneous treatment set to the
    given value (its lag stays at the profile value); the second uses both
    the treatment and its lag at that value, i.e. a treatment persisting
    over both steps. ``lag="auto"`` picks ``<treatment>_lag1`` when the
    model has it; ``None`` disables the lag.
    """
    plist = _params_list(draws)
    if not plist:
        raise ValidationError("no draws")
    return _spillover(plist, _covariate_names(draws, plist), profile, treatment,
                      treated_value, untreated_value, path, lag)


def spillover_profiles(draws, profiles, **kwargs) -> list:
    """Spill-over reports for several covariate profiles (e.g. one per patient)."""
    plist = _params_list(draws)
    if not plist:
        raise ValidationError("no draws")
    names = _covariate_names(draws, plist)
    return [_spillover(plist, names, prof, **kwargs) for prof in profiles]


def _spillover(plist, names, profile, treatment="treatment_centered", treated_value=0.5,
               untreated_value=0.0, path=(4, 2, 1), lag="auto") -> SpillOverReport:
    if treatment not in names:
        raise ValidationError(f"treatment covariate {treatment!r} not in model covariates {names}")
    if lag == "auto":
        lag = f"{treatment}_lag1" if f"{treatment}_lag1" in names else None
    elif lag is not None and lag not in names:
        raise ValidationError(f"lag covariate {lag!r} not in model covariates {names}")
    G = plist[0].space.n_global
    path = tuple(int(s) for s in path)
    if len(path) != 3 or not all(1 <= s <= G for s in path):
        raise ValidationError(f"path must be three global states in 1..{G}, got {path}")
    base = profile_vector(profile, names)
    i_t = names.index(treatment)
    i_l = names.index(lag) if lag is not None else None

    def factors(z):
        x1 = base.copy()
        x1[i_t] = z
        x2 = x1.copy()
        if i_l is not None:
            x2[i_l] = z
        return x1, x2

    a, b, c = (s - 1 for s in path)
    out = {}
    for key, z in (("z", treated_value), ("zprime", untreated_value)):
        x1, x2 = factors(z)
        out[key] = np.array([
            softmax_rows(p.eta(x1))[a, b] * softmax_rows(p.eta(x2))[b, c] for p in plist
        ])
    n_over = int(np.sum(~(out["zprime"] > 0)))
    msgs = []
    if n_over > OVERFLOW_TOLERANCE * len(plist):
        msgs.append(f"{n_over} of {len(plist)} draws have untreated path probability 0; "
                    "they are excluded from the quotient quantiles")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=3)
    return SpillOverReport(path, dict(zip(names, base.tolist())), treatment, lag,
                           float(treated_value), float(untreated_value),
                           out["z"], out["zprime"], n_over, msgs)
