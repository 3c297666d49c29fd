"""Panel data containers, CSV I/O, covariate engineering and the simulator."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .model import Parameters, softmax_rows

REQUIRED_COLUMNS = ("patient_id", "t", "y_a", "y_b")


@dataclass(frozen=True, eq=False)
class PatientSeries:
    id: str
    t: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        for name in ("t", "y_a", "y_b", "x"):
            arr = np.asarray(getattr(self, name), dtype=np.int64 if name == "t" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.x.ndim == 1:
            object.__setattr__(self, "x", self.x.reshape(len(self.t), -1))

    @property
    def length(self) -> int:
        return len(self.t)

    def __eq__(self, other):
        return (
            isinstance(other, PatientSeries)
            and self.id == other.id
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("t", "y_a", "y_b", "x"))
        )


@dataclass(frozen=True, eq=False)
class PanelDataset:
    patients: tuple
    covariate_names: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        p = len(self.covariate_names)
        for pt in self.patients:
            if pt.length < 2:
                raise DataError(f"patient {pt.id}: needs at least 2 time steps, has {pt.length}")
            if pt.x.shape != (pt.length, p):
                raise DataError(f"patient {pt.id}: covariate matrix shape {pt.x.shape}, expected {(pt.length, p)}")
            if not (np.all(np.isfinite(pt.y_a)) and np.all(np.isfinite(pt.y_b)) and np.all(np.isfinite(pt.x))):
                raise DataError(f"patient {pt.id}: non-finite observation or covariate")
            if not np.array_equal(pt.t, np.arange(1, pt.length + 1)):
                raise DataError(f"patient {pt.id}: time index must run 1..T contiguously")

    def __eq__(self, other):
        return (
            isinstance(other, PanelDataset)
            and self.covariate_names == other.covariate_names
            and self.patients == other.patients
        )

    def __len__(self):
        return len(self.patients)

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_rows(self) -> int:
        return sum(pt.length for pt in self.patients)

    @property
    def ids(self) -> list[str]:
        return [pt.id for pt in self.patients]

    def column_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise ValidationError(
                f"unknown covariate {name!r}; available: {list(self.covariate_names)}"
            ) from None

    def covariate_matrix(self, names=None) -> np.ndarray:
        if not self.patients:
            return np.zeros((0, len(self.covariate_names if names is None else names)))
        X = np.vstack([pt.x for pt in self.patients])
        if names is None:
            return X
        return X[:, [self.column_index(n) for n in names]]

    def covariate_means(self, names=None) -> np.ndarray:
        return self.covariate_matrix(names).mean(axis=0)

    def select(self, names) -> "PanelDataset":
        """Dataset restricted to the given covariates, in that order."""
        idx = [self.column_index(n) for n in names]
        pts = [PatientSeries(pt.id, pt.t, pt.y_a, pt.y_b, pt.x[:, idx]) for pt in self.patients]
        return PanelDataset(pts, tuple(names), dict(self.meta))

    def with_column(self, name: str, columns) -> "PanelDataset":
        if name in self.covariate_names:
            raise ValidationError(f"covariate {name!r} already exists")
        pts = [
            PatientSeries(pt.id, pt.t, pt.y_a, pt.y_b, np.column_stack([pt.x, col]))
            for pt, col in zip(self.patients, columns)
        ]
        return PanelDataset(pts, self.covariate_names + (name,), dict(self.meta))

    def subset(self, indices) -> "PanelDataset":
        return PanelDataset([self.patients[i] for i in indices], self.covariate_names, dict(self.meta))


@dataclass
class CovariateSpec:
    """Which covariate columns to read and which columns to log-transform on load."""

    covariates: tuple | None = None
    log_transform: tuple = ()


def _fmt(v: float) -> str:
    return np.format_float_positional(float(v), unique=True, trim="-")


def write_panel(data: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS) + list(data.covariate_names))
        for pt in data.patients:
            for r in range(pt.length):
                w.writerow(
                    [pt.id, int(pt.t[r]), _fmt(pt.y_a[r]), _fmt(pt.y_b[r])]
                    + [_fmt(v) for v in pt.x[r]]
                )


def load_panel(path, schema: CovariateSpec | None = None) -> PanelDataset:
    """Read a panel CSV (``patient_id,t,y_a,y_b,<covariates...>``)."""
    schema = schema or CovariateSpec()
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s) {missing}")
        extra = [h for h in header if h not in REQUIRED_COLUMNS]
        covs = list(extra if schema.covariates is None else schema.covariates)
        absent = [c for c in covs if c not in header]
        if absent:
            raise DataError(f"{path}: missing covariate column(s) {absent}")
        unknown_log = [c for c in schema.log_transform if c not in header or c in ("patient_id", "t")]
        if unknown_log:
            raise DataError(f"{path}: cannot log-transform column(s) {unknown_log}")
        col = {h: i for i, h in enumerate(header)}
        value_cols = ["y_a", "y_b"] + covs

        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            pid = row[col["patient_id"]].strip()
            try:
                t = int(row[col["t"]])
            except ValueError:
                raise DataError(f"{path}: row {lineno} (patient {pid}): invalid time index {row[col['t']]!r}") from None
            vals = []
            for c in value_cols:
                raw = row[col[c]].strip()
                try:
                    v = float(raw)
                except ValueError:
                    raise DataError(f"{path}: row {lineno} (patient {pid}): column {c} value {raw!r} is not numeric") from None
                if c in schema.log_transform:
                    if not v > 0:
                        raise DataError(f"{path}: row {lineno} (patient {pid}): cannot log-transform {c}={raw}")
                    v = math.log(v)
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno} (patient {pid}): column {c} is not finite")
                vals.append(v)
            groups.setdefault(pid, []).append((t, lineno, vals))

    patients = []
    for pid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        ts = [r[0] for r in rows]
        if len(rows) < 2:
            raise DataError(f"{path}: patient {pid} has {len(rows)} time step(s) (row {rows[0][1]}); at least 2 required")
        for k, (t, lineno, _) in enumerate(rows):
            if t != k + 1:
                raise DataError(f"{path}: patient {pid}: non-contiguous time index at row {lineno} (t={t}, expected {k + 1})")
        v = np.array([r[2] for r in rows])
        patients.append(PatientSeries(pid, ts, v[:, 0], v[:, 1], v[:, 2:]))
    return PanelDataset(patients, covs, {"source": str(path)})


def center_within(data: PanelDataset, var: str) -> PanelDataset:
    """Append ``<var>_centered``: the covariate minus its per-patient mean."""
    j = data.column_index(var)
    cols = [pt.x[:, j] - pt.x[:, j].mean() for pt in data.patients]
    return data.with_column(f"{var}_centered", cols)


def lag_covariate(data: PanelDataset, var: str, lag: int = 1) -> PanelDataset:
    """Append ``<var>_lag<lag>``; steps before the lag horizon are filled with 0."""
    if int(lag) < 1:
        raise ValidationError(f"lag must be >= 1, got {lag}")
    lag = int(lag)
    j = data.column_index(var)
    cols = []
    for pt in data.patients:
        out = np.zeros(pt.length)
        if lag < pt.length:
            out[lag:] = pt.x[:-lag, j]
        cols.append(out)
    return data.with_column(f"{var}_lag{lag}", cols)


def derive_covariates(data: PanelDataset, center=(), lags=(), skip_existing: bool = False) -> PanelDataset:
    """Center first, then lag; lag directives are ``(name, lag)`` pairs.

    With ``skip_existing`` a directive whose output column is already
    present (e.g. in a simulated panel) is skipped instead of rejected.
    """
    for var in center:
        if not (skip_existing and f"{var}_centered" in data.covariate_names):
            data = center_within(data, var)
    for var, lag in lags:
        if not (skip_existing and f"{var}_lag{int(lag)}" in data.covariate_names):
            data = lag_covariate(data, var, lag)
    return data


# -- simulation -----------------------------------------------------------

GENERATOR_KINDS = ("normal", "constant", "linear", "bernoulli")


@dataclass
class CovariateGenerator:
    """One raw simulated covariate plus its derived columns.

    Kinds: ``normal`` (i.i.d. per step), ``constant`` (per-patient draw, e.g.
    age at baseline), ``linear`` (per-patient start plus ``slope * (t - 1)``,
    e.g. time since diagnosis), ``bernoulli`` (binary treatment with ``rate``).
    """

    name: str
    kind: str = "normal"
    loc: float = 0.0
    scale: float = 1.0
    slope: float = 0.25
    rate: float = 0.3
    center: bool = False
    lags: tuple = ()

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValidationError(f"unknown covariate generator kind {self.kind!r}")
        self.lags = tuple(int(l) for l in self.lags)

    def draw(self, rng: np.random.Generator, T: int) -> np.ndarray:
        if self.kind == "normal":
            return self.loc + self.scale * rng.standard_normal(T)
        if self.kind == "constant":
            return np.full(T, self.loc + self.scale * rng.standard_normal())
        if self.kind == "linear":
            return self.loc + self.scale * rng.standard_normal() + self.slope * np.arange(T)
        return (rng.random(T) < self.rate).astype(float)

    def output_names(self) -> list[str]:
        base = f"{self.name}_centered" if self.center else self.name
        names = [self.name] + ([base] if self.center else [])
        return names + [f"{base}_lag{l}" for l in self.lags]


@dataclass
class SimulationConfig:
    n_patients: int
    t_min: int
    t_max: int
    true_params: Parameters
    covariate_generators: list = field(default_factory=list)
    model_covariates: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.t_min < 2 or self.t_max < self.t_min:
            raise ValidationError(f"need 2 <= t_min <= t_max, got ({self.t_min}, {self.t_max})")
        if self.n_patients < 1:
            raise ValidationError("n_patients must be >= 1")
        self.covariate_generators = [
            g if isinstance(g, CovariateGenerator) else CovariateGenerator(**g)
            for g in self.covariate_generators
        ]
        if self.model_covariates is None:
            self.model_covariates = tuple(n for g in self.covariate_generators for n in g.output_names())
        self.model_covariates = tuple(self.model_covariates)
        available = {n for g in self.covariate_generators for n in g.output_names()}
        unknown = [n for n in self.model_covariates if n not in available]
        if unknown:
            raise ValidationError(f"model covariates {unknown} are not produced by any generator")
        if self.true_params.n_covariates != len(self.model_covariates):
            raise ValidationError(
                f"true_params has {self.true_params.n_covariates} covariate coefficients, "
                f"model uses {len(self.model_covariates)}"
            )

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "true_params": self.true_params.to_dict(),
            "covariate_generators": [
                {**asdict(g), "lags": list(g.lags)} for g in self.covariate_generators
            ],
            "model_covariates": list(self.model_covariates),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        d["true_params"] = Parameters.from_dict(d["true_params"])
        return cls(**d)


def simulate_dataset(config: SimulationConfig, return_states: bool = False):
    """Draw a synthetic cohort from the coupled model.

    Returns the dataset (all raw and derived covariate columns), and with
    ``return_states`` also the list of 1-based global state paths.
    """
    params = config.true_params
    params.validate()
    space = params.space
    sa, sb = space.state_a, space.state_b
    rng = np.random.default_rng(config.seed)

    ids, lengths, raw = [], [], []
    for i in range(config.n_patients):
        T = int(rng.integers(config.t_min, config.t_max + 1))
        lengths.append(T)
        ids.append(f"P{i + 1:04d}")
        raw.append(np.column_stack([g.draw(rng, T) for g in config.covariate_generators])
                   if config.covariate_generators else np.zeros((T, 0)))

    names = [g.name for g in config.covariate_generators]
    dummy = PanelDataset(
        [PatientSeries(pid, np.arange(1, T + 1), np.zeros(T), np.zeros(T), x)
         for pid, T, x in zip(ids, lengths, raw)],
        names,
    )
    for g in config.covariate_generators:
        if g.center:
            dummy = center_within(dummy, g.name)
        base = f"{g.name}_centered" if g.center else g.name
        for lag in g.lags:
            dummy = lag_covariate(dummy, base, lag)
    model_idx = [dummy.column_index(n) for n in config.model_covariates]

    patients, paths = [], []
    for pt in dummy.patients:
        T = pt.length
        X = pt.x[:, model_idx]
        s = np.empty(T, dtype=np.int64)
        s[0] = rng.choice(space.n_global, p=params.pi)
        for t in range(T - 1):
            row = softmax_rows(params.eta(X[t])[s[t]])
            s[t + 1] = rng.choice(space.n_global, p=row)
        y_a = params.mu_a[sa[s]] + params.sigma_a * rng.standard_normal(T)
        y_b = params.mu_b[sb[s]] + params.sigma_b * rng.standard_normal(T)
        patients.append(PatientSeries(pt.id, pt.t, y_a, y_b, pt.x))
        paths.append(s + 1)
    data = PanelDataset(patients, dummy.covariate_names, {"source": "simulation", "seed": config.seed})
    return (data, paths) if return_states else data


def load_simulation_config(path) -> SimulationConfig:
    return SimulationConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def demo_parameters(treatment_effect: float = 2.0) -> Parameters:
    """Reference truth for the bundled demo cohort.

    Emissions sit at glucose-like (A) and a second log-scale marker (B)
    levels with two states each. Off-diagonal intercepts make single-disease
    changes rare and double changes rarer; worsening of A is more likely
    when B is already acute (intercept of (1,2)->(2,2) exceeds that of
    (1,1)->(2,1) by 2). ``treatment_effect`` is the coefficient of the
    centred treatment on the (2,2)->(1,2) transition.
    """
    G = 4
    alpha = np.array([
        [0.0, -2.5, -3.0, -4.0],
        [-2.5, 0.0, -4.0, -1.0],
        [-2.5, -4.0, 0.0, -2.5],
        [-4.0, -2.5, -2.5, 0.0],
    ])
    beta = np.zeros((G, G, len(DEMO_COVARIATES)))
    beta[3, 1, DEMO_COVARIATES.index("treatment_centered")] = treatment_effect
    return Parameters([4.55, 4.70], [2.86, 3.43], 0.09, 0.30, [0.4, 0.2, 0.2, 0.2], alpha, beta)


DEMO_COVARIATES = ("age", "time", "treatment_centered", "treatment_centered_lag1")


def demo_simulation_config(n_patients: int = 200, seed: int = 11, treatment_effect: float = 2.0,
                           t_min: int = 4, t_max: int = 10) -> SimulationConfig:
    """Simulation set-up with baseline age, time since diagnosis and a centred, lagged treatment."""
    gens = [
        CovariateGenerator("age", "constant", 0.0, 1.0),
        CovariateGenerator("time", "linear", -1.0, 0.5, slope=0.25),
        CovariateGenerator("treatment", "bernoulli", rate=0.4, center=True, lags=(1,)),
    ]
    return SimulationConfig(n_patients, t_min, t_max, demo_parameters(treatment_effect), gens,
                            DEMO_COVARIATES, seed)
