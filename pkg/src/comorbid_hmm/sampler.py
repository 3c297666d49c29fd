"""No-U-Turn Hamiltonian Monte Carlo with windowed warm-up adaptation.

The transition is the multinomial variant with the generalised U-turn
criterion (checked across merged subtrees as well as within them), a
diagonal inverse metric estimated in doubling windows, and dual-averaging
step-size adaptation.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import ess_bulk, split_rhat
from .errors import InitializationError, ValidationError

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
STAT_FIELDS = ("lp", "accept_stat", "step_size", "tree_depth", "n_leapfrog", "divergent", "energy")


@dataclass
class ChainConfig:
    n_chains: int = 4
    n_warmup: int = 1500
    n_sampling: int = 1500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    init_metric: str = "curvature"

    def __post_init__(self):
        for name in ("n_chains", "n_sampling", "max_tree_depth"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if int(self.n_warmup) < 0:
            raise ValidationError("n_warmup must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.init_metric not in ("unit", "curvature"):
            raise ValidationError("init_metric must be 'unit' or 'curvature'")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(eq=False)
class Draws:
    """Post-warm-up draws in the unconstrained space.

    ``samples`` has shape ``(chains, iterations, dim)``; ``stats`` maps each
    of :data:`STAT_FIELDS` to a ``(chains, iterations)`` array. Divergent
    iterations are kept and flagged.
    """

    samples: np.ndarray
    names: list
    stats: dict
    adaptation: list = field(default_factory=list)
    transform: object = None

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.samples.shape[1]

    @property
    def n_draws(self) -> int:
        return self.samples.shape[0] * self.samples.shape[1]

    @property
    def divergences(self) -> int:
        return int(np.sum(self.stats["divergent"]))

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[2])

    def iter_params(self):
        """Constrained :class:`Parameters` for every draw, chain-major."""
        if self.transform is None:
            raise ValidationError("draws carry no transform; constrained view unavailable")
        for theta in self.flat():
            yield self.transform.constrain(theta)[0]

    def params(self, index: int):
        return self.transform.constrain(self.flat()[index])[0]

    def constrained(self) -> np.ndarray:
        """Constrained parameter array ``(chains, iterations, n_constrained)``."""
        flat = np.array([self.transform.flatten(p) for p in self.iter_params()])
        return flat.reshape(self.n_chains, self.n_iterations, -1)

    def constrained_names(self) -> list:
        return self.transform.constrained_names()

    def to_csv(self, path, constrained: bool = True) -> None:
        """Write ``chain,iter,<param names>`` rows (1-based chain and iteration)."""
        values = self.constrained() if constrained else self.samples
        names = self.constrained_names() if constrained else self.names
        _write_chain_table(path, names, values)

    def stats_to_csv(self, path) -> None:
        values = np.stack([self.stats[k] for k in STAT_FIELDS], axis=2).astype(float)
        _write_chain_table(path, list(STAT_FIELDS), values)

    @classmethod
    def from_csv(cls, path, stats_path=None, adaptation=None, transform=None) -> "Draws":
        """Rebuild draws from an unconstrained-draws CSV and optional sampler-stats CSV."""
        names, samples = _read_chain_table(path)
        if stats_path is not None:
            stat_names, st = _read_chain_table(stats_path)
            stats = {k: st[:, :, i] for i, k in enumerate(stat_names)}
        else:
            stats = {k: np.zeros(samples.shape[:2]) for k in STAT_FIELDS}
        stats["divergent"] = stats["divergent"].astype(bool)
        for k in ("tree_depth", "n_leapfrog"):
            stats[k] = stats[k].astype(int)
        return cls(samples, names, stats, list(adaptation or []), transform)


def _write_chain_table(path, names, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iter", *names])
        for c in range(values.shape[0]):
            for i in range(values.shape[1]):
                w.writerow([c + 1, i + 1, *(repr(float(v)) for v in values[c, i])])


def _read_chain_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["chain", "iter"]:
            raise ValidationError(f"{path}: expected header starting with chain,iter")
        rows = [r for r in reader if r]
    chains = np.array([int(r[0]) for r in rows])
    iters = np.array([int(r[1]) for r in rows])
    n_c, n_i = chains.max(), iters.max()
    if len(rows) != n_c * n_i:
        raise ValidationError(f"{path}: ragged chain table ({len(rows)} rows for {n_c} x {n_i})")
    out = np.empty((n_c, n_i, len(header) - 2))
    for r, c, i in zip(rows, chains, iters):
        out[c - 1, i - 1] = [float(v) for v in r[2:]]
    return header[2:], out


@dataclass
class Diagnostics:
    """Per-parameter split-R-hat and bulk ESS plus the divergence count."""

    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergences: int
    n_draws: int

    @classmethod
    def from_draws(cls, draws: Draws, constrained: bool = True) -> "Diagnostics":
        values = draws.constrained() if constrained and draws.transform is not None else draws.samples
        names = draws.constrained_names() if constrained and draws.transform is not None else draws.names
        rhat = np.array([split_rhat(values[:, :, i]) for i in range(values.shape[2])])
        ess = np.array([ess_bulk(values[:, :, i]) for i in range(values.shape[2])])
        diag = cls(list(names), rhat, ess, draws.divergences, draws.n_draws)
        diag._values = values
        return diag

    def max_rhat(self) -> float:
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")

    def converged(self, threshold: float = 1.1) -> bool:
        """All defined R-hat values below ``threshold``.

        Parameters with zero within-chain variance have an undefined R-hat;
        they count as a failure unless every chain is constant at the same
        value (a structurally fixed parameter).
        """
        for i, r in enumerate(self.rhat):
            if np.isnan(r):
                vals = getattr(self, "_values", None)
                if vals is None or np.ptp(vals[:, :, i]) > 0:
                    return False
            elif not r < threshold:
                return False
        return True

    def divergence_rate(self) -> float:
        return self.divergences / max(self.n_draws, 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "rhat", "ess_bulk"])
            for n, r, e in zip(self.names, self.rhat, self.ess_bulk):
                w.writerow([n, repr(float(r)), repr(float(e))])

    def write_traceplots(self, directory) -> list:
        """One ``chain,iter,value`` CSV per parameter; returns the written paths."""
        values = getattr(self, "_values", None)
        if values is None:
            raise ValidationError("diagnostics were not built from draws; no trace data")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, name in enumerate(self.names):
            path = directory / f"{trace_filename(name)}.csv"
            _write_chain_table(path, ["value"], values[:, :, i:i + 1])
            paths.append(path)
        return paths


def trace_filename(name: str) -> str:
    """File-system safe stem for a parameter name, e.g. ``beta[4,2,x]`` -> ``beta_4_2_x``."""
    return re.sub(r"_+$", "", re.sub(r"[^A-Za-z0-9.-]+", "_", name))


# -- dual averaging and metric windows ------------------------------------

class StepSizeAdapter:
    def __init__(self, target: float, gamma=0.05, kappa=0.75, t0=10.0):
        self.target, self.gamma, self.kappa, self.t0 = target, gamma, kappa, t0
        self.restart(1.0)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class MetricWindows:
    """Staged adaptation windows: initial buffer, doubling slow windows, terminal buffer."""

    def __init__(self, n_warmup: int, init_buffer=75, term_buffer=50, base_window=25):
        self.n_warmup = n_warmup
        if n_warmup < 20:
            self.init_buffer, self.term_buffer, self.window = n_warmup, 0, 0
        elif init_buffer + term_buffer + base_window > n_warmup:
            self.init_buffer = int(0.15 * n_warmup)
            self.term_buffer = int(0.1 * n_warmup)
            self.window = n_warmup - (self.init_buffer + self.term_buffer)
        else:
            self.init_buffer, self.term_buffer, self.window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.next_end = self.init_buffer + self.window - 1
        self._samples = []

    def in_window(self) -> bool:
        return (self.window > 0 and self.init_buffer <= self.counter < self.n_warmup - self.term_buffer
                and self.counter != self.n_warmup)

    def _end_window(self) -> bool:
        return self.window > 0 and self.counter == self.next_end and self.counter != self.n_warmup

    def _advance(self):
        last = self.n_warmup - self.term_buffer - 1
        if self.next_end == last:
            return
        self.window *= 2
        self.next_end = self.counter + self.window
        if self.next_end != last and self.next_end + 2 * self.window >= self.n_warmup - self.term_buffer:
            self.next_end = last

    def observe(self, q):
        """Record a warm-up draw; returns a new inverse metric when a window closes."""
        if self.in_window():
            self._samples.append(np.array(q))
        if self._end_window():
            self._advance()
            s = np.array(self._samples)
            n = len(s)
            var = s.var(axis=0, ddof=1) if n > 1 else np.ones(s.shape[1])
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._samples = []
            self.counter += 1
            return var
        self.counter += 1
        return None


# -- the NUTS transition --------------------------------------------------

class _Tree:
    __slots__ = ("q", "p", "lp", "grad", "q_prop", "lp_prop", "grad_prop", "p_beg", "p_end",
                 "ps_beg", "ps_end", "rho", "log_w", "valid", "n_leapfrog", "sum_metro", "divergent")


class NUTS:
    def __init__(self, logp_grad, inv_metric, step_size, max_depth, rng):
        self.f = logp_grad
        self.inv_metric = inv_metric
        self.step_size = step_size
        self.max_depth = max_depth
        self.rng = rng

    def _leapfrog(self, q, p, grad, eps):
        p = p + 0.5 * eps * grad
        q = q + eps * self.inv_metric * p
        lp, grad = self.f(q)
        p = p + 0.5 * eps * grad
        return q, p, lp, grad

    def _hamiltonian(self, lp, p):
        return -lp + 0.5 * float(np.dot(p, self.inv_metric * p))

    def _criterion(self, ps_minus, ps_plus, rho) -> bool:
        return float(np.dot(ps_plus, rho)) > 0 and float(np.dot(ps_minus, rho)) > 0

    def _build(self, q, p, lp, grad, depth, direction, H0) -> _Tree:
        eps = direction * self.step_size
        if depth == 0:
            t = _Tree()
            q, p, lp, grad = self._leapfrog(q, p, grad, eps)
            h = self._hamiltonian(lp, p)
            if not np.isfinite(h):
                h = np.inf
            t.divergent = (h - H0) > MAX_DELTA_H
            t.q, t.p, t.lp, t.grad = q, p, lp, grad
            t.q_prop, t.lp_prop, t.grad_prop = q, lp, grad
            t.log_w = H0 - h
            t.sum_metro = 1.0 if H0 - h > 0 else math.exp(H0 - h)
            t.n_leapfrog = 1
            t.p_beg = t.p_end = p
            t.ps_beg = t.ps_end = self.inv_metric * p
            t.rho = p.copy()
            t.valid = not t.divergent
            return t

        init = self._build(q, p, lp, grad, depth - 1, direction, H0)
        if not init.valid:
            return init
        final = self._build(init.q, init.p, init.lp, init.grad, depth - 1, direction, H0)
        t = final
        t.n_leapfrog = init.n_leapfrog + final.n_leapfrog
        t.sum_metro = init.sum_metro + final.sum_metro
        t.divergent = final.divergent
        if not final.valid:
            return t
        log_w = np.logaddexp(init.log_w, final.log_w)
        if not (final.log_w > log_w or self.rng.random() < math.exp(final.log_w - log_w)):
            t.q_prop, t.lp_prop, t.grad_prop = init.q_prop, init.lp_prop, init.grad_prop
        rho = init.rho + final.rho
        ok = self._criterion(init.ps_beg, final.ps_end, rho)
        ok = ok and self._criterion(init.ps_beg, final.ps_beg, init.rho + final.p_beg)
        ok = ok and self._criterion(init.ps_end, final.ps_end, final.rho + init.p_end)
        t.valid = ok
        t.log_w = log_w
        t.rho = rho
        t.p_beg, t.ps_beg = init.p_beg, init.ps_beg
        return t

    def transition(self, q, lp, grad):
        rng = self.rng
        p = rng.standard_normal(len(q)) / np.sqrt(self.inv_metric)
        H0 = self._hamiltonian(lp, p)
        ps = self.inv_metric * p
        # outermost states of the trajectory and the momenta at its two ends
        fwd = {"q": q, "p": p, "lp": lp, "grad": grad, "ps": ps}
        bck = dict(fwd)
        rho = p.copy()
        log_w = 0.0
        sample = (q, lp, grad)
        depth = n_leapfrog = 0
        sum_metro = 0.0
        divergent = False

        while depth < self.max_depth:
            direction = 1 if rng.random() > 0.5 else -1
            end = fwd if direction == 1 else bck
            tree = self._build(end["q"], end["p"], end["lp"], end["grad"], depth, direction, H0)
            n_leapfrog += tree.n_leapfrog
            sum_metro += tree.sum_metro
            divergent = divergent or tree.divergent
            if not tree.valid:
                break
            depth += 1
            if tree.log_w > log_w or rng.random() < math.exp(tree.log_w - log_w):
                sample = (tree.q_prop, tree.lp_prop, tree.grad_prop)
            log_w = np.logaddexp(log_w, tree.log_w)
            rho_total = rho + tree.rho
            if direction == 1:
                ok = (self._criterion(bck["ps"], tree.ps_end, rho_total)
                      and self._criterion(bck["ps"], tree.ps_beg, rho + tree.p_beg)
                      and self._criterion(fwd["ps"], tree.ps_end, tree.rho + fwd["p"]))
            else:
                ok = (self._criterion(tree.ps_end, fwd["ps"], rho_total)
                      and self._criterion(tree.ps_end, bck["ps"], tree.rho + bck["p"])
                      and self._criterion(tree.ps_beg, fwd["ps"], rho + tree.p_beg))
            end.update(q=tree.q, p=tree.p, lp=tree.lp, grad=tree.grad, ps=tree.ps_end)
            rho = rho_total
            if not ok:
                break

        q_new, lp_new, grad_new = sample
        info = {
            "accept_stat": sum_metro / max(n_leapfrog, 1),
            "tree_depth": depth,
            "n_leapfrog": n_leapfrog,
            "divergent": divergent,
            "energy": H0,
            "lp": lp_new,
            "step_size": self.step_size,
        }
        return q_new, lp_new, grad_new, info

    def find_reasonable_step_size(self, q, lp, grad):
        """Double or halve the step until one leapfrog step crosses acceptance 0.8."""
        rng = self.rng
        eps = self.step_size

        def delta(eps):
            p = rng.standard_normal(len(q)) / np.sqrt(self.inv_metric)
            H0 = self._hamiltonian(lp, p)
            _, p1, lp1, _ = self._leapfrog(q, p, grad, eps)
            h = self._hamiltonian(lp1, p1)
            return H0 - h if np.isfinite(h) else -np.inf

        direction = 1 if delta(eps) > math.log(0.8) else -1
        for _ in range(100):
            d = delta(eps)
            if direction == 1 and not d > math.log(0.8):
                break
            if direction == -1 and not d < math.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
        self.step_size = min(max(eps, 1e-12), 1e7)
        return self.step_size


def curvature_metric(logp_grad, q, h: float = 1e-4, lower: float = 1e-8, upper: float = 10.0):
    """Starting inverse metric from the diagonal curvature of the log density at ``q``.

    Each diagonal second derivative is a central difference of the
    gradient; directions that are flat, convex or non-finite keep variance 1.
    """
    q = np.asarray(q, dtype=float)
    var = np.ones(len(q))
    for i in range(len(q)):
        step = np.zeros(len(q))
        step[i] = h
        hii = (logp_grad(q + step)[1][i] - logp_grad(q - step)[1][i]) / (2.0 * h)
        if np.isfinite(hii) and hii < 0:
            var[i] = min(max(-1.0 / hii, lower), upper)
    return var


def _random_init(rng, dim, logp_grad, radius=2.0, attempts=100):
    tried = []
    for _ in range(attempts):
        q = rng.uniform(-radius, radius, dim)
        lp, grad = logp_grad(q)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            return q
        tried.append(q)
    raise InitializationError(
        f"no finite starting point after {attempts} attempts; first tried: {tried[:3]}"
    )


def run_chain(logp_grad, q0, config: ChainConfig, rng, chain: int = 0, progress=None):
    """Warm up and sample one chain. Returns (samples, stats, adaptation)."""
    q0 = np.asarray(q0, dtype=float)
    lp, grad = logp_grad(q0)
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        raise InitializationError(f"chain {chain}: non-finite log density at initial point {q0.tolist()}")
    dim = len(q0)
    inv_metric = np.ones(dim)
    if config.init_metric == "curvature" and config.n_warmup > 0:
        inv_metric = curvature_metric(logp_grad, q0)
    nuts = NUTS(logp_grad, inv_metric, 1.0, config.max_tree_depth, rng)
    if config.n_warmup > 0:
        nuts.find_reasonable_step_size(q0, lp, grad)
    adapter = StepSizeAdapter(config.target_accept)
    adapter.restart(nuts.step_size)
    windows = MetricWindows(config.n_warmup, config.init_buffer, config.term_buffer, config.base_window)
    q = q0
    total = config.n_warmup + config.n_sampling
    samples = np.empty((config.n_sampling, dim))
    stats = {k: np.empty(config.n_sampling) for k in STAT_FIELDS}
    for it in range(total):
        q, lp, grad, info = nuts.transition(q, lp, grad)
        if it < config.n_warmup:
            nuts.step_size = adapter.learn(info["accept_stat"])
            var = windows.observe(q)
            if var is not None:
                nuts.inv_metric = var
                nuts.find_reasonable_step_size(q, lp, grad)
                adapter.restart(nuts.step_size)
            if it == config.n_warmup - 1:
                nuts.step_size = adapter.final()
        else:
            k = it - config.n_warmup
            samples[k] = q
            for key in STAT_FIELDS:
                stats[key][k] = info[key]
        if progress is not None:
            progress(chain, it + 1, total, info)
    adaptation = {
        "chain": chain,
        "step_size": nuts.step_size,
        "inv_metric": nuts.inv_metric.tolist(),
        "init": q0.tolist(),
    }
    return samples, stats, adaptation


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(chain)])


def nuts_sample(logp_grad, config: ChainConfig, init=None, dim=None, progress=None,
                transform=None, names=None) -> Draws:
    """Run ``config.n_chains`` independent NUTS chains.

    ``logp_grad(q)`` returns ``(log density, gradient)``. ``init`` is a list of
    starting points (one per chain); when omitted, points are drawn uniformly
    from ``(-2, 2)`` until the density is finite.
    """
    if init is None and dim is None:
        raise ValidationError("either init points or the dimension must be given")
    all_samples, all_stats, adaptation = [], [], []
    for c in range(config.n_chains):
        rng = chain_rng(config.seed, c)
        q0 = _random_init(rng, dim, logp_grad) if init is None else np.asarray(init[c], dtype=float)
        s, st, ad = run_chain(logp_grad, q0, config, rng, chain=c, progress=progress)
        all_samples.append(s)
        all_stats.append(st)
        adaptation.append(ad)
        log.info("chain %d done: step size %.3g, %d divergences", c, ad["step_size"], int(st["divergent"].sum()))
    samples = np.stack(all_samples)
    stats = {k: np.stack([st[k] for st in all_stats]) for k in STAT_FIELDS}
    stats["divergent"] = stats["divergent"].astype(bool)
    stats["tree_depth"] = stats["tree_depth"].astype(int)
    stats["n_leapfrog"] = stats["n_leapfrog"].astype(int)
    if names is None:
        names = transform.unconstrained_names() if transform is not None else [f"q[{i}]" for i in range(samples.shape[2])]
    return Draws(samples, list(names), stats, adaptation, transform)


# -- data-driven initialisation ---------------------------------------------

def _split_means(y, k: int, n_iter: int = 20):
    """1-D k-means seeded at quantile splits; returns sorted centres and pooled SD."""
    y = np.asarray(y, dtype=float)
    if k == 1:
        return np.array([y.mean()]), float(y.std())
    centres = np.array([np.mean(part) for part in np.array_split(np.sort(y), k)])
    for _ in range(n_iter):
        labels = np.argmin(np.abs(y[:, None] - centres[None, :]), axis=1)
        new = np.array([y[labels == j].mean() if np.any(labels == j) else centres[j] for j in range(k)])
        if np.allclose(new, centres):
            break
        centres = new
    centres = np.sort(centres)
    labels = np.argmin(np.abs(y[:, None] - centres[None, :]), axis=1)
    sd = float(np.sqrt(np.mean((y - centres[labels]) ** 2)))
    if np.any(np.diff(centres) <= 0):
        centres = centres.mean() + np.linspace(-0.01, 0.01, k)
    return centres, sd


def initialize_chains(model, data, config: ChainConfig, logpost=None, attempts: int = 100) -> list:
    """Data-driven starting points, one per chain, in the unconstrained space.

    Emission means come from a quantile-seeded split of the pooled
    observations of each disease, SDs from the within-cluster spread, the
    initial distribution is uniform and transition intercepts/coefficients
    are jittered uniformly on (-2, 2). Each chain is retried until the log
    posterior is finite.
    """
    from .likelihood import LogPosterior
    from .model import Parameters

    if logpost is None:
        logpost = LogPosterior(data, model)
    transform = model.transform()
    sp = model.space
    ya = np.concatenate([pt.y_a for pt in data.patients]) if data.n_patients else np.zeros(1)
    yb = np.concatenate([pt.y_b for pt in data.patients]) if data.n_patients else np.zeros(1)
    mu_a, sd_a = _split_means(ya, sp.n_a)
    mu_b, sd_b = _split_means(yb, sp.n_b)
    G = sp.n_global
    base = Parameters(
        mu_a, mu_b, max(sd_a, 1e-3), max(sd_b, 1e-3), np.full(G, 1.0 / G),
        np.zeros((G, G)), np.zeros((G, G, transform.p)),
    )
    theta0 = transform.unconstrain(base)
    jitter = np.r_[transform.slices["alpha"].start:transform.slices["beta"].stop]
    inits = []
    for c in range(config.n_chains):
        rng = np.random.default_rng([int(config.seed), int(c), 1])
        tried = []
        for _ in range(attempts):
            theta = theta0.copy()
            theta[jitter] = rng.uniform(-2.0, 2.0, len(jitter))
            lp, grad = logpost(theta)
            if np.isfinite(lp) and np.all(np.isfinite(grad)):
                inits.append(theta)
                break
            tried.append(theta)
        else:
            raise InitializationError(
                f"chain {c}: log posterior non-finite at all {attempts} initial points; "
                f"first tried: {[t.tolist() for t in tried[:2]]}"
            )
    return inits
