"""Command-line interface: ``comorbid-hmm <subcommand> [--config run.json] [flags]``.

Settings resolve as flag > config file > built-in default. Outputs go to
``--out`` (or the config's ``output_dir``), relative to ``$COMORBID_HMM_OUTPUT_ROOT``
when that is set. Exit codes: 0 success, 2 usage/config error, 3 data
validation error, 4 numerical failure, 5 non-convergence under ``--strict``.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from .compare import fit_variants, variant_name
from .data import (CovariateSpec, PanelDataset, SimulationConfig, demo_simulation_config,
                   derive_covariates, load_panel, simulate_dataset, write_panel)
from .errors import InitializationError, NumericalError, ValidationError
from .fitting import FitResult, fit_model
from .inference import (conditional_transition_summary, decode_table, mean_profile,
                        posterior_mean_params, posterior_predictive, spillover)
from .sampler import ChainConfig

log = logging.getLogger("comorbid_hmm")

OUTPUT_ROOT_ENV = "COMORBID_HMM_OUTPUT_ROOT"
LOCK_NAME = ".lock"
PANEL = "panel.csv"
TRUTH = "truth.json"
SIMULATION = "simulation.json"
FIT_DIR = "fit"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4, 5

DEFAULTS = {
    "seed": 0,
    "output_dir": "run",
    "strict": False,
    "data": {"path": None, "log_transform": [], "simulation": None},
    "model": {"n_a": 2, "n_b": 2, "covariates": None, "center": [], "lags": [], "use_qr": True},
    "sampler": {"n_chains": 4, "n_warmup": 1500, "n_sampling": 1500, "target_accept": 0.8,
                "max_tree_depth": 10},
    "ppc": {"n_rep": 200},
    "spillover": {"treatment": "treatment_centered", "treated_value": 0.5, "untreated_value": 0.0,
                  "path": [4, 2, 1], "lag": "auto", "profile": None},
    "compare": {"variants": [[2, 2], [1, 2], [2, 1]]},
}


class ConfigError(ValidationError):
    """Invalid or inconsistent run configuration (exit code 2)."""


class NonConvergence(RuntimeError):
    pass


# -- configuration ------------------------------------------------------------

def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config field {path + k!r}")
        if isinstance(base[k], dict) and k != "simulation" and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"config field {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _flag_overrides(args) -> dict:
    """Config-shaped overrides from flags that were given explicitly."""
    o: dict = {}

    def put(section, key, value):
        if value is not None:
            (o.setdefault(section, {}) if section else o)[key] = value

    put(None, "seed", getattr(args, "seed", None))
    put(None, "output_dir", getattr(args, "out", None))
    if getattr(args, "strict", False):
        o["strict"] = True
    put("data", "path", getattr(args, "data", None))
    put("model", "n_a", getattr(args, "n_a", None))
    put("model", "n_b", getattr(args, "n_b", None))
    cov = getattr(args, "covariates", None)
    if cov is not None:
        put("model", "covariates", [c for c in cov.split(",") if c])
    if getattr(args, "no_qr", False):
        put("model", "use_qr", False)
    for flag, key in (("chains", "n_chains"), ("warmup", "n_warmup"), ("samples", "n_sampling"),
                      ("target_accept", "target_accept"), ("max_depth", "max_tree_depth")):
        put("sampler", key, getattr(args, flag, None))
    put("ppc", "n_rep", getattr(args, "n_rep", None))
    put("spillover", "treatment", getattr(args, "treatment", None))
    put("spillover", "treated_value", getattr(args, "treated_value", None))
    put("spillover", "untreated_value", getattr(args, "untreated_value", None))
    if getattr(args, "path", None):
        put("spillover", "path", [int(s) for s in args.path.split(",")])
    if getattr(args, "variants", None):
        put("compare", "variants", [[int(v) for v in item.split("x")] for item in args.variants.split(",")])
    return o


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    return _merge(cfg, _flag_overrides(args))


def output_dir(cfg) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg["output_dir"])
    return Path(root) / out if root else out


def chain_config(cfg) -> ChainConfig:
    try:
        return ChainConfig(seed=int(cfg["seed"]), **cfg["sampler"])
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc


class OutputLock:
    """Exclusive ownership of an output directory for the duration of a run."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / LOCK_NAME

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            owner = self.path.read_text(encoding="utf-8").strip() or "?"
            if owner.isdigit() and not _pid_alive(int(owner)):
                self.path.unlink()
                return self.__enter__()
            raise ConfigError(f"output directory {self.path.parent} is locked by process {owner}") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


# -- shared steps ---------------------------------------------------------------

def _simulation_config(cfg, n_patients=None) -> SimulationConfig:
    sim = cfg["data"].get("simulation")
    n = n_patients
    if sim is None:
        kw = {"seed": int(cfg["seed"])}
        if n is not None:
            kw["n_patients"] = int(n)
        return demo_simulation_config(**kw)
    try:
        sim = dict(sim)
        sim.setdefault("seed", int(cfg["seed"]))
        if n is not None:
            sim["n_patients"] = int(n)
        return SimulationConfig.from_dict(sim)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"data.simulation: {exc}") from exc


def load_data(cfg, out: Path) -> PanelDataset:
    """Panel named in the config, else the one written by ``simulate`` into ``out``."""
    path = cfg["data"]["path"]
    covs = cfg["model"]["covariates"]
    if path is None:
        path = out / PANEL
        if not path.exists():
            raise ConfigError(f"no data.path configured and no simulated panel at {path}")
        sim = out / SIMULATION
        if covs is None and sim.exists():
            # the simulated truth names the columns that drive its transitions
            covs = json.loads(sim.read_text(encoding="utf-8")).get("model_covariates")
    data = load_panel(path, CovariateSpec(log_transform=tuple(cfg["data"]["log_transform"])))
    m = cfg["model"]
    data = derive_covariates(data, m["center"], [tuple(l) for l in m["lags"]], skip_existing=True)
    covs = covs if covs is not None else list(data.covariate_names)
    missing = [c for c in covs if c not in data.covariate_names]
    if missing:
        raise ConfigError(f"model.covariates {missing} not found in data columns {list(data.covariate_names)}")
    return data.select(covs)


def load_fit(cfg, out: Path, data: PanelDataset) -> FitResult:
    fit = FitResult.load(out / FIT_DIR)
    sp = fit.model.space
    diffs = []
    if (sp.n_a, sp.n_b) != (cfg["model"]["n_a"], cfg["model"]["n_b"]):
        diffs.append(f"model.n_a/n_b: fit ({sp.n_a},{sp.n_b}) vs config "
                     f"({cfg['model']['n_a']},{cfg['model']['n_b']})")
    if tuple(fit.model.covariates) != tuple(data.covariate_names):
        diffs.append(f"model.covariates: fit {list(fit.model.covariates)} vs config {list(data.covariate_names)}")
    n_fit = fit.data_summary.get("n_patients")
    if n_fit is not None and n_fit != data.n_patients:
        diffs.append(f"data: fit used {n_fit} patients, current data has {data.n_patients}")
    if diffs:
        raise ConfigError("fit artifacts do not match the configuration: " + "; ".join(diffs))
    return fit


def _progress(quiet: bool):
    if quiet:
        return None

    def report(chain, it, total, info):
        if it % max(total // 20, 1) == 0 or it == total:
            sys.stderr.write(f"\rchain {chain + 1}: {it}/{total} (depth {info['tree_depth']}, "
                             f"step {info['step_size']:.3g})")
            if it == total:
                sys.stderr.write("\n")
            sys.stderr.flush()
    return report


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=float), encoding="utf-8")


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(cfg, out: Path, args) -> int:
    sim = _simulation_config(cfg, getattr(args, "n_patients", None))
    data = simulate_dataset(sim)
    write_panel(data, out / PANEL)
    sim.true_params.to_json(out / TRUTH)
    _write_json(out / SIMULATION, sim.to_dict())
    print(f"simulated {data.n_patients} patients, {data.n_rows} rows -> {out / PANEL}")
    return EXIT_OK


def cmd_fit(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    cc = chain_config(cfg)
    m = cfg["model"]
    fit = fit_model(data, m["n_a"], m["n_b"], data.covariate_names, cc, use_qr=m["use_qr"],
                    progress=_progress(args.quiet))
    fit.save(out / FIT_DIR, command_line=args.command_line, run_config=cfg)
    d = fit.diagnostics
    flag = "converged" if fit.converged else "NOT converged"
    print(f"fit {flag}: max R-hat {d.max_rhat():.3f}, {d.divergences} divergences "
          f"of {fit.draws.n_draws} draws -> {out / FIT_DIR}")
    if cfg["strict"] and not fit.converged:
        raise NonConvergence("R-hat >= 1.1 for some parameters")
    return EXIT_OK


def cmd_diagnose(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    fit = load_fit(cfg, out, data)
    d = fit.diagnostics
    dest = out / "diagnose"
    dest.mkdir(parents=True, exist_ok=True)
    d.to_csv(dest / "diagnostics.csv")
    d.write_traceplots(dest / "trace")
    summary = {"converged": fit.converged, "max_rhat": d.max_rhat(), "divergences": d.divergences,
               "divergence_rate": d.divergence_rate(), "n_draws": fit.draws.n_draws,
               "min_ess_bulk": float(min(e for e in d.ess_bulk if e == e)) if len(d.ess_bulk) else None}
    _write_json(dest / "summary.json", summary)
    print(f"{'parameter':<34s}{'rhat':>8s}{'ess_bulk':>10s}")
    for n, r, e in zip(d.names, d.rhat, d.ess_bulk):
        print(f"{n:<34s}{r:8.3f}{e:10.0f}")
    print(f"divergences: {d.divergences}; converged: {fit.converged}")
    if cfg["strict"] and not fit.converged:
        raise NonConvergence("R-hat >= 1.1 for some parameters")
    return EXIT_OK


def cmd_decode(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    fit = load_fit(cfg, out, data)
    params = posterior_mean_params(fit.draws)
    rows = decode_table(params, data)
    path = out / "decode.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("patient_id,t,state_a,state_b,global\n")
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")
    print(f"decoded {data.n_patients} patients -> {path}")
    return EXIT_OK


def cmd_ppc(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    fit = load_fit(cfg, out, data)
    res = posterior_predictive(fit.draws, data, int(cfg["ppc"]["n_rep"]), int(cfg["seed"]))
    dest = out / "ppc"
    dest.mkdir(parents=True, exist_ok=True)
    res.to_csv(dest / "intervals.csv")
    _write_json(dest / "coverage.json", res.coverage)
    for ch, lvl, v in res.coverage_rows():
        print(f"channel {ch:>3s} {lvl}% interval coverage: {v:.3f}")
    return EXIT_OK


def cmd_spillover(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    fit = load_fit(cfg, out, data)
    sc = cfg["spillover"]
    profile = sc["profile"] if sc["profile"] is not None else mean_profile(data)
    rep = spillover(fit.draws, profile, sc["treatment"], float(sc["treated_value"]),
                    float(sc["untreated_value"]), tuple(sc["path"]), sc["lag"])
    rep.to_csv(out / "spillover.csv")
    (out / "spillover.txt").write_text(rep.to_text() + "\n", encoding="utf-8")
    conditional_transition_summary(fit.draws, profile).to_csv(out / "transitions.csv")
    print(rep.to_text())
    return EXIT_OK


def cmd_compare(cfg, out: Path, args) -> int:
    data = load_data(cfg, out)
    cc = chain_config(cfg)
    fits = {}
    if (out / FIT_DIR / "manifest.json").exists():
        try:
            fit = load_fit(cfg, out, data)
            if fit.config.to_dict() == cc.to_dict():
                sp = fit.model.space
                fits[(sp.n_a, sp.n_b)] = fit
        except ConfigError as exc:
            log.info("not reusing existing fit: %s", exc)
    variants = [tuple(v) for v in cfg["compare"]["variants"]]
    report = fit_variants(data, cc, variants, data.covariate_names, cfg["model"]["use_qr"], fits=fits)
    dest = out / "compare"
    dest.mkdir(parents=True, exist_ok=True)
    report.to_csv(dest / "compare.csv")
    text = report.to_text()
    (dest / "compare.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    if cfg["strict"] and not all(r.converged for r in report.rows):
        bad = [variant_name(r.n_a, r.n_b) for r in report.rows if not r.converged]
        raise NonConvergence(f"variants not converged: {bad}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "diagnose": cmd_diagnose, "decode": cmd_decode,
    "ppc": cmd_ppc, "spillover": cmd_spillover, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comorbid-hmm", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int)
    common.add_argument("--strict", action="store_true", help="exit 5 on non-convergence")
    common.add_argument("--quiet", action="store_true", help="no progress line")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="panel CSV (overrides data.path)")
    data.add_argument("--covariates", help="comma-separated model covariates")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--n-a", type=int, dest="n_a")
    model.add_argument("--n-b", type=int, dest="n_b")

    samp = argparse.ArgumentParser(add_help=False)
    samp.add_argument("--chains", type=int)
    samp.add_argument("--warmup", type=int)
    samp.add_argument("--samples", type=int)
    samp.add_argument("--target-accept", type=float, dest="target_accept")
    samp.add_argument("--max-depth", type=int, dest="max_depth")
    samp.add_argument("--no-qr", action="store_true", dest="no_qr")

    s = sub.add_parser("simulate", parents=[common], help="simulate a panel and its truth")
    s.add_argument("--n-patients", type=int, dest="n_patients")
    sub.add_parser("fit", parents=[common, data, model, samp], help="fit by NUTS")
    sub.add_parser("diagnose", parents=[common, data, model], help="R-hat, ESS, traceplot data")
    sub.add_parser("decode", parents=[common, data, model], help="Viterbi state paths")
    s = sub.add_parser("ppc", parents=[common, data, model], help="posterior predictive coverage")
    s.add_argument("--n-rep", type=int, dest="n_rep")
    s = sub.add_parser("spillover", parents=[common, data, model], help="spill-over quantiles")
    s.add_argument("--treatment")
    s.add_argument("--treated-value", type=float, dest="treated_value")
    s.add_argument("--untreated-value", type=float, dest="untreated_value")
    s.add_argument("--path", help="three global states, e.g. 4,2,1")
    s = sub.add_parser("compare", parents=[common, data, samp], help="fit variants and tabulate elpd")
    s.add_argument("--variants", help="e.g. 2x2,1x2,2x1")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    command_line = ["comorbid-hmm", *argv] if argv is not None else list(sys.argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    args.command_line = command_line
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = output_dir(cfg)
        with OutputLock(out):
            return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, InitializationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
