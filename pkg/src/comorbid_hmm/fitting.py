"""Fit orchestration: model set-up, initialisation, sampling, diagnostics and artifacts."""
from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .data import PanelDataset
from .errors import ValidationError
from .likelihood import LogPosterior, ModelConfig
from .sampler import ChainConfig, Diagnostics, Draws, initialize_chains, nuts_sample
from .transforms import Transform

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DRAWS = "draws.csv"
DRAWS_UNCONSTRAINED = "draws_unconstrained.csv"
SAMPLER_STATS = "sampler_stats.csv"
DIAGNOSTICS = "diagnostics.csv"
TRACE_DIR = "trace"
RHAT_THRESHOLD = 1.1


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON encoding of a configuration mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(eq=False)
class FitResult:
    model: ModelConfig
    draws: Draws
    diagnostics: Diagnostics
    config: ChainConfig
    data_summary: dict

    @property
    def transform(self) -> Transform:
        return self.draws.transform

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged(RHAT_THRESHOLD)

    def manifest(self, command_line=None, run_config=None) -> dict:
        return {
            "layout": self.transform.manifest(),
            "chain_config": self.config.to_dict(),
            "seed": self.config.seed,
            "chain_seeds": [[self.config.seed, c] for c in range(self.config.n_chains)],
            "adaptation": [
                {"chain": a["chain"], "step_size": a["step_size"], "inv_metric": a["inv_metric"]}
                for a in self.draws.adaptation
            ],
            "converged": self.converged,
            "max_rhat": self.diagnostics.max_rhat(),
            "divergences": self.diagnostics.divergences,
            "n_draws": self.draws.n_draws,
            "data": self.data_summary,
            "command_line": list(command_line) if command_line is not None else list(sys.argv),
            "run_config": run_config,
            "config_hash": config_hash(run_config if run_config is not None else self.config.to_dict()),
        }

    def save(self, outdir, command_line=None, run_config=None) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.draws.to_csv(outdir / DRAWS, constrained=True)
        self.draws.to_csv(outdir / DRAWS_UNCONSTRAINED, constrained=False)
        self.draws.stats_to_csv(outdir / SAMPLER_STATS)
        self.diagnostics.to_csv(outdir / DIAGNOSTICS)
        self.diagnostics.write_traceplots(outdir / TRACE_DIR)
        path = outdir / MANIFEST
        path.write_text(json.dumps(self.manifest(command_line, run_config), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, outdir) -> "FitResult":
        outdir = Path(outdir)
        path = outdir / MANIFEST
        if not path.exists():
            raise ValidationError(f"no fit manifest at {path}")
        man = json.loads(path.read_text(encoding="utf-8"))
        transform = Transform.from_manifest(man["layout"])
        draws = Draws.from_csv(outdir / DRAWS_UNCONSTRAINED, outdir / SAMPLER_STATS,
                               man.get("adaptation"), transform)
        if draws.samples.shape[2] != transform.dim:
            raise ValidationError(
                f"draws have {draws.samples.shape[2]} columns, manifest layout expects {transform.dim}"
            )
        model = ModelConfig(transform.space, transform.covariate_names, transform.qr)
        cfg = ChainConfig(**man["chain_config"])
        return cls(model, draws, Diagnostics.from_draws(draws), cfg, man.get("data", {}))


def fit_model(data: PanelDataset, n_a: int = 2, n_b: int = 2, covariates=None,
              config: ChainConfig | None = None, use_qr: bool = True, backend=None,
              progress=None) -> FitResult:
    """Fit the coupled model to ``data`` by NUTS.

    Covariates default to all columns of ``data``. Non-convergence is not an
    error; inspect :attr:`FitResult.converged`.
    """
    config = config or ChainConfig()
    covariates = tuple(data.covariate_names if covariates is None else covariates)
    missing = [c for c in covariates if c not in data.covariate_names]
    if missing:
        raise ValidationError(f"covariates {missing} not present in data (have {list(data.covariate_names)})")
    model = ModelConfig.for_data(data, n_a, n_b, covariates, use_qr=use_qr)
    logpost = LogPosterior(data, model, backend=backend)
    inits = initialize_chains(model, data, config, logpost=logpost)
    draws = nuts_sample(logpost, config, init=inits, transform=logpost.transform, progress=progress)
    diag = Diagnostics.from_draws(draws)
    summary = {
        "n_patients": data.n_patients,
        "n_rows": data.n_rows,
        "covariates": list(covariates),
        "meta": data.meta,
    }
    result = FitResult(model, draws, diag, config, summary)
    log.info("fit (%d,%d): max rhat %.3f, %d divergences", n_a, n_b, diag.max_rhat(), diag.divergences)
    return result
