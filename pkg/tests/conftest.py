import numpy as np
import pytest

from comorbid_hmm.data import PanelDataset, PatientSeries
from comorbid_hmm.model import Parameters, StateSpace


def random_params(rng, n_a=2, n_b=2, p=2, scale=1.0):
    """Valid random parameters with moderately separated means."""
    G = n_a * n_b
    mu_a = np.cumsum(rng.uniform(0.2, 1.0, n_a)) + rng.normal()
    mu_b = np.cumsum(rng.uniform(0.2, 1.0, n_b)) + rng.normal()
    alpha = rng.normal(0, scale, (G, G))
    np.fill_diagonal(alpha, 0.0)
    beta = rng.normal(0, scale, (G, G, p))
    beta[np.arange(G), np.arange(G)] = 0.0
    pi = rng.dirichlet(np.ones(G))
    return Parameters(mu_a, mu_b, rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), pi, alpha, beta)


def random_patient(rng, params, T, pid="p"):
    p = params.n_covariates
    ya = rng.normal(params.mu_a.mean(), 1.0, T)
    yb = rng.normal(params.mu_b.mean(), 1.0, T)
    return PatientSeries(pid, np.arange(1, T + 1), ya, yb, rng.normal(size=(T, p)))


def random_dataset(rng, params, n=5, t_range=(2, 6)):
    pts = [random_patient(rng, params, int(rng.integers(t_range[0], t_range[1] + 1)), f"p{i}")
           for i in range(n)]
    return PanelDataset(pts, tuple(f"x{q + 1}" for q in range(params.n_covariates)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def space():
    return StateSpace(2, 2)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
