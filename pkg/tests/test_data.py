import math

import numpy as np
import pytest

from comorbid_hmm.data import (CovariateGenerator, CovariateSpec, PanelDataset, PatientSeries,
                               SimulationConfig, center_within, demo_simulation_config,
                               derive_covariates, lag_covariate, load_panel, load_simulation_config,
                               simulate_dataset, write_panel)
from comorbid_hmm.errors import DataError, ValidationError
from comorbid_hmm.model import Parameters

HEADER = "patient_id,t,y_a,y_b,treatment\n"


def toy_csv(tmp_path, body, header=HEADER):
    path = tmp_path / "panel.csv"
    path.write_text(header + body, encoding="utf-8")
    return path


def toy_dataset(values):
    """One covariate ``z`` with the given per-patient values."""
    pts = [PatientSeries(f"p{i}", np.arange(1, len(v) + 1), np.zeros(len(v)), np.zeros(len(v)),
                         np.asarray(v, dtype=float)[:, None]) for i, v in enumerate(values)]
    return PanelDataset(pts, ("z",))


def sticky_params(p=0, off=-8.0):
    alpha = np.full((4, 4), off)
    np.fill_diagonal(alpha, 0.0)
    return Parameters([4.55, 4.70], [2.86, 3.43], 0.09, 0.30, [0.25] * 4, alpha, np.zeros((4, 4, p)))


class TestLoadPanel:
    def test_counts(self, tmp_path):
        rows = "".join(f"P{i},{t},4.5,3.0,0\n" for i in range(3) for t in range(1, 5))
        data = load_panel(toy_csv(tmp_path, rows))
        assert data.n_patients == 3 and data.n_rows == 12
        assert data.covariate_names == ("treatment",)

    def test_log_transform(self, tmp_path):
        rows = "P1,1,94.63,20,0\nP1,2,94.63,20,1\n"
        data = load_panel(toy_csv(tmp_path, rows), CovariateSpec(log_transform=("y_a", "y_b")))
        assert data.patients[0].y_a[0] == pytest.approx(4.55, abs=1e-4)
        assert data.patients[0].y_b[0] == pytest.approx(math.log(20))

    def test_rows_sorted_within_patient(self, tmp_path):
        rows = "P1,2,2.0,0,0\nP2,1,9,9,0\nP1,1,1.0,0,0\nP2,2,9,9,0\n"
        data = load_panel(toy_csv(tmp_path, rows))
        np.testing.assert_array_equal(data.patients[0].y_a, [1.0, 2.0])

    def test_time_gap_names_patient(self, tmp_path):
        rows = "P1,1,1,1,0\nP1,2,1,1,0\nP7,1,1,1,0\nP7,3,1,1,0\n"
        with pytest.raises(DataError, match="P7"):
            load_panel(toy_csv(tmp_path, rows))

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="y_b"):
            load_panel(toy_csv(tmp_path, "P1,1,1,0\n", header="patient_id,t,y_a,treatment\n"))

    def test_non_finite_value_names_row(self, tmp_path):
        rows = "P1,1,1,1,0\nP1,2,nan,1,0\n"
        with pytest.raises(DataError, match="row 3"):
            load_panel(toy_csv(tmp_path, rows))

    def test_missing_value_rejected(self, tmp_path):
        with pytest.raises(DataError, match="P1"):
            load_panel(toy_csv(tmp_path, "P1,1,1,1,0\nP1,2,,1,0\n"))

    def test_short_patient(self, tmp_path):
        with pytest.raises(DataError, match="P9"):
            load_panel(toy_csv(tmp_path, "P1,1,1,1,0\nP1,2,1,1,0\nP9,1,1,1,0\n"))

    def test_round_trip(self, tmp_path):
        data = simulate_dataset(demo_simulation_config(n_patients=20, seed=4))
        path = tmp_path / "rt.csv"
        write_panel(data, path)
        back = load_panel(path)
        assert back == data


class TestCovariates:
    def test_center_within(self):
        out = center_within(toy_dataset([[0, 1, 1]]), "z")
        assert out.covariate_names == ("z", "z_centered")
        np.testing.assert_allclose(out.patients[0].x[:, 1], [-2 / 3, 1 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_array_equal(out.patients[0].x[:, 0], [0, 1, 1])

    def test_center_constant_zero(self):
        out = center_within(toy_dataset([[0, 0, 0, 0]]), "z")
        np.testing.assert_array_equal(out.patients[0].x[:, 1], 0.0)

    def test_centered_means_zero(self, rng):
        out = center_within(toy_dataset([rng.normal(size=n) for n in (2, 5, 9)]), "z")
        for pt in out.patients:
            assert abs(pt.x[:, 1].mean()) < 1e-12

    def test_lag(self):
        out = lag_covariate(toy_dataset([[1.0, 2.0, 3.0]]), "z", 1)
        assert out.covariate_names[-1] == "z_lag1"
        np.testing.assert_array_equal(out.patients[0].x[:, 1], [0.0, 1.0, 2.0])

    def test_lag_beyond_length(self):
        out = lag_covariate(toy_dataset([[1.0, 2.0, 3.0]]), "z", 3)
        np.testing.assert_array_equal(out.patients[0].x[:, 1], 0.0)

    def test_order_matters(self):
        """Center-then-lag differs from lag-then-center on a 3-step series."""
        d = toy_dataset([[0.0, 1.0, 1.0]])
        cl = derive_covariates(d, center=["z"], lags=[("z_centered", 1)])
        np.testing.assert_allclose(cl.patients[0].x[:, -1], [0.0, -2 / 3, 1 / 3], atol=1e-15)
        lc = center_within(lag_covariate(d, "z", 1), "z_lag1")
        np.testing.assert_allclose(lc.patients[0].x[:, -1], [-1 / 3, -1 / 3, 2 / 3], atol=1e-15)
        assert not np.allclose(cl.patients[0].x[:, -1], lc.patients[0].x[:, -1])

    @pytest.mark.parametrize("fn", [lambda d: center_within(d, "nope"), lambda d: lag_covariate(d, "nope", 1)])
    def test_unknown_name(self, fn):
        with pytest.raises(ValidationError, match="nope"):
            fn(toy_dataset([[0.0, 1.0]]))

    def test_bad_lag(self):
        with pytest.raises(ValidationError):
            lag_covariate(toy_dataset([[0.0, 1.0]]), "z", 0)

    def test_skip_existing(self):
        d = center_within(toy_dataset([[0.0, 1.0]]), "z")
        with pytest.raises(ValidationError):
            derive_covariates(d, center=["z"])
        assert derive_covariates(d, center=["z"], skip_existing=True) is d


class TestSimulation:
    def test_deterministic(self, tmp_path):
        cfg = demo_simulation_config(n_patients=30, seed=5)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_panel(simulate_dataset(cfg), a)
        write_panel(simulate_dataset(cfg), b)
        assert a.read_bytes() == b.read_bytes()

    def test_lengths_and_columns(self):
        cfg = demo_simulation_config(n_patients=50, seed=1)
        data = simulate_dataset(cfg)
        lengths = [pt.length for pt in data.patients]
        assert min(lengths) >= 4 and max(lengths) <= 10
        assert set(cfg.model_covariates) <= set(data.covariate_names)
        i = data.column_index("treatment_centered")
        for pt in data.patients:
            assert abs(pt.x[:, i].mean()) < 1e-12

    def test_degenerate_emissions_reveal_states(self):
        truth = Parameters([4.55, 4.70], [2.86, 3.43], 1e-6, 1e-6, [0.25] * 4,
                           np.zeros((4, 4)), np.zeros((4, 4, 0)))
        data, paths = simulate_dataset(SimulationConfig(20, 3, 6, truth, seed=2), return_states=True)
        for pt, s in zip(data.patients, paths):
            sa = truth.space.state_a[s - 1]
            sb = truth.space.state_b[s - 1]
            assert np.max(np.abs(pt.y_a - truth.mu_a[sa])) < 1e-4
            assert np.max(np.abs(pt.y_b - truth.mu_b[sb])) < 1e-4

    def test_sticky_chain_rarely_switches(self):
        cfg = SimulationConfig(1000, 10, 10, sticky_params(off=-6.0), seed=3)
        _, paths = simulate_dataset(cfg, return_states=True)
        switches = sum(int(np.sum(np.diff(s) != 0)) for s in paths)
        steps = sum(len(s) - 1 for s in paths)
        assert steps >= 9000 and switches / steps < 0.05

    def test_empirical_transition_frequencies(self, rng):
        alpha = rng.normal(0, 1, (4, 4))
        np.fill_diagonal(alpha, 0.0)
        truth = Parameters([0, 1], [0, 1], 1.0, 1.0, [0.25] * 4, alpha, np.zeros((4, 4, 0)))
        cfg = SimulationConfig(1000, 101, 101, truth, seed=9)
        _, paths = simulate_dataset(cfg, return_states=True)
        counts = np.zeros((4, 4))
        for s in paths:
            np.add.at(counts, (s[:-1] - 1, s[1:] - 1), 1)
        emp = counts / counts.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(emp, truth.transition_matrix([]), atol=0.01)

    def test_emission_moments_within_state(self):
        truth = sticky_params(off=-3.0)
        data, paths = simulate_dataset(SimulationConfig(400, 10, 10, truth, seed=8), return_states=True)
        s = np.concatenate(paths) - 1
        ya = np.concatenate([pt.y_a for pt in data.patients])
        for k in range(2):
            sel = ya[truth.space.state_a[s] == k]
            se = truth.sigma_a / math.sqrt(len(sel))
            assert abs(sel.mean() - truth.mu_a[k]) < 3 * se
            assert abs(sel.std(ddof=1) - truth.sigma_a) < 3 * truth.sigma_a / math.sqrt(2 * (len(sel) - 1))

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            SimulationConfig(10, 1, 5, sticky_params())
        with pytest.raises(ValidationError):
            SimulationConfig(10, 5, 4, sticky_params())
        with pytest.raises(ValidationError):
            CovariateGenerator("x", kind="poisson")

    def test_config_json_round_trip(self, tmp_path):
        import json

        cfg = demo_simulation_config(n_patients=12, seed=21)
        path = tmp_path / "sim.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = load_simulation_config(path)
        assert back.to_dict() == cfg.to_dict()
        assert simulate_dataset(back) == simulate_dataset(cfg)
