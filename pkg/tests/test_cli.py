import csv
import json

import numpy as np
import pytest

from nngpcox.cli import main


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("work") / "sim"
    code = run(["simulate", "--out", out, "--seed", 7, "--T", 1,
                "--lambda-star", "4", "--sigma2-1", 1.0, "--phi-1", 2.0])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("work") / "fit"
    code = run(["fit", "--out", out, "--seed", 11, "--events", sim_dir / "events.csv",
                "--T", 1, "--M", 8, "--n-iter", 25, "--burn-in", 5, "--w", 0])
    assert code == 0
    return out


class TestSimulate:
    def test_outputs_exist(self, sim_dir):
        for name in ("events.csv", "thinned.csv", "latent.csv", "manifest.json"):
            assert (sim_dir / name).exists()
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["args"]["seed"] == 7

    def test_missing_seed_is_validation_error(self, tmp_path):
        assert run(["simulate", "--out", tmp_path / "x", "--T", 1]) == 2

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        out2 = tmp_path / "sim2"
        assert run(["simulate", "--config", sim_dir / "manifest.json",
                    "--out", out2]) == 0
        assert (out2 / "events.csv").read_bytes() == (sim_dir / "events.csv").read_bytes()
        assert (out2 / "latent.csv").read_bytes() == (sim_dir / "latent.csv").read_bytes()

    def test_spacetime_emits_all_slices(self, tmp_path):
        out = tmp_path / "st"
        assert run(["simulate", "--out", out, "--seed", 3, "--T", 4,
                    "--lambda-star", "2,3,4,2", "--sigma2-1", 1.0, "--phi-1", 2.0,
                    "--sigma2", 0.3, "--phi", 3.0]) == 0
        with open(out / "events.csv", newline="") as fh:
            ts = {int(row["t"]) for row in csv.DictReader(fh)}
        assert ts == {1, 2, 3, 4}

    def test_bad_rate_count(self, tmp_path):
        assert run(["simulate", "--out", tmp_path / "y", "--seed", 1, "--T", 3,
                    "--lambda-star", "1,2"]) == 2


class TestFit:
    def test_outputs(self, fit_dir):
        for name in ("draws.npz", "summary.json", "timings.json", "manifest.json"):
            assert (fit_dir / name).exists()
        summary = json.loads((fit_dir / "summary.json").read_text())
        assert summary["retained"] == 20
        assert len(summary["lambda_star_mean"]) == 1

    def test_invalid_m_rejected(self, sim_dir, tmp_path):
        assert run(["fit", "--out", tmp_path / "bad", "--seed", 1,
                    "--events", sim_dir / "events.csv", "--M", 0,
                    "--n-iter", 5, "--burn-in", 1]) == 2

    def test_rerun_from_manifest_byte_identical(self, fit_dir, tmp_path):
        out2 = tmp_path / "fit2"
        assert run(["fit", "--config", fit_dir / "manifest.json", "--out", out2]) == 0
        assert (out2 / "draws.npz").read_bytes() == (fit_dir / "draws.npz").read_bytes()

    def test_thread_count_does_not_change_output(self, fit_dir, tmp_path):
        out2 = tmp_path / "fit4"
        assert run(["fit", "--config", fit_dir / "manifest.json", "--out", out2,
                    "--threads", 4]) == 0
        assert (out2 / "draws.npz").read_bytes() == (fit_dir / "draws.npz").read_bytes()

    def test_csv_format(self, sim_dir, tmp_path):
        out = tmp_path / "fitcsv"
        assert run(["fit", "--out", out, "--seed", 11,
                    "--events", sim_dir / "events.csv",
                    "--M", 8, "--n-iter", 8, "--burn-in", 2,
                    "--format", "csv"]) == 0
        with open(out / "draws.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6 and "lambda_star_1" in rows[0]


class TestRenderPredictDiag:
    def test_render(self, fit_dir, tmp_path):
        out = tmp_path / "rend"
        assert run(["render", "--out", out, "--draws", fit_dir / "draws.npz",
                    "--nx", 12, "--ny", 12, "--ppm"]) == 0
        assert (out / "field_t1.csv").exists()
        assert (out / "field_t1.ppm").exists()
        assert json.loads((out / "field_t1.ppm.json").read_text())["max"] > 0

    def test_render_rerun_byte_identical(self, fit_dir, tmp_path):
        a, b = tmp_path / "ra", tmp_path / "rb"
        for out in (a, b):
            assert run(["render", "--out", out, "--draws", fit_dir / "draws.npz",
                        "--nx", 8, "--ny", 8]) == 0
        assert (a / "field_t1.csv").read_bytes() == (b / "field_t1.csv").read_bytes()

    def test_predict_requires_horizon_and_runs(self, tmp_path):
        sim = tmp_path / "sim"
        fit = tmp_path / "fit"
        assert run(["simulate", "--out", sim, "--seed", 5, "--T", 2,
                    "--lambda-star", "3", "--sigma2-1", 1.0, "--phi-1", 2.0,
                    "--sigma2", 0.3, "--phi", 3.0]) == 0
        assert run(["fit", "--out", fit, "--seed", 13, "--events", sim / "events.csv",
                    "--T", 2, "--M", 6, "--n-iter", 15, "--burn-in", 5,
                    "--w", 0.5]) == 0
        out = tmp_path / "pred"
        assert run(["predict", "--out", out, "--draws", fit / "draws.npz",
                    "--t", 1, "--seed", 2, "--nx", 6, "--ny", 6]) == 0
        assert (out / "field_pred_t2.csv").exists()
        summary = json.loads((out / "predict_summary.json").read_text())
        assert summary["t_pred"] == 2

    def test_diag_on_synthetic_ar1(self, tmp_path):
        rng = np.random.default_rng(0)
        rho, n = 0.5, 40000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        for i in range(1, n):
            x[i] = rho * x[i - 1] + np.sqrt(1 - rho**2) * rng.standard_normal()
        series = tmp_path / "series.csv"
        with open(series, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chain"])
            writer.writerows([[v] for v in x])
        out = tmp_path / "diag"
        assert run(["diag", "--out", out, "--series", series]) == 0
        report = json.loads((out / "diag.json").read_text())
        assert 2.3 < report["chain"] < 3.7

    def test_diag_on_draws(self, fit_dir, tmp_path):
        out = tmp_path / "diagd"
        assert run(["diag", "--out", out, "--draws", fit_dir / "draws.npz"]) == 0
        report = json.loads((out / "diag.json").read_text())
        assert "lambda_star_1" in report

    def test_diag_without_inputs(self, tmp_path):
        assert run(["diag", "--out", tmp_path / "d"]) == 2


class TestBench:
    def test_smoke(self, tmp_path):
        out = tmp_path / "bench"
        assert run(["bench", "--out", out, "--seed", 1,
                    "--sizes", "100,200", "--m-list", "5",
                    "--dense-sizes", "50,100", "--repeats", 2]) == 0
        report = json.loads((out / "bench.json").read_text())
        assert "exponent" in report["nngp_fit"]["5"]
        assert "exponent" in report["dense_fit"]
