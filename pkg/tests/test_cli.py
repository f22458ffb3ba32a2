"""End-to-end command-line tests: artifacts, exit codes, determinism."""

import csv
import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from pprb.cli import main
from pprb.io import read_draws, read_json, read_raster

SIM_CONFIG = {
    "n_cols": 20,
    "n_rows": 20,
    "beta0_true": 4.0,
    "beta_true": [0.8, 1.2],
    "target_total": 150.0,
    "seed": 7,
}

SIM_FILES = (
    "x1.asc", "x2.asc", "windows.csv", "points_full.csv",
    "points_observed.csv", "truth.json",
)


def run_simulate(out_dir, config=SIM_CONFIG, **flags):
    cfg_path = out_dir.parent / f"{out_dir.name}-sim.json"
    cfg_path.write_text(json.dumps(config))
    args = ["simulate", "--config", str(cfg_path), "--out-dir", str(out_dir)]
    for key, value in flags.items():
        args += [f"--{key}", str(value)]
    return main(args)


def file_digests(directory, skip=("manifest.json",)):
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.iterdir())
        if p.is_file() and p.name not in skip
    }


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "sim"
    assert run_simulate(out) == 0
    return out


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-fit") / "fit"
    code = main([
        "fit",
        "--points", str(sim_dir / "points_observed.csv"),
        "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
        "--windows", str(sim_dir / "windows.csv"),
        "--strategy", "glm-e",
        "--k", "600",
        "--seed", "3",
        "--out-dir", str(out),
    ])
    assert code == 0
    return out


class TestSimulate:
    def test_artifacts_and_manifest(self, sim_dir):
        for name in SIM_FILES:
            assert (sim_dir / name).exists()
        truth = read_json(sim_dir / "truth.json")
        assert truth["beta_true"] == [0.8, 1.2]
        assert truth["n_observed"] + truth["n_hidden"] == truth["n_true"]
        manifest = read_json(sim_dir / "manifest.json")
        assert manifest["status"] == "ok"
        assert manifest["exit_code"] == 0
        assert manifest["command"] == "simulate"
        assert sorted(manifest["outputs"]) == sorted(SIM_FILES)
        assert len(manifest["inputs"]) == 1
        digest = next(iter(manifest["inputs"].values()))
        assert digest.startswith("sha256:")

    def test_lock_released_after_run(self, sim_dir):
        assert not (sim_dir / ".pprb.lock").exists()

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        again = tmp_path / "again"
        assert run_simulate(again) == 0
        assert file_digests(again) == file_digests(sim_dir)

    def test_seed_flag_overrides_config(self, sim_dir, tmp_path):
        out = tmp_path / "reseeded"
        assert run_simulate(out, seed=8) == 0
        assert file_digests(out) != file_digests(sim_dir)
        assert read_json(out / "truth.json")["seed"] == 8

    def test_missing_config_exits_2_with_manifest(self, tmp_path):
        out = tmp_path / "broken"
        code = main([
            "simulate", "--config", str(tmp_path / "missing.json"),
            "--out-dir", str(out),
        ])
        assert code == 2
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "error"
        assert manifest["exit_code"] == 2
        assert "missing.json" in manifest["error"]

    def test_locked_directory_is_rejected(self, tmp_path):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".pprb.lock").touch()
        assert run_simulate(out) == 2
        # the run never owned the directory, so no manifest appears
        assert not (out / "manifest.json").exists()

    def test_unknown_config_key_exits_2(self, tmp_path):
        bad = dict(SIM_CONFIG, typo_key=1)
        assert run_simulate(tmp_path / "bad", config=bad) == 2


class TestFit:
    def test_draws_and_report(self, fit_dir):
        beta0, beta, lam, accepted = read_draws(fit_dir / "draws.csv")
        assert beta0.size == 600
        assert beta.shape == (600, 2)
        report = read_json(fit_dir / "report.json")
        assert report["strategy"] == "glm-e"
        assert set(report["coefficients"]) == {"beta0", "x1", "x2"}
        assert set(report["ess"]) == {"beta0", "x1", "x2"}
        assert set(report["seconds_per_ess"]) == {"beta0", "x1", "x2"}
        assert 0.0 < report["acceptance_rate"] <= 1.0
        assert set(report["timings"]) == {"first", "intermediate", "second", "total"}

    def test_thread_invariant_draws(self, sim_dir, tmp_path):
        outs = []
        for threads in (1, 4):
            out = tmp_path / f"threads{threads}"
            code = main([
                "fit",
                "--points", str(sim_dir / "points_observed.csv"),
                "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
                "--windows", str(sim_dir / "windows.csv"),
                "--strategy", "glm-a", "--k", "300", "--seed", "5",
                "--threads", str(threads),
                "--out-dir", str(out),
            ])
            assert code == 0
            outs.append((out / "draws.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_config_file_with_flag_override(self, sim_dir, tmp_path):
        config = {
            "points": str(sim_dir / "points_observed.csv"),
            "covariates": [str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc")],
            "windows": str(sim_dir / "windows.csv"),
            "strategy": "glm-a",
            "k": 50,
        }
        cfg = tmp_path / "fit.json"
        cfg.write_text(json.dumps(config))
        out1 = tmp_path / "from-config"
        assert main(["fit", "--config", str(cfg), "--out-dir", str(out1)]) == 0
        assert read_draws(out1 / "draws.csv")[0].size == 50
        out2 = tmp_path / "overridden"
        code = main([
            "fit", "--config", str(cfg), "--k", "120", "--out-dir", str(out2),
        ])
        assert code == 0
        assert read_draws(out2 / "draws.csv")[0].size == 120

    def test_unknown_strategy_in_config_exits_2(self, sim_dir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({
            "points": str(sim_dir / "points_observed.csv"),
            "covariates": [str(sim_dir / "x1.asc")],
            "strategy": "bogus",
        }))
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2

    def test_misaligned_rasters_exit_3(self, sim_dir, tmp_path):
        from pprb.domain import build_grid
        from pprb.io import write_raster

        bad = tmp_path / "bad.asc"
        write_raster(bad, build_grid(0.0, 0.0, 5, 5, 0.1), np.zeros(25))
        out = tmp_path / "out"
        code = main([
            "fit",
            "--points", str(sim_dir / "points_observed.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(bad),
            "--windows", str(sim_dir / "windows.csv"),
            "--out-dir", str(out),
        ])
        assert code == 3
        assert read_json(out / "manifest.json")["exit_code"] == 3

    def test_point_outside_windows_exits_3(self, sim_dir, tmp_path):
        grid_info = read_json(sim_dir / "truth.json")["grid"]
        x_max = grid_info["x_min"] + grid_info["n_cols"] * grid_info["cell_size"]
        y_max = grid_info["y_min"] + grid_info["n_rows"] * grid_info["cell_size"]
        stray = tmp_path / "stray.csv"
        with open(sim_dir / "points_observed.csv") as fh:
            rows = [line.split(",")[:2] for line in fh.read().splitlines()]
        with open(stray, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerows(rows)
            # inside the grid box but outside every observation window
            windows = np.loadtxt(sim_dir / "windows.csv", delimiter=",", skiprows=1)
            windows = np.atleast_2d(windows)
            xs = np.linspace(grid_info["x_min"], x_max, 211)[1:-1]
            ys = np.linspace(grid_info["y_min"], y_max, 211)[1:-1]
            found = None
            for x in xs:
                for y in ys:
                    inside = (
                        (windows[:, 0] <= x) & (x <= windows[:, 2])
                        & (windows[:, 1] <= y) & (y <= windows[:, 3])
                    )
                    if not inside.any():
                        found = (x, y)
                        break
                if found:
                    break
            writer.writerow([repr(float(found[0])), repr(float(found[1]))])
        code = main([
            "fit",
            "--points", str(stray),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--k", "50",
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 3


class TestPredict:
    def run(self, sim_dir, fit_dir, out, *extra):
        return main([
            "predict",
            "--draws", str(fit_dir / "draws.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--points", str(sim_dir / "points_observed.csv"),
            "--seed", "11",
            "--out-dir", str(out),
            *extra,
        ])

    def test_outputs_and_totals(self, sim_dir, fit_dir, tmp_path):
        out = tmp_path / "pred"
        assert self.run(sim_dir, fit_dir, out) == 0
        rows = np.loadtxt(out / "abundance.csv", delimiter=",", skiprows=1)
        n_draws = read_draws(fit_dir / "draws.csv")[0].size
        assert rows.shape == (n_draws, 3)
        n_observed = read_json(out / "abundance.json")["n_observed"]
        assert (rows[:, 2] == rows[:, 1] + n_observed).all()
        summary = read_json(out / "abundance.json")
        assert summary["region"] == "s0"
        assert (out / "simulated_points.csv").exists()
        grid, mean = read_raster(out / "mean_count.asc")
        assert mean.shape == (grid.n_cells,)
        assert (mean >= 0).all()

    def test_interval_covers_truth(self, sim_dir, fit_dir, tmp_path):
        out = tmp_path / "cover"
        assert self.run(sim_dir, fit_dir, out) == 0
        summary = read_json(out / "abundance.json")
        n_true = read_json(sim_dir / "truth.json")["n_true"]
        assert summary["quantiles"]["0.025"] <= n_true <= summary["quantiles"]["0.975"]

    def test_deterministic_under_seed(self, sim_dir, fit_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert self.run(sim_dir, fit_dir, out) == 0
            outs.append(file_digests(out))
        assert outs[0] == outs[1]

    def test_full_coverage_windows_give_zero_n0(self, sim_dir, fit_dir, tmp_path):
        grid_info = read_json(sim_dir / "truth.json")["grid"]
        x_max = grid_info["x_min"] + grid_info["n_cols"] * grid_info["cell_size"]
        y_max = grid_info["y_min"] + grid_info["n_rows"] * grid_info["cell_size"]
        full = tmp_path / "full_windows.csv"
        full.write_text(
            "x_min,y_min,x_max,y_max\n"
            f"{grid_info['x_min']},{grid_info['y_min']},{x_max},{y_max}\n"
        )
        out = tmp_path / "pred"
        code = main([
            "predict",
            "--draws", str(fit_dir / "draws.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(full),
            "--points", str(sim_dir / "points_observed.csv"),
            "--out-dir", str(out),
        ])
        assert code == 0
        rows = np.loadtxt(out / "abundance.csv", delimiter=",", skiprows=1)
        assert (rows[:, 1] == 0).all()
        _, mean = read_raster(out / "mean_count.asc")
        assert (mean == 0).all()

    def test_region_all_counts_everything(self, sim_dir, fit_dir, tmp_path):
        out = tmp_path / "all"
        assert self.run(sim_dir, fit_dir, out, "--region", "all") == 0
        rows = np.loadtxt(out / "abundance.csv", delimiter=",", skiprows=1)
        # nothing is conditioned on, so the total is the fresh count itself
        assert (rows[:, 2] == rows[:, 1]).all()
        lam_true = read_json(sim_dir / "truth.json")["lambda_total"]
        assert 0.3 * lam_true < rows[:, 2].mean() < 3.0 * lam_true

    def test_empty_draws_exit_2(self, sim_dir, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("beta0,beta_1,beta_2,lambda_total,accepted\n")
        code = main([
            "predict", "--draws", str(empty),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 2

    def test_slope_covariate_mismatch_exit_3(self, sim_dir, fit_dir, tmp_path):
        code = main([
            "predict", "--draws", str(fit_dir / "draws.csv"),
            "--covariates", str(sim_dir / "x1.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 3

    def test_overflowing_draws_exit_4(self, sim_dir, tmp_path):
        bad = tmp_path / "hot.csv"
        bad.write_text(
            "beta0,beta_1,beta_2,lambda_total,accepted\n"
            "800.0,0.0,0.0,1.0,1\n"
        )
        code = main([
            "predict", "--draws", str(bad),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 4


class TestDiagnose:
    def test_ess_json(self, fit_dir, tmp_path):
        out = tmp_path / "ess"
        code = main([
            "diagnose", "--ess", "--draws", str(fit_dir / "draws.csv"),
            "--out-dir", str(out),
        ])
        assert code == 0
        payload = read_json(out / "ess.json")
        assert set(payload["ess"]) == {"beta0", "beta_1", "beta_2"}
        assert payload["n_draws"] == 600
        assert all(v >= 1.0 for v in payload["ess"].values())

    def test_envelope_outputs(self, sim_dir, fit_dir, tmp_path):
        out = tmp_path / "lf"
        code = main([
            "diagnose", "--lfunction",
            "--draws", str(fit_dir / "draws.csv"),
            "--points", str(sim_dir / "points_observed.csv"),
            "--windows", str(sim_dir / "windows.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--max-sims", "60",
            "--seed", "2",
            "--out-dir", str(out),
        ])
        assert code == 0
        gof = read_json(out / "gof.json")
        assert gof["n_used"] + gof["n_skipped"] == 60
        assert 0.0 <= gof["fraction_inside"] <= 1.0
        rows = np.genfromtxt(out / "l_function.csv", delimiter=",", skip_header=1)
        assert rows.shape == (20, 4)
        assert (rows[:, 2] <= rows[:, 3]).all()

    def test_both_flags_write_both(self, sim_dir, fit_dir, tmp_path):
        out = tmp_path / "both"
        code = main([
            "diagnose", "--ess", "--lfunction",
            "--draws", str(fit_dir / "draws.csv"),
            "--points", str(sim_dir / "points_observed.csv"),
            "--windows", str(sim_dir / "windows.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--max-sims", "20",
            "--out-dir", str(out),
        ])
        assert code == 0
        assert (out / "ess.json").exists()
        assert (out / "l_function.csv").exists()

    def test_csr_pattern_tracks_identity(self, tmp_path):
        rng = np.random.default_rng(42)
        points = tmp_path / "csr.csv"
        with open(points, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"])
            for x, y in rng.random((200, 2)):
                writer.writerow([repr(float(x)), repr(float(y))])
        windows = tmp_path / "win.csv"
        windows.write_text("x_min,y_min,x_max,y_max\n0,0,1,1\n")
        out = tmp_path / "out"
        code = main([
            "diagnose", "--lfunction", "--points", str(points),
            "--windows", str(windows), "--out-dir", str(out),
        ])
        assert code == 0
        rows = np.genfromtxt(out / "l_function.csv", delimiter=",", skip_header=1)
        # complete spatial randomness keeps L(r) near r
        assert np.abs(rows[:, 1] - rows[:, 0]).max() < 0.02
        assert np.isnan(rows[:, 2]).all()

    def test_single_point_exits_5(self, tmp_path):
        points = tmp_path / "one.csv"
        points.write_text("x,y\n0.5,0.5\n")
        windows = tmp_path / "win.csv"
        windows.write_text("x_min,y_min,x_max,y_max\n0,0,1,1\n")
        code = main([
            "diagnose", "--lfunction", "--points", str(points),
            "--windows", str(windows), "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 5

    def test_no_flags_exit_2(self, tmp_path):
        assert main(["diagnose", "--out-dir", str(tmp_path / "out")]) == 2


STUDY_CONFIG = {
    "n_cols": 16,
    "n_rows": 16,
    "target_total": 120.0,
    "strategies": ["glm-a", "glm-e"],
    "k": 400,
    "n_replicates": 2,
    "seed": 4,
}

STUDY_REPORTS = ("report.json", "summaries.csv", "abundance.csv")


def run_study_cli(tmp_path, out_name, threads=None, config=STUDY_CONFIG):
    cfg = tmp_path / f"{out_name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / out_name
    args = ["study", "--config", str(cfg), "--out-dir", str(out)]
    if threads is not None:
        args += ["--threads", str(threads)]
    return main(args), out


class TestStudy:
    def test_minimal_study(self, tmp_path):
        config = dict(STUDY_CONFIG, strategies=["glm-a"], n_replicates=1)
        code, out = run_study_cli(tmp_path, "mini", config=config)
        assert code == 0
        for name in STUDY_REPORTS + ("timings.csv", "manifest.json"):
            assert (out / name).exists()
        report = read_json(out / "report.json")
        assert report["coverage"]["glm-a"]["replicates_succeeded"] == 1

    def test_reports_identical_across_runs_and_threads(self, tmp_path):
        digests = []
        for name, threads in (("r1", 1), ("r2", 1), ("r3", 3)):
            code, out = run_study_cli(tmp_path, name, threads=threads)
            assert code == 0
            digests.append(
                {f: hashlib.sha256((out / f).read_bytes()).hexdigest()
                 for f in STUDY_REPORTS}
            )
        assert digests[0] == digests[1] == digests[2]

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["study", "--out-dir", str(tmp_path / "out")]) == 2

    def test_recorded_failure_exits_4(self, tmp_path, monkeypatch):
        import pprb.cli as cli_mod

        def fake_run_study(config):
            return {
                "config": config.as_dict(),
                "config_digest": config.digest(),
                "replicates": [{
                    "replicate": 0,
                    "n_true": 10,
                    "n_observed": 5,
                    "strategies": {
                        "glm-a": {"error": "SeparationError: boom"},
                    },
                }],
                "coverage": {"glm-a": {
                    "replicates_succeeded": 0,
                    "coefficient_coverage": {},
                    "abundance_coverage": 0,
                }},
            }

        monkeypatch.setattr(cli_mod, "run_study", fake_run_study)
        config = dict(STUDY_CONFIG, strategies=["glm-a"], n_replicates=1)
        code, out = run_study_cli(tmp_path, "failing", config=config)
        assert code == 4
        manifest = read_json(out / "manifest.json")
        assert manifest["status"] == "error"
        assert "SeparationError" in manifest["error"]
        # the report files still land so the failure can be inspected
        assert (out / "report.json").exists()


class TestEntryPoints:
    def test_module_invocation(self, tmp_path):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps(SIM_CONFIG))
        result = subprocess.run(
            [sys.executable, "-m", "pprb.cli", "simulate",
             "--config", str(cfg), "--out-dir", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "out" / "truth.json").exists()

    def test_console_script(self, tmp_path):
        if shutil.which("pprb") is None:
            pytest.skip("console script not on PATH")
        result = subprocess.run(
            ["pprb", "--help"], capture_output=True, text=True
        )
        assert result.returncode == 0
        for name in ("simulate", "fit", "predict", "diagnose", "study"):
            assert name in result.stdout

    def test_env_threads_recorded(self, sim_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("PPRB_THREADS", "2")
        out = tmp_path / "env"
        code = main([
            "fit",
            "--points", str(sim_dir / "points_observed.csv"),
            "--covariates", str(sim_dir / "x1.asc"), str(sim_dir / "x2.asc"),
            "--windows", str(sim_dir / "windows.csv"),
            "--strategy", "glm-a", "--k", "60",
            "--out-dir", str(out),
        ])
        assert code == 0
        assert read_json(out / "manifest.json")["threads"] == 2
