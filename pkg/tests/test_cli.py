import json
import math

import numpy as np
import pytest

from decaymap import SensorLimits, SpectralMap, save_spectral_map, simulate_scan
from decaymap.cli import main
from decaymap.dataio import save_scans
from decaymap.simulate import fan_rays

from conftest import random_map

EXTENT = (10.0, 10.0)


@pytest.fixture
def workdir(tmp_path, rng):
    """A true map, a simulated scan file, and room for artifacts."""
    truth = random_map(rng, L=3, M=3, scale=0.25)
    save_spectral_map(truth, tmp_path / "true_map.txt")
    origins, dirs = fan_rays(EXTENT, 12, 25, rng)
    scans = simulate_scan(truth, origins, dirs, SensorLimits(0.04, 80.0), seed=31)
    save_scans(scans, EXTENT, tmp_path / "scans.txt")
    return tmp_path


class TestBuildDct:
    def test_fit_writes_map_and_report(self, workdir, capsys):
        rc = main([
            "build-dct", "--scans", str(workdir / "scans.txt"),
            "--rows", "3", "--cols", "3",
            "--out", str(workdir / "map.txt"),
            "--report", str(workdir / "rep.json"),
        ])
        assert rc == 0
        assert (workdir / "map.txt").exists()
        rep = json.loads((workdir / "rep.json").read_text())
        assert rep["converged"] is True
        out = capsys.readouterr().out
        assert out.count("\n") == 1 and "build-dct" in out

    def test_missing_input_exits_one(self, workdir, capsys):
        rc = main([
            "build-dct", "--scans", str(workdir / "nope.txt"),
            "--out", str(workdir / "map.txt"),
        ])
        assert rc == 1
        assert "nope.txt" in capsys.readouterr().err

    def test_non_convergence_exits_two(self, workdir):
        rc = main([
            "build-dct", "--scans", str(workdir / "scans.txt"),
            "--rows", "4", "--cols", "4",
            "--max-iters", "1", "--rel-tol", "1e-12",
            "--init", "constant-noise", "--noise-scale", "0.4", "--seed", "5",
            "--out", str(workdir / "map.txt"),
        ])
        assert rc == 2

    def test_usage_error_exits_64(self, workdir):
        with pytest.raises(SystemExit) as err:
            main(["build-dct", "--scans", str(workdir / "scans.txt")])  # no --out
        assert err.value.code == 64


class TestBuildGrid:
    def test_writes_grid(self, workdir):
        rc = main([
            "build-grid", "--scans", str(workdir / "scans.txt"),
            "--rows", "5", "--cols", "5",
            "--out", str(workdir / "grid.txt"),
        ])
        assert rc == 0
        head = (workdir / "grid.txt").read_text().splitlines()[0].split()
        assert head[0] == "5" and head[1] == "5"


class TestSimulate:
    def test_seed_required(self, workdir, capsys):
        rc = main([
            "simulate", "--map", str(workdir / "true_map.txt"),
            "--out", str(workdir / "sim.txt"),
        ])
        assert rc == 1
        assert "--seed" in capsys.readouterr().err

    def test_deterministic_output(self, workdir):
        args = [
            "simulate", "--map", str(workdir / "true_map.txt"),
            "--poses", "5", "--beams", "10", "--seed", "17",
        ]
        assert main(args + ["--out", str(workdir / "a.txt")]) == 0
        assert main(args + ["--out", str(workdir / "b.txt")]) == 0
        assert (workdir / "a.txt").read_bytes() == (workdir / "b.txt").read_bytes()


class TestRender:
    def test_renders_pgm(self, workdir):
        rc = main([
            "render", "--map", str(workdir / "true_map.txt"),
            "--rows", "16", "--cols", "8",
            "--out", str(workdir / "img.pgm"),
        ])
        assert rc == 0
        data = (workdir / "img.pgm").read_bytes()
        assert data.startswith(b"P5\n8 16\n255\n")
        assert len(data) == len(b"P5\n8 16\n255\n") + 16 * 8

    def test_grid_native_shape(self, workdir):
        main([
            "build-grid", "--scans", str(workdir / "scans.txt"),
            "--rows", "4", "--cols", "4", "--out", str(workdir / "g.txt"),
        ])
        rc = main(["render", "--grid", str(workdir / "g.txt"), "--out", str(workdir / "g.pgm")])
        assert rc == 0
        assert (workdir / "g.pgm").read_bytes().startswith(b"P5\n4 4\n255\n")


class TestCheckGrads:
    def test_passes_on_fixture(self, workdir, capsys):
        rc = main([
            "check-grads", "--scans", str(workdir / "scans.txt"),
            "--rows", "2", "--cols", "2", "--seed", "3", "--order", "1",
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["ok"] is True
        assert payload["max_rel_err"] < 1e-5

    def test_order_two(self, workdir, capsys):
        rc = main([
            "check-grads", "--scans", str(workdir / "scans.txt"),
            "--rows", "2", "--cols", "2", "--seed", "3", "--order", "2",
        ])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["order"] == 2


class TestEval:
    def test_writes_reports_and_images(self, workdir):
        rc = main([
            "eval", "--scans", str(workdir / "scans.txt"),
            "--resolutions", "2,3",
            "--truth-rows", "20", "--truth-cols", "20",
            "--out-dir", str(workdir / "eval"),
            "--threads", "1",
        ])
        assert rc == 0
        assert (workdir / "eval" / "report.csv").exists()
        assert (workdir / "eval" / "report.jsonl").exists()
        assert (workdir / "eval" / "truth.pgm").exists()
        for n in (2, 3):
            assert (workdir / "eval" / f"dct_{n}.pgm").exists()
            assert (workdir / "eval" / f"grid_{n}.pgm").exists()
        lines = (workdir / "eval" / "report.csv").read_text().strip().splitlines()
        assert len(lines) == 3


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, workdir):
        cfg = {"rows": 2, "cols": 2, "max_iters": 7}
        cfg_path = workdir / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main([
            "build-dct", "--scans", str(workdir / "scans.txt"),
            "--config", str(cfg_path),
            "--cols", "3",
            "--out", str(workdir / "m.txt"),
            "--report", str(workdir / "r.json"),
        ])
        assert rc in (0, 2)
        head = (workdir / "m.txt").read_text().splitlines()[0].split()
        assert head[0] == "2"  # rows from config
        assert head[1] == "3"  # cols from flag

    def test_fit_config_round_trips_through_file(self, workdir):
        from decaymap import FitConfig

        cfg = FitConfig(rows=2, cols=2, max_iters=11, rel_tol=5e-3, seed=4)
        cfg_path = workdir / "fit.json"
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        loaded = FitConfig.from_dict(json.loads(cfg_path.read_text()))
        assert loaded == cfg
