import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from fewview import imageio
from fewview.cli import main
from fewview.pipeline import (PipelineConfig, pose_from_json, pose_to_json,
                              run_pipeline)
from fewview.trajectories import look_at

TINY = {
    "image_size": 32,
    "trajectory": {"family": "orbit", "radius": 3.0, "height": 0.5, "n_views": 10},
    "sampler": {"steps": 6, "cfg_weight": 1.0},
    "recon": {"iterations": 25, "patch": 16, "n_samples": 24, "patches_per_iter": 2},
    "grid_resolution": 16,
    "holdout": {"preset": "orbit", "count": 2, "radius": 3.0, "height": 0.6},
}


def tiny_config(**overrides):
    return PipelineConfig.from_json({**TINY, **overrides})


class TestImageIO:
    def test_ppm_roundtrip(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(12, 9, 3))
        path = tmp_path / "x.ppm"
        imageio.write_ppm(path, img)
        back = imageio.read_ppm(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_ppm_rejects_other_formats(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError):
            imageio.read_ppm(path)


class TestConfig:
    def test_rejects_unknown_fields(self):
        with pytest.raises(ValueError, match="bogus"):
            PipelineConfig.from_json({"bogus": 1})

    def test_pose_json_roundtrip(self):
        p = look_at(np.array([2.0, 1.0, -1.0]), np.zeros(3))
        q = pose_from_json(json.loads(json.dumps(pose_to_json(p))))
        np.testing.assert_allclose(q.rotation, p.rotation)
        np.testing.assert_allclose(q.translation, p.translation)

    def test_unknown_oracle_and_family(self):
        cfg = tiny_config(oracle={"kind": "learned"})
        with pytest.raises(ValueError, match="gaussian"):
            cfg.denoiser(cfg.scene_spec())
        cfg = tiny_config(trajectory={"family": "helix"})
        with pytest.raises(ValueError, match="spiral_cylinder"):
            cfg.target_poses(cfg.observed_poses())


def run_dirs_match(a: Path, b: Path) -> bool:
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    if files != sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file()):
        return False
    return all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)


class TestRunPipeline:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = tiny_config()
        r1 = run_pipeline(cfg, tmp_path / "a")
        r2 = run_pipeline(cfg, tmp_path / "b")
        for name in ("target_poses.json", "plan.json", "manifest.json",
                     "grid.ckpt", "report.json"):
            assert (tmp_path / "a" / name).exists()
        assert run_dirs_match(tmp_path / "a", tmp_path / "b")
        assert r1.aggregate == r2.aggregate

    def test_threads_do_not_change_output(self, tmp_path):
        run_pipeline(tiny_config(threads=1), tmp_path / "t1")
        run_pipeline(tiny_config(threads=3), tmp_path / "t3")
        report1 = json.loads((tmp_path / "t1" / "report.json").read_text())
        report3 = json.loads((tmp_path / "t3" / "report.json").read_text())
        assert report1["metrics"] == report3["metrics"]

    def test_failure_recorded_in_report(self, tmp_path):
        cfg = tiny_config(scene={"preset": "does_not_exist"})
        with pytest.raises(ValueError):
            run_pipeline(cfg, tmp_path / "fail")
        report = json.loads((tmp_path / "fail" / "report.json").read_text())
        assert "does_not_exist" in report["error"]

    def test_report_fields(self, tmp_path):
        run_pipeline(tiny_config(), tmp_path / "r")
        report = json.loads((tmp_path / "r" / "report.json").read_text())
        assert set(report) == {"config", "metrics"}
        assert {"per_view", "aggregate"} <= set(report["metrics"])


class TestCli:
    def _write_config(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(TINY))
        return str(path)

    def test_pipeline_command(self, tmp_path, capsys):
        rc = main(["pipeline", "--config", self._write_config(tmp_path),
                   "--out", str(tmp_path / "run")])
        assert rc == 0
        assert "psnr=" in capsys.readouterr().out
        assert (tmp_path / "run" / "report.json").exists()

    def test_staged_run_matches_pipeline(self, tmp_path):
        config = self._write_config(tmp_path)
        main(["pipeline", "--config", config, "--out", str(tmp_path / "mono")])
        staged = tmp_path / "staged"
        for stage in ("trajectory", "plan", "sample", "reconstruct", "render",
                      "evaluate"):
            assert main([stage, "--config", config, "--out", str(staged)]) == 0
        assert run_dirs_match(tmp_path / "mono", staged)

    def test_failure_exit_code(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({**TINY, "scene": {"preset": "nope"}}))
        rc = main(["pipeline", "--config", str(path), "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_flag_overrides(self, tmp_path):
        config = self._write_config(tmp_path)
        rc = main(["trajectory", "--config", config, "--seed", "5",
                   "--steps", "3", "--cfg", "2.0", "--threads", "2",
                   "--out", str(tmp_path / "o")])
        assert rc == 0
        assert (tmp_path / "o" / "target_poses.json").exists()
