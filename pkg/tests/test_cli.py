"""
Tests de la interfaz de línea de comandos
"""

import json
import logging

import numpy as np
import pytest

from src.cli import build_config, build_parser, main
from src.core import LABEL, DisplacementField, Volume
from src.volume_io import read_field, read_segi, read_volume, write_field, write_volume


@pytest.fixture(autouse=True)
def _restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def phantom_dir(tmp_path):
    """Par identidad 16^3 generado con el subcomando phantom"""
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"dims": [16, 16, 16]}))
    out = tmp_path / "phantom"
    assert main(["phantom", "--spec", str(spec), "--out-dir", str(out)]) == 0
    return out


def _register_args(phantom_dir, out, *extra):
    return ["register",
            "--moving", str(phantom_dir / "moving.json"),
            "--fixed", str(phantom_dir / "fixed.json"),
            "--out-ddf-forward", str(out / "u.json"),
            "--out-ddf-backward", str(out / "v.json"),
            "--out-moved", str(out / "moved.json"),
            "--trace", str(out / "trace.jsonl"),
            "--levels", "2", "--iters", "10", *extra]


class TestParser:

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["register", "--bogus"])
        assert excinfo.value.code == 2

    def test_config_layering(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"lambda2": 3.0, "step_size": 0.1, "levels": 2}))
        args = build_parser().parse_args([
            "register", "--moving", "m", "--fixed", "f", "--out-ddf-forward", "u",
            "--out-ddf-backward", "v", "--out-moved", "w",
            "--config", str(config), "--preset", "cardiac", "--sigmas", "1,2", "--levels", "4",
        ])
        cfg = build_config(args)
        assert cfg.step_size == 0.1
        assert cfg.lambda2 == 10.0
        assert cfg.levels == 4
        assert cfg.sigmas == (1.0, 2.0)


class TestPhantomAndEval:

    def test_phantom_outputs(self, phantom_dir):
        names = {"moving.json", "fixed.json", "moving_label.json", "fixed_label.json", "truth.json"}
        assert names <= {p.name for p in phantom_dir.iterdir()}
        assert read_volume(phantom_dir / "fixed_label.json").is_label
        assert read_field(phantom_dir / "truth.json").dims == (16, 16, 16)

    def test_eval_identical_labels(self, phantom_dir, tmp_path, capsys):
        out = tmp_path / "report.txt"
        label = str(phantom_dir / "fixed_label.json")
        assert main(["eval", "--a", label, "--b", label, "--out", str(out)]) == 0

        assert "100.00±0.00" in out.read_text(encoding="utf-8")
        assert "100.00±0.00" in capsys.readouterr().out
        record = json.loads((tmp_path / "report.txt.json").read_text())
        assert [e["dice"] for e in record["entries"]] == [1.0]
        assert record["entries"][0]["asd"] == 0.0

    def test_badly_typed_phantom_spec(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"dims": "abc", "noise_sigma": "alto"}))
        assert main(["phantom", "--spec", str(spec), "--out-dir", str(tmp_path / "out")]) == 1
        assert "error [phantom]" in capsys.readouterr().err


class TestRegister:

    def test_identity_pair(self, phantom_dir, tmp_path):
        out = tmp_path / "run"
        assert main(_register_args(phantom_dir, out)) == 0
        u = read_field(out / "u.json")
        assert u.magnitude().mean() < 0.1
        assert read_volume(out / "moved.json").dims == (16, 16, 16)

        lines = (out / "trace.jsonl").read_text().splitlines()
        assert len(lines) == 20
        assert {"level", "iteration", "l_sg", "l_cc", "total"} <= set(json.loads(lines[0]))

    def test_reproducible_outputs(self, phantom_dir, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(_register_args(phantom_dir, first, "--seed", "5")) == 0
        assert main(_register_args(phantom_dir, second, "--seed", "5")) == 0
        for name in ("u.raw", "v.raw", "moved.raw", "trace.jsonl"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_missing_input(self, tmp_path, capsys):
        missing = tmp_path / "nothing"
        code = main(_register_args(missing, tmp_path / "out"))
        assert code == 1
        assert "error [io]" in capsys.readouterr().err

    def test_dims_mismatch(self, tmp_path, capsys):
        write_volume(Volume(np.zeros((8, 8, 8))), tmp_path / "moving.json")
        write_volume(Volume(np.zeros((8, 8, 9))), tmp_path / "fixed.json")
        assert main(_register_args(tmp_path, tmp_path / "out")) == 1
        assert "error [register]" in capsys.readouterr().err

    @pytest.mark.parametrize("values", [{"sigmas": 1.0}, {"levels": "x"}])
    def test_badly_typed_config_file(self, phantom_dir, tmp_path, capsys, values):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps(values))
        code = main(_register_args(phantom_dir, tmp_path / "out", "--config", str(config)))
        assert code == 1
        assert "error [config]" in capsys.readouterr().err

    def test_resample_to_fixed(self, tmp_path, smooth_volume):
        write_volume(smooth_volume((8, 8, 8), seed=1), tmp_path / "moving.json")
        write_volume(smooth_volume((10, 10, 10), seed=2), tmp_path / "fixed.json")
        out = tmp_path / "out"
        code = main(_register_args(tmp_path, out, "--resample-to-fixed") + ["--levels", "1", "--iters", "2"])
        assert code == 0
        assert read_field(out / "u.json").dims == (10, 10, 10)


class TestTools:

    def test_warp_nearest_with_zero_field(self, tmp_path, label_cube):
        labels = label_cube(structure_id=3)
        write_volume(labels, tmp_path / "labels.json")
        write_field(DisplacementField.zeros(labels.dims), tmp_path / "zero.json")
        assert main(["warp", "--in", str(tmp_path / "labels.json"), "--ddf", str(tmp_path / "zero.json"),
                     "--out", str(tmp_path / "moved.json"), "--nearest"]) == 0
        moved = read_volume(tmp_path / "moved.json")
        assert moved.kind == LABEL
        np.testing.assert_array_equal(moved.data, labels.data)

    def test_segi_dump(self, tmp_path, smooth_volume):
        write_volume(smooth_volume((8, 8, 8)), tmp_path / "vol.json")
        assert main(["segi-dump", "--in", str(tmp_path / "vol.json"), "--sigmas", "1,2",
                     "--out", str(tmp_path / "segi.json")]) == 0
        field = read_segi(tmp_path / "segi.json")
        assert field.sigmas == (1.0, 2.0)
        assert field.dims == (8, 8, 8)

    def test_overlay(self, phantom_dir, tmp_path):
        out = tmp_path / "slice.ppm"
        assert main(["overlay", "--fixed", str(phantom_dir / "fixed.json"),
                     "--labels", f"{phantom_dir / 'fixed_label.json'},{phantom_dir / 'moving_label.json'}",
                     "--plane", "coronal", "--index", "8", "--out", str(out)]) == 0
        assert out.read_bytes().startswith(b"P6")

    def test_overlay_bad_index(self, phantom_dir, tmp_path, capsys):
        code = main(["overlay", "--fixed", str(phantom_dir / "fixed.json"),
                     "--index", "16", "--out", str(tmp_path / "slice.ppm")])
        assert code == 1
        assert "error [" in capsys.readouterr().err

    def test_output_dir_env(self, phantom_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("SEGIREG_OUTPUT_DIR", str(tmp_path / "outputs"))
        label = str(phantom_dir / "fixed_label.json")
        assert main(["eval", "--a", label, "--b", label, "--out", "nested/report.txt"]) == 0
        assert (tmp_path / "outputs" / "nested" / "report.txt").exists()


class TestBatch:

    def test_failed_pair_does_not_stop_batch(self, phantom_dir, tmp_path, capsys):
        manifest = tmp_path / "manifest.json"
        good = {"name": "good", "moving": "phantom/moving.json", "fixed": "phantom/fixed.json",
                "moving_label": "phantom/moving_label.json", "fixed_label": "phantom/fixed_label.json",
                "ids": [1]}
        broken = dict(good, name="broken", moving="phantom/absent.json")
        manifest.write_text(json.dumps({"pairs": [good, broken]}))
        out = tmp_path / "batch"

        code = main(["batch", "--manifest", str(manifest), "--out-dir", str(out),
                     "--levels", "1", "--iters", "3"])
        assert code == 1
        assert "error [batch]" in capsys.readouterr().err

        record = json.loads((out / "report.txt.json").read_text())
        assert [e["case"] for e in record["entries"]] == ["good"]
        assert (out / "good" / "ddf_forward.json").exists()
        assert (out / "good" / "trace.jsonl").exists()
        assert not (out / "broken").exists()

    def test_empty_manifest(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"pairs": []}))
        assert main(["batch", "--manifest", str(manifest), "--out-dir", str(tmp_path / "out")]) == 1
        assert "error [batch]" in capsys.readouterr().err
