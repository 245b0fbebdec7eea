import json
import os

import numpy as np
import pytest

from angleattn.cli import CONFIG_DEFAULTS, main
from angleattn.train import SWEEP_CSV_HEADER

FAST = ["--patch", "5", "--dim", "8", "--depth", "1", "--heads", "2",
        "--mlp-dim", "16", "--epochs", "1", "--batch", "32",
        "--train-frac", "0.1", "--val-frac", "0.1"]

SCENE = ["--height", "24", "--width", "24", "--bands", "8",
         "--classes", "3", "--sites", "6"]


@pytest.fixture()
def scene_dir(tmp_path):
    out = str(tmp_path / "scene")
    assert main(["synth", "--out", out, "--seed", "0"] + SCENE) == 0
    return out


def run_train(scene_dir, ckpt, extra=()):
    return main(["train", "--cube", os.path.join(scene_dir, "scene.npy"),
                 "--labels", os.path.join(scene_dir, "labels.npy"),
                 "--out", ckpt, "--seed", "0"] + FAST + list(extra))


class TestSynth:
    def test_writes_scene_and_labels(self, scene_dir):
        assert os.path.exists(os.path.join(scene_dir, "scene.npy"))
        assert os.path.exists(os.path.join(scene_dir, "labels.npy"))
        cube = np.load(os.path.join(scene_dir, "scene.npy"))
        labels = np.load(os.path.join(scene_dir, "labels.npy"))
        assert cube.shape == (24, 24, 8) and cube.dtype == np.dtype("<f4")
        assert labels.shape == (24, 24) and labels.dtype == np.dtype("<u2")

    def test_seed_reproducible_bytes(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            assert main(["synth", "--out", out, "--seed", "5"] + SCENE) == 0
        for name in ("scene.npy", "labels.npy"):
            blob_a = open(os.path.join(a, name), "rb").read()
            blob_b = open(os.path.join(b, name), "rb").read()
            assert blob_a == blob_b

    def test_different_seed_differs(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["synth", "--out", a, "--seed", "1"] + SCENE) == 0
        assert main(["synth", "--out", b, "--seed", "2"] + SCENE) == 0
        assert open(os.path.join(a, "scene.npy"), "rb").read() != \
            open(os.path.join(b, "scene.npy"), "rb").read()

    def test_too_many_classes_for_sites(self, tmp_path):
        code = main(["synth", "--out", str(tmp_path / "x"),
                     "--classes", "8", "--sites", "4"])
        assert code == 2

    def test_missing_out(self):
        assert main(["synth", "--seed", "0"] + SCENE) == 2


class TestTrain:
    def test_happy_path(self, scene_dir, tmp_path):
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt) == 0
        manifest = json.load(open(os.path.join(ckpt, "manifest.json")))
        assert manifest["seed"] == 0
        lines = open(os.path.join(ckpt, "epochs.jsonl")).read().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert set(entry) == {"epoch", "loss", "val_oa"}

    def test_epochs_zero_ok(self, scene_dir, tmp_path):
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt, ["--epochs", "0"]) == 0
        assert open(os.path.join(ckpt, "epochs.jsonl")).read() == ""

    def test_missing_labels_file(self, scene_dir, tmp_path):
        code = main(["train", "--cube", os.path.join(scene_dir, "scene.npy"),
                     "--labels", os.path.join(scene_dir, "nope.npy"),
                     "--out", str(tmp_path / "ckpt")] + FAST)
        assert code == 1

    def test_corrupt_cube(self, tmp_path):
        bad = tmp_path / "bad.npy"
        bad.write_bytes(b"garbage bytes, not a tensor")
        code = main(["train", "--cube", str(bad), "--labels", str(bad),
                     "--out", str(tmp_path / "ckpt")] + FAST)
        assert code == 1

    def test_unknown_variant(self, scene_dir, tmp_path):
        assert run_train(scene_dir, str(tmp_path / "c"), ["--variant", "bogus"]) == 2

    def test_manifest_defaults(self, scene_dir, tmp_path):
        # defaults in the manifest mirror the reference protocol
        assert CONFIG_DEFAULTS["epochs"] == 50
        assert CONFIG_DEFAULTS["batch"] == 128
        assert CONFIG_DEFAULTS["lr"] == 3e-4
        assert CONFIG_DEFAULTS["wd"] == 2e-4
        assert CONFIG_DEFAULTS["clip"] == 1.0
        assert CONFIG_DEFAULTS["smoothing"] == 0.05
        assert CONFIG_DEFAULTS["patch"] == 16
        assert CONFIG_DEFAULTS["dim"] == 64
        assert CONFIG_DEFAULTS["depth"] == 4
        assert CONFIG_DEFAULTS["heads"] == 4
        assert CONFIG_DEFAULTS["mlp_dim"] == 128
        assert CONFIG_DEFAULTS["dropout"] == 0.1
        assert CONFIG_DEFAULTS["train_frac"] == 0.01
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt) == 0
        manifest = json.load(open(os.path.join(ckpt, "manifest.json")))
        assert manifest["config"]["variant"] == "cs2"
        assert manifest["config"]["temperature"] == 0.5

    def test_config_file_and_flag_precedence(self, scene_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 2, "dim": 8, "heads": 2,
                                        "patch": 5, "mlp_dim": 16, "batch": 32,
                                        "train_frac": 0.1, "val_frac": 0.1}))
        ckpt = str(tmp_path / "ckpt")
        code = main(["train", "--config", str(cfg_path),
                     "--cube", os.path.join(scene_dir, "scene.npy"),
                     "--labels", os.path.join(scene_dir, "labels.npy"),
                     "--out", ckpt, "--epochs", "1"])
        assert code == 0
        manifest = json.load(open(os.path.join(ckpt, "manifest.json")))
        assert manifest["config"]["epochs"] == 1   # flag beats file
        assert manifest["config"]["dim"] == 8      # file beats default

    def test_unknown_config_key(self, scene_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"learning_rate": 0.1}))
        code = main(["train", "--config", str(cfg_path),
                     "--cube", os.path.join(scene_dir, "scene.npy"),
                     "--labels", os.path.join(scene_dir, "labels.npy"),
                     "--out", str(tmp_path / "ckpt")] + FAST)
        assert code == 2


class TestEval:
    def test_prints_metrics(self, scene_dir, tmp_path, capsys):
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", ckpt]) == 0
        out = capsys.readouterr().out
        assert out.startswith("OA=")
        assert " AA=" in out and " kappa=" in out

    def test_map_export(self, scene_dir, tmp_path):
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt) == 0
        ppm = str(tmp_path / "map.ppm")
        npy = str(tmp_path / "map.npy")
        assert main(["eval", "--checkpoint", ckpt, "--map", ppm,
                     "--map-npy", npy]) == 0
        blob = open(ppm, "rb").read()
        assert blob.startswith(b"P6\n24 24\n255\n")
        assert len(blob) == len(b"P6\n24 24\n255\n") + 24 * 24 * 3
        preds = np.load(npy)
        assert preds.shape == (24, 24) and preds.dtype == np.dtype("<u2")
        assert preds.min() >= 1 and preds.max() <= 3

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope")]) == 1

    def test_eval_reproducible(self, scene_dir, tmp_path, capsys):
        ckpt = str(tmp_path / "ckpt")
        assert run_train(scene_dir, ckpt) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", ckpt]) == 0
        first = capsys.readouterr().out
        assert main(["eval", "--checkpoint", ckpt]) == 0
        assert capsys.readouterr().out == first


class TestSweep:
    def run_sweep(self, scene_dir, out, variants, seeds=None, snrs=None):
        argv = ["sweep", "--cube", os.path.join(scene_dir, "scene.npy"),
                "--labels", os.path.join(scene_dir, "labels.npy"),
                "--out", out, "--variants", variants] + FAST
        if seeds:
            argv += ["--seeds", seeds]
        if snrs:
            argv += ["--snr-db-list", snrs]
        return main(argv)

    def test_row_count_is_cross_product(self, scene_dir, tmp_path):
        out = str(tmp_path / "rows.csv")
        assert self.run_sweep(scene_dir, out, "cs2,dp", "0,1", "20,10") == 0
        lines = open(out).read().splitlines()
        assert lines[0] == SWEEP_CSV_HEADER
        assert len(lines) == 1 + 2 * 2 * 2

    def test_no_snr_axis(self, scene_dir, tmp_path):
        out = str(tmp_path / "rows.csv")
        assert self.run_sweep(scene_dir, out, "cs2", "0") == 0
        lines = open(out).read().splitlines()
        assert len(lines) == 2
        fields = lines[1].split(",")
        assert fields[0] == "cs2" and fields[1] == "0"
        assert 0.0 <= float(fields[3]) <= 1.0  # oa
        assert float(fields[6]) > 0            # train_seconds

    def test_unknown_variant_exits_2(self, scene_dir, tmp_path):
        assert self.run_sweep(scene_dir, str(tmp_path / "r.csv"), "cs2,bogus") == 2

    def test_parallel_matches_serial(self, scene_dir, tmp_path, monkeypatch):
        serial, parallel = str(tmp_path / "s.csv"), str(tmp_path / "p.csv")
        monkeypatch.setenv("ANGLEATTN_THREADS", "1")
        assert self.run_sweep(scene_dir, serial, "cs2,dp", "0") == 0
        monkeypatch.setenv("ANGLEATTN_THREADS", "2")
        assert self.run_sweep(scene_dir, parallel, "cs2,dp", "0") == 0

        def strip_time(path):
            return [line.rsplit(",", 1)[0] for line in open(path).read().splitlines()]

        assert strip_time(serial) == strip_time(parallel)


class TestUsageErrors:
    def test_no_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--frobnicate", "1"])
        assert exc.value.code == 2
