import json
import os

import numpy as np
import pytest

from spectralsnake.cli import ExitCode, main
from spectralsnake.hsidata import HsiCube, SplitSpec, load_cube, write_container
from spectralsnake.trainer import TrainConfig, evaluate, predict_map, train

from conftest import TINY_NETWORK, make_separable_cube


def toy_train_config(data_dir, epochs=6, seed=0, lr=5e-3):
    return TrainConfig(
        data=str(data_dir),
        patch=5,
        split=SplitSpec(6, 1, 3, seed=seed),
        epochs=epochs,
        batch_size=32,
        lr=lr,
        early_stop_patience=15,
        seed=seed,
        network=dict(TINY_NETWORK),
    )


@pytest.fixture
def separable_dir(tmp_path):
    cube = make_separable_cube()
    path = tmp_path / "separable"
    write_container(path, cube)
    return path


class TestTrain:
    def test_toy_reaches_perfect_train_oa_quickly(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=5)
        result = train(cfg, tmp_path / "toy.ckpt", log_path=tmp_path / "log.json")
        assert any(e["train_oa"] == 1.0 for e in result.log[:5])
        log = json.loads((tmp_path / "log.json").read_text())
        assert log["best_epoch"] == result.best_epoch

    def test_seeded_runs_reproduce_epoch1_loss(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=2, seed=7)
        r1 = train(cfg, tmp_path / "a.ckpt")
        r2 = train(toy_train_config(separable_dir, epochs=2, seed=7), tmp_path / "b.ckpt")
        assert round(r1.log[0]["train_loss"], 6) == round(r2.log[0]["train_loss"], 6)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_best_checkpoint_tracks_validation(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=6)
        result = train(cfg, tmp_path / "toy.ckpt")
        best = max(e["val_oa"] for e in result.log)
        assert result.best_val_oa == best
        assert all(result.best_val_oa >= e["val_oa"] for e in result.log)

    def test_early_stopping_respects_patience(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=40)
        cfg.early_stop_patience = 3
        result = train(cfg, tmp_path / "toy.ckpt")
        stopped = result.log[-1]["epoch"]
        assert stopped < 40
        # last epoch with a strict validation improvement, from the log
        best = -1.0
        last_strict = 0
        for e in result.log:
            if e["val_oa"] > best:
                best = e["val_oa"]
                last_strict = e["epoch"]
        # never stops before `patience` epochs without strict improvement
        assert stopped - last_strict >= 3


class TestEvaluate:
    def test_converged_train_split_is_perfect(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=14)
        train(cfg, tmp_path / "toy.ckpt")
        rep = evaluate(tmp_path / "toy.ckpt", split="train")
        assert rep["oa"] == 1.0

    def test_deterministic_reports(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=3)
        train(cfg, tmp_path / "toy.ckpt")
        a = json.dumps(evaluate(tmp_path / "toy.ckpt", split="test"), sort_keys=True)
        b = json.dumps(evaluate(tmp_path / "toy.ckpt", split="test"), sort_keys=True)
        assert a == b

    def test_per_class_vector_length(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=2)
        train(cfg, tmp_path / "toy.ckpt")
        rep = evaluate(tmp_path / "toy.ckpt", split="val")
        assert len(rep["per_class"]) == 2

    def test_dataset_mismatch_rejected(self, separable_dir, tmp_path):
        from spectralsnake.network import CheckpointError

        cfg = toy_train_config(separable_dir, epochs=2)
        train(cfg, tmp_path / "toy.ckpt")
        other = make_separable_cube(bands=6)
        write_container(tmp_path / "other", other)
        with pytest.raises(CheckpointError, match="bands"):
            evaluate(tmp_path / "toy.ckpt", split="test", data=str(tmp_path / "other"))


class TestPredictMap:
    def test_converged_map_matches_ground_truth(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=14)
        train(cfg, tmp_path / "toy.ckpt")
        raster = predict_map(tmp_path / "toy.ckpt", tmp_path / "map.ppm")
        cube = load_cube(separable_dir)
        assert raster.shape == (cube.height, cube.width)
        labeled = cube.labels > 0
        assert np.array_equal(raster[labeled], cube.labels[labeled])
        assert (raster[~labeled] == 0).all()

    def test_ppm_dimensions_and_black_background(self, separable_dir, tmp_path):
        cfg = toy_train_config(separable_dir, epochs=2)
        train(cfg, tmp_path / "toy.ckpt")
        # all-unlabeled variant of the same cube
        cube = make_separable_cube()
        cube.labels[:] = 0
        write_container(tmp_path / "empty", cube)
        predict_map(tmp_path / "toy.ckpt", tmp_path / "empty.ppm", data=str(tmp_path / "empty"))
        data = (tmp_path / "empty.ppm").read_bytes()
        header, pixels = data.split(b"255\n", 1)
        assert header.startswith(b"P6\n16 16\n")
        assert pixels == b"\x00" * (16 * 16 * 3)


class TestCli:
    def test_train_eval_map_roundtrip(self, toy_container, tmp_path):
        ckpt = tmp_path / "toy.ckpt"
        code = main([
            "train", "--data", toy_container, "--patch", "5", "--split", "6:1:3",
            "--epochs", "2", "--seed", "3", "--out", str(ckpt),
            "--log", str(tmp_path / "log.json"),
            "--config", str(self._config_file(tmp_path, toy_container)),
        ])
        assert code == ExitCode.OK
        assert ckpt.exists()
        code = main(["eval", "--ckpt", str(ckpt), "--split", "val",
                     "--json", str(tmp_path / "metrics.json")])
        assert code == ExitCode.OK
        rep = json.loads((tmp_path / "metrics.json").read_text())
        assert 0.0 <= rep["oa"] <= 1.0
        code = main(["map", "--ckpt", str(ckpt), "--out", str(tmp_path / "map.ppm")])
        assert code == ExitCode.OK
        assert (tmp_path / "map.ppm").stat().st_size > 0

    def _config_file(self, tmp_path, data_dir):
        cfg = TrainConfig(data=str(data_dir), network=dict(TINY_NETWORK))
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        return path

    def test_missing_data_dir_exit_code(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "x.ckpt")])
        assert code == ExitCode.DATA

    def test_bad_checkpoint_exit_code(self, tmp_path, toy_container):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"\x00" * 64)
        code = main(["eval", "--ckpt", str(bad), "--split", "test"])
        assert code == ExitCode.CHECKPOINT

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_code(self, separable_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg = TrainConfig(data=str(separable_dir), patch=5, epochs=1, lr=1e12,
                          network=dict(TINY_NETWORK))
        cfg_path.write_text(json.dumps(cfg.to_dict()))
        code = main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "d.ckpt")])
        assert code in (ExitCode.TRAINING, ExitCode.OK)  # may survive one epoch
