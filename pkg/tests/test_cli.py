"""CLI dispatch, run-directory conventions, and the checkpoint format."""

import filecmp
import json
import os

import numpy as np
import pytest

from posgar.checkpoint import (
    CheckpointError,
    config_fingerprint,
    load_checkpoint,
    save_checkpoint,
)
from posgar.cli import main
from posgar.graphs import EdgeScheme
from posgar.model import GarModel, ModelConfig, collate
from posgar.data import SynthConfig, generate_synthetic, load_dataset


SMALL = ModelConfig(width=8, depth=2, heads=2, head_hidden=8)


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli") / "data")
    rc = main(["synth", "--out", root, "--seed", "5", "--matches", "2,1,1",
               "--events", "30"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def small_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps({
        "width": 8, "depth": 2, "heads": 2, "head_hidden": 8,
        "samples_per_class": 20, "epoch_draw_factor": 3, "max_epochs": 1,
    }))
    return str(path)


class TestCheckpoint:
    def roundtrip_model(self):
        return GarModel(SMALL, seed=4)

    def test_save_load_save_bitwise(self, tmp_path):
        m = self.roundtrip_model()
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_checkpoint(m, p1)
        m2 = load_checkpoint(p1)
        save_checkpoint(m2, p2)
        assert filecmp.cmp(p1, p2, shallow=False)

    def test_roundtrip_logits_within_f32_quantization(self, tmp_path, data_root):
        ds = load_dataset(data_root)
        batch = collate(ds.windows("train")[:4], EdgeScheme.parse("positional"))
        m = self.roundtrip_model()
        # train-like weights: nonzero head so logits are nontrivial
        rng = np.random.default_rng(0)
        m.params["head.fc2.w"].data[:] = rng.normal(0, 0.1, size=(8, 10))
        before = m.forward(batch.feats, batch.present, batch.edge_src,
                           batch.edge_dst).data
        path = str(tmp_path / "m.bin")
        save_checkpoint(m, path)
        after = load_checkpoint(path).forward(
            batch.feats, batch.present, batch.edge_src, batch.edge_dst
        ).data
        rel = np.abs(after - before) / np.maximum(np.abs(before), 1e-3)
        assert rel.max() <= 1e-5

    def test_truncated_payload_rejected_with_offset(self, tmp_path):
        m = self.roundtrip_model()
        path = str(tmp_path / "t.bin")
        save_checkpoint(m, path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-40])
        with pytest.raises(CheckpointError, match="offset"):
            load_checkpoint(path)

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        m = self.roundtrip_model()
        path = str(tmp_path / "f.bin")
        save_checkpoint(m, path)
        with pytest.raises(CheckpointError, match="match"):
            load_checkpoint(path, expected_config=ModelConfig())

    def test_refuses_overwrite_without_force(self, tmp_path):
        m = self.roundtrip_model()
        path = str(tmp_path / "o.bin")
        save_checkpoint(m, path)
        with pytest.raises(CheckpointError, match="force"):
            save_checkpoint(m, path)
        save_checkpoint(m, path, force=True)

    def test_fingerprint_is_config_function(self):
        assert config_fingerprint(SMALL) == config_fingerprint(
            ModelConfig.from_dict(SMALL.to_dict())
        )
        assert config_fingerprint(SMALL) != config_fingerprint(ModelConfig())


class TestCliBasics:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--warp-speed"])
        assert exc.value.code == 2

    def test_synth_determinism(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            assert main(["synth", "--out", out, "--seed", "7",
                         "--matches", "1,1,1", "--events", "20"]) == 0
        for dirpath, _, files in os.walk(a):
            rel = os.path.relpath(dirpath, a)
            for f in files:
                assert filecmp.cmp(os.path.join(dirpath, f),
                                   os.path.join(b, rel, f), shallow=False)

    def test_inspect_conservation(self, data_root, capsys):
        assert main(["inspect", "--data", data_root]) == 0
        summary = json.loads(capsys.readouterr().out)
        train = summary["splits"]["train"]
        assert sum(train["class_histogram"].values()) == train["events"]
        assert summary["parameter_count"] == 206430

    def test_unknown_config_key_rejected(self, tmp_path, data_root, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"wdith": 8}')
        rc = main(["inspect", "--data", data_root, "--config", str(cfg)])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "wdith" in err["message"]

    def test_missing_data_dir_is_clean_error(self, capsys):
        rc = main(["inspect", "--data", "/nonexistent/nowhere"])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "error" in err


class TestTrainEvalFlow:
    def test_train_writes_run_dir_and_eval_matches(
        self, data_root, small_cfg_file, tmp_path, capsys
    ):
        out = str(tmp_path / "run")
        rc = main(["train", "--config", small_cfg_file, "--data", data_root,
                   "--out", out, "--quiet"])
        assert rc == 0
        for f in ("config.json", "log.jsonl", "report.json", "checkpoint.bin"):
            assert os.path.exists(os.path.join(out, f)), f
        assert not os.path.exists(os.path.join(out, ".lock"))
        report = json.load(open(os.path.join(out, "report.json")))
        config = json.load(open(os.path.join(out, "config.json")))
        assert config["width"] == 8
        capsys.readouterr()

        # rerun refused without --force
        rc = main(["train", "--config", small_cfg_file, "--data", data_root,
                   "--out", out, "--quiet"])
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "force" in err["message"]

        # eval the checkpoint: same test balanced accuracy as the report
        rc = main(["eval", "--config", small_cfg_file, "--data", data_root,
                   "--checkpoint", os.path.join(out, "checkpoint.bin")])
        assert rc == 0
        evaluated = json.loads(capsys.readouterr().out)
        assert evaluated["balanced_accuracy"] == pytest.approx(
            report["balanced_accuracy"]
        )

    def test_lock_file_blocks_concurrent_runs(
        self, data_root, small_cfg_file, tmp_path, capsys
    ):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".lock").touch()
        rc = main(["train", "--config", small_cfg_file, "--data", data_root,
                   "--out", str(out), "--quiet"])
        assert rc == 1
        assert "locked" in json.loads(capsys.readouterr().err)["message"]

    def test_gradcheck_subcommand(self, data_root, tmp_path, capsys):
        cfg = tmp_path / "gc.json"
        cfg.write_text(json.dumps({
            "width": 8, "depth": 2, "heads": 2, "head_hidden": 8,
        }))
        rc = main(["gradcheck", "--config", str(cfg), "--data", data_root,
                   "--batch", "2"])
        out = capsys.readouterr().out
        assert rc == 0, out
        assert "PASS" in out
