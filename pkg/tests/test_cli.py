import json

import numpy as np
import pytest

from sentiformer.cli import main

TINY_CONFIG = """\
# tiny geometry for fast CLI runs
d_e = 16
d_h = 8
d_k = 4
d_s = 4
classes = 3
heads_self = 2
heads_cross = 2
epochs = 2
batch_size = 16
"""


@pytest.fixture
def tiny_setup(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(TINY_CONFIG)
    data_path = tmp_path / "data.jsonl"
    rc = main(["gen-synthetic", "--out", str(data_path), "--classes", "3",
               "--per-class", "8", "--d-e", "16", "--seed", "3"])
    assert rc == 0
    return cfg_path, data_path


def train_tiny(tmp_path, cfg_path, data_path, out_name="run", extra=()):
    out = tmp_path / out_name
    rc = main(["train", "--data", str(data_path), "--out", str(out),
               "--config", str(cfg_path), *extra])
    return rc, out


class TestPrompt:
    def test_golden_output(self, capsys):
        assert main(["prompt", "--scene", "beach",
                     "--objects", "person,dog"]) == 0
        assert capsys.readouterr().out.strip() == (
            "the scene or background of the image is beach, and the image "
            "contains the following objects: person, dog")

    def test_empty_objects_is_usage_error(self, capsys):
        assert main(["prompt", "--scene", "beach", "--objects", " , "]) == 1


class TestGenSynthetic:
    def test_writes_expected_count(self, tmp_path, capsys):
        out = tmp_path / "d.jsonl"
        rc = main(["gen-synthetic", "--out", str(out), "--classes", "2",
                   "--per-class", "3", "--d-e", "8"])
        assert rc == 0
        assert len(out.read_text().splitlines()) == 6

    def test_split_writes_two_files(self, tmp_path):
        out = tmp_path / "d.jsonl"
        rc = main(["gen-synthetic", "--out", str(out), "--classes", "2",
                   "--per-class", "10", "--d-e", "8", "--test-fraction", "0.2"])
        assert rc == 0
        assert len((tmp_path / "d-train.jsonl").read_text().splitlines()) == 16
        assert len((tmp_path / "d-test.jsonl").read_text().splitlines()) == 4

    def test_bad_stream_name_is_usage_error(self, tmp_path):
        rc = main(["gen-synthetic", "--out", str(tmp_path / "d.jsonl"),
                   "--informative", "v,x"])
        assert rc == 1


class TestTrainEvalChain:
    def test_full_chain(self, tiny_setup, tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        rc, out = train_tiny(tmp_path, cfg_path, data_path)
        stdout = capsys.readouterr().out
        assert rc == 0
        assert (out / "model.ckpt").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "training_curves.png").exists()
        assert "config d_e=16" in stdout
        assert "config epochs=2" in stdout

        eval_out = tmp_path / "evalout"
        rc = main(["eval", "--model", str(out / "model.ckpt"),
                   "--data", str(data_path), "--out", str(eval_out)])
        stdout = capsys.readouterr().out
        assert rc == 0
        assert stdout.startswith("samples: 24")
        assert (eval_out / "report.txt").exists()
        assert (eval_out / "confusion.png").exists()

        pred_path = tmp_path / "preds.jsonl"
        rc = main(["predict", "--model", str(out / "model.ckpt"),
                   "--data", str(data_path), "--out", str(pred_path)])
        assert rc == 0
        docs = [json.loads(l) for l in pred_path.read_text().splitlines()]
        assert len(docs) == 24
        assert abs(sum(docs[0]["probs"]) - 1.0) < 1e-6

        exp_path = tmp_path / "emb.jsonl"
        rc = main(["export", "--model", str(out / "model.ckpt"),
                   "--data", str(data_path), "--stage", "post",
                   "--out", str(exp_path)])
        assert rc == 0
        assert len(json.loads(exp_path.read_text().splitlines()[0])["vector"]) == 8

    def test_flag_overrides_config_file(self, tiny_setup, tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        rc, out = train_tiny(tmp_path, cfg_path, data_path, extra=["--epochs", "1"])
        assert rc == 0
        assert "config epochs=1" in capsys.readouterr().out
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 3  # ablation comment, header, one epoch

    def test_metrics_deterministic_across_invocations(self, tiny_setup, tmp_path):
        cfg_path, data_path = tiny_setup
        _, out1 = train_tiny(tmp_path, cfg_path, data_path, "r1")
        _, out2 = train_tiny(tmp_path, cfg_path, data_path, "r2")
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_ablation_flag_recorded(self, tiny_setup, tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        rc, out = train_tiny(tmp_path, cfg_path, data_path,
                             extra=["--ablation", "no-vision"])
        assert rc == 0
        first = (out / "metrics.csv").read_text().splitlines()[0]
        assert first == "# ablation: no_vision"

    def test_unknown_ablation_is_usage_error(self, tiny_setup, tmp_path):
        cfg_path, data_path = tiny_setup
        rc, _ = train_tiny(tmp_path, cfg_path, data_path,
                           extra=["--ablation", "no-sound"])
        assert rc == 1

    def test_unknown_config_key_is_usage_error(self, tiny_setup, tmp_path):
        cfg_path, data_path = tiny_setup
        cfg_path.write_text(TINY_CONFIG + "learning_rte = 0.1\n")
        rc, _ = train_tiny(tmp_path, cfg_path, data_path)
        assert rc == 1

    def test_unknown_flag_suggests_alternative(self, tiny_setup, tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", str(data_path), "--out", str(tmp_path / "x"),
                  "--confg", str(cfg_path)])
        assert exc.value.code == 1
        assert "did you mean '--config'" in capsys.readouterr().err

    def test_missing_data_file_is_data_error(self, tiny_setup, tmp_path):
        cfg_path, _ = tiny_setup
        rc, _ = train_tiny(tmp_path, cfg_path, tmp_path / "absent.jsonl")
        assert rc == 2

    def test_checkpoint_data_mismatch_is_data_error(self, tiny_setup, tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        _, out = train_tiny(tmp_path, cfg_path, data_path)
        wide = tmp_path / "wide.jsonl"
        assert main(["gen-synthetic", "--out", str(wide), "--classes", "3",
                     "--per-class", "2", "--d-e", "32", "--seed", "1"]) == 0
        rc = main(["eval", "--model", str(out / "model.ckpt"), "--data", str(wide)])
        assert rc == 2
        assert "d_e=16" in capsys.readouterr().err

    def test_label_exceeding_checkpoint_classes_is_data_error(self, tiny_setup,
                                                              tmp_path, capsys):
        cfg_path, data_path = tiny_setup
        _, out = train_tiny(tmp_path, cfg_path, data_path)
        many = tmp_path / "many.jsonl"
        assert main(["gen-synthetic", "--out", str(many), "--classes", "5",
                     "--per-class", "2", "--d-e", "16", "--seed", "1"]) == 0
        rc = main(["eval", "--model", str(out / "model.ckpt"), "--data", str(many)])
        assert rc == 2
        assert "L=3" in capsys.readouterr().err


class TestGradcheck:
    def test_tiny_defaults_pass(self, capsys):
        rc = main(["gradcheck", "--depth-n", "1", "--depth-m", "1",
                   "--classes", "2", "--batch", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "gradcheck PASS" in out
        assert "max relative error" in out

    def test_corrupted_backward_detected(self, capsys):
        rc = main(["gradcheck", "--depth-n", "1", "--depth-m", "1",
                   "--classes", "2", "--batch", "1", "--corrupt-backward"])
        assert rc == 3
        assert "gradcheck FAIL" in capsys.readouterr().out

    def test_indivisible_head_dims_is_usage_error(self, capsys):
        rc = main(["gradcheck", "--dh", "8", "--dk", "3"])
        assert rc == 1
