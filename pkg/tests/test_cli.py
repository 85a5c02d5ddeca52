"""The command-line surface, end to end on tiny experiments."""

import json

import pytest

from feddesk.cli import main
from feddesk.config import ExperimentConfig, PartitionSpec, save_config
from feddesk.analysis import FineTuneConfig
from feddesk.datasets import SyntheticSpec
from feddesk.engine import FLConfig
from feddesk.losses import LossSpec


@pytest.fixture
def tiny_config_path(tmp_path):
    cfg = ExperimentConfig(
        data=SyntheticSpec(n_classes=4, input_dim=6, per_class=20, seed=5),
        partition=PartitionSpec(strategy="shard", shards_per_client=2),
        fl=FLConfig(
            n_clients=4,
            rounds=3,
            participation=0.5,
            local_epochs=1,
            batch_size=8,
            lr=0.05,
            lr_milestones=(),
            loss=LossSpec(base="drplus", beta=0.9),
            hidden_sizes=(8,),
            feature_dim=6,
            seed=5,
            diag_cadence=2,
        ),
        finetune=FineTuneConfig(lr=0.05, loss=LossSpec(base="dr"), epochs=1, seed=5),
        output_dir=str(tmp_path / "out"),
        seed=5,
    )
    path = tmp_path / "config.json"
    save_config(cfg, path)
    return path, tmp_path


class TestTrain:
    def test_produces_results_and_checkpoints(self, tiny_config_path, capsys):
        path, tmp = tiny_config_path
        assert main(["train", "-c", str(path)]) == 0
        out = tmp / "out"
        assert (out / "results.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "checkpoint_final.json").exists()
        assert (out / "checkpoint_r3.json").exists()
        assert (out / "partition_train.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["rounds_completed"] == 3
        assert 0.0 <= summary["final_accuracy"] <= 1.0
        # the summary echoes the effective config verbatim
        assert summary["config"] == json.loads(path.read_text())

    def test_output_dir_flag_overrides(self, tiny_config_path):
        path, tmp = tiny_config_path
        target = tmp / "elsewhere"
        assert main(["train", "-c", str(path), "--output-dir", str(target)]) == 0
        assert (target / "results.csv").exists()

    def test_output_dir_env_override(self, tiny_config_path, monkeypatch):
        path, tmp = tiny_config_path
        target = tmp / "from_env"
        monkeypatch.setenv("FEDDESK_OUTPUT_DIR", str(target))
        assert main(["train", "-c", str(path)]) == 0
        assert (target / "results.csv").exists()

    def test_missing_config_is_validation_error(self, tmp_path):
        assert main(["train", "-c", str(tmp_path / "nope.json")]) == 1

    def test_byte_identical_reruns(self, tiny_config_path, tmp_path):
        path, _ = tiny_config_path
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["train", "-c", str(path), "--output-dir", str(a)]) == 0
        assert main(["train", "-c", str(path), "--output-dir", str(b)]) == 0
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
        assert (
            a / "checkpoint_final.json"
        ).read_bytes() == (b / "checkpoint_final.json").read_bytes()


class TestPartitionCommand:
    def test_writes_partitions(self, tiny_config_path, capsys):
        path, tmp = tiny_config_path
        assert main(["partition", "-c", str(path)]) == 0
        assert (tmp / "out" / "partition_train.json").exists()
        assert (tmp / "out" / "partition_test.json").exists()
        assert "classes per client" in capsys.readouterr().out


class TestFinetuneCommand:
    def test_sweep_from_checkpoint(self, tiny_config_path, capsys):
        path, tmp = tiny_config_path
        assert main(["train", "-c", str(path)]) == 0
        ckpt = tmp / "out" / "checkpoint_final.json"
        assert main(["finetune", "-c", str(path), "--checkpoint", str(ckpt)]) == 0
        assert (tmp / "out" / "personalization.csv").exists()
        summary = json.loads((tmp / "out" / "personalization_summary.json").read_text())
        assert summary["n_clients"] == 4
        assert "personalized accuracy" in capsys.readouterr().out


class TestGradcheckCommand:
    def test_passes_quickly(self, capsys):
        assert main(["gradcheck", "--trials", "2"]) == 0
        out = capsys.readouterr().out
        assert "all gradients match" in out


class TestEtfcheckCommand:
    def test_valid_build(self, capsys):
        assert main(["etfcheck", "--classes", "10", "--dim", "16"]) == 0
        assert "ok" in capsys.readouterr().out

    def test_invalid_dims_exit_one(self, capsys):
        assert main(["etfcheck", "--classes", "10", "--dim", "4"]) == 1


class TestReportCommand:
    def test_summarizes_results(self, tiny_config_path, capsys):
        path, tmp = tiny_config_path
        main(["train", "-c", str(path)])
        capsys.readouterr()
        assert main(["report", str(tmp / "out" / "results.csv"), "--json"]) == 0
        out = capsys.readouterr().out
        assert "final accuracy" in out
        assert "best_accuracy" in out
