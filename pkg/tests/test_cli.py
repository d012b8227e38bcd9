"""CLI tests: subcommand wiring, exit codes (0 success / 1 input error /
2 internal), --set overrides, and printed summaries."""

import os
import subprocess
import sys

import pytest

from gazemoe.cli import main

SPEC_TEXT = """\
num_subjects=6
samples_per_subject=6
image_size=24
num_classes=3
task=blob
blob_radii=2.5,4.0,6.0
blob_intensities=0.6,0.8,1.0
heatmap_sigma=3.0
seed=0
"""

TRAIN_TEXT = """\
lr=0.003
step_size=50
gamma=0.5
epochs=1
batch_size=12
lambda=0.01
seed=1
fold=0
folds=3
model.stem_channels=4
model.stage_channels=4,8
model.blocks_per_stage=1,1
model.stage_strides=1,2
model.hybrid_positions=1:0
n=2
k=1
model.gaze_encoder_channels=4,8
model.gaze_feature_width=8
model.num_classes=3
model.seed=3
augment.noise_sigma=0.02
"""


def run_cli(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli"))
    spec_path = os.path.join(root, "spec.txt")
    config_path = os.path.join(root, "train.txt")
    with open(spec_path, "w") as fh:
        fh.write(SPEC_TEXT)
    with open(config_path, "w") as fh:
        fh.write(TRAIN_TEXT)
    data_dir = os.path.join(root, "data")
    assert run_cli(["synth-gen", "--spec", spec_path, "--out", data_dir]) == 0
    manifest = os.path.join(data_dir, "manifest.csv")
    run_dir = os.path.join(root, "run")
    assert run_cli(["train", "--config", config_path, "--manifest", manifest,
                    "--out", run_dir]) == 0
    return {
        "root": root,
        "spec": spec_path,
        "config": config_path,
        "manifest": manifest,
        "run": run_dir,
        "checkpoint": os.path.join(run_dir, "checkpoint_final"),
    }


class TestUsage:
    def test_no_args_prints_usage_and_exits_1(self, capsys):
        assert main([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_command_exits_1(self):
        assert run_cli(["frobnicate"]) == 1

    def test_missing_required_argument_exits_1(self):
        assert run_cli(["train", "--config"]) == 1

    def test_subprocess_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "gazemoe"],
                              capture_output=True, text=True)
        assert proc.returncode == 1
        assert "usage:" in proc.stderr


class TestSynthGen:
    def test_prints_manifest_path(self, workspace, capsys):
        out = os.path.join(workspace["root"], "data2")
        assert run_cli(["synth-gen", "--spec", workspace["spec"],
                        "--out", out]) == 0
        printed = capsys.readouterr().out.strip()
        assert printed == os.path.join(out, "manifest.csv")
        assert os.path.isfile(printed)

    def test_set_overrides_spec(self, workspace):
        out = os.path.join(workspace["root"], "data3")
        assert run_cli(["synth-gen", "--spec", workspace["spec"], "--out", out,
                        "--set", "num_subjects=3",
                        "--set", "samples_per_subject=2"]) == 0
        with open(os.path.join(out, "manifest.csv")) as fh:
            assert len(fh.read().strip().split("\n")) == 1 + 6

    def test_invalid_override_value_exits_1(self, workspace, capsys):
        out = os.path.join(workspace["root"], "data4")
        assert run_cli(["synth-gen", "--spec", workspace["spec"], "--out", out,
                        "--set", "task=volleyball"]) == 1
        assert "error" in capsys.readouterr().err

    def test_malformed_set_exits_1(self, workspace, capsys):
        out = os.path.join(workspace["root"], "data5")
        assert run_cli(["synth-gen", "--spec", workspace["spec"], "--out", out,
                        "--set", "num_subjects"]) == 1
        assert "KEY=VALUE" in capsys.readouterr().err


class TestTrain:
    def test_writes_outputs_and_prints_summary(self, workspace, capsys):
        # The module fixture already trained; re-run into a fresh dir to
        # capture stdout.
        out = os.path.join(workspace["root"], "run2")
        assert run_cli(["train", "--config", workspace["config"],
                        "--manifest", workspace["manifest"], "--out", out,
                        "--set", "epochs=0"]) == 0
        printed = capsys.readouterr().out
        assert "metrics:" in printed
        assert "checkpoint_best:" in printed
        assert "final test: acc" in printed
        assert os.path.isfile(os.path.join(out, "metrics.csv"))
        assert os.path.isdir(os.path.join(out, "checkpoint_final"))

    def test_missing_config_exits_1(self, workspace, capsys):
        assert run_cli(["train", "--config", "/nonexistent.txt",
                        "--manifest", workspace["manifest"],
                        "--out", os.path.join(workspace["root"], "x")]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key_exits_1(self, workspace, tmp_path, capsys):
        bad = os.path.join(tmp_path, "bad.txt")
        with open(bad, "w") as fh:
            fh.write(TRAIN_TEXT + "warp_factor=9\n")
        assert run_cli(["train", "--config", bad,
                        "--manifest", workspace["manifest"],
                        "--out", os.path.join(tmp_path, "x")]) == 1
        assert "unknown config key" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_training_exits_2(self, workspace, tmp_path, capsys):
        assert run_cli(["train", "--config", workspace["config"],
                        "--manifest", workspace["manifest"],
                        "--out", os.path.join(tmp_path, "x"),
                        "--set", "lr=1e200"]) == 2
        assert "internal error" in capsys.readouterr().err


class TestEval:
    def test_prints_metrics(self, workspace, capsys):
        assert run_cli(["eval", "--checkpoint", workspace["checkpoint"],
                        "--manifest", workspace["manifest"], "--fold", "0"]) == 0
        printed = capsys.readouterr().out
        for key in ("samples:", "loss_cls:", "loss_lb:", "loss_total:",
                    "acc:", "auc:"):
            assert key in printed

    def test_missing_checkpoint_exits_1(self, workspace, capsys):
        assert run_cli(["eval", "--checkpoint", "/no/such/dir",
                        "--manifest", workspace["manifest"]]) == 1
        assert "error" in capsys.readouterr().err

    def test_purity_lines_on_patterns_data(self, workspace, capsys):
        root = workspace["root"]
        data = os.path.join(root, "patterns")
        assert run_cli(["synth-gen", "--spec", workspace["spec"], "--out", data,
                        "--set", "task=patterns", "--set", "num_classes=4",
                        "--set", "num_subjects=4",
                        "--set", "samples_per_subject=4"]) == 0
        run_dir = os.path.join(root, "patterns_run")
        assert run_cli(["train", "--config", workspace["config"],
                        "--manifest", os.path.join(data, "manifest.csv"),
                        "--out", run_dir,
                        "--set", "epochs=0", "--set", "folds=2",
                        "--set", "model.num_classes=4", "--set", "n=4"]) == 0
        capsys.readouterr()
        assert run_cli(["eval",
                        "--checkpoint", os.path.join(run_dir, "checkpoint_final"),
                        "--manifest", os.path.join(data, "manifest.csv")]) == 0
        printed = capsys.readouterr().out
        assert "purity_b0_dd:" in printed
        assert "purity_b0_de:" in printed


class TestGradcheck:
    def test_pass_prints_and_exits_0(self, workspace, capsys):
        assert run_cli(["gradcheck", "--config", workspace["config"],
                        "--coords", "2"]) == 0
        printed = capsys.readouterr().out
        assert printed.startswith("PASS")
        assert "max rel err" in printed


class TestRouteDump:
    def test_writes_csv(self, workspace):
        out = os.path.join(workspace["root"], "routes.csv")
        assert run_cli(["route-dump", "--checkpoint", workspace["checkpoint"],
                        "--manifest", workspace["manifest"], "--out", out]) == 0
        with open(out) as fh:
            header = fh.readline().strip().split(",")
        assert header[:3] == ["sample_id", "block_id", "branch"]
