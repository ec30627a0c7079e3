"""Command line behavior: every subcommand, success and failure paths."""

import subprocess
import sys

import pytest

from graphreid.cli import main

SPEC_TEXT = """\
identities = 3
cameras = 2
clips_per_identity_per_camera = 2
frames = 3
height = 4
width = 3
channels = 10
seed = 3
"""

CONFIG_TEXT = """\
channels = 10
frames = 3
height = 4
width = 3
tau = 3
num_layers = 1
batch_identities = 2
clips_per_identity = 2
steps = 2
lr = 1e-3
"""


@pytest.fixture()
def workspace(tmp_path):
    spec = tmp_path / "synth.cfg"
    spec.write_text(SPEC_TEXT, encoding="utf-8")
    config = tmp_path / "run.cfg"
    config.write_text(CONFIG_TEXT, encoding="utf-8")
    return tmp_path


def run_cli(*argv):
    return main(list(argv))


class TestGenData:
    def test_writes_dataset_directory(self, workspace, capsys):
        out = workspace / "data"
        assert run_cli("gen-data", "--spec", str(workspace / "synth.cfg"),
                       "--out", str(out)) == 0
        assert (out / "meta.json").exists()
        assert (out / "features.bin").exists()
        assert "12 clips" in capsys.readouterr().out

    def test_bad_spec_exits_nonzero(self, workspace, capsys):
        bad = workspace / "bad.cfg"
        bad.write_text("identities = -3\n", encoding="utf-8")
        assert run_cli("gen-data", "--spec", str(bad),
                       "--out", str(workspace / "d")) == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEval:
    @pytest.fixture()
    def trained(self, workspace, capsys):
        data = workspace / "data"
        run_cli("gen-data", "--spec", str(workspace / "synth.cfg"),
                "--out", str(data))
        ckpt = workspace / "model.ckpt"
        code = run_cli("train", "--config", str(workspace / "run.cfg"),
                       "--data", str(data), "--out", str(ckpt))
        capsys.readouterr()
        assert code == 0
        return workspace, data, ckpt

    def test_train_writes_checkpoint_and_log(self, trained):
        workspace, _, ckpt = trained
        assert ckpt.exists()
        log = ckpt.with_name(ckpt.name + ".log")
        lines = log.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("step 0 ")

    def test_eval_runs_from_checkpoint_alone(self, trained, capsys):
        workspace, data, ckpt = trained
        report = workspace / "report.txt"
        assert run_cli("eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--report", str(report)) == 0
        text = report.read_text(encoding="utf-8")
        assert "Rank-1:" in text
        assert "mAP:" in text
        assert "Rank-1:" in capsys.readouterr().out

    def test_train_rejects_mismatched_dataset(self, workspace, capsys):
        data = workspace / "data"
        run_cli("gen-data", "--spec", str(workspace / "synth.cfg"),
                "--out", str(data))
        wide = workspace / "wide.cfg"
        wide.write_text(CONFIG_TEXT.replace("channels = 10",
                                            "channels = 20"),
                        encoding="utf-8")
        assert run_cli("train", "--config", str(wide), "--data", str(data),
                       "--out", str(workspace / "w.ckpt")) == 1
        assert "error:" in capsys.readouterr().err

    def test_eval_rejects_corrupt_checkpoint(self, trained, capsys):
        workspace, data, ckpt = trained
        blob = bytearray(ckpt.read_bytes())
        blob[:4] = b"ZZZZ"
        ckpt.write_bytes(bytes(blob))
        assert run_cli("eval", "--ckpt", str(ckpt), "--data", str(data),
                       "--report", str(workspace / "r.txt")) == 1
        assert "magic" in capsys.readouterr().err


class TestGradcheck:
    def test_tiny_config_passes(self, workspace, capsys):
        assert run_cli("gradcheck", "--config",
                       str(workspace / "run.cfg")) == 0
        out = capsys.readouterr().out
        assert "gradcheck passed" in out
        assert "max relative error" in out


class TestAblate:
    def test_layer_axis_prints_table(self, workspace, capsys):
        assert run_cli("ablate", "--config", str(workspace / "run.cfg"),
                       "--axis", "L") == 0
        out = capsys.readouterr().out
        assert "| arm | final loss | Rank-1 | mAP |" in out
        for label in ("L=1", "L=2", "L=3"):
            assert label in out

    def test_unknown_axis_rejected_by_parser(self, workspace):
        with pytest.raises(SystemExit):
            run_cli("ablate", "--config", str(workspace / "run.cfg"),
                    "--axis", "nope")


class TestParser:
    def test_missing_subcommand_exits(self):
        with pytest.raises(SystemExit):
            run_cli()

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "graphreid", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "gen-data" in proc.stdout
