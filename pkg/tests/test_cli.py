"""Command-line surface: exit codes, config plumbing, and the full flow."""

import json

import pytest

from stnhcl.cli import main
from stnhcl.config import RunConfig
from stnhcl.synth import read_manifest

CONFIG_TEXT = """\
image_size = 32
num_patches = 16
iterations = 2
num_eval_samples = 1
data_dir = {data}
eval_dir = {data}
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert main(["synth", "--out", str(root), "--count", "2", "--seed", "7", "--size", "32", "--domains", "he,mas"]) == 0
    return root


@pytest.fixture(scope="module")
def config_file(dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_cfg") / "run.cfg"
    path.write_text(CONFIG_TEXT.format(data=dataset), encoding="ascii")
    return path


class TestExitCodes:
    def test_no_command_prints_help_and_fails(self, capsys):
        assert main([]) == 1
        assert "usage:" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        assert main(["--bogus"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["transmogrify"]) == 1

    def test_eval_requires_checkpoint(self, capsys):
        assert main(["eval"]) == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_config_contents(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense = 1\n", encoding="ascii")
        assert main(["train", "--config", str(bad)]) == 1
        assert "nonsense" in capsys.readouterr().err

    def test_missing_checkpoint_file(self, config_file, tmp_path, capsys):
        code = main(["eval", "--config", str(config_file), "--checkpoint", str(tmp_path / "none.stnh")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unexpected_failure_maps_to_2(self, config_file, tmp_path, capsys, monkeypatch):
        import stnhcl.train

        def explode(cfg, out_dir, aux_loss=None):
            raise RuntimeError("boom")

        monkeypatch.setattr(stnhcl.train, "train", explode)
        assert main(["train", "--config", str(config_file), "--out", str(tmp_path / "run")]) == 2
        assert "unexpected failure: RuntimeError: boom" in capsys.readouterr().err


class TestPrintConfig:
    def test_bare_print_config_lists_defaults(self, capsys):
        assert main(["--print-config"]) == 0
        assert capsys.readouterr().out == RunConfig().to_text()

    def test_train_print_config_applies_overrides(self, config_file, capsys):
        assert main(["train", "--config", str(config_file), "--seed", "9", "--print-config"]) == 0
        out = capsys.readouterr().out
        assert "seed = 9" in out
        assert "image_size = 32" in out


class TestFlow:
    def test_synth_writes_manifest_for_requested_domains(self, dataset):
        rows = read_manifest(dataset)
        assert sorted({r.domain for r in rows}) == ["he", "mas"]
        assert len(rows) == 4

    def test_synth_rejects_unknown_domain(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "--domains", "he,watercolor"]) == 1
        assert "watercolor" in capsys.readouterr().err

    def test_train_then_eval(self, config_file, tmp_path, capsys):
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "trained 2 iterations" in out
        checkpoint = run_dir / "ckpt_000002.stnh"
        assert checkpoint.exists()

        report_dir = tmp_path / "report"
        code = main(
            [
                "eval",
                "--config",
                str(config_file),
                "--checkpoint",
                str(checkpoint),
                "--out",
                str(report_dir),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "he -> mas" in out
        lines = (report_dir / "eval_report.jsonl").read_text(encoding="ascii").strip().split("\n")
        assert len(lines) == 1  # one sample, one target
        assert json.loads(lines[0])["target"] == "mas"

    def test_eval_data_override(self, config_file, tmp_path, capsys):
        other = tmp_path / "other"
        assert main(["synth", "--out", str(other), "--count", "1", "--seed", "3", "--size", "32", "--domains", "he,pas"]) == 0
        run_dir = tmp_path / "run2"
        assert main(["train", "--config", str(config_file), "--out", str(run_dir)]) == 0
        capsys.readouterr()
        code = main(
            [
                "eval",
                "--config",
                str(config_file),
                "--checkpoint",
                str(run_dir / "ckpt_000002.stnh"),
                "--data",
                str(other),
            ]
        )
        assert code == 0
        assert "he -> pas" in capsys.readouterr().out
