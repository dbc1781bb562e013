"""CLI contracts: subcommands, config files, flag overrides, error paths."""

import pytest

from karma.cli import main
from karma.synthdata import load_dataset


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestAudit:
    def test_prints_params_and_gflops(self, capsys):
        code, out, _ = run_cli(capsys, "audit", "--variant", "karma", "--res", "256")
        assert code == 0
        assert "params_total=" in out and "gmacs=" in out and "gflops=" in out

    def test_writes_report_file(self, capsys, tmp_path):
        path = tmp_path / "report.txt"
        code, _, _ = run_cli(capsys, "audit", "--variant", "flash", "--out", str(path))
        assert code == 0 and path.exists()
        assert "params_total=" in path.read_text()


class TestGradcheck:
    def test_spline_module_passes(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--module", "spline")
        assert code == 0
        assert "event=gradcheck module=spline ok=True" in out


class TestSynthTrainEval:
    def test_pipeline(self, capsys, tmp_path):
        data = tmp_path / "ds"
        code, out, _ = run_cli(
            capsys, "synth", "--out", str(data), "--count", "6",
            "--height", "64", "--width", "64", "--classes", "4", "--seed", "5",
        )
        assert code == 0
        ds = load_dataset(data)
        assert len(ds) == 6

        run_dir = tmp_path / "run"
        cfg = tmp_path / "train.ini"
        cfg.write_text(
            "[model]\nvariant = flash\n\n"
            "[train]\nepochs = 1\nbatch_size = 4\nval_every = 3\nprune_every = 0\n"
            "# comment line\n[loss]\ngamma = 0.0\n"
        )
        code, out, _ = run_cli(
            capsys, "train", "--data", str(data), "--out", str(run_dir), "--config", str(cfg)
        )
        assert code == 0
        assert "event=epoch epoch=0" in out
        assert (run_dir / "best" / "manifest.txt").exists()

        code, out, _ = run_cli(
            capsys, "eval", "--checkpoint", str(run_dir / "best"), "--data", str(data),
            "--out", str(tmp_path / "metrics.txt"),
        )
        assert code == 0
        assert "event=eval" in out and "miou_wo_bg=" in out
        assert (tmp_path / "metrics.txt").exists()

    def test_env_seed_override(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("TIKAN_SEED", "77")
        data = tmp_path / "ds_env"
        code, _, _ = run_cli(capsys, "synth", "--out", str(data), "--count", "1", "--seed", "5")
        assert code == 0
        manifest = (data / "manifest.txt").read_text()
        assert "seed = 77" in manifest

    def test_unknown_config_key_lists_valid(self, capsys, tmp_path):
        data = tmp_path / "ds2"
        run_cli(capsys, "synth", "--out", str(data), "--count", "1")
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[train]\nlearning_rate_typo = 0.1\n")
        code, _, err = run_cli(capsys, "train", "--data", str(data), "--out", str(tmp_path / "r"), "--config", str(cfg))
        assert code != 0
        assert "learning_rate_typo" in err and "lr" in err

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["audit", "--wat", "1"])
        assert exc.value.code == 2

    def test_error_line_is_single_and_parsable(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(tmp_path))
        assert code == 1
        assert err.startswith("error: ")
        assert len(err.strip().splitlines()) == 1
