from pathlib import Path

import pandas as pd

from src.main import build_parser, default_output_dir, main

EXPERIMENTS = Path(__file__).resolve().parent.parent / "config" / "experiments"


def test_run_command(tmp_path):
    code = main(["--quiet", "run", "--config", str(EXPERIMENTS / "bandit_smoke.yaml"), "--out", str(tmp_path),
                 "--T", "8", "--seeds", "1"])
    assert code == 0
    assert (tmp_path / "bandit_smoke__aggregate.csv").exists()
    frame = pd.read_csv(tmp_path / "bandit_smoke__dig_dec_sq__seed1.csv")
    assert len(frame) == 8


def test_config_errors_exit_with_two(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("environment: toy_separation\nhorizon: 3\n", encoding="utf-8")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path)]) == 2


def test_digdec_command(tmp_path):
    code = main(["digdec", "--instances", "single_infoset", "--eta", "1", "--mode", "av",
                 "--resolution", "0.5", "--no-nested", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "digdec.csv").exists()


def test_verify_command(tmp_path):
    assert main(["verify", "--quick", "--criteria", "9", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "verify.csv").exists()


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("DIGDEC_OUTPUT_DIR", str(tmp_path / "runs"))
    assert default_output_dir() == tmp_path / "runs"
    monkeypatch.delenv("DIGDEC_OUTPUT_DIR")
    assert default_output_dir().parent == Path("output")


def test_parser_defaults():
    args = build_parser().parse_args(["digdec"])
    assert args.eta == [0.5, 1.0, 2.0]
    assert args.mode == "both"
