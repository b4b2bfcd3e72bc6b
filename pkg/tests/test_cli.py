import dataclasses
import json
from pathlib import Path

from tailgen import write_config
from tailgen.cli import main

from helpers import tiny_pipeline_config


def _cfg_file(tmp_path):
    cfg = tiny_pipeline_config()
    path = tmp_path / "cfg.json"
    write_config(path, cfg)
    return str(path)


def test_cli_staged_workflow(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    out = str(tmp_path / "run")
    for cmd in ("make-data", "train-diffusion", "generate", "filter",
                "train-classifier", "evaluate"):
        assert main([cmd, "--config", cfg, "--out", out]) == 0, cmd
    text = capsys.readouterr().out
    assert "overall" in text
    for rel in ("data/train.ltds", "ckpt/denoiser.pt", "gen/generated.ltds",
                "gen/filtered.ltds", "ckpt/final.pt", "reports/eval.csv"):
        assert (Path(out) / rel).exists(), rel


def test_cli_pipeline_command(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    out = str(tmp_path / "pipe")
    assert main(["pipeline", "--config", cfg, "--out", out]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["n_filt"] <= record["n_gen"]
    assert (Path(out) / "run.json").exists()


def test_cli_stage_missing_artifact_errors(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    out = str(tmp_path / "empty")
    code = None
    try:
        main(["generate", "--config", cfg, "--out", out])
    except SystemExit as e:
        code = e.code
    assert code is not None and code != 0


def test_cli_sweep_omega(tmp_path):
    cfg_obj = dataclasses.replace(tiny_pipeline_config(), filter=None)
    path = tmp_path / "cfg.json"
    write_config(path, cfg_obj)
    out = str(tmp_path / "sweep")
    assert main(["sweep", "omega", "--config", str(path), "--out", out,
                 "--seeds", "0", "--omegas", "0.3,1.0"]) == 0
    assert (Path(out) / "reports" / "omega.csv").exists()


def test_cli_bad_config_reports_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"generator": "gan"}))
    assert main(["pipeline", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert "error:" in capsys.readouterr().err
