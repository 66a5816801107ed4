import json
import subprocess
import sys

import pytest

from meshfield import __version__
from meshfield.cli import main

from pipeline_cases import run_pipeline


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("datagen", "train", "reconstruct", "eval"):
        assert cmd in out


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_dump_config_has_defaults(capsys):
    assert main(["train", "--dump-config", "--set", "train.lr=0.01", "--seed", "5"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["train"]["lr"] == 0.01 and cfg["seed"] == 5
    assert cfg["train"]["lambda_n"] == 0.1


def test_schema_error_names_key(capsys, tmp_path):
    assert main(["train", "--set", "train.bogus=1"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and err["key"] == "train.bogus"
    (tmp_path / "c.json").write_text('{"recon": {"resolution": "high"}}')
    assert main(["reconstruct", "--config", str(tmp_path / "c.json")]) == 2
    assert json.loads(capsys.readouterr().err)["key"] == "recon.resolution"


def test_runtime_error_reported(capsys, tmp_path):
    assert main(["train", "--set", f"train.dataset_dir={tmp_path / 'none'}"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert "scans" in err["message"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "meshfield", "eval", "--dump-config"], capture_output=True, text=True)
    assert r.returncode == 0 and "tau_cm" in r.stdout


def test_end_to_end(tmp_path):
    out = run_pipeline(tmp_path, workers=1)
    assert out["codes"] == {"datagen": 0, "train": 0, "reconstruct": 0, "eval": 0}
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["alignment"] is not None
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert {"cd_p2s", "cd_s2p", "nc", "fscore", "pred_sha256"} <= set(metrics)
