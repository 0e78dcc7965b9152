import csv
import json
import subprocess
import sys

import pytest

from expertmerge.cli import main, parse_layers
from expertmerge.errors import ContractViolation

CFG = {"d_model": 8, "d_ff": 4, "n_layers": 2, "n_experts": 4, "top_k": 2}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(CFG))
    return tmp_path


def test_parse_layers():
    assert parse_layers("1..3", 4) == [1, 2, 3]
    assert parse_layers("2", 4) == [2]
    assert parse_layers("all", 2) == [0, 1]
    for bad in ("3..1", "0..4", "x"):
        with pytest.raises(ContractViolation):
            parse_layers(bad, 4)


def test_pipeline(workdir, capsys):
    cfg, model, merged = workdir / "cfg.json", workdir / "m.json", workdir / "mm.json"
    assert main(["generate", "--config", str(cfg), "--seed", "3", "-o", str(model)]) == 0
    assert main(["stats", "--model", str(model), "--tokens", "16", "--seed", "0"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert sum(stats[0]["counts"]) == 32
    assert main(["merge", "--model", str(model), "--method", "msmoe", "--layers", "0..1",
                 "--experts", "2", "--tokens", "32", "--seed", "0", "-o", str(merged)]) == 0
    report = workdir / "r.csv"
    assert main(["eval", "--original", str(model), "--merged", str(merged),
                 "--tokens", "16", "--seed", "1", "--report", str(report)]) == 0
    row = next(csv.DictReader(report.open()))
    assert row["method"] == "msmoe" and float(row["end_to_end_error"]) > 0


def test_verify_theorem_json(workdir):
    out = workdir / "t.json"
    assert main(["verify-theorem", "--trials", "10", "--seed", "2", "-o", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["trials"] == data["passes"] == 10
    assert data["failed_instances"] == []


def test_sweep_and_time(workdir, capsys):
    out = workdir / "s.csv"
    assert main(["sweep", "--axis", "samples", "--grid", "8,16", "--config", str(workdir / "cfg.json"),
                 "--seeds", "2", "-o", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4 and rows[0]["axis_value"] == "8"
    assert main(["time", "--config", str(workdir / "cfg.json"), "--method", "average", "--repeats", "2"]) == 0
    assert "median per-layer merge" in capsys.readouterr().out


def test_exit_codes(workdir):
    assert main(["stats", "--model", str(workdir / "missing.json")]) == 3
    (workdir / "junk.json").write_text("{")
    assert main(["stats", "--model", str(workdir / "junk.json")]) == 3
    model = workdir / "m.json"
    main(["generate", "--config", str(workdir / "cfg.json"), "-o", str(model)])
    assert main(["merge", "--model", str(model), "--experts", "9", "-o", str(workdir / "x.json")]) == 1
    assert main(["merge", "--model", str(model), "--experts", "2", "--layers", "0..5",
                 "-o", str(workdir / "x.json")]) == 1
    bad_cfg = workdir / "bad.json"
    bad_cfg.write_text(json.dumps({"n_experts": 2, "top_k": 3}))
    assert main(["generate", "--config", str(bad_cfg), "-o", str(workdir / "y.json")]) == 1


def test_usage_error_is_contract_violation():
    with pytest.raises(SystemExit) as exc:
        main(["merge", "--method", "ties"])
    assert exc.value.code == 1


def test_module_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "expertmerge", "verify-theorem", "--trials", "0",
                           "-o", str(workdir / "t.json")], capture_output=True, text=True)
    assert proc.returncode == 1 and "trials" in proc.stderr
