from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from hjrep.cli import ConfigError, load_config, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_VALUE = """
[model]
name = quadratic

[terminal]
name = quadratic

[grid]
N = 16
hx = 0.015625
instance_t = 0
instance_x = 1

[value]
pairs = 100
starts = 2
control_starts = 1
control_maxfun = 10
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_value_quadratic_row(tmp_path):
    out = tmp_path / "out"
    assert main(["value", "--config", str(write(tmp_path, SMALL_VALUE)), "--out", str(out)]) == 0
    header, rows = read_csv(out / "value.csv")
    assert header == "# schema: value/v1"
    assert len(rows) == 1
    row = rows[0]
    for key in ("V_var", "V_ctrl", "V_fd"):
        assert float(row[key]) == pytest.approx(0.25, abs=5e-3)
    recs = json.loads((out / "value_audits.json").read_text())
    assert all(set(r) == {"name", "bound", "observed", "pass", "config_hash"} for r in recs)
    assert len({r["config_hash"] for r in recs}) == 1
    assert (out / "config_echo.ini").read_text().count("seed = 0") == 1


def test_conjugate_table_sqrt(tmp_path):
    out = tmp_path / "out"
    assert main(["conjugate-table", "--config", str(CONFIGS / "sqrt_example.ini"), "--out", str(out)]) == 0
    header, rows = read_csv(out / "conjugate_table.csv")
    assert header == "# schema: conjugate-table/v1"
    assert {float(r["x"]) for r in rows} == {-2.0, -1.0, -0.5, 0.5, 1.0, 2.0}
    assert max(float(r["delta"]) for r in rows) <= 1e-6
    assert b"\r" not in (out / "conjugate_table.csv").read_bytes()


def test_determinism_and_seed_override(tmp_path):
    cfg = CONFIGS / "sqrt_example.ini"
    outs = [tmp_path / f"run{i}" for i in range(3)]
    for o in outs[:2]:
        assert main(["conjugate-table", "--config", str(cfg), "--out", str(o)]) == 0
    assert main(["conjugate-table", "--config", str(cfg), "--out", str(outs[2]), "--seed", "7"]) == 0
    for f in ("conjugate_table.csv", "conjugate_table_audits.json", "config_echo.ini"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    h0 = json.loads((outs[0] / "conjugate_table_audits.json").read_text())[0]["config_hash"]
    h2 = json.loads((outs[2] / "conjugate_table_audits.json").read_text())[0]["config_hash"]
    assert h0 != h2


@pytest.mark.parametrize("text, message", [
    ("[model]\nname = nope\n", "unknown model"),
    ("[terminal]\nname = cubic\n", "unknown terminal"),
    ("[grid]\ninstance_x =\n", "instance grid is empty"),
    ("[problem]\nhorizon = 0\n", "horizon"),
    ("[tolerances]\nconjugate = -1\n", "tolerances"),
    ("[grid]\nN = 1\n", "grid"),
    ("[grid]\nN = many\n", "invalid literal"),
])
def test_config_errors_exit_2(tmp_path, capsys, text, message):
    cfg = write(tmp_path, text)
    with pytest.raises(ConfigError, match=message):
        load_config(cfg)
    assert main(["value", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    cfg = write(tmp_path, SMALL_VALUE)
    assert main(["frobnicate", "--config", str(cfg)]) == 2
    assert main(["value"]) == 2
    assert main(["value", "--config", str(tmp_path / "missing.ini")]) == 2


def test_audit_failure_exit_1(tmp_path, capsys):
    # an absurdly tight closed-form tolerance cannot be met by the numerical conjugate
    text = "[model]\nname = sqrt_example\n[terminal]\nname = abs\n[tolerances]\nconjugate = 1e-300\n"
    assert main(["conjugate-table", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 1
    dumped = json.loads(capsys.readouterr().err)
    assert [r["name"] for r in dumped] == ["conjugate_closed_form"]
    assert dumped[0]["pass"] is False


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "[model]\nname = nope\n")
    proc = subprocess.run([sys.executable, "-m", "hjrep", "value", "--config", str(cfg)], capture_output=True,
                          text=True)
    assert proc.returncode == 2
