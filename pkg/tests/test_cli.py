import csv
import json
import subprocess
import sys

import pytest
from conftest import SMALL

from touchcal.cli import build_parser, format_table, long_format, main
from touchcal.geometry import SdfGrid


def sets(*extra):
    out = []
    for s in SMALL + list(extra):
        out += ["--set", s]
    return out


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_run_prints_results(capsys, tmp_path):
    code = main(["run", "--seeds", "0,1", "-o", str(tmp_path)] + sets("max_iterations=1"))
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["seed"] for r in rows] == [0, 1]
    assert code == 1  # one action cannot terminate by criteria
    assert (tmp_path / "trace_seed1.jsonl").exists()


def test_sweep_and_report(capsys, tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--seeds", "0:2", "-o", str(out)]
                + sets("max_iterations=1", "sweep={grid.resolution: [0.02, 0.04]}"))
    assert code == 1
    text = capsys.readouterr().out
    assert text == (out / "summary.csv").read_text()
    assert main(["report", str(out / "summary.csv"), "--long", str(tmp_path / "long.csv")]) == 0
    table = capsys.readouterr().out
    assert "grid.resolution" in table.splitlines()[0]
    with open(tmp_path / "long.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["metric"] for r in rows} == {"translational_error_cm", "rotational_error_1e-2rad", "actions", "contacts"}
    assert len(rows) == 8


def test_sweep_without_grid(capsys):
    assert main(["sweep"] + sets()) == 2


def test_sdf_build(tmp_path, capsys):
    path = tmp_path / "grid.sdf"
    assert main(["sdf-build", str(path), "--resolution", "0.04"] + sets()) == 0
    grid = SdfGrid.load(path)
    assert grid.resolution == 0.04


def test_replay(tmp_path, capsys):
    main(["run", "--seeds", "2", "-o", str(tmp_path)] + sets())
    live = json.loads(capsys.readouterr().out)
    main(["replay", str(tmp_path / "observations_seed2.jsonl"), "--seed", "2",
          "--truth", json.dumps(live["truth"])] + sets())
    out = json.loads(capsys.readouterr().out)
    assert out["estimate"] == live["estimate"]
    assert "steps" not in out


def test_long_format_and_table():
    rows = [{"x": "1", "runs": "5", "terminated": "5", "failed": "0", "a_mean": "1.0", "a_sd": "0.1"}]
    assert long_format(rows) == [{"x": "1", "metric": "a", "mean": "1.0", "sd": "0.1"}]
    lines = format_table(rows).splitlines()
    assert len(lines) == 3 and lines[1].startswith("-")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "touchcal", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("run", "sweep", "replay", "sdf-build", "report"):
        assert cmd in out.stdout
