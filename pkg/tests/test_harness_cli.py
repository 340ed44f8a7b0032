import json
from pathlib import Path

import pytest

from datc.airspace import SectorGrid, generate_synthetic_traffic
from datc.cli import EXIT_CONFIG, EXIT_OK, EXIT_TIMEOUT, main
from datc.harness import (ConfigError, SweepSpec, figure_tables, load_config, parse_grid,
                          run_sweep)
from datc.io import ScenarioError, csv_text, read_plans, write_plans


def tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


def test_plan_file_round_trip(tmp_path):
    plans = generate_synthetic_traffic(4, 7, SectorGrid(2, 2), "converging")
    f = tmp_path / "p.csv"
    write_plans(f, plans, {3: 45.0})
    back, fuel = read_plans(f)
    assert back == plans
    assert fuel[3] == 45.0 and fuel[1] == 120.0


def test_bad_plan_file(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("aircraft,seq,x\n1,0,2\n")
    with pytest.raises(ScenarioError):
        read_plans(f)


def test_floats_written_exactly():
    assert csv_text(["a", "b"], [[0.1 + 0.2, True]]) == "a,b\n0.30000000000000004,1\n"


def test_config_parsing(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[params]\nir_attempts = 7\nnack_backoff_max = 3.5\n"
                 "[delivery]\nloss = 0.2\nreorder = yes\n[sim]\nadmission_horizon = none\n"
                 "[scenario]\ngrid = 3x2\n")
    rc = load_config(str(f))
    assert rc.params.ir_attempts == 7 and rc.params.nack_backoff_max == 3.5
    assert rc.delivery.loss == 0.2 and rc.delivery.reorder is True
    assert rc.sim == {"admission_horizon": None}
    assert rc.scenario["grid"] == "3x2"


@pytest.mark.parametrize("text", [
    "[params]\nbogus = 1\n",
    "[params]\nnack_backoff_min = 5\nnack_backoff_max = 1\n",
    "[mystery]\na = 1\n",
    "[sim]\nmax_holds = lots\n",
])
def test_config_errors(tmp_path, text):
    f = tmp_path / "c.ini"
    f.write_text(text)
    with pytest.raises(ConfigError):
        load_config(str(f))


def test_parse_grid():
    assert parse_grid("4x3") == SectorGrid(4, 3)
    for bad in ("4", "0x2", "axb"):
        with pytest.raises((ConfigError, ValueError)):
            parse_grid(bad)


def test_sweep_order_independent_of_workers():
    spec = SweepSpec(("2x2", "1x1"), (5, 8), repetitions=2)
    serial = run_sweep(spec)
    assert [(r["grid"], r["count"], r["rep"]) for r in serial] == spec.cells()
    assert run_sweep(spec, workers=2) == serial
    figs = figure_tables(serial)
    assert set(figs) == {"conflicts", "nmacs", "time_range", "phases"}
    assert len(figs["nmacs"][1]) == 4


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec((), (5,))
    with pytest.raises(ConfigError):
        SweepSpec(("2x2",), (0,))


COMMANDS = [
    ["simulate", "--grid", "2x2", "--count", "12", "--seed", "3", "--trace"],
    ["sweep", "--grids", "1x1,2x2", "--counts", "4,8"],
    ["tune", "--count", "6", "--budget", "4", "--n-init", "3"],
    ["features", "--count", "15"],
    ["label", "--count", "10", "--profile", "converging"],
    ["gen-traffic", "--count", "9"],
]


@pytest.mark.parametrize("argv", COMMANDS, ids=[c[0] for c in COMMANDS])
def test_commands_are_byte_identical(tmp_path, capsys, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    code_a, sum_a = run(argv + ["--out", str(a)], capsys)
    code_b, sum_b = run(argv + ["--out", str(b)], capsys)
    assert code_a == code_b == EXIT_OK
    sum_a.pop("file", None), sum_b.pop("file", None)
    assert sum_a == sum_b and sum_a["command"] == argv[0]
    assert tree(a) == tree(b) and tree(a)


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--grid", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.ini"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    code, summary = run(["simulate", "--count", "10", "--time-limit", "30",
                         "--out", str(tmp_path)], capsys)
    assert code == EXIT_TIMEOUT and summary["timeout"] is True


def test_simulate_from_plan_file(tmp_path, capsys):
    plans = generate_synthetic_traffic(1, 5, SectorGrid(2, 2))
    write_plans(tmp_path / "in.csv", plans)
    code, summary = run(["simulate", "--plans", str(tmp_path / "in.csv"),
                         "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_OK and summary["admitted"] >= 5
    assert (tmp_path / "o" / "trajectories.csv").exists()
