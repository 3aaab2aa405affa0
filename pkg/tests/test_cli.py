import json
import os
import subprocess
import sys

import pytest

from ustlab import cli
from ustlab.ust import load_tree


G_TABLE = "n,mean,stderr,samples\n8,17.5,0.3,300\n16,41.1,0.7,300\n32,99.0,1.6,300\n64,235.2,3.8,300\n"


def read(p):
    with open(p, "rb") as fh:
        return fh.read()


@pytest.mark.parametrize("argv", [
    ["estimate-g", "--n", "2,4,8,16", "--samples", "40", "--K", "4", "--nmin", "2"],
    ["sample-lerw", "--l", "6", "--samples", "5", "--trunc-factor", "8"],
    ["walk", "--fresh-trees", "2", "--r", "12", "--n", "4,8", "--exit-R", "2,4", "--replicas", "5"],
    ["tails", "--observable", "lerw", "--n", "8", "--samples", "60", "--g-table", "{table}"],
])
def test_rerun_byte_identical_and_worker_independent(tmp_path, argv):
    table = tmp_path / "g.csv"
    table.write_text(G_TABLE)
    argv = [x.format(table=table) for x in argv]
    a, b, c = tmp_path / "a.out", tmp_path / "b.out", tmp_path / "c.out"
    code = cli.main(argv + ["--seed", "17", "--out", str(a)])
    assert code in (0, 1)
    assert cli.main(argv + ["--seed", "17", "--workers", "2", "--out", str(b)]) == code
    assert read(a) == read(b)
    assert cli.main(["rerun", str(a), "--out", str(c)]) == code
    assert read(a) == read(c)
    run_info = json.loads((tmp_path / "b.out.run.json").read_text())
    assert run_info["workers"] == 2 and "wall_time_s" in run_info


def test_sample_ust_rerun(tmp_path):
    a, b = tmp_path / "t1", tmp_path / "t2"
    assert cli.main(["sample-ust", "--r", "6", "--seed", "3", "--out", str(a)]) == 0
    assert cli.main(["rerun", str(a), "--out", str(b)]) == 0
    assert read(a) == read(b)
    tree = load_tree(a.read_text())
    tree.validate()
    assert cli.main(["ball-volume", "--tree", str(a), "--R", "1,2,4", "--out", str(tmp_path / "v")]) == 0
    lines = (tmp_path / "v").read_text().splitlines()
    assert lines[0].startswith("# ustlab-config ")
    assert cli.main(["resistance", "--tree", str(a), "--R", "1,2", "--out", str(tmp_path / "res")]) in (0, 1)


def test_different_seed_differs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["estimate-g", "--n", "4,8", "--samples", "30", "--K", "4", "--nmin", "2"]
    cli.main(base + ["--seed", "1", "--out", str(a)])
    cli.main(base + ["--seed", "2", "--out", str(b)])
    assert read(a) != read(b)


@pytest.mark.parametrize("argv", [
    ["sample-ust", "--r", "5", "--K", "3"],
    ["sample-ust", "--r", "0"],
    ["sample-lerw", "--l", "5", "--trunc-factor", "1"],
    ["walk", "--fresh-trees", "1"],
    ["walk", "--fresh-trees", "1", "--tree", "x", "--n", "4"],
    ["estimate-g", "--seed", "-1"],
    ["estimate-g", "--seed", str(2 ** 64)],
    ["estimate-g", "--n", "4,x"],
    ["estimate-dims", "--budget", "huge"],
    ["no-such-command"],
])
def test_invalid_arguments_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_runtime_error_exit_3(tmp_path, capsys):
    assert cli.main(["ball-volume", "--tree", str(tmp_path / "missing"), "--R", "2"]) == 3
    err = capsys.readouterr().err
    assert json.loads(err.strip().splitlines()[-1])["error"]
    assert cli.main(["rerun", str(tmp_path / "missing")]) == 3


def test_failed_run_leaves_no_partial_file(tmp_path):
    out = tmp_path / "r.csv"
    out.write_text("previous\n")
    assert cli.main(["ball-volume", "--tree", str(tmp_path / "missing"), "--R", "2", "--out", str(out)]) == 3
    assert out.read_text() == "previous\n"
    assert [p.name for p in tmp_path.iterdir()] == ["r.csv"]


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "f"
    cli.atomic_write(str(p), "one\n")
    cli.atomic_write(str(p), "two\n")
    assert p.read_text() == "two\n"
    assert [x.name for x in tmp_path.iterdir()] == ["f"]


def test_oracle_selftest(capsys):
    assert cli.main(["oracle", "selftest"]) == 0
    out = [ln for ln in capsys.readouterr().out.splitlines() if not ln.startswith("#")]
    assert out[0] == "check,passed"
    assert all(line.endswith(",1") for line in out[1:]) and len(out) > 5


def test_stdout_jsonl_has_config_first(capsys):
    assert cli.main(["sample-lerw", "--l", "4", "--samples", "3", "--seed", "9"]) == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    head = json.loads(lines[0])
    assert head["config"]["seed"] == 9 and "workers" not in head["config"]
    assert len(lines) == 4
    assert "wall_time_s" in json.loads(captured.err.strip().splitlines()[-1])


def test_entry_point_help():
    for argv in (["--help"], ["walk", "--help"], ["estimate-dims", "--help"]):
        res = subprocess.run([sys.executable, "-m", "ustlab.cli"] + argv, capture_output=True, text=True)
        assert res.returncode == 0 and "usage" in res.stdout
