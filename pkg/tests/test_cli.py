"""Command-line surface: parsing, error codes, daemons, round trips."""

import csv
import json
import os
import subprocess
import sys

import pytest

from samforge.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out.splitlines(), captured.err.splitlines()


def spawn_daemon(*argv):
    env = dict(os.environ)
    env.pop("SAMFORGE_CONFIG", None)
    proc = subprocess.Popen(
        [sys.executable, "-m", "samforge.cli", *argv],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
    line = proc.stdout.readline().strip()
    if not line.startswith("READY "):
        proc.terminate()
        raise AssertionError(f"daemon never came up: {line!r}\n{proc.stderr.read()}")
    return proc, line.split()[1]


@pytest.fixture(scope="module")
def catalogd(tmp_path_factory):
    root = tmp_path_factory.mktemp("catalogd")
    proc, addr = spawn_daemon("catalogd", "--listen", "127.0.0.1:0",
                              "--journal", str(root / "catalog.journal"))
    yield addr
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture(scope="module")
def projectd(tmp_path_factory, catalogd):
    root = tmp_path_factory.mktemp("projectd")
    proc, addr = spawn_daemon("projectd", "--listen", "127.0.0.1:0",
                              "--journal", str(root / "project.journal"),
                              "--catalog", catalogd)
    yield addr
    proc.terminate()
    proc.wait(timeout=10)


# -- parsing and error mapping ----------------------------------------------

def test_no_subcommand_prints_usage(capsys):
    code, out, err = run_cli(capsys)
    assert code == 2
    assert err and err[0].startswith("usage:")


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert capsys.readouterr().out.startswith("samforge ")


def test_malformed_query_fails_before_connecting(capsys):
    code, out, err = run_cli(capsys, "dataset", "define", "d", "shoe = = phy")
    assert code == 3
    assert err[-1] == "E_MALFORMED_QUERY"


def test_declare_missing_file(capsys, tmp_path):
    code, out, err = run_cli(capsys, "declare", str(tmp_path / "ghost.raw"))
    assert code == 3
    assert err[-1] == "E_NOT_FOUND"


def test_declare_rejects_malformed_param(capsys, tmp_path):
    target = tmp_path / "bphy0412_fs0007_0099.raw"
    target.write_bytes(b"x")
    code, out, err = run_cli(capsys, "declare", str(target), "--param", "noequals")
    assert code == 3
    assert err[-1] == "E_VALIDATION"
    assert any("KEY=VALUE" in line for line in err)


def test_stationd_requires_a_topology_file(capsys, monkeypatch):
    monkeypatch.delenv("SAMFORGE_CONFIG", raising=False)
    code, out, err = run_cli(capsys, "stationd", "cdfa-1")
    assert code == 3
    assert err[-1] == "E_VALIDATION"


def test_connection_refused_maps_to_e_conn(capsys):
    code, out, err = run_cli(capsys, "locate", "a.raw", "--catalog", "127.0.0.1:1")
    assert code == 3
    assert err[-1] == "E_CONN"


# -- catalog round trips over a spawned daemon ------------------------------

def test_declare_locate_dataset_round_trip(capsys, tmp_path, catalogd):
    target = tmp_path / "bphy0412_fs0007_0042.raw"
    target.write_bytes(b"123456789")

    code, out, _ = run_cli(capsys, "declare", str(target), "--catalog", catalogd)
    assert code == 0
    assert out[0].startswith("declared bphy0412_fs0007_0042.raw as file ")

    # name parsing filled the first-class fields; a second declare collides
    code, out, err = run_cli(capsys, "declare", str(target), "--catalog", catalogd)
    assert (code, err[-1]) == (3, "E_DUPLICATE_NAME")

    code, out, _ = run_cli(capsys, "locate", "bphy0412_fs0007_0042.raw",
                           "--catalog", catalogd)
    assert (code, out) == (0, [])  # declared but nowhere resident yet

    code, out, _ = run_cli(capsys, "dataset", "define", "cli-ds",
                           "event_type = phy AND data_tier = raw",
                           "--catalog", catalogd)
    assert code == 0

    code, out, _ = run_cli(capsys, "dataset", "resolve", "cli-ds",
                           "--catalog", catalogd)
    assert code == 0
    assert "bphy0412_fs0007_0042.raw" in out

    code, out, _ = run_cli(capsys, "--json", "dataset", "resolve", "cli-ds",
                           "--catalog", catalogd)
    assert code == 0
    payload = json.loads("\n".join(out))  # exactly one JSON object
    assert payload["dataset"] == "cli-ds"
    assert "bphy0412_fs0007_0042.raw" in payload["file_names"]

    code, out, _ = run_cli(capsys, "dataset", "snapshot", "cli-ds",
                           "--catalog", catalogd)
    assert code == 0
    assert "1 files" in out[0] or "files" in out[0]


def test_status_queries_any_daemon(capsys, catalogd):
    code, out, _ = run_cli(capsys, "--json", "status", catalogd)
    assert code == 0
    status = json.loads("\n".join(out))
    assert "files" in status


def test_migrate_command_with_report(capsys, tmp_path, catalogd):
    export_dir = tmp_path / "export"
    export_dir.mkdir()
    tables = {
        "files.csv": (("file_name", "size_bytes", "fileset_id", "dataset_id",
                       "dfc_comment", "dfc_row_key"),
                      [("kxyz0101_fs0101_0001.raw", "100", "fs0101", "201", "", "rk100001"),
                       ("kxyz0101_fs0101_0002.raw", "100", "fs0101", "201", "", "rk100002"),
                       ("kabc0202_fs0102_0001.raw", "100", "fs0102", "202", "note", "rk100003")]),
        "filesets.csv": (("fileset_id", "dataset_id", "tape_label"),
                         [("fs0101", "201", "tape-0101"), ("fs0102", "202", "tape-0102")]),
        "datasets.csv": (("dataset_id", "description"),
                         [("201", "one"), ("202", "two")]),
    }
    for name, (header, rows) in tables.items():
        with open(export_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    report_path = tmp_path / "report.jsonl"
    code, out, _ = run_cli(capsys, "migrate", "--export", str(export_dir),
                           "--catalog", catalogd, "--report", str(report_path),
                           "--verify")
    assert code == 0
    assert out[0] == "declared 3 files (0 duplicates, 0 violations)"
    assert out[1] == "datasets: dfc-201, dfc-202"
    assert out[2] == "verify: ok"

    entries = [json.loads(line) for line in report_path.read_text().splitlines()]
    assert entries[0]["kind"] == "totals"
    assert entries[0]["declared"] == 3

    code, out, _ = run_cli(capsys, "dataset", "resolve", "dfc-201",
                           "--catalog", catalogd)
    assert code == 0
    assert sorted(out) == ["kxyz0101_fs0101_0001.raw", "kxyz0101_fs0101_0002.raw"]


# -- project daemon and the consumer adaptor --------------------------------

def test_project_lifecycle_and_consume_subprocess(capsys, tmp_path, catalogd, projectd):
    from samforge.wire import Dispatcher, format_addr, start_control_server

    class OneShotStation(Dispatcher):
        ops = {"fetch": "fetch", "unpin": "unpin"}

        def fetch(self, file_name, requesting_project=None):
            return f"/fake/{file_name}"

        def unpin(self, file_id, project):
            return True

    # calibration set 77 is unique to this file on the shared catalog daemon
    target = tmp_path / "bphy0477_fs0007_0777.raw"
    target.write_bytes(b"payload")
    code, out, _ = run_cli(capsys, "declare", str(target), "--catalog", catalogd)
    assert code == 0
    code, out, _ = run_cli(capsys, "dataset", "define", "consume-ds",
                           "calibration_set = 77", "--catalog", catalogd)
    assert code == 0

    code, out, err = run_cli(capsys, "project", "start", "cli-proj",
                             "--dataset", "ghost-ds", "--project-server", projectd)
    assert (code, err[-1]) == (3, "E_NOT_FOUND")

    code, out, _ = run_cli(capsys, "project", "start", "cli-proj",
                           "--dataset", "consume-ds", "--project-server", projectd)
    assert code == 0
    assert out[0].startswith("project cli-proj: 1 files")

    code, out, _ = run_cli(capsys, "project", "status", "cli-proj",
                           "--project-server", projectd)
    assert code == 0
    assert out[0].startswith("cli-proj: running")

    station_server = start_control_server(OneShotStation(), ("127.0.0.1", 0))
    try:
        result = subprocess.run(
            [sys.executable, "-m", "samforge.cli", "consume",
             "--project-server", projectd,
             "--station", format_addr(station_server.bound_addr),
             "--project", "cli-proj", "--consumer-id", "cli-c1"],
            input="CONFIGURE\nGETFILE\nRELEASE\nGETFILE\nBYE\n",
            capture_output=True, text=True, timeout=30)
    finally:
        station_server.shutdown()
        station_server.server_close()
    assert result.returncode == 0, result.stderr
    assert result.stdout.splitlines() == [
        "OK", "FILE /fake/bphy0477_fs0007_0777.raw", "OK", "END"]

    code, out, _ = run_cli(capsys, "project", "status",
                           "--project-server", projectd)
    assert code == 0  # listing form, no name argument

    code, out, _ = run_cli(capsys, "project", "stop", "cli-proj",
                           "--project-server", projectd)
    assert code == 0
    assert out[0].startswith("stopped cli-proj: 1 delivered (cli-c1=1)")


def test_demo_command_small_run(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "demo", "--files", "120", "--consumers", "2",
                           "--root", str(tmp_path / "demo"))
    assert code == 0
    assert out[-1] == "all end-to-end checks passed"
    assert any(line.startswith("migrated 120 files") for line in out)
