import csv
import io
import json

import pytest

from pimsim.cli import build_parser, main
from pimsim.config import DATA_DIR
from pimsim.workload import check_trace, parse_trace

FIG3 = str(DATA_DIR / "fig3-timeline.trc")


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_single_run_json(capsys):
    code, out, _ = run_cli(capsys, "run", "--protocol", "lazypim", "--trace", FIG3)
    assert code == 0
    report = json.loads(out)
    assert report["protocol"] == "lazypim" and report["seed"] == 1


def test_six_protocols_and_table(capsys):
    code, out, err = run_cli(capsys, "run", "-c", "fig3-timeline", "--check",
                             "--protocol", "lazypim,fg,cg,nc,ideal,cpu-only")
    assert code == 0
    reports = json.loads(out)
    assert [r["protocol"] for r in reports] == ["lazypim", "fg", "cg", "nc", "ideal", "cpu-only"]
    assert reports[-1]["speedup_vs_baseline"] == 1.0
    assert err.splitlines()[0].startswith("protocol")


def test_rerun_identical(capsys):
    args = ("run", "-c", "fig3-timeline", "-p", "lazypim,fg", "-f", "csv")
    assert run_cli(capsys, *args)[1] == run_cli(capsys, *args)[1]


def test_seed_echoed(capsys):
    _, out, _ = run_cli(capsys, "run", "--trace", FIG3, "--seed", "42")
    assert json.loads(out)["seed"] == 42


def test_flags_mirror_config_keys(capsys):
    _, out, _ = run_cli(capsys, "run", "--trace", FIG3, "--signature.bits", "8192")
    big = json.loads(out)["offchip_bytes"]["signatures"]
    _, out, _ = run_cli(capsys, "run", "--trace", FIG3, "--set", "signature.bits=2048")
    assert big > json.loads(out)["offchip_bytes"]["signatures"]
    dests = {a.dest for a in build_parser()._subparsers._group_actions[0].choices["run"]._actions}
    assert {"cfg:dbi.interval_cycles", "cfg:kernel.instruction_cap", "cfg:timing.cpu_ipc"} <= dests


def test_flag_beats_set(capsys):
    _, out, _ = run_cli(capsys, "run", "--trace", FIG3, "--set", "signature.bits=8192",
                        "--signature.bits", "2048", "-f", "csv")
    row = next(csv.DictReader(io.StringIO(out)))
    _, ref, _ = run_cli(capsys, "run", "--trace", FIG3, "-f", "csv")
    assert row == next(csv.DictReader(io.StringIO(ref)))


def test_sweep_writes_one_report_per_point(capsys, tmp_path):
    out_dir = tmp_path / "out"
    code, _, _ = run_cli(capsys, "run", "--trace", FIG3, "-p", "lazypim,ideal",
                         "--sweep", "signature_bits=2048,8192", "--sweep", "dbi_interval=1000,800000",
                         "-o", str(out_dir) + "/")
    assert code == 0
    files = sorted(p.name for p in out_dir.glob("*.json"))
    assert len(files) == 8
    assert "lazypim_signature_bits-8192_dbi_interval-1000.json" in files
    rep = json.loads((out_dir / files[0]).read_text())
    assert set(rep["params"]) == {"signature_bits", "dbi_interval"}
    assert (out_dir / "comparison.csv").exists()


def test_sweep_cap(capsys):
    code, _, err = run_cli(capsys, "run", "--trace", FIG3, "--sweep", "signature_bits=1024,2048,4096",
                           "--max-runs", "2")
    assert code == 2 and "max-runs" in err


def test_worker_pool_matches_serial(capsys, monkeypatch, tmp_path):
    args = ["run", "--trace", FIG3, "-p", "lazypim,fg,cg", "--sweep", "instruction_cap=2,1000000", "-f", "csv"]
    monkeypatch.setenv("SIM_THREADS", "1")
    serial = run_cli(capsys, *args)[1]
    monkeypatch.setenv("SIM_THREADS", "3")
    assert run_cli(capsys, *args)[1] == serial


@pytest.mark.parametrize("argv,msg", [
    (["run", "-c", "missing"], "shipped configs"),
    (["run", "--trace", "nope.trc"], "no trace file"),
    (["run", "--trace", FIG3, "-p", "mesi"], "unknown protocol"),
    (["run", "--trace", FIG3, "--set", "bogus"], "KEY=VALUE"),
    (["run", "--trace", FIG3, "--timing.cpu_ipc", "0"], "IPC"),
    (["run"], "no workload"),
])
def test_usage_errors(capsys, argv, msg):
    code, _, err = run_cli(capsys, *argv)
    assert code == 2 and msg in err


def test_validator_failure_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.trc"
    bad.write_text("0 PB 1\n0 R 40\n0 PE\n")
    code, _, _ = run_cli(capsys, "run", "--trace", str(bad))
    assert code == 2  # structural problems are input errors
    deadlock = tmp_path / "dl.trc"
    deadlock.write_text("0 SY acquire 40\n1 SY acquire 40\n")
    code, _, err = run_cli(capsys, "run", "--trace", str(deadlock))
    assert code == 1 and "validation failed" in err


def test_gen_pointer_chase(capsys, tmp_path):
    out = tmp_path / "pc.trc"
    code, _, _ = run_cli(capsys, "gen", "-g", "pointer-chase", "--param", "nodes=64",
                         "--param", "edges=256", "--seed", "3", "-o", str(out))
    assert code == 0
    events = parse_trace(out)
    assert check_trace(events) == [] and events
    again = tmp_path / "again.trc"
    run_cli(capsys, "gen", "-g", "pointer-chase", "--param", "nodes=64", "--param", "edges=256",
            "--seed", "3", "-o", str(again))
    assert out.read_text() == again.read_text()


def test_gen_htap_binary_and_config(capsys, tmp_path):
    out = tmp_path / "h.bin"
    assert run_cli(capsys, "gen", "-g", "htap", "--binary", "-o", str(out))[0] == 0
    assert check_trace(parse_trace(out)) == []
    code, text, _ = run_cli(capsys, "gen", "-c", "no-sharing", "--param", "iterations=1")
    assert code == 0 and text.startswith("# ")
    assert run_cli(capsys, "gen", "-c", "fig3-timeline")[0] == 2
    assert run_cli(capsys, "gen", "-g", "htap", "--param", "bogus=1")[0] == 2


def test_fp_sweep(capsys):
    code, out, _ = run_cli(capsys, "fp-sweep", "--bits", "2048,8192", "--inserts", "0,250",
                           "--queries", "20000", "--trials", "20")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 4
    zero = [r for r in rows if r["inserts"] == "0"]
    assert all(float(r["membership"]) == 0 for r in zero)
    full = {r["bits"]: float(r["membership"]) for r in rows if r["inserts"] == "250"}
    assert full["8192"] < full["2048"]
    assert abs(full["2048"] / 0.02234 - 1) < 0.2


def test_compare(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "--trace", FIG3, "-p", "lazypim,ideal", "-o", str(a)])
    main(["run", "--trace", FIG3, "-p", "lazypim,ideal", "-o", str(b)])
    capsys.readouterr()
    code, out, _ = run_cli(capsys, "compare", str(a), str(b), "-f", "json")
    assert code == 0
    rows = json.loads(out)
    assert all(v == 1.0 for r in rows for k, v in r.items() if k not in ("protocol", "params"))
    _, csv_out, _ = run_cli(capsys, "compare", str(a), str(b), "-f", "csv")
    parsed = list(csv.DictReader(io.StringIO(csv_out)))
    assert [float(r["total_cycles"]) for r in parsed] == [r["total_cycles"] for r in rows]
    # ideal never slower than lazypim
    reports = {r["protocol"]: r for r in json.loads(a.read_text())}
    assert reports["ideal"]["total_cycles"] <= reports["lazypim"]["total_cycles"]


def test_validate_trace(capsys, tmp_path):
    bad = tmp_path / "bad.trc"
    bad.write_text("0 PE\n")
    code, out, _ = run_cli(capsys, "validate-trace", FIG3, str(bad), str(tmp_path / "none"))
    assert code == 1
    assert f"{FIG3}: ok" in out and "without a matching" in out and "no such file" in out


def test_overhead(capsys):
    code, out, _ = run_cli(capsys, "overhead")
    assert code == 0 and json.loads(out)["dbi"]["bytes"] == 224
