"""CLI subcommands: artifacts, determinism, exit codes."""

import json
import subprocess
import sys

import pytest

from cachecast import cli


def run_cli(argv):
    return cli.main([str(a) for a in argv])


def read(path):
    return path.read_bytes()


# ------------------------------------------------------------------ solve


def test_solve_writes_trace_and_state(tmp_path):
    rc = run_cli(
        ["solve", "--topology", "butterfly", "--scenario", "edge-peer",
         "--out", tmp_path]
    )
    assert rc == 0
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,psi,conservation,stationarity,lyapunov"
    assert len(lines) > 2
    summary = json.loads((tmp_path / "trace_summary.json").read_text())
    assert summary["converged"] is True
    assert summary["psi"] == pytest.approx(142.65, rel=1e-2)
    assert len(summary["kappa"]) == 7
    assert len(summary["mu"]) == 2  # one flow row per destination
    assert summary["residuals"]["max"] < 1e-3


def test_solve_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli(["solve", "--topology", "butterfly", "--scenario", "edge",
                        "--out", out]) == 0
    assert read(a / "trace.csv") == read(b / "trace.csv")
    assert read(a / "trace_summary.json") == read(b / "trace_summary.json")


def test_solve_zero_iters_reports_initial_state(tmp_path):
    rc = run_cli(["solve", "--topology", "service", "--max-iters", 0,
                  "--out", tmp_path])
    assert rc == 0
    assert (tmp_path / "trace.csv").read_text().splitlines() == [
        "iteration,psi,conservation,stationarity,lyapunov"
    ]
    summary = json.loads((tmp_path / "trace_summary.json").read_text())
    assert summary["iterations"] == 0
    assert summary["converged"] is False
    assert summary["psi"] > 0


def test_solve_budget_too_small_is_nonzero(tmp_path):
    rc = run_cli(["solve", "--topology", "butterfly", "--max-iters", 4000,
                  "--out", tmp_path])
    assert rc == cli.EXIT_NOT_CONVERGED
    assert (tmp_path / "trace.csv").exists()  # partial trace still written


def test_solve_malformed_topology(tmp_path, capsys):
    bad = tmp_path / "bad.topo"
    bad.write_text("nodes 3 1\nedge 1 99 4\n")
    rc = run_cli(["solve", "--topology", bad, "--B", 2, "--out", tmp_path])
    assert rc == cli.EXIT_PIPELINE
    assert "unknown node" in capsys.readouterr().err


def test_solve_bad_scenario_is_config_error(tmp_path):
    rc = run_cli(["solve", "--topology", "butterfly", "--scenario", "bogus",
                  "--out", tmp_path])
    assert rc == cli.EXIT_CONFIG


def test_missing_b_for_custom_topology(tmp_path):
    topo = tmp_path / "ok.topo"
    topo.write_text("nodes 2 1\nedge 1 2 4\n")
    rc = run_cli(["solve", "--topology", topo, "--out", tmp_path])
    assert rc == cli.EXIT_CONFIG


# ------------------------------------------------------------------ simulate


def test_simulate_ledger_and_summary(tmp_path):
    rc = run_cli(["simulate", "--topology", "butterfly", "--M", 6,
                  "--out", tmp_path])
    assert rc == 0
    lines = (tmp_path / "ledger.csv").read_text().splitlines()
    assert lines[0] == "round,kind,id,symbols,bits,cost"
    edge_rows = [ln for ln in lines[1:] if ln.split(",")[1] == "edge"]
    assert len(edge_rows) == 6 * 9  # rounds x edges
    summary = json.loads((tmp_path / "ledger_summary.json").read_text())
    assert summary["decode_exact"] is True
    assert summary["psi_s"] <= summary["psi_star"] + 1e-9
    assert summary["B"] == 3.6 and summary["B_symbols"] == 4
    assert summary["eps_symbols"] == 1


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli(["simulate", "--topology", "butterfly", "--M", 5,
                        "--out", out]) == 0
    assert read(a / "ledger.csv") == read(b / "ledger.csv")
    assert read(a / "ledger_summary.json") == read(b / "ledger_summary.json")


def test_simulate_json_format_embeds_rows(tmp_path):
    rc = run_cli(["simulate", "--topology", "butterfly", "--M", 4,
                  "--format", "json", "--out", tmp_path])
    assert rc == 0
    assert not (tmp_path / "ledger.csv").exists()
    summary = json.loads((tmp_path / "ledger_summary.json").read_text())
    assert summary["rows"][0] == ["round", "kind", "id", "symbols", "bits", "cost"]


# ------------------------------------------------------------------ place


def test_place_table(tmp_path):
    rc = run_cli(["place", "--topology", "service", "--runs", 2,
                  "--out", tmp_path])
    assert rc == 0
    lines = (tmp_path / "place.csv").read_text().splitlines()
    assert lines[0].startswith("node,kappa_linear:1,converged_linear:1,kappa_quadratic:1")
    assert len(lines) == 1 + 6
    summary = json.loads((tmp_path / "place_summary.json").read_text())
    assert summary["runs"] == 2
    assert set(summary["mean_kappa"]) == {"linear:1", "quadratic:1"}
    assert all(0 <= x <= 1 for xs in summary["mean_kappa"].values() for x in xs)


def test_place_single_run_warns(tmp_path, capsys):
    rc = run_cli(["place", "--topology", "service", "--runs", 1,
                  "--families", "linear:1", "--out", tmp_path])
    assert rc == 0
    assert "single" in capsys.readouterr().err
    summary = json.loads((tmp_path / "place_summary.json").read_text())
    assert "warning" in summary


def test_place_bad_runs(tmp_path):
    rc = run_cli(["place", "--topology", "service", "--runs", 0, "--out", tmp_path])
    assert rc == cli.EXIT_CONFIG


# ------------------------------------------------------------------ sweep


def test_sweep_grid(tmp_path):
    rc = run_cli(["sweep", "--topology", "butterfly", "--B-grid", "3.6:4.6:1.0",
                  "--scenarios", "no,edge-peer", "--M", 4, "--out", tmp_path])
    assert rc == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("B,scenario,psi,converged,iterations,feasible")
    assert len(lines) == 1 + 4
    # B=4.6 cannot fit ceil(B)=5 symbols through the mm1 caps: blank sim columns
    infeasible = [ln for ln in lines[1:] if ln.startswith("4.6")]
    assert all(ln.split(",")[5] == "False" for ln in infeasible)
    feasible = [ln for ln in lines[1:] if ln.startswith("3.6")]
    assert all(ln.split(",")[5] == "True" for ln in feasible)


def test_sweep_bad_grid(tmp_path):
    rc = run_cli(["sweep", "--topology", "butterfly", "--B-grid", "junk",
                  "--out", tmp_path])
    assert rc == cli.EXIT_CONFIG


# ------------------------------------------------------------------ misc


def test_help_mentions_every_column():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "cachecast.cli", "solve", "--topology",
         "butterfly", "--max-iters", "0", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert (tmp_path / "trace_summary.json").exists()
