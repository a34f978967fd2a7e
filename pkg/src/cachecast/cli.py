"""Command line interface: solve, simulate, place, sweep.

Artifacts are CSV tables plus a JSON summary, written atomically into
--out.  With --format json the tables are embedded in the summary
instead.  Outputs are byte-identical for identical config and seed.

Exit codes: 0 success; 2 bad usage or config; 3 solver did not converge
(artifacts still written); 4 a pipeline stage failed (topology, code
sampling, codec build, decoding).

CSV schemas:
  solve trace.csv: iteration, psi, conservation, stationarity, lyapunov
  simulate ledger.csv: round, kind (edge|node), id, symbols, bits, cost
  place place.csv: node, then per family: mean kappa and converged runs
  sweep sweep.csv: B, scenario, psi, converged, iterations, feasible,
    psi_star, psi_s, decode_exact (sim columns blank when the rounded
    frame does not fit the integer symbol dims)
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

from .fnupd import DecodeAmbiguityError, DecodeError, FieldTooSmallError, SketchSamplingError
from .fixtures import FIXTURE_NAMES, PRESET_B, PRESET_EPS_FRACTION, load_fixture
from .gf import FieldSpec, smallest_valid_prime
from .lnc import CodeSamplingError, InfeasibleDimsError, build_code
from .network import Instance, CostFamily, Network, TopologyError, load_topology_file
from .optimizer import (
    RelaxedProblem,
    SolverConfig,
    avg_kappa,
    init_state,
    kkt_residuals,
    objective,
    round_placement,
    solve,
)
from .simulator import gen_frames, plan_dims, run as sim_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_PIPELINE = 4

PIPELINE_ERRORS = (
    TopologyError,
    InfeasibleDimsError,
    CodeSamplingError,
    FieldTooSmallError,
    SketchSamplingError,
    DecodeError,
    DecodeAmbiguityError,
)


class ConfigError(ValueError):
    """Invalid flag combination or value."""


# ------------------------------------------------------------------ plumbing


def _atomic_write(path: str, text: str):
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv(rows) -> str:
    return "".join(",".join(str(c) for c in row) + "\n" for row in rows)


def _emit(out_dir: str, fmt: str, name: str, csv_rows, summary: dict) -> dict:
    """Write artifacts; returns the summary actually written."""
    if fmt == "json":
        summary = dict(summary)
        summary["rows"] = [list(r) for r in csv_rows]
        _atomic_write(
            os.path.join(out_dir, f"{name}_summary.json"),
            json.dumps(summary, sort_keys=True, indent=2, default=float) + "\n",
        )
        return summary
    _atomic_write(os.path.join(out_dir, f"{name}.csv"), _csv(csv_rows))
    _atomic_write(
        os.path.join(out_dir, f"{name}_summary.json"),
        json.dumps(summary, sort_keys=True, indent=2, default=float) + "\n",
    )
    return summary


def _load_net(name_or_path: str) -> Network:
    if name_or_path in FIXTURE_NAMES:
        return load_fixture(name_or_path)
    return load_topology_file(name_or_path)


def _default_b(args) -> float:
    if args.B is not None:
        return args.B
    if args.topology in PRESET_B:
        return PRESET_B[args.topology]
    raise ConfigError("--B is required for a non-fixture topology")


def _default_eps(args, b: float) -> float:
    if args.eps is not None:
        return args.eps
    return PRESET_EPS_FRACTION * b


def _cache_cost(text: str) -> CostFamily | None:
    if text in ("none", "zero"):
        return None if text == "none" else CostFamily("zero", 0.0)
    return CostFamily.parse(text)


def _scenario(name: str) -> str:
    canon = name.replace("+", "-").replace("_", "-")
    if canon not in ("no", "edge", "peer", "edge-peer", "all"):
        raise ConfigError(f"unknown scenario {name!r}")
    return canon


def _solver_config(args, placement: bool = False) -> SolverConfig:
    base = SolverConfig.placement if placement else SolverConfig
    overrides = {"seed": args.seed}
    if args.eta is not None:
        overrides["eta"] = args.eta
    if args.max_iters is not None and args.max_iters > 0:
        overrides["max_iters"] = args.max_iters
    if args.tol is not None:
        overrides["tol"] = args.tol
    return base(**overrides)


def _instance(net: Network, args):
    b = _default_b(args)
    eps = _default_eps(args, b)
    q = args.q or smallest_valid_prime(max(1, math.ceil(eps)), math.ceil(b))
    return Instance(net, b, eps, args.M, FieldSpec(q))


# ------------------------------------------------------------------ commands


def cmd_solve(args) -> int:
    net = _load_net(args.topology)
    inst = _instance(net, args)
    scen = _scenario(args.scenario)
    problem = RelaxedProblem(net, inst, eligible=scen, cache_cost=_cache_cost(args.cache_cost))
    cfg = _solver_config(args, placement=scen == "all")
    rows = [("iteration", "psi", "conservation", "stationarity", "lyapunov")]
    if args.max_iters == 0:
        state = init_state(problem, cfg)
        res_psi = objective(problem, state, cfg.norm_exponent)
        kkt = kkt_residuals(problem, state, cfg)
        converged, iters, backend = False, 0, "none"
        final_state = state
        residuals = kkt
    else:
        res = solve(problem, cfg)
        for tp in res.trace:
            stat = max(tp.kkt["stat_mu"], tp.kkt["stat_kappa"])
            rows.append((tp.iteration, tp.psi, tp.kkt["conservation"], stat, tp.lyapunov))
        res_psi = res.psi
        converged, iters, backend = res.converged, res.iterations, res.backend
        final_state = res.state
        residuals = res.residuals
    summary = {
        "command": "solve",
        "topology": args.topology,
        "scenario": scen,
        "B": inst.B,
        "M": inst.M,
        "eps": inst.eps,
        "q": inst.fieldspec.q,
        "psi": res_psi,
        "converged": converged,
        "iterations": iters,
        "backend": backend,
        "residuals": residuals,
        "kappa": [float(v) for v in final_state.kappa],
        "mu": [[float(v) for v in row] for row in final_state.mu],
        "potentials": [[float(v) for v in row] for row in final_state.p],
        "lambda": [[float(v) for v in row] for row in final_state.lam],
        "gamma_minus": [float(v) for v in final_state.gamma_minus],
        "gamma_plus": [float(v) for v in final_state.gamma_plus],
    }
    _emit(args.out, args.format, "trace", rows, summary)
    return EXIT_OK if converged or args.max_iters == 0 else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    net = _load_net(args.topology)
    inst = _instance(net, args)
    scen = _scenario(args.scenario)
    cfg = _solver_config(args, placement=scen == "all")
    problem = RelaxedProblem(net, inst, eligible=scen, cache_cost=_cache_cost(args.cache_cost))
    res = solve(problem, cfg)
    placement = round_placement(problem, res.state, cfg)
    b_sym, eps_sym = inst.B_symbols, inst.eps_symbols
    dims = plan_dims(net, placement.sigma, b_sym)
    code = build_code(net, inst.fieldspec, b_sym, dims, seed=args.seed)
    frames = gen_frames(inst.fieldspec, b_sym, eps_sym, inst.M, seed=args.seed)
    sim = sim_run(code, placement.delta, frames, eps_sym, seed=args.seed)
    led = sim.ledger
    rows = [("round", "kind", "id", "symbols", "bits", "cost")]
    for r in range(inst.M):
        for e, (i, j) in enumerate(net.edges):
            syms = led.edge_symbols[r, e]
            rows.append(
                (r + 1, "edge", f"{i}->{j}", int(syms), syms * led.bits_per_symbol,
                 net.edge_cost[e].cost(syms))
            )
        for v in range(1, net.n_nodes + 1):
            syms = led.cache_symbols[r, v - 1]
            if syms:
                rows.append((r + 1, "node", v, int(syms), syms * led.bits_per_symbol, 0.0))
    summary = {
        "command": "simulate",
        "topology": args.topology,
        "scenario": scen,
        "B": inst.B,
        "B_symbols": b_sym,
        "eps": inst.eps,
        "eps_symbols": eps_sym,
        "M": inst.M,
        "q": inst.fieldspec.q,
        "psi_relaxed": res.psi,
        "converged": res.converged,
        "delta": list(sim.delta),
        "dims": list(code.dims.dims),
        "decode_exact": sim.decode_exact(frames),
        "psi_s": led.psi_s,
        "psi_star": led.psi_star,
        "round_cost_first": float(led.round_cost[0]),
        "round_cost_last": float(led.round_cost[-1]),
    }
    _emit(args.out, args.format, "ledger", rows, summary)
    if not sim.decode_exact(frames):
        return EXIT_PIPELINE
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_place(args) -> int:
    net = _load_net(args.topology)
    inst = _instance(net, args)
    cfg = _solver_config(args, placement=True)
    fams = [CostFamily.parse(f) for f in args.families.split(",") if f]
    if not fams:
        raise ConfigError("--families must name at least one cost family")
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    means, conv = {}, {}
    for fam in fams:
        m, results = avg_kappa(net, inst, cfg, args.runs, fam)
        means[fam.label()] = m
        conv[fam.label()] = sum(r.converged for r in results)
    labels = [f.label() for f in fams]
    header = ["node"]
    for lab in labels:
        header += [f"kappa_{lab}", f"converged_{lab}"]
    rows = [tuple(header)]
    for v in range(1, net.n_nodes + 1):
        row = [v]
        for lab in labels:
            row += [float(means[lab][v - 1]), conv[lab]]
        rows.append(tuple(row))
    summary = {
        "command": "place",
        "topology": args.topology,
        "B": inst.B,
        "M": inst.M,
        "eps": inst.eps,
        "runs": args.runs,
        "families": labels,
        "mean_kappa": {lab: [float(x) for x in means[lab]] for lab in labels},
        "converged_runs": conv,
    }
    if args.runs == 1:
        summary["warning"] = "single run: per-node means carry full seed variance"
        print("warning: --runs 1 reports a single draw, not a mean", file=sys.stderr)
    _emit(args.out, args.format, "place", rows, summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    net = _load_net(args.topology)
    try:
        lo, hi, step = (float(x) for x in args.B_grid.split(":"))
    except ValueError as exc:
        raise ConfigError("--B-grid must be lo:hi:step") from exc
    if step <= 0 or hi < lo:
        raise ConfigError("--B-grid must be lo:hi:step with step > 0 and hi >= lo")
    scenarios = [_scenario(s) for s in args.scenarios.split(",") if s]
    grid = []
    b = lo
    while b <= hi + 1e-9:
        grid.append(round(b, 9))
        b += step
    rows = [("B", "scenario", "psi", "converged", "iterations",
             "feasible", "psi_star", "psi_s", "decode_exact")]
    all_conv = True
    for b in grid:
        eps = args.eps if args.eps is not None else PRESET_EPS_FRACTION * b
        q = args.q or smallest_valid_prime(max(1, math.ceil(eps)), math.ceil(b))
        inst = Instance(net, b, eps, args.M, FieldSpec(q))
        cfg = _solver_config(args)
        frames = gen_frames(inst.fieldspec, inst.B_symbols, inst.eps_symbols,
                            inst.M, seed=args.seed)
        for scen in scenarios:
            problem = RelaxedProblem(net, inst, eligible=scen,
                                     cache_cost=_cache_cost(args.cache_cost))
            res = solve(problem, cfg)
            all_conv &= res.converged
            placement = round_placement(problem, res.state, cfg)
            try:
                dims = plan_dims(net, placement.sigma, inst.B_symbols)
                code = build_code(net, inst.fieldspec, inst.B_symbols, dims, seed=args.seed)
                sim = sim_run(code, placement.delta, frames, inst.eps_symbols, seed=args.seed)
                row = (b, scen, res.psi, res.converged, res.iterations, True,
                       sim.ledger.psi_star, sim.ledger.psi_s, sim.decode_exact(frames))
            except (ValueError, *PIPELINE_ERRORS):
                # demand fits the relaxation but not the integer symbol dims
                row = (b, scen, res.psi, res.converged, res.iterations, False, "", "", "")
            rows.append(row)
    summary = {
        "command": "sweep",
        "topology": args.topology,
        "B_grid": grid,
        "M": args.M,
        "scenarios": scenarios,
        "rows": len(rows) - 1,
    }
    _emit(args.out, args.format, "sweep", rows, summary)
    return EXIT_OK if all_conv else EXIT_NOT_CONVERGED


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cachecast",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_default="edge-peer", cache_cost=True):
        p.add_argument("--topology", required=True,
                       help=f"fixture name ({', '.join(FIXTURE_NAMES)}) or a .topo file path")
        p.add_argument("--B", type=float, default=None,
                       help="frame size in rate units (default: fixture preset)")
        p.add_argument("--M", type=int, default=100, help="number of rounds (default 100)")
        p.add_argument("--eps", type=float, default=None,
                       help="update sparsity (default: 1%% of B)")
        p.add_argument("--q", type=int, default=None,
                       help="field size override (default: smallest admissible prime)")
        p.add_argument("--seed", type=int, default=0, help="master RNG seed (default 0)")
        p.add_argument("--out", default=".", help="output directory (default .)")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="csv: tables + JSON summary; json: summary only with rows embedded")
        p.add_argument("--eta", type=float, default=None, help="solver step size override")
        p.add_argument("--max-iters", type=int, default=None, dest="max_iters",
                       help="iteration budget override (0: report the initial state)")
        p.add_argument("--tol", type=float, default=None, help="KKT tolerance override")
        if scenario_default is not None:
            p.add_argument("--scenario", default=scenario_default,
                           help="no | edge | peer | edge-peer | all (default %(default)s)")
        if cache_cost:
            p.add_argument("--cache-cost", default="none", dest="cache_cost",
                           help="storage cost family for eligible nodes: none | zero | "
                                "linear[:p] | quadratic[:p] | mm1:c (default none)")

    raw = argparse.RawDescriptionHelpFormatter

    ps = sub.add_parser(
        "solve", help="solve the relaxed placement problem, write the trace",
        formatter_class=raw, epilog="""\
writes trace.csv + trace_summary.json into --out.
trace.csv columns: iteration (step count at the check), psi (objective),
  conservation (worst flow-conservation violation), stationarity (worst
  stationarity residual over flows and cache indicators), lyapunov
  (squared state distance moved since the previous check).
trace_summary.json fields: command, topology, scenario, B, M, eps, q,
  psi, converged, iterations, backend, residuals (per KKT family + max),
  mu (per-destination edge rates), kappa (cache indicators), potentials,
  lambda, gamma_minus, gamma_plus (duals).
--max-iters 0 reports the initial state; exit 3 when not converged.""",
    )
    common(ps)
    ps.set_defaults(fn=cmd_solve)

    pm = sub.add_parser(
        "simulate", help="solve, round, build codes and run all rounds",
        formatter_class=raw, epilog="""\
writes ledger.csv + ledger_summary.json into --out.
ledger.csv columns: round (1-based), kind (edge|node), id (i->j or node
  index), symbols (moved or held), bits (symbols*log2 q), cost (edge cost
  family at the symbol count; 0 on node rows).
ledger_summary.json fields: command, topology, scenario, B, B_symbols,
  eps, eps_symbols, M, q, psi_relaxed, converged, delta (0/1 placement),
  dims (round-1 symbols per edge), decode_exact, psi_s (realized total),
  psi_star (placement bound), round_cost_first, round_cost_last.""",
    )
    common(pm)
    pm.set_defaults(fn=cmd_simulate)

    pp = sub.add_parser(
        "place", help="mean cache indicators over seeded repeats, all nodes eligible",
        formatter_class=raw, epilog="""\
writes place.csv + place_summary.json into --out.
place.csv columns: node, then per family: kappa_<family> (mean converged
  cache indicator over the runs), converged_<family> (runs converged).
place_summary.json fields: command, topology, B, M, eps, runs, families,
  mean_kappa per family, converged_runs, warning (only when --runs 1).""",
    )
    common(pp, scenario_default=None, cache_cost=False)
    pp.add_argument("--runs", type=int, default=40, help="number of seeded runs (default 40)")
    pp.add_argument("--families", default="linear:1,quadratic:1",
                    help="comma-separated storage cost families (default linear:1,quadratic:1)")
    pp.set_defaults(fn=cmd_place)

    pw = sub.add_parser(
        "sweep", help="scenario comparison over a grid of B values",
        formatter_class=raw, epilog="""\
writes sweep.csv + sweep_summary.json into --out.
sweep.csv columns: B, scenario, psi (relaxed objective), converged,
  iterations, feasible (rounded dims carry ceil(B) to every destination),
  psi_star, psi_s, decode_exact (last three blank when infeasible).
sweep_summary.json fields: command, topology, B_grid, M, scenarios, rows.""",
    )
    common(pw, scenario_default=None)
    pw.add_argument("--B-grid", required=True, dest="B_grid", help="lo:hi:step in rate units")
    pw.add_argument("--scenarios", default="no,edge,peer,edge-peer",
                    help="comma-separated scenario list (default all four)")
    pw.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PIPELINE_ERRORS as exc:
        print(f"pipeline error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
