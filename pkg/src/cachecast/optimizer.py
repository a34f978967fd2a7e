"""Joint rate and cache placement optimization by primal-dual descent.

The relaxed problem replaces per-edge coded loads with an l^n norm of
per-destination rates mu (a smooth upper bound on the max) and the cache
indicators with continuous kappa in [0, 1].  The objective charges every
edge its first-round cost plus, for each of the remaining M - 1 rounds,
either the full edge cost (head not caching) or the cost of the small
update payload plus the node's storage cost (head caching):

    Psi = sum_e f_e(s_e)
        + (M - 1) sum_i [ (1 - kappa_i) sum_in f_e(s_e)
                          + kappa_i (f_i(s_i) + sum_in f_e(u)) ]

with s_e the l^n load, s_i the out-edge load sum at i, and u the update
payload argument.  Storage at a node is charged on what it caches, the
out-edge load sum, so destinations (no out-edges) store for free.

A saddle point of the associated Lagrangian is found by projected Euler
iteration of the standard primal-dual flow: rates and cache indicators
descend their partial derivatives, node potentials p ascend conservation
violation, and multipliers for mu >= 0 and kappa in [0, 1] ascend their
constraint violations through a positive projection.  At the unique
fixed point of the discrete map all KKT condition families hold exactly,
so the iteration is stopped on the maximum KKT residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _pd_backend
from ._pd_fallback import (
    KIND_LINEAR,
    KIND_MM1,
    KIND_QUADRATIC,
    KIND_ZERO,
    cost_deriv,
    cost_value,
    edge_loads,
)
from .network import CostFamily, Instance, Network, feasible_flow

KIND_CODE = {
    "zero": KIND_ZERO,
    "linear": KIND_LINEAR,
    "quadratic": KIND_QUADRATIC,
    "mm1": KIND_MM1,
}


class SolverDivergence(RuntimeError):
    """State became non-finite and step halving could not recover it."""


@dataclass
class SolverConfig:
    """Iteration controls.  Gains are constant multipliers per variable
    group: k rates, h cache indicators, g potentials, m rate-positivity
    duals, alpha/beta cache box duals.

    The defaults are tuned for fixed-eligibility runs on the bundled
    fixtures: slow cache indicators (h) so flows track each indicator
    move adiabatically, stiff potentials (g) so conservation leads, and
    fast dual pumps (m, alpha, beta) so complementarity residuals close
    within the iteration budget.  ``placement()`` softens the box-dual
    pumps for all-nodes-eligible runs, whose indicator flips otherwise
    overshoot; they may need a few hundred thousand iterations.
    """

    norm_exponent: int = 20
    eta: float = 2e-4
    gain_k: float = 1.0
    gain_h: float = 0.1
    gain_g: float = 2e3
    gain_m: float = 1e4
    gain_alpha: float = 1e5
    gain_beta: float = 1e5
    max_iters: int = 200_000
    tol: float = 1e-3
    check_every: int = 2000
    seed: int = 0
    init_jitter: float = 0.1
    rounding_trials: int = 1
    max_halvings: int = 10
    plateau_checks: int = 1_000_000_000
    trace_limit: int = 2000
    barrier: float = 1e9

    def __post_init__(self):
        if self.norm_exponent < 2 or self.norm_exponent % 2:
            raise ValueError("norm exponent must be even and >= 2")
        if self.eta <= 0 or self.max_iters < 1 or self.tol <= 0:
            raise ValueError("eta, max_iters and tol must be positive")

    @classmethod
    def placement(cls, **overrides) -> "SolverConfig":
        """Preset for cache-placement runs with every node eligible."""
        base = dict(gain_alpha=1e4, gain_beta=1e4, max_iters=1_000_000)
        base.update(overrides)
        return cls(**base)


def update_payload_arg(inst: Instance, mode: str = "raw") -> float:
    """Objective argument for a caching node's per-edge update payload.

    "raw" charges 2 eps in the instance's own rate units; "symbols"
    charges the integer symbol payload 2 eps_symbols; "bits" additionally
    scales by the symbol size log2 q.
    """
    if mode == "raw":
        return 2.0 * inst.eps
    if mode == "symbols":
        return 2.0 * inst.eps_symbols
    if mode == "bits":
        return 2.0 * inst.eps_symbols * inst.fieldspec.bits_per_symbol
    raise ValueError(f"unknown update payload mode {mode!r}")


class RelaxedProblem:
    """Arrays describing one relaxed optimization run.

    eligible restricts which nodes may cache (a scenario name or an
    explicit node set); cache_cost optionally overrides the storage cost
    family of every eligible node; update_arg is the payload argument u.
    """

    def __init__(
        self,
        net: Network,
        inst: Instance,
        eligible="all",
        cache_cost: CostFamily | None = None,
        update_arg: float | None = None,
    ):
        if inst.network is not net and inst.network != net:
            raise ValueError("instance was built for a different network")
        self.net = net
        self.inst = inst
        if isinstance(eligible, str):
            elig_nodes = net.eligible_nodes(eligible)
        else:
            elig_nodes = frozenset(int(v) for v in eligible)
            if net.source in elig_nodes:
                raise ValueError("the source cannot cache")
        self.eligible = elig_nodes
        self.update_arg = (
            update_payload_arg(inst, "raw") if update_arg is None else float(update_arg)
        )
        n, e = net.n_nodes, net.n_edges
        self.n_terms = net.n_dest
        self.esrc = np.array([i - 1 for i, _ in net.edges], dtype=np.int64)
        self.edst = np.array([j - 1 for _, j in net.edges], dtype=np.int64)
        self.ekind = np.array([KIND_CODE[f.kind] for f in net.edge_cost], dtype=np.uint8)
        self.eparam = np.array([f.param for f in net.edge_cost], dtype=np.float64)
        fams = []
        for v in range(1, n + 1):
            fam = cache_cost if (cache_cost is not None and v in elig_nodes) else net.node_cache_cost(v)
            fams.append(fam)
        self.node_fams = tuple(fams)
        self.nkind = np.array([KIND_CODE[f.kind] for f in fams], dtype=np.uint8)
        self.nparam = np.array([f.param for f in fams], dtype=np.float64)
        self.elig = np.zeros(n, dtype=np.uint8)
        for v in elig_nodes:
            self.elig[v - 1] = 1
        self.theta = np.zeros((self.n_terms, n))
        self.terms = np.array([t - 1 for t in net.destinations], dtype=np.int64)
        for ti, t in enumerate(self.terms):
            self.theta[ti, 0] = inst.B
            self.theta[ti, t] = -inst.B
        self.feupd = np.array(
            [f.cost(self.update_arg) for f in net.edge_cost], dtype=np.float64
        )
        self.out_mask = np.zeros((n, e))
        self.in_mask = np.zeros((n, e))
        self.out_mask[self.esrc, np.arange(e)] = 1.0
        self.in_mask[self.edst, np.arange(e)] = 1.0


@dataclass
class FlowState:
    """Primal and dual iterates of the relaxed problem."""

    mu: np.ndarray  # (T, E) per-destination rates
    kappa: np.ndarray  # (N,) cache indicators
    p: np.ndarray  # (T, N) conservation potentials
    lam: np.ndarray  # (T, E) duals for mu >= 0
    gamma_minus: np.ndarray  # (N,) duals for kappa >= 0
    gamma_plus: np.ndarray  # (N,) duals for kappa <= 1

    def copy(self) -> "FlowState":
        return FlowState(
            self.mu.copy(),
            self.kappa.copy(),
            self.p.copy(),
            self.lam.copy(),
            self.gamma_minus.copy(),
            self.gamma_plus.copy(),
        )

    def check_invariants(self):
        assert np.all(self.mu >= 0), "negative rate"
        assert np.all((self.kappa >= 0) & (self.kappa <= 1)), "kappa out of box"
        assert np.all(self.lam >= 0) and np.all(self.gamma_minus >= 0) and np.all(
            self.gamma_plus >= 0
        ), "negative dual"


def init_state(problem: RelaxedProblem, cfg: SolverConfig) -> FlowState:
    """Feasible-ish warm start: scaled max-flow rates with seeded jitter."""
    net, inst = problem.net, problem.inst
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
    t_count, e_count, n_count = problem.n_terms, net.n_edges, net.n_nodes
    mu = np.zeros((t_count, e_count))
    for ti, t in enumerate(net.destinations):
        mu[ti] = np.maximum(feasible_flow(net, t, inst.B), 0.0)
    if cfg.init_jitter:
        # shrink-only jitter: keeps the warm start inside edge capacities
        mu *= 1.0 - cfg.init_jitter * rng.uniform(0.0, 1.0, size=mu.shape)
    kappa = np.where(problem.elig > 0, 0.5, 0.0)
    if cfg.init_jitter:
        kappa = np.clip(
            kappa + 0.5 * cfg.init_jitter * rng.uniform(-1.0, 1.0, size=n_count), 0.0, 1.0
        )
        kappa *= problem.elig
    return FlowState(
        mu=mu,
        kappa=kappa,
        p=np.zeros((t_count, n_count)),
        lam=np.zeros((t_count, e_count)),
        gamma_minus=np.zeros(n_count),
        gamma_plus=np.zeros(n_count),
    )


def psi_of_loads(problem: RelaxedProblem, loads, kappa) -> float:
    """Objective value at explicit per-edge loads and cache vector.

    Used for both the relaxed objective (loads = l^n rates) and the
    rounded upper bound (loads = integer symbol payloads).  Returns +inf
    when an mm1 edge is at or beyond capacity.
    """
    net = problem.net
    loads = np.asarray(loads, dtype=np.float64)
    total = 0.0
    m1 = problem.inst.M - 1
    for e, fam in enumerate(net.edge_cost):
        fe = fam.cost(loads[e])
        if not np.isfinite(fe):
            # round 1 always ships the full payload, so one saturated edge
            # makes the whole objective infinite regardless of caching
            return float("inf")
        head = problem.edst[e]
        k_head = kappa[head]
        total += fe + m1 * (1.0 - k_head) * fe + m1 * k_head * problem.feupd[e]
    s_node = problem.out_mask @ loads
    for v in range(net.n_nodes):
        if kappa[v] > 0:
            total += m1 * kappa[v] * problem.node_fams[v].cost(s_node[v])
    return total


def objective(problem: RelaxedProblem, state: FlowState, n_exp: int = 20) -> float:
    """Relaxed objective Psi at the current rates and cache indicators."""
    return psi_of_loads(problem, edge_loads(state.mu, n_exp), state.kappa)


def grad_mu(
    problem: RelaxedProblem, state: FlowState, n_exp: int = 20, barrier: float = 1e9
) -> np.ndarray:
    """dPsi/dmu, shape (T, E)."""
    s_e = edge_loads(state.mu, n_exp)
    s_n = problem.out_mask @ s_e
    fpe = cost_deriv(problem.ekind, problem.eparam, s_e, barrier)
    fpn = cost_deriv(problem.nkind, problem.nparam, s_n, barrier)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s_e > 0, state.mu / np.where(s_e > 0, s_e, 1.0), 0.0)
    m1 = problem.inst.M - 1
    coef = fpe * (1.0 + m1 * (1.0 - state.kappa[problem.edst]))
    coef = coef + m1 * state.kappa[problem.esrc] * fpn[problem.esrc]
    return ratio ** (n_exp - 1.0) * coef


def grad_kappa(problem: RelaxedProblem, state: FlowState, n_exp: int = 20) -> np.ndarray:
    """dPsi/dkappa, shape (N,); zero on ineligible nodes."""
    s_e = edge_loads(state.mu, n_exp)
    s_n = problem.out_mask @ s_e
    fe = cost_value(problem.ekind, problem.eparam, s_e)
    fn = cost_value(problem.nkind, problem.nparam, s_n)
    m1 = problem.inst.M - 1
    g = m1 * (fn + problem.in_mask @ (problem.feupd - fe))
    return g * (problem.elig > 0)


def step(problem: RelaxedProblem, state: FlowState, cfg: SolverConfig) -> FlowState:
    """One projected Euler iteration (numpy reference path)."""
    from ._pd_fallback import advance as py_advance

    out = state.copy()
    _advance_with(py_advance, problem, out, cfg, 1)
    return out


def _advance_with(fn, problem: RelaxedProblem, state: FlowState, cfg: SolverConfig, n_steps: int):
    fn(
        problem.esrc,
        problem.edst,
        problem.ekind,
        problem.eparam,
        problem.feupd,
        problem.nkind,
        problem.nparam,
        problem.elig,
        problem.theta,
        state.mu,
        state.lam,
        state.p,
        state.kappa,
        state.gamma_minus,
        state.gamma_plus,
        problem.inst.M,
        float(cfg.norm_exponent),
        cfg.barrier,
        cfg.eta,
        cfg.gain_k,
        cfg.gain_h,
        cfg.gain_g,
        cfg.gain_m,
        cfg.gain_alpha,
        cfg.gain_beta,
        n_steps,
    )


def kkt_residuals(problem: RelaxedProblem, state: FlowState, cfg: SolverConfig) -> dict:
    """Residuals of the optimality condition families, plus their max."""
    n_exp = cfg.norm_exponent
    gmu = grad_mu(problem, state, n_exp, cfg.barrier)
    gk = grad_kappa(problem, state, n_exp)
    q = state.p[:, problem.esrc] - state.p[:, problem.edst]
    y = state.mu @ problem.out_mask.T - state.mu @ problem.in_mask.T
    eligible = problem.elig > 0
    stat_kappa = np.abs(gk + state.gamma_plus - state.gamma_minus)[eligible]
    res = {
        "stat_mu": float(np.abs(gmu + q - state.lam).max()),
        "stat_kappa": float(stat_kappa.max()) if stat_kappa.size else 0.0,
        "conservation": float(np.abs(y - problem.theta).max()),
        "primal": float(
            max(
                np.maximum(-state.mu, 0.0).max(),
                np.maximum(-state.kappa, 0.0).max(),
                np.maximum(state.kappa - 1.0, 0.0).max(),
            )
        ),
        "dual": float(
            max(
                np.maximum(-state.lam, 0.0).max(),
                np.maximum(-state.gamma_minus, 0.0).max(),
                np.maximum(-state.gamma_plus, 0.0).max(),
            )
        ),
        "comp_mu": float(np.abs(state.mu * state.lam).max()),
        "comp_kappa": float(
            max(
                np.abs(state.kappa * state.gamma_minus).max(),
                np.abs((state.kappa - 1.0) * state.gamma_plus).max(),
            )
        ),
    }
    res["max"] = max(res.values())
    return res


@dataclass
class TracePoint:
    iteration: int
    psi: float
    kkt: dict
    eta: float
    lyapunov: float = math.nan
    snapshot: FlowState | None = None


@dataclass
class SolveResult:
    state: FlowState
    trace: list
    converged: bool
    iterations: int
    psi: float
    residuals: dict
    eta_final: float
    backend: str
    halvings: int = 0

    def kappa_of(self, node: int) -> float:
        return float(self.state.kappa[node - 1])


def _lyapunov(a: FlowState, b: FlowState, cfg: SolverConfig) -> float:
    """Quadratic distance to b weighted by inverse gains."""
    return float(
        ((a.mu - b.mu) ** 2).sum() / (2 * cfg.gain_k)
        + ((a.kappa - b.kappa) ** 2).sum() / (2 * cfg.gain_h)
        + ((a.p - b.p) ** 2).sum() / (2 * cfg.gain_g)
        + ((a.lam - b.lam) ** 2).sum() / (2 * cfg.gain_m)
        + ((a.gamma_minus - b.gamma_minus) ** 2).sum() / (2 * cfg.gain_alpha)
        + ((a.gamma_plus - b.gamma_plus) ** 2).sum() / (2 * cfg.gain_beta)
    )


def solve(problem: RelaxedProblem, cfg: SolverConfig | None = None) -> SolveResult:
    """Iterate to a KKT point, tracing progress.

    Runs in check_every blocks on the selected backend.  On a non-finite
    state the run restarts from the initial point with a halved step; on
    objective blow-up or a residual plateau only the step is halved.
    Convergence is kkt max < tol within max_iters.
    """
    cfg = cfg or SolverConfig()
    state = init_state(problem, cfg)
    eta = cfg.eta
    run_cfg = replace(cfg)
    trace: list[TracePoint] = []
    stride = 1
    best_psi = math.inf
    best_kkt = math.inf
    halvings = 0
    stall = 0
    it = 0
    converged = False
    while it < cfg.max_iters:
        block = min(cfg.check_every, cfg.max_iters - it)
        run_cfg.eta = eta
        _advance_with(_pd_backend.advance, problem, state, run_cfg, block)
        it += block
        finite = all(
            np.isfinite(arr).all()
            for arr in (state.mu, state.kappa, state.p, state.lam, state.gamma_minus, state.gamma_plus)
        )
        if not finite:
            halvings += 1
            if halvings > cfg.max_halvings:
                raise SolverDivergence(
                    f"state non-finite after {it} iterations at eta={eta:g}"
                )
            eta *= 0.5
            state = init_state(problem, cfg)
            trace.clear()
            best_psi = math.inf
            best_kkt = math.inf
            stall = 0
            it = 0
            continue
        psi = objective(problem, state, cfg.norm_exponent)
        res = kkt_residuals(problem, state, run_cfg)
        if (it // cfg.check_every) % stride == 0:
            trace.append(
                TracePoint(iteration=it, psi=psi, kkt=res, eta=eta, snapshot=state.copy())
            )
            if len(trace) >= 2 * cfg.trace_limit:
                trace = trace[::2]
                stride *= 2
        if res["max"] < cfg.tol:
            converged = True
            break
        if math.isfinite(psi) and psi < best_psi:
            best_psi = psi
        elif math.isfinite(best_psi) and psi > 10 * best_psi and halvings < cfg.max_halvings:
            halvings += 1
            eta *= 0.5
        if res["max"] < best_kkt * 0.99:
            best_kkt = res["max"]
            stall = 0
        else:
            stall += 1
            if stall >= cfg.plateau_checks and halvings < cfg.max_halvings:
                halvings += 1
                eta *= 0.5
                stall = 0
    final_res = kkt_residuals(problem, state, run_cfg)
    psi = objective(problem, state, cfg.norm_exponent)
    anchor = state
    for tp in trace:
        tp.lyapunov = _lyapunov(tp.snapshot, anchor, cfg)
        tp.snapshot = None
    return SolveResult(
        state=state,
        trace=trace,
        converged=converged,
        iterations=it,
        psi=psi,
        residuals=final_res,
        eta_final=eta,
        backend=_pd_backend.BACKEND,
        halvings=halvings,
    )


@dataclass(frozen=True)
class Placement:
    """A rounded cache decision with the loads that produced it."""

    delta: tuple  # 0/1 per node, index 0 = node 1
    sigma: tuple  # per-edge relaxed loads
    psi_star: float  # rounded-objective value at (sigma, delta)

    def cached_nodes(self):
        return tuple(i + 1 for i, d in enumerate(self.delta) if d)


def round_placement(
    problem: RelaxedProblem, state: FlowState, cfg: SolverConfig | None = None
) -> Placement:
    """Randomized rounding delta_i ~ Bernoulli(kappa_i) on eligible nodes.

    Draws rounding_trials candidates and keeps the one whose rounded
    objective at the relaxed loads is smallest (first draw on ties).
    """
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 777]))
    s_e = edge_loads(state.mu, cfg.norm_exponent)
    best = None
    for _ in range(max(1, cfg.rounding_trials)):
        draw = (rng.random(problem.net.n_nodes) < state.kappa).astype(np.int8)
        draw *= problem.elig
        val = psi_of_loads(problem, s_e, draw.astype(np.float64))
        if best is None or val < best[1]:
            best = (draw, val)
    delta, val = best
    return Placement(delta=tuple(int(d) for d in delta), sigma=tuple(map(float, s_e)), psi_star=val)


def avg_kappa(
    net: Network,
    inst: Instance,
    cfg: SolverConfig,
    runs: int,
    cache_cost: CostFamily,
    update_arg: float | None = None,
):
    """Mean converged kappa per node over seeded repeats,plus run results.

    Every node but the source is cache-eligible; cache_cost sets the
    storage cost family for all of them.
    """
    problem = RelaxedProblem(
        net, inst, eligible="all", cache_cost=cache_cost, update_arg=update_arg
    )
    results = []
    acc = np.zeros(net.n_nodes)
    for r in range(runs):
        child = int(np.random.SeedSequence([cfg.seed, r]).generate_state(1)[0])
        res = solve(problem, replace(cfg, seed=child))
        results.append(res)
        acc += res.state.kappa
    return acc / max(1, runs), results
