"""Benchmark the compiled iteration kernel against the numpy fallback.

Runs identical primal-dual step sequences through both kernels on a
bundled fixture, reports steps/second and the worst state divergence.

    python3 benchmarks/bench_kernel.py --fixture butterfly --steps 20000
"""

import argparse
import time

import numpy as np

from cachecast import _pd_fallback
from cachecast.fixtures import PRESET_B, PRESET_EPS_FRACTION, load_fixture
from cachecast.gf import FieldSpec
from cachecast.network import Instance
from cachecast.optimizer import RelaxedProblem, SolverConfig, _advance_with, init_state

try:
    from cachecast import _pdcore
except ImportError:
    _pdcore = None


def bench(fn, problem, cfg, steps, repeat):
    best = float("inf")
    state = None
    for _ in range(repeat):
        state = init_state(problem, cfg)
        t0 = time.perf_counter()
        _advance_with(fn, problem, state, cfg, steps)
        best = min(best, time.perf_counter() - t0)
    return steps / best, state


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixture", default="butterfly", choices=sorted(PRESET_B))
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    net = load_fixture(args.fixture)
    b = PRESET_B[args.fixture]
    inst = Instance(net, b, PRESET_EPS_FRACTION * b, 100, FieldSpec(2))
    problem = RelaxedProblem(net, inst, eligible="edge-peer")
    cfg = SolverConfig(seed=args.seed)

    py_rate, py_state = bench(_pd_fallback.advance, problem, cfg, args.steps, args.repeat)
    print(f"fixture={args.fixture} steps={args.steps} repeat={args.repeat}")
    print(f"python   kernel: {py_rate:12.0f} steps/s")
    if _pdcore is None:
        print("compiled kernel: not installed (CACHECAST_NO_EXT build or import failure)")
        return
    c_rate, c_state = bench(_pdcore.advance, problem, cfg, args.steps, args.repeat)
    print(f"compiled kernel: {c_rate:12.0f} steps/s")
    print(f"speedup: {c_rate / py_rate:.1f}x")
    div = max(
        np.abs(c_state.mu - py_state.mu).max(),
        np.abs(c_state.kappa - py_state.kappa).max(),
        np.abs(c_state.p - py_state.p).max(),
        np.abs(c_state.lam - py_state.lam).max(),
        np.abs(c_state.gamma_minus - py_state.gamma_minus).max(),
        np.abs(c_state.gamma_plus - py_state.gamma_plus).max(),
    )
    print(f"max state divergence after {args.steps} steps: {div:.3e}")


if __name__ == "__main__":
    main()
