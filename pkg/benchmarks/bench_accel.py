"""Micro-benchmark: jit-compiled kernels against the pure-numpy fallback.

Times the transportation simplex, the truncated Dijkstra, and a whole-graph
curvature sweep in the current acceleration mode.  By default it then
re-runs itself in a subprocess with ``NRICCI_NO_NUMBA=1`` and prints a
side-by-side table with speedups.

Run from the repository root:

    python benchmarks/bench_accel.py
    python benchmarks/bench_accel.py --trials 5 --no-compare
"""

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from nricci import accel, curvature, kernels  # noqa: E402
from nricci.neural_graph import WeightedGraph  # noqa: E402


def random_instances(rng, n, m, count):
    out = []
    for _ in range(count):
        a = rng.random(n) + 0.05
        b = rng.random(m) + 0.05
        a /= a.sum()
        b /= b.sum()
        cost = rng.uniform(0.1, 10.0, size=(n, m))
        out.append((a, b, cost))
    return out


def random_graph(rng, n, extra_edges):
    pairs = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    while len(pairs) < n - 1 + extra_edges:
        a, b = rng.choice(n, size=2, replace=False)
        pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    us, vs = zip(*sorted(pairs))
    ws = rng.uniform(0.1, 10.0, size=len(us))
    return WeightedGraph([n], np.array(us), np.array(vs), ws)


def bench(fn, trials):
    """Best wall-clock of ``trials`` runs (first call warms the jit)."""
    fn()
    best = float("inf")
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_workloads(trials):
    rng = np.random.default_rng(7)
    small = random_instances(rng, 10, 10, 20)
    large = random_instances(rng, 30, 30, 8)
    g = random_graph(rng, 300, 600)
    indptr, indices, weights = g.csr()
    mask = np.ones(g.n_nodes, dtype=np.uint8)
    sweep_graph = random_graph(rng, 30, 40)

    def run_simplex(instances):
        for a, b, cost in instances:
            _, _, status = kernels.transport_simplex(a, b, cost)
            assert status == kernels.TRANSPORT_OK

    def run_dijkstra():
        for s in range(0, 300, 30):
            kernels.dijkstra_csr(indptr, indices, weights, s, mask, g.n_nodes)

    def run_sweep():
        curvature.orc_all_edges(sweep_graph)

    return [
        ("simplex 10x10 (20 solves)", lambda: run_simplex(small)),
        ("simplex 30x30 (8 solves)", lambda: run_simplex(large)),
        ("dijkstra n=300 (10 sources)", run_dijkstra),
        ("orc sweep n=30 graph", run_sweep),
    ]


def measure(trials):
    return {name: bench(fn, trials) for name, fn in build_workloads(trials)}


def fallback_times(trials):
    env = dict(os.environ, NRICCI_NO_NUMBA="1")
    proc = subprocess.run(
        [sys.executable, str(Path(__file__).resolve()),
         "--trials", str(trials), "--json"],
        capture_output=True, text=True, env=env, cwd=str(REPO_ROOT),
    )
    if proc.returncode != 0:
        raise RuntimeError(f"fallback run failed:\n{proc.stderr}")
    return json.loads(proc.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=3,
                        help="timed repetitions per workload (best is kept)")
    parser.add_argument("--json", action="store_true",
                        help="print raw timings as JSON and exit")
    parser.add_argument("--no-compare", action="store_true",
                        help="skip the pure-numpy subprocess comparison")
    args = parser.parse_args(argv)

    times = measure(args.trials)
    if args.json:
        print(json.dumps(times))
        return 0

    mode = "numba" if accel.NUMBA_ENABLED else "pure numpy"
    print(f"acceleration mode: {mode}")
    if not accel.NUMBA_ENABLED or args.no_compare:
        for name, t in times.items():
            print(f"  {name:32s} {t * 1e3:9.2f} ms")
        return 0

    print("timing pure-numpy fallback (subprocess with NRICCI_NO_NUMBA=1)...")
    plain = fallback_times(args.trials)
    print(f"  {'workload':32s} {'numba':>10s} {'fallback':>10s} {'speedup':>8s}")
    for name, t in times.items():
        ratio = plain[name] / t if t > 0 else float("inf")
        print(f"  {name:32s} {t * 1e3:8.2f}ms {plain[name] * 1e3:8.2f}ms "
              f"{ratio:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
