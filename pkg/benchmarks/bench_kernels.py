"""Time the hot paths with numba kernels and with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--iterations N]

Each mode runs in its own interpreter because the backend is fixed at import.
JIT compile time is excluded by one warm-up call per workload.
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, time
import numpy as np
from platoonsim import _jit
from platoonsim.config import SimConfig
from platoonsim.engine import run_iteration
from platoonsim.scenario import sample_scenario
from platoonsim.tked import MpcProblem, _solve, random_instance
from platoonsim.config import TkedParams

n = int(sys.argv[1])
cfg = SimConfig()
res = {"backend": "numba" if _jit.USE_NUMBA else "python"}

def timed(fn, reps):
    fn(0)
    t0 = time.perf_counter()
    for k in range(reps):
        fn(k + 1)
    return (time.perf_counter() - t0) / reps

for algo, mpr in [("sd", 0.5), ("smc", 0.5), ("tked", 0.5)]:
    reps = n if algo != "tked" else max(1, n // 5)
    res[f"iteration_{algo}"] = timed(
        lambda k: run_iteration(sample_scenario(cfg, mpr, k), algo, cfg), reps)

rng = np.random.default_rng(0)
probs = [MpcProblem.build(*random_instance(rng, 11, 6), TkedParams()) for _ in range(n + 1)]
res["tked_solve_11car"] = timed(lambda k: _solve(probs[k], "projected_search"), n)
json.dump(res, sys.stdout)
"""


def run(no_numba: bool, n: int) -> dict:
    env = dict(os.environ)
    env.pop("PLATOONSIM_NO_NUMBA", None)
    if no_numba:
        env["PLATOONSIM_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKLOAD, str(n)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=10)
    args = ap.parse_args()
    fast = run(False, args.iterations)
    slow = run(True, args.iterations)
    print(f"{'workload':22s} {'numba [ms]':>12s} {'python [ms]':>12s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        a, b = fast[key] * 1e3, slow[key] * 1e3
        print(f"{key:22s} {a:12.2f} {b:12.2f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
