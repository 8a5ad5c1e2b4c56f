#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

The hot loops are the Picard sweeps of the deterministic matrix equations;
this script times representative solves under both backends by re-invoking
itself with ``DELAYLQ_BACKEND`` set.

    python benchmarks/bench_backends.py           # full comparison
    python benchmarks/bench_backends.py --quick   # smaller cases
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_cases(quick: bool) -> dict:
    from delaylq import backend
    from delaylq.harness import make_flagship_spec, make_seeded_unit_b_spec
    from delaylq.riccati import solve_aode, solve_delayed_riccati_sigma, solve_L, solve_P_i
    from delaylq.model import GridFn

    m = 10 if quick else 20
    reps = 1 if quick else 3
    cases = {}

    spec1 = make_flagship_spec(m=m)
    spec2 = make_seeded_unit_b_spec(3, n=2, m=m)

    def timeit(name, fn):
        fn()  # warm (JIT compile on the compiled backend)
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        cases[name] = (time.perf_counter() - t0) / reps

    timeit("delayed_quadratic_scalar", lambda: solve_delayed_riccati_sigma(spec1))
    timeit("delayed_quadratic_2x2", lambda: solve_delayed_riccati_sigma(spec2))
    timeit("inverse_family_2x2", lambda: solve_P_i(spec2, 4))

    sigma, _ = solve_delayed_riccati_sigma(spec2)
    timeit("gain_forward_2x2", lambda: solve_L(spec2, sigma))

    g = spec1.grid
    ah = GridFn.constant(g, [[0.2]])
    bh = GridFn.constant(g, [[0.6]])
    timeit("advanced_propagator", lambda: solve_aode(ah, bh))

    return {"backend": backend.backend_name(), "cases": cases}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true")
    parser.add_argument("--single", action="store_true", help="run in-process and print JSON")
    args = parser.parse_args()

    if args.single:
        print(json.dumps(run_cases(args.quick)))
        return 0

    rows = {}
    for backend_name in ("numba", "numpy"):
        env = dict(os.environ)
        env["DELAYLQ_BACKEND"] = backend_name
        cmd = [sys.executable, __file__, "--single"] + (["--quick"] if args.quick else [])
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        rows[backend_name] = json.loads(out.stdout.strip().splitlines()[-1])

    print(f"{'case':34s} {'numba [s]':>12s} {'numpy [s]':>12s} {'speedup':>9s}")
    for case in rows["numba"]["cases"]:
        tn = rows["numba"]["cases"][case]
        tp = rows["numpy"]["cases"][case]
        print(f"{case:34s} {tn:12.4f} {tp:12.4f} {tp / tn:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
