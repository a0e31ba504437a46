"""Compare the compiled and pure-numpy kernel backends.

Runs each hot kernel under ``PMDLAB_BACKEND=numba`` and ``=numpy`` in child
processes (the backend is fixed at import time) and prints best-of-repeat
timings with the speedup. Compilation happens in a warmup call and is not
timed.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads():
    rng = np.random.default_rng(0)
    pmd_rows = rng.dirichlet(np.ones(3), size=150)
    siirv_rows = rng.dirichlet(np.ones(3), size=400)
    chol = np.array([[2.0, 0.0], [0.7, 1.5]])

    from pmdlab._kernels import box_probs_1d, box_probs_2d, pmd_dp, siirv_dp

    return {
        "pmd_dp n=150 k=3": lambda: pmd_dp(pmd_rows),
        "siirv_dp n=400 k=3": lambda: siirv_dp(siirv_rows),
        "box_probs_1d 2000 calls": lambda: [
            box_probs_1d(0.3, 3.0, -60, 60) for _ in range(2000)],
        "box_probs_2d 121x121": lambda: box_probs_2d(
            np.array([40.0, 38.0]), chol, -20, 100, -20, 100),
    }


def run_worker(repeats: int) -> dict:
    from pmdlab._backend import BACKEND

    results = {"backend": BACKEND, "timings": {}}
    for name, fn in _workloads().items():
        fn()  # warmup; compiles under numba
        best = min(_timed(fn) for _ in range(repeats))
        results["timings"][name] = best
    return results


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _spawn(backend: str, repeats: int) -> dict:
    env = dict(os.environ, PMDLAB_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker",
         "--repeats", str(repeats)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    if args.worker:
        print(json.dumps(run_worker(args.repeats)))
        return 0

    numba_res = _spawn("numba", args.repeats)
    numpy_res = _spawn("numpy", args.repeats)
    if numba_res["backend"] != "numba":
        print("numba is not importable; both columns are the numpy path",
              file=sys.stderr)

    if args.json:
        print(json.dumps({"numba": numba_res, "numpy": numpy_res},
                         indent=2, sort_keys=True))
        return 0

    width = max(len(n) for n in numpy_res["timings"])
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, t_np in numpy_res["timings"].items():
        t_nb = numba_res["timings"][name]
        print(f"{name:<{width}}  {t_nb * 1e3:>8.2f}ms  {t_np * 1e3:>8.2f}ms"
              f"  {t_np / t_nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
