"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The end-to-end row runs the circle analysis in a child process once per path,
so the numpy run really has numba switched off.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tubeflow import _kernels

END_TO_END = (
    "import time\n"
    "from tubeflow.families import circle\n"
    "from tubeflow.qift import safe_flow_time\n"
    "safe_flow_time(circle(grid=32))\n"
    "t0 = time.perf_counter()\n"
    "safe_flow_time(circle(grid=256))\n"
    "print(time.perf_counter() - t0)\n")


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(disable):
    env = dict(os.environ, TUBEFLOW_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        sys.exit("numba is unavailable or disabled; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for n in (2, 3, 4):
        A = rng.normal(size=(20000, n, n)) + n * np.eye(n)
        rows.append((f"adjugate_inverse 20000x{n}x{n}",
                     best(lambda: _kernels._adjugate_inverse_numba(A), args.repeat),
                     best(lambda: _kernels._adjugate_inverse_numpy(A), args.repeat)))
    for n in (1024, 8192):
        u = 2 * np.pi * np.arange(n) / n
        s = np.sin(u)
        pts = np.c_[np.cos(u), s * np.cos(u)] / (1 + s * s)[:, None]
        par, per = u[:, None], np.array([2 * np.pi])
        thr = 4 * 2 * np.pi / n
        rows.append((f"close_pair lemniscate n={n}",
                     best(lambda: _kernels._close_pair_numba(pts, par, per, thr, 0.5), args.repeat),
                     best(lambda: _kernels._close_pair_numpy(pts, par, per, thr, 0.5), args.repeat)))
    rows.append(("safe_flow_time circle grid=256", end_to_end(False), end_to_end(True)))
    print(f"{'case':<36}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, a, b in rows:
        print(f"{name:<36}{a:>12.4g}{b:>12.4g}{b / a:>10.2f}")


if __name__ == "__main__":
    main()
