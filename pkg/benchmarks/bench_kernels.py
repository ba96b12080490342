"""Compare the numba and pure-numpy kernel paths.

Each path runs in its own interpreter because the backend is chosen at
import time from ``PGP_LQR_DISABLE_NUMBA``.  Compilation is excluded by a
warm-up call.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 10]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from pgp_lqr import _accel, kernels

n, repeat = int(sys.argv[1]), int(sys.argv[2])
m, p = 4, 2
rng = np.random.default_rng(0)
A = rng.standard_normal((n, n)) / np.sqrt(n) - 2 * np.eye(n)
B = rng.standard_normal((n, m)); C = rng.standard_normal((p, n))
Q, R, S = np.eye(p), np.eye(m), np.eye(n) / 3
gains = 1e-3 * rng.standard_normal((4, m, p)); X0 = rng.uniform(-1, 1, (4, n))
W = C.T @ Q @ C
phi, g = kernels.integral_block(A, W, 0.01)
X1 = rng.uniform(-1, 1, (64, n))
mask = np.zeros((m, p))

cases = {
    "pade_expm": lambda: kernels.pade_expm(3 * A),
    "perturbed_costs(N=4,tau=100)":
        lambda: kernels.perturbed_costs(A, B, C, Q, R, gains, X0, 0.01, 100.0, 1e150),
    "step_trajectories(64x1000)": lambda: kernels.step_trajectories(phi, g, C, X1, 1000, 1e150),
    "cost_and_gradient": lambda: kernels.cost_and_gradient(A, B, C, Q, R, S, gains[0]),
    "exact_descent(200 it)":
        lambda: kernels.exact_descent(A, B, C, Q, R, S, np.zeros((m, p)), 0, mask, 1e-3,
                                      0.0, 200, 1e-9),
}
out = {"numba": _accel.USE_NUMBA, "times": {}}
for name, fn in cases.items():
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out["times"][name] = best
json.dump(out, sys.stdout)
"""


def run(disable, n, repeat):
    env = dict(os.environ)
    if disable:
        env["PGP_LQR_DISABLE_NUMBA"] = "1"
    else:
        env.pop("PGP_LQR_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", WORKER, str(n), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10, help="state dimension")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast, slow = run(False, args.n, args.repeat), run(True, args.n, args.repeat)
    if not fast["numba"]:
        print("numba unavailable: both runs used numpy")
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:32s} {1e3 * t_fast:11.3f} {1e3 * t_slow:11.3f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
