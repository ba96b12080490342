"""The compiled and pure-numpy kernel paths must agree."""
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from pgp_lqr import _accel, kernels

SCRIPT = r"""
import json, sys
import numpy as np
from pgp_lqr import _accel, kernels
rng = np.random.default_rng(0)
n, m, p = 4, 2, 2
A = rng.standard_normal((n, n)) / 2 - 2 * np.eye(n)
B = rng.standard_normal((n, m)); C = rng.standard_normal((p, n))
Q = np.eye(p); R = np.eye(m); S = np.eye(n) / 3
gains = 0.1 * rng.standard_normal((5, m, p)); X0 = rng.uniform(-1, 1, (5, n))
costs, finals, div = kernels.perturbed_costs(A, B, C, Q, R, gains, X0, 0.05, 7.3, 1e150)
AK = A - B @ gains[0] @ C; W = C.T @ (Q + gains[0].T @ R @ gains[0]) @ C
phi, g = kernels.integral_block(AK, W, 0.05)
c2, outs, fin2, div2 = kernels.step_trajectories(phi, g, C, X0, 40, 1e150)
f, G = kernels.cost_and_gradient(A, B, C, Q, R, S, gains[0])
K, it, code, cs, st = kernels.exact_descent(A, B, C, Q, R, S, np.zeros((m, p)), 1,
                                            np.array([[1.0, 0.0], [0.0, 0.0]]), 1e-2, 1e-3, 500, 1e-9)
json.dump({"numba": _accel.USE_NUMBA, "expm": kernels.pade_expm(3 * A).tolist(),
           "costs": costs.tolist(), "finals": finals.tolist(), "c2": c2.tolist(),
           "outs": outs.tolist(), "f": f, "G": G.tolist(), "K": K.tolist(), "it": it,
           "code": code, "cs": cs.tolist()}, sys.stdout)
"""


def run_path(disable):
    env = dict(os.environ)
    if disable:
        env["PGP_LQR_DISABLE_NUMBA"] = "1"
    else:
        env.pop("PGP_LQR_DISABLE_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True,
                         check=True, timeout=600)
    return json.loads(out.stdout)


@pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba not available")
def test_numba_and_numpy_paths_agree():
    fast, slow = run_path(False), run_path(True)
    assert fast["numba"] and not slow["numba"]
    for key in ("expm", "costs", "finals", "c2", "outs", "f", "G", "K", "cs"):
        np.testing.assert_allclose(np.array(fast[key]), np.array(slow[key]), rtol=1e-10,
                                   atol=1e-13, err_msg=key)
    assert fast["it"] == slow["it"] and fast["code"] == slow["code"]


def test_flag_values():
    code = "from pgp_lqr import _accel; print(_accel.USE_NUMBA)"
    for val in ("1", "true", "YES", "on"):
        env = dict(os.environ, PGP_LQR_DISABLE_NUMBA=val)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert out.stdout.strip() == "False"


def test_integral_block_closed_form():
    phi, g = kernels.integral_block(np.array([[-1.0]]), np.array([[1.0]]), 1.0)
    assert phi[0, 0] == pytest.approx(math.exp(-1), rel=1e-14)
    assert g[0, 0] == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-13)


def test_horizon_block_matches_single_block():
    A = np.array([[-0.5, 2.0], [-2.0, -0.3]])
    W = np.array([[2.0, 0.3], [0.3, 1.0]])
    phi_a, g_a = kernels.horizon_block(A, W, 0.05, 13.37)
    phi_b, g_b = kernels.integral_block(A, W, 13.37)
    np.testing.assert_allclose(phi_a, phi_b, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(g_a, g_b, rtol=1e-10)


def test_step_trajectories_flags_divergence():
    phi = np.array([[10.0]])
    g = np.array([[1.0]])
    costs, outs, finals, div = kernels.step_trajectories(phi, g, np.eye(1), np.ones((2, 1)), 400,
                                                         1e150)
    assert div.all()


def test_exact_descent_scalar_minimiser():
    one = np.eye(1)
    K, it, code, costs, steps = kernels.exact_descent(-one, one, one, one, one, one, np.zeros((1, 1)),
                                                      0, np.zeros((1, 1)), 0.5, 1e-5, 10_000, 1e-9)
    assert code == 0
    assert K[0, 0] == pytest.approx(math.sqrt(2) - 1, abs=1e-4)
    assert np.all(np.diff(costs) < 0)
