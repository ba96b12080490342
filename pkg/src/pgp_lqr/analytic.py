"""Model-based oracle: exact cost, value, gradient, gradient mapping and the
sublevel-set constants used for step sizes and for checking the theory."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, StabilityError
from .matlin import HURWITZ_MARGIN, is_hurwitz, solve_lyap_dual, solve_lyap_primal
from .system import closed_loop, stage_weight


class FeedbackGain:
    """A gain matrix with a lazily evaluated stability flag for one system."""

    __slots__ = ("K", "_sys", "_stable")

    def __init__(self, K, sys=None):
        self.K = np.array(K, dtype=float)
        self._sys = sys
        self._stable = None

    @property
    def stability(self):
        if self._sys is None:
            return "unknown"
        if self._stable is None:
            self._stable = is_hurwitz(closed_loop(self._sys, self.K))
        return "stable" if self._stable else "unstable"


def lyapunov_pair(sys, K):
    """(X, Y) for gain K: ``A_K^T X + X A_K + C^T(Q+K^T R K)C = 0`` and
    ``A_K Y + Y A_K^T + Sigma = 0``."""
    AK = closed_loop(sys, K)
    try:
        X = solve_lyap_dual(AK, stage_weight(sys, K))
        Y = solve_lyap_primal(AK, sys.Sigma)
    except StabilityError as exc:
        raise StabilityError(f"gain is not stabilising: {exc}", exc.abscissa) from exc
    return X, Y


def value_matrix(sys, K):
    AK = closed_loop(sys, K)
    try:
        return solve_lyap_dual(AK, stage_weight(sys, K))
    except StabilityError as exc:
        raise StabilityError(f"gain is not stabilising: {exc}", exc.abscissa) from exc


def exact_cost(sys, K):
    """f(K) = tr(X Sigma)."""
    return float(np.trace(value_matrix(sys, K) @ sys.Sigma))


def exact_value(sys, K, x0):
    """Infinite-horizon cost from ``x0`` (rows of a batch are handled too)."""
    X = value_matrix(sys, K)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        return float(x0 @ X @ x0)
    return np.einsum("ij,jk,ik->i", x0, X, x0)


def exact_gradient(sys, K):
    """grad f(K) = 2 (R K C - B^T X) Y C^T."""
    K = np.asarray(K, dtype=float)
    X, Y = lyapunov_pair(sys, K)
    return 2.0 * (sys.R @ K @ sys.C - sys.B.T @ X) @ Y @ sys.C.T


def cost_or_inf(sys, K, margin=HURWITZ_MARGIN):
    if not is_hurwitz(closed_loop(sys, K), margin):
        return np.inf
    return exact_cost(sys, K)


def in_sublevel(sys, K, a):
    """K stabilising and f(K) <= a."""
    return cost_or_inf(sys, K) <= a


def finite_difference_gradient(sys, K, step=1e-5):
    K = np.asarray(K, dtype=float)
    G = np.zeros_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = step
        G[idx] = (exact_cost(sys, K + E) - exact_cost(sys, K - E)) / (2 * step)
    return G


def gradient_mapping(sys, K, alpha, omega):
    """(proj(K - alpha grad f(K)) - K) / alpha."""
    if alpha <= 0:
        raise ConfigurationError("step size must be positive")
    K = np.asarray(K, dtype=float)
    return (omega.project(K - alpha * exact_gradient(sys, K)) - K) / alpha


@dataclass(frozen=True)
class SublevelConstants:
    a: float
    kappa: float
    xi: float
    sigma: float
    X_bound: float
    Y_bound: float
    Yprime_bound: float
    L: float
    A_bound: float
    eta: float
    beta: float

    def as_dict(self):
        return asdict(self)


def _sigma_K0(sys, K0):
    AK0 = closed_loop(sys, K0)
    lam = float(np.linalg.eigvalsh(AK0 + AK0.T).max())
    if lam >= 0:
        raise ConfigurationError(
            f"A_K0 + A_K0^T is not negative definite (lambda_max = {lam:.3e})")
    return -0.5 * lam


def _base_quantities(sys):
    lmin_ccT = float(np.linalg.eigvalsh(sys.C @ sys.C.T).min())
    if lmin_ccT <= 1e-14 * max(1.0, np.linalg.norm(sys.C, 2) ** 2):
        raise ConfigurationError(f"C row-rank deficient: lambda_min(CC^T)={lmin_ccT:.3e}")
    return {
        "nA": np.linalg.norm(sys.A, 2),
        "nB": np.linalg.norm(sys.B, 2),
        "nC": np.linalg.norm(sys.C, 2),
        "fB": np.linalg.norm(sys.B, "fro"),
        "fC": np.linalg.norm(sys.C, "fro"),
        "fR": np.linalg.norm(sys.R, "fro"),
        "lmin_S": float(np.linalg.eigvalsh(sys.Sigma).min()),
        "nS": np.linalg.norm(sys.Sigma, 2),
        "lmin_R": float(np.linalg.eigvalsh(sys.R).min()),
        "lmax_R": float(np.linalg.eigvalsh(sys.R).max()),
        "lmin_Q": float(np.linalg.eigvalsh(sys.Q).min()),
        "lmin_CCt": lmin_ccT,
    }


def _level(q, a, sigma, n):
    kappa = (2 * q["nB"] * q["nC"] * a / (q["lmin_S"] * q["lmin_R"] * q["lmin_CCt"])
             + q["nA"] / (q["nB"] * q["nC"]))
    xi = 1.0 / (4 * q["nB"] * kappa)
    X_bound = a / q["lmin_S"]
    Y_bound = max(a / (xi ** 2 * q["lmin_Q"]), q["nS"] / sigma)
    Yp_bound = 2 * q["nB"] * q["nC"] * Y_bound ** 2 / q["lmin_S"]
    L = (2 * q["lmax_R"] * q["fC"] ** 2 * Y_bound
         + 4 * (np.sqrt(n) * q["fR"] * kappa * q["fC"] + n * q["fB"] * X_bound)
         * Yp_bound * q["fC"])
    A_bound = q["nA"] + q["nB"] * q["nC"] * kappa
    return kappa, xi, X_bound, Y_bound, Yp_bound, L, A_bound


def constants(sys, K0=None, a=None):
    """Norm bounds and smoothness constant on the sublevel set S(a).

    ``a`` defaults to ``2 f(K0)``; ``K0`` defaults to the system's known gain.
    """
    K0 = sys.K0 if K0 is None else np.asarray(K0, dtype=float)
    sigma = _sigma_K0(sys, K0)
    f0 = exact_cost(sys, K0)
    a = 2.0 * f0 if a is None else float(a)
    if a < f0 * (1 - 1e-12):
        raise ConfigurationError(f"sublevel value a={a:.6g} is below f(K0)={f0:.6g}")
    q = _base_quantities(sys)
    kappa, xi, Xb, Yb, Ypb, L, Ab = _level(q, a, sigma, sys.n)
    Y2a = _level(q, 2 * a, sigma, sys.n)[3]
    return SublevelConstants(a=a, kappa=kappa, xi=xi, sigma=sigma, X_bound=Xb, Y_bound=Yb,
                             Yprime_bound=Ypb, L=L, A_bound=Ab, eta=q["lmin_S"] / Y2a,
                             beta=2 * Ab)


def yprime(sys, K, E):
    """Solution of ``A_K Y' + Y' A_K^T - (B E C Y + (B E C Y)^T) = 0``."""
    _, Y = lyapunov_pair(sys, K)
    M = sys.B @ np.asarray(E, dtype=float) @ sys.C @ Y
    return solve_lyap_primal(closed_loop(sys, K), -(M + M.T))


def trajectory_decay_bound(sys, consts, t):
    """Squared-state envelope ``2 Y(a) A(a) / lmin(Sigma) exp(-lmin(Sigma) t / Y(a))``."""
    lmin = float(np.linalg.eigvalsh(sys.Sigma).min())
    return (2 * consts.Y_bound * consts.A_bound / lmin) * np.exp(-lmin * np.asarray(t) / consts.Y_bound)
