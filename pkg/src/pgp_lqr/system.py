"""LTI plant model, exact closed-loop simulation and the random
port-Hamiltonian system generator.

Model-free code talks to a plant only through :class:`Plant`, which exposes
rollouts (costs and sampled outputs) and the initial-state sampler but not
the matrices behind them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import DimensionError, DivergenceError, SystemFileError
from .matlin import as_matrix, expm, is_hurwitz, spectral_abscissa
from .rng import make_rng

DEFAULT_DT = 0.05
DIVERGENCE_BOUND = 1e150
SYSTEM_FORMAT = "pgp-lqr-system/1"


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


def _is_pd(M, tol=0.0):
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min()) > tol


@dataclass(frozen=True)
class InitialDistribution:
    """Distribution of x(0): almost-sure norm bound and second moment.

    ``kind`` is ``"uniform_cube"`` (uniform on [-1, 1]^n) or ``"custom"``, in
    which case ``sampler(rng, size)`` must return an array of shape
    ``(size, n)`` whose rows satisfy the bound.
    """

    kind: str
    n: int
    bound: float
    second_moment: np.ndarray
    sampler: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        sigma = _frozen(self.second_moment)
        object.__setattr__(self, "second_moment", sigma)
        if sigma.shape != (self.n, self.n):
            raise DimensionError(f"second moment must be {self.n}x{self.n}")
        if not _is_pd(sigma):
            raise ValueError("second moment Sigma must be positive definite")
        if self.kind == "custom" and self.sampler is None:
            raise ValueError("custom distribution needs a sampler")
        if self.kind not in ("uniform_cube", "custom"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def uniform_cube(cls, n):
        return cls("uniform_cube", n, float(np.sqrt(n)), np.eye(n) / 3.0)

    def sample(self, rng, size=None):
        """One state (``size=None``) or an array of ``size`` states."""
        count = 1 if size is None else int(size)
        if self.kind == "uniform_cube":
            X = rng.uniform(-1.0, 1.0, size=(count, self.n))
        else:
            X = np.asarray(self.sampler(rng, count), dtype=float).reshape(count, self.n)
        return X[0] if size is None else X


def observability_matrix(A, C):
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    # per-block scaling keeps the rank test meaningful for stiff A
    blocks = [b / max(np.linalg.norm(b, 2), 1e-300) for b in blocks]
    return np.vstack(blocks)


def observability_rank(A, C, tol=1e-10):
    s = np.linalg.svd(observability_matrix(A, C), compute_uv=False)
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class SystemParams:
    """Plant ``x' = Ax + Bu, y = Cx`` with cost weights ``Q`` (outputs), ``R``
    (inputs), initial-state distribution and the known stabilising gain K0."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    init: InitialDistribution
    K0: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R"):
            object.__setattr__(self, name, _frozen(as_matrix(getattr(self, name), name)))
        n, m, p = self.n, self.m, self.p
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError("B must be n x m and C must be p x n")
        if self.Q.shape != (p, p) or self.R.shape != (m, m):
            raise DimensionError("Q must be p x p and R must be m x m")
        if not _is_pd(self.Q) or not _is_pd(self.R):
            raise ValueError("Q and R must be symmetric positive definite")
        if not np.any(self.B) or not np.any(self.C):
            raise ValueError("B and C must be nonzero")
        if self.init.n != n:
            raise DimensionError("initial distribution dimension does not match A")
        if observability_rank(self.A, self.C) != n:
            raise ValueError("(A, C) is not observable")
        K0 = np.zeros((m, p)) if self.K0 is None else as_matrix(self.K0, "K0")
        if K0.shape != (m, p):
            raise DimensionError(f"K0 must be {m}x{p}")
        object.__setattr__(self, "K0", _frozen(K0))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def Sigma(self):
        return self.init.second_moment

    def scaled_costs(self, gamma):
        return SystemParams(self.A, self.B, self.C, gamma * self.Q, gamma * self.R,
                            self.init, self.K0, self.seed)


@dataclass
class TrajectoryRecord:
    x0: np.ndarray
    gain: np.ndarray
    horizon: float
    cost: float
    times: np.ndarray
    outputs: np.ndarray
    final_state: np.ndarray


def _gain(sys, K):
    K = as_matrix(K, "K")
    if K.shape != (sys.m, sys.p):
        raise DimensionError(f"gain must be {sys.m}x{sys.p}, got {K.shape}")
    return K


def closed_loop(sys, K):
    """A - B K C."""
    K = _gain(sys, K)
    return sys.A - sys.B @ K @ sys.C


def stage_weight(sys, K):
    """State-space weight ``C^T (Q + K^T R K) C`` of the running cost."""
    K = _gain(sys, K)
    return sys.C.T @ (sys.Q + K.T @ sys.R @ K) @ sys.C


def simulate_cost(sys, K, x0, tau, dt=DEFAULT_DT, record_outputs=True,
                  bound=DIVERGENCE_BOUND):
    """Roll out ``u = -K y`` from ``x0`` for ``tau`` time units.

    The state is propagated exactly on the ``dt`` grid by ``exp(A_K dt)`` and
    the running cost is accumulated with exact per-step integral blocks, so
    the only error is that of the matrix exponential.  With
    ``record_outputs=False`` the same per-step blocks are composed by binary
    doubling, which makes very long horizons cheap; no outputs are recorded.

    Raises :class:`DivergenceError` when the state norm exceeds ``bound``.
    """
    K = _gain(sys, K)
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    if tau < 0 or dt <= 0:
        raise ValueError("need tau >= 0 and dt > 0")
    AK = np.ascontiguousarray(closed_loop(sys, K))
    W = np.ascontiguousarray(stage_weight(sys, K))
    if not record_outputs:
        phi, g = kernels.horizon_block(AK, W, float(dt), float(tau))
        with np.errstate(over="ignore", invalid="ignore"):
            xt = phi @ x0
            cost = float(x0 @ g @ x0)
        if not (np.all(np.isfinite(xt)) and np.isfinite(cost)) or np.linalg.norm(xt) > bound:
            raise DivergenceError(f"rollout diverged for gain {K.tolist()}", gain=K)
        return TrajectoryRecord(x0, K, float(tau), cost, np.empty(0),
                                np.empty((0, sys.p)), xt)
    steps = int(np.floor(tau / dt + 1e-12))
    rem = tau - steps * dt
    phi, g = kernels.integral_block(AK, W, float(dt))
    costs, outputs, finals, diverged = kernels.step_trajectories(
        phi, g, sys.C, x0[None, :], steps, bound)
    if diverged[0]:
        raise DivergenceError(f"rollout diverged for gain {K.tolist()}", gain=K)
    cost = float(costs[0])
    xt = finals[0]
    times = dt * np.arange(steps + 1)
    outputs = outputs[0]
    if rem > 1e-12 * dt:
        phi_r, g_r = kernels.integral_block(AK, W, float(rem))
        cost += float(xt @ g_r @ xt)
        xt = phi_r @ xt
        if not np.all(np.isfinite(xt)) or np.linalg.norm(xt) > bound:
            raise DivergenceError(f"rollout diverged for gain {K.tolist()}", gain=K)
        times = np.append(times, tau)
        outputs = np.vstack([outputs, sys.C @ xt])
    return TrajectoryRecord(x0, K, float(tau), cost, times, outputs, xt)


def stacked_matrix(sys, K, delays):
    """``F = [C; C e^{A_K h_1}; ...; C e^{A_K h_{D-1}}]`` (shape pD x n)."""
    AK = closed_loop(sys, K)
    return np.vstack([sys.C @ expm(AK * h) for h in np.asarray(delays, dtype=float)])


def stacked_observation(sys, K, x0, t, delays, bound=DIVERGENCE_BOUND):
    """``[y(t); y(t+h_1); ...; y(t+h_{D-1})]`` of the closed loop from ``x0``.

    ``x0`` may be a single state or a batch (rows); the result has matching
    leading dimension and trailing length ``p * D``.
    """
    K = _gain(sys, K)
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    AK = closed_loop(sys, K)
    with np.errstate(over="ignore", invalid="ignore"):
        Xt = X0 @ expm(AK * float(t)).T
        Ybar = Xt @ stacked_matrix(sys, K, delays).T
    norms = np.linalg.norm(Xt, axis=1)
    if not np.all(np.isfinite(Ybar)) or np.any(~np.isfinite(norms) | (norms > bound)):
        raise DivergenceError(f"rollout diverged for gain {K.tolist()}", gain=K)
    return Ybar[0] if np.ndim(x0) == 1 else Ybar


def sample_initial(dist, rng, size=None):
    return dist.sample(rng, size)


class Plant:
    """Black-box rollout interface around a :class:`SystemParams`.

    Only dimensions, the sampler and rollout results are exposed.  Every
    rollout increments :attr:`rollouts`, which the optimisers use for sample
    accounting.
    """

    __slots__ = ("__sys", "n", "m", "p", "dt", "bound", "rollouts")

    def __init__(self, sys, dt=DEFAULT_DT, bound=DIVERGENCE_BOUND):
        self.__sys = sys
        self.n, self.m, self.p = sys.n, sys.m, sys.p
        self.dt = float(dt)
        self.bound = float(bound)
        self.rollouts = 0

    def sample_initial(self, rng, size=None):
        return self.__sys.init.sample(rng, size)

    def cost(self, K, x0, tau):
        """Finite-horizon cost of one rollout (raises on divergence)."""
        self.rollouts += 1
        rec = simulate_cost(self.__sys, K, x0, tau, self.dt, record_outputs=False,
                            bound=self.bound)
        return rec.cost

    def perturbed_costs(self, gains, X0, tau):
        """Costs of N rollouts, rollout i using ``gains[i]`` from ``X0[i]``.

        Returns ``(costs, diverged)``; diverged entries carry whatever the
        arithmetic produced and must not be trusted.
        """
        s = self.__sys
        gains = np.ascontiguousarray(np.asarray(gains, dtype=float).reshape(-1, self.m, self.p))
        X0 = np.ascontiguousarray(np.asarray(X0, dtype=float).reshape(-1, self.n))
        if gains.shape[0] != X0.shape[0]:
            raise DimensionError("one initial state per gain is required")
        self.rollouts += gains.shape[0]
        with np.errstate(over="ignore", invalid="ignore"):
            costs, _, diverged = kernels.perturbed_costs(
                s.A, s.B, s.C, s.Q, s.R, gains, X0, self.dt, float(tau), self.bound)
        return costs, diverged

    def rollout(self, K, X0, horizon, output_times=()):
        """Same-gain rollouts from each row of ``X0``.

        Returns ``(costs, outputs)``: the cost accumulated over ``[0, horizon]``
        and outputs of shape ``(len(X0), len(output_times), p)``.  The
        trajectory is simulated until ``max(horizon, max(output_times))``.
        """
        s = self.__sys
        K = _gain(s, K)
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        times = np.asarray(output_times, dtype=float)
        self.rollouts += X0.shape[0]
        AK = np.ascontiguousarray(closed_loop(s, K))
        W = np.ascontiguousarray(stage_weight(s, K))
        with np.errstate(over="ignore", invalid="ignore"):
            phi, g = kernels.horizon_block(AK, W, self.dt, float(horizon))
            costs = np.einsum("ij,jk,ik->i", X0, g, X0)
            outputs = np.empty((X0.shape[0], times.size, self.p))
            order = np.argsort(times, kind="stable")
            X = X0.copy()
            current = 0.0
            cache = {}
            for idx in order:
                delta = float(times[idx] - current)
                key = round(delta, 12)
                if key not in cache:
                    cache[key] = expm(AK * delta)
                X = X @ cache[key].T
                current = float(times[idx])
                outputs[:, idx, :] = X @ s.C.T
        ok = np.all(np.isfinite(costs)) and np.all(np.isfinite(outputs))
        if not ok or np.any(np.linalg.norm(X, axis=1) > self.bound):
            raise DivergenceError(f"rollout diverged for gain {K.tolist()}", gain=K)
        return costs, outputs


def random_phl_system(n=10, m=4, p=2, seed=0, b_offset=1.0, b_scale=0.5,
                      c_offset=1.0, c_scale=0.5, max_retries=20, cond_limit=1e8):
    """Random plant ``A = (J - G) H`` emitted in the frame where A + A^T < 0.

    Draw order from ``make_rng(seed)`` (Philox4x64): ``randn(n, n)`` for J~,
    G~ and H~ (row-major), then ``rand(n, m)`` for B and ``rand(p, n)`` for C.
    A draw whose G~ or H~ has condition number above ``cond_limit`` is
    discarded and the whole draw repeated.  With ``H = L^T L`` (Cholesky) the
    returned system is ``(L A L^-1, L B, C L^-1)``, Q = I, R = I, K0 = 0 and
    x(0) uniform on the cube.
    """
    if n < max(m, p):
        raise ValueError("need n >= max(m, p)")
    rng = make_rng(seed)
    for _ in range(max_retries):
        Jt = rng.standard_normal((n, n))
        Gt = rng.standard_normal((n, n))
        Ht = rng.standard_normal((n, n))
        B = b_offset + b_scale * rng.random((n, m))
        C = c_offset + c_scale * rng.random((p, n))
        if np.linalg.cond(Gt) > cond_limit or np.linalg.cond(Ht) > cond_limit:
            continue
        J = Jt - Jt.T
        G = Gt @ Gt.T
        H = Ht @ Ht.T
        A = (J - G) @ H
        L = np.linalg.cholesky(H).T
        Linv = np.linalg.inv(L)
        A1 = L @ A @ Linv
        B1 = L @ B
        C1 = C @ Linv
        if np.linalg.eigvalsh(A1 + A1.T).max() >= 0 or not is_hurwitz(A1):
            continue
        try:
            return SystemParams(A1, B1, C1, np.eye(p), np.eye(m),
                                InitialDistribution.uniform_cube(n), seed=int(seed))
        except ValueError:
            continue
    raise RuntimeError(f"no valid system after {max_retries} draws (seed {seed})")


def random_dissipative_system(n=2, m=1, p=1, seed=0, damping=1.0):
    """Small well-conditioned test plant with ``A + A^T < 0``.

    Draw order from ``make_rng(seed)``: ``randn(n, n)`` S, ``randn(n, n)`` J~,
    ``randn(n, m)`` and ``randn(p, n)`` perturbations.  Then
    ``A = -(damping I + 0.2 S S^T) + 0.5 (J~ - J~^T)``, B and C are the
    leading identity blocks plus 0.3 times the perturbations, Q = I, R = I.
    """
    rng = make_rng(seed)
    S = rng.standard_normal((n, n))
    Jt = 0.5 * rng.standard_normal((n, n))
    dB = rng.standard_normal((n, m))
    dC = rng.standard_normal((p, n))
    A = -(damping * np.eye(n) + 0.2 * S @ S.T) + (Jt - Jt.T)
    return SystemParams(A, np.eye(n, m) + 0.3 * dB, np.eye(p, n) + 0.3 * dC,
                        np.eye(p), np.eye(m), InitialDistribution.uniform_cube(n))


def scalar_system(a=-1.0, b=1.0, c=1.0, q=1.0, r=1.0, sigma=1.0):
    """One-dimensional plant used by the closed-form checks.

    ``x(0)`` is +-sqrt(sigma) with equal probability, so ``E[x0^2] = sigma``.
    """
    root = np.sqrt(sigma)

    def sampler(rng, size):
        return root * rng.choice([-1.0, 1.0], size=(size, 1))

    init = InitialDistribution("custom", 1, float(root), np.array([[sigma]]), sampler)
    return SystemParams(np.array([[a]]), np.array([[b]]), np.array([[c]]),
                        np.array([[q]]), np.array([[r]]), init)


# ---------------------------------------------------------------- file format

def system_to_dict(sys):
    doc = {
        "format": SYSTEM_FORMAT,
        "n": sys.n, "m": sys.m, "p": sys.p,
        "A": sys.A.tolist(), "B": sys.B.tolist(), "C": sys.C.tolist(),
        "Q": sys.Q.tolist(), "R": sys.R.tolist(), "K0": sys.K0.tolist(),
        "initial": {"kind": sys.init.kind},
    }
    if sys.init.kind != "uniform_cube":
        doc["initial"]["second_moment"] = sys.init.second_moment.tolist()
    if sys.seed is not None:
        doc["generator"] = {
            "kind": "port_hamiltonian",
            "seed": int(sys.seed),
            "rng": "numpy Philox4x64 keyed by SeedSequence(seed)",
            "draw_order": ["randn(n,n) J~", "randn(n,n) G~", "randn(n,n) H~",
                           "rand(n,m) B", "rand(p,n) C"],
        }
    return doc


def save_system(sys, path):
    with open(path, "w") as fh:
        json.dump(system_to_dict(sys), fh, indent=1)
        fh.write("\n")


def _field_matrix(doc, key, shape):
    if key not in doc:
        raise SystemFileError(f"missing field {key!r}", field=key)
    try:
        M = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SystemFileError(f"field {key!r} is not a numeric matrix: {exc}", field=key)
    if M.shape != shape:
        raise SystemFileError(f"field {key!r} has shape {M.shape}, expected {shape}", field=key)
    if not np.all(np.isfinite(M)):
        raise SystemFileError(f"field {key!r} has non-finite entries", field=key)
    return M


def system_from_dict(doc):
    if not isinstance(doc, dict):
        raise SystemFileError("system document must be an object")
    for key in ("n", "m", "p"):
        if not isinstance(doc.get(key), int) or doc[key] < 1:
            raise SystemFileError(f"field {key!r} must be a positive integer", field=key)
    n, m, p = doc["n"], doc["m"], doc["p"]
    mats = {
        "A": _field_matrix(doc, "A", (n, n)),
        "B": _field_matrix(doc, "B", (n, m)),
        "C": _field_matrix(doc, "C", (p, n)),
        "Q": _field_matrix(doc, "Q", (p, p)),
        "R": _field_matrix(doc, "R", (m, m)),
    }
    K0 = _field_matrix(doc, "K0", (m, p)) if "K0" in doc else np.zeros((m, p))
    init_doc = doc.get("initial", {"kind": "uniform_cube"})
    kind = init_doc.get("kind") if isinstance(init_doc, dict) else None
    if kind != "uniform_cube":
        raise SystemFileError(f"unsupported initial distribution {kind!r}", field="initial")
    seed = doc.get("generator", {}).get("seed")
    try:
        sys = SystemParams(init=InitialDistribution.uniform_cube(n), K0=K0, seed=seed, **mats)
    except (ValueError, DimensionError) as exc:
        raise SystemFileError(f"invalid system: {exc}") from exc
    AK0 = closed_loop(sys, sys.K0)
    if np.linalg.eigvalsh(AK0 + AK0.T).max() >= 0:
        raise SystemFileError("A_K0 + A_K0^T must be negative definite (transform the "
                              "system to a dissipative frame first)", field="A")
    if spectral_abscissa(AK0) >= 0:
        raise SystemFileError("A_K0 is not Hurwitz", field="K0")
    return sys


def load_system(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SystemFileError(f"{path}: not valid JSON ({exc})") from exc
    return system_from_dict(doc)
