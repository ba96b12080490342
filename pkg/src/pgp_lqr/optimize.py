"""Convex gain constraints and projected policy-gradient iterations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .analytic import exact_cost, exact_gradient, gradient_mapping
from .errors import (ConfigurationError, DimensionError, DivergenceError, EstimationError,
                     IdentifiabilityError)
from .matlin import HURWITZ_MARGIN, is_hurwitz
from .system import closed_loop


class ConstraintSet:
    """Closed convex set of gains with its Frobenius-orthogonal projection."""

    kind = "abstract"

    def project(self, Y):
        raise NotImplementedError

    def contains(self, K, tol=0.0):
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind}

    @staticmethod
    def from_dict(doc, shape=None):
        kind = doc.get("kind", "full")
        if kind == "full":
            return Full()
        if kind == "pattern":
            return Pattern(np.array(doc["mask"], dtype=float))
        if kind == "psd":
            return PSD()
        raise ConfigurationError(f"unknown constraint kind {kind!r}")


class Full(ConstraintSet):
    kind = "full"

    def project(self, Y):
        return np.array(Y, dtype=float)

    def contains(self, K, tol=0.0):
        return bool(np.all(np.isfinite(K)))


class Pattern(ConstraintSet):
    """Gains with ``K o S = 0``: entries where the mask is 1 are forbidden."""

    kind = "pattern"

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=float)
        if not np.all((mask == 0) | (mask == 1)):
            raise ConfigurationError("pattern mask must be 0/1")
        self.mask = mask
        self._keep = mask == 0

    def project(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.shape != self.mask.shape:
            raise DimensionError(f"gain shape {Y.shape} does not match mask {self.mask.shape}")
        return np.where(self._keep, Y, 0.0)

    def contains(self, K, tol=0.0):
        return bool(np.all(np.abs(np.asarray(K)[~self._keep]) <= tol))

    def to_dict(self):
        return {"kind": self.kind, "mask": self.mask.astype(int).tolist()}


class PSD(ConstraintSet):
    """Symmetric positive semidefinite gains (square gains only)."""

    kind = "psd"

    def project(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
            raise DimensionError("PSD projection needs a square gain")
        S = 0.5 * (Y + Y.T)
        w, V = np.linalg.eigh(S)
        P = (V * np.maximum(w, 0.0)) @ V.T
        return 0.5 * (P + P.T)

    def contains(self, K, tol=0.0):
        K = np.asarray(K)
        if K.shape[0] != K.shape[1] or not np.allclose(K, K.T, atol=tol, rtol=0):
            return False
        return float(np.linalg.eigvalsh(0.5 * (K + K.T)).min()) >= -tol


def reference_pattern():
    """The 4x2 decentralised mask S = [[1,1,0,0],[0,0,1,1]]^T."""
    return Pattern(np.array([[1, 1, 0, 0], [0, 0, 1, 1]]).T)


def project(omega, Y):
    return omega.project(Y)


def recommended_step(L, lam=0.0):
    """0.9 * 2(1 - lam) / L.  ``L`` may be a number or a SublevelConstants."""
    L = getattr(L, "L", L)
    if not 0 <= lam < 1:
        raise ConfigurationError("lambda must lie in [0, 1)")
    return 0.9 * 2 * (1 - lam) / L


def min_iterations(f0, eps, alpha, lam, L):
    """Smallest T with T > f0 / (eps^2 alpha^2 ((1 - lam)/alpha - L/2))."""
    denom = eps ** 2 * alpha ** 2 * ((1 - lam) / alpha - L / 2)
    if denom <= 0:
        raise ConfigurationError(
            f"step size {alpha:.3g} too large for L={L:.3g}, lambda={lam}: need alpha < 2(1-lambda)/L")
    return int(math.floor(f0 / denom)) + 1


@dataclass
class OptimizerConfig:
    alpha: float
    epsilon: float
    max_iter: int
    lam: float = 0.5
    persist: bool = False
    L: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0 or not self.epsilon > 0 or self.max_iter < 1:
            raise ConfigurationError("need alpha > 0, epsilon > 0, max_iter >= 1")
        if not 0 < self.lam < 1 and self.lam != 0:
            raise ConfigurationError("lambda must lie in [0, 1)")
        if self.L is not None and not self.alpha < 2 * (1 - self.lam) / self.L:
            raise ConfigurationError(
                f"alpha={self.alpha:.3g} outside (0, 2(1-lambda)/L) = (0, {2 * (1 - self.lam) / self.L:.3g})")


@dataclass
class IterationRecord:
    iteration: int
    K: np.ndarray
    grad_norm: float
    step_norm: float
    f_true: float
    hurwitz: Optional[bool]
    samples: int


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    reason: str = ""
    K_final: Optional[np.ndarray] = None
    alpha_final: float = float("nan")
    message: str = ""

    def costs(self):
        return np.array([r.f_true for r in self.records])

    def step_norms(self):
        return np.array([r.step_norm for r in self.records])

    def gains(self):
        return np.array([r.K for r in self.records])

    def rows(self):
        return [{"iter": r.iteration, "f_true_if_available": r.f_true,
                 "grad_est_norm": r.grad_norm, "step_norm": r.step_norm,
                 "hurwitz": "" if r.hurwitz is None else int(r.hurwitz),
                 "samples_cumulative": r.samples} for r in self.records]


class KnownModelLogger:
    """Attaches true cost and stability to each iterate (never used by the update)."""

    def __init__(self, sys):
        self.sys = sys

    def __call__(self, K):
        if not is_hurwitz(closed_loop(self.sys, K)):
            return float("inf"), False
        return exact_cost(self.sys, K), True


def exact_oracle(sys):
    """Model-based gradient oracle: returns (grad f(K), samples used = 0)."""

    def oracle(K, iteration):
        return exact_gradient(sys, K), 0

    return oracle


def pgp_run(oracle: Callable, K0, omega, cfg: OptimizerConfig, logger=None) -> RunLog:
    """Projected policy-gradient iterations ``K <- proj(K - alpha g(K))``.

    ``oracle(K, i)`` returns ``(gradient, samples_consumed)``.  The run stops
    at the first iteration whose step satisfies ``||K_{i+1} - K_i||_F <= eps
    alpha`` (returning ``K_i``) or after ``cfg.max_iter`` iterations
    (returning the last iterate).

    When a ``logger`` reports an unstable iterate the run aborts, or with
    ``cfg.persist`` rolls back once and halves the step size.
    """
    K = np.array(K0, dtype=float)
    if not omega.contains(K, tol=1e-12):
        raise ConfigurationError("K0 is not in the constraint set")
    alpha = cfg.alpha
    log = RunLog()
    samples = 0
    halved = False
    f_cur, stable = logger(K) if logger is not None else (float("nan"), None)
    if logger is not None and not stable:
        raise ConfigurationError("K0 is not stabilising")
    i = 0
    while i < cfg.max_iter:
        try:
            G, used = oracle(K, i)
        except (EstimationError, DivergenceError, IdentifiabilityError) as exc:
            log.reason, log.message = "estimation_failed", str(exc)
            break
        samples += used
        K_next = omega.project(K - alpha * G)
        step = float(np.linalg.norm(K_next - K))
        gnorm = float(np.linalg.norm(G))
        log.records.append(IterationRecord(i, K.copy(), gnorm, step, f_cur, stable, samples))
        if not np.all(np.isfinite(K_next)):
            log.reason, log.message = "nonfinite", f"non-finite step at iteration {i}"
            break
        if step <= cfg.epsilon * alpha:
            log.reason = "step_norm"
            break
        if logger is not None:
            f_next, stable_next = logger(K_next)
            if not stable_next:
                if cfg.persist and not halved:
                    halved = True
                    alpha *= 0.5
                    log.message = f"unstable iterate at {i + 1}; rolled back and halved alpha"
                    i += 1
                    continue
                log.reason = "unstable"
                log.message = f"iterate {i + 1} is not stabilising"
                break
            f_cur, stable = f_next, stable_next
        K = K_next
        i += 1
    else:
        log.reason = "max_iter"
        log.records.append(IterationRecord(i, K.copy(), float("nan"), float("nan"),
                                           f_cur, stable, samples))
    log.K_final = K
    log.alpha_final = alpha
    return log


def check_stationarity(sys, K, alpha, omega, eps):
    """(||G_alpha(K)||_F <= eps, ||G_alpha(K)||_F)."""
    nrm = float(np.linalg.norm(gradient_mapping(sys, K, alpha, omega)))
    return nrm <= eps, nrm



_EXACT_REASONS = {0: "step_norm", 1: "max_iter", 2: "unstable"}


@dataclass
class ExactRun:
    """Outcome of :func:`exact_pgp_run`; ``costs[i]`` is f at iterate i."""

    K_final: np.ndarray
    iterations: int
    reason: str
    costs: np.ndarray
    step_norms: np.ndarray
    alpha: float
    epsilon: float

    def strictly_decreasing(self):
        return bool(np.all(np.diff(self.costs) < 0))


def exact_pgp_run(sys, K0, omega, alpha, epsilon, max_iter):
    """Model-based projected gradient descent with exact gradients.

    Same update and termination rule as :func:`pgp_run`, compiled as one
    loop so the very small provable step sizes stay affordable.
    """
    if isinstance(omega, Pattern):
        kind, mask = 1, omega.mask
    elif isinstance(omega, PSD):
        kind, mask = 2, np.zeros((sys.m, sys.p))
    else:
        kind, mask = 0, np.zeros((sys.m, sys.p))
    K0 = np.array(K0, dtype=float)
    if not omega.contains(K0, tol=1e-12):
        raise ConfigurationError("K0 is not in the constraint set")
    if not is_hurwitz(closed_loop(sys, K0)):
        raise ConfigurationError("K0 is not stabilising")
    c = np.ascontiguousarray
    K, iters, code, costs, steps = kernels.exact_descent(
        c(sys.A), c(sys.B), c(sys.C), c(sys.Q), c(sys.R), c(sys.Sigma), c(K0), kind,
        c(np.asarray(mask, dtype=float)), float(alpha), float(epsilon), int(max_iter),
        HURWITZ_MARGIN)
    return ExactRun(np.array(K), int(iters), _EXACT_REASONS[int(code)], np.array(costs),
                    np.array(steps), float(alpha), float(epsilon))
