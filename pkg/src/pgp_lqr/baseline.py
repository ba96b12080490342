"""Value-model identification from stacked observations (Bellman least
squares) and the baseline-corrected gradient estimator."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, IdentifiabilityError, SystemFileError
from .matlin import sym_dim, sym_unvec, sym_vec_outer_rows
from .zeroth import GradientEstimate, combine, perturbed_rollouts, sample_sphere

MODEL_FORMAT = "pgp-lqr-value-model/1"
DEFAULT_WINDOW = 1.0
DEFAULT_HORIZON = 1.0


def min_delay_count(n, T, beta):
    """Smallest integer D with D > 2(n - 1) + T beta / (2 pi)."""
    if not T > 0 or not beta >= 0:
        raise ConfigurationError("need T > 0 and beta >= 0")
    return int(math.floor(2 * (n - 1) + T * beta / (2 * math.pi))) + 1


def spectral_spread(A):
    """max_{i,j} Im(lambda_i - lambda_j) for the eigenvalues of ``A``."""
    ev = np.linalg.eigvals(A)
    return float(np.ptp(ev.imag))


@dataclass(frozen=True)
class DelayGrid:
    """Uniform delays ``h_j = j T / (D - 1)``, j = 0..D-1."""

    D: int
    T: float

    def __post_init__(self):
        if self.D < 1:
            raise ConfigurationError("need at least one delay")
        if self.D == 1 and self.T != 0:
            raise ConfigurationError("a single delay requires T = 0")
        if self.D > 1 and not self.T > 0:
            raise ConfigurationError("need T > 0 when D > 1")

    @property
    def delays(self):
        if self.D == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.T, self.D)


@dataclass(frozen=True)
class ValueModelSettings:
    """How to identify a value model: delay grid, Bellman horizon, data size.

    ``M=None`` means n(n+1)/2 records.  With ``strict=False`` data that
    stays rank deficient after the retries is still fitted (minimum-norm
    solution) instead of raising; the model is then flagged ``deficient``.
    Such a model is still a valid baseline, since any baseline that does not
    depend on the perturbation leaves the estimator unbiased.
    """

    grid: DelayGrid
    s: float = DEFAULT_HORIZON
    M: Optional[int] = None
    max_retries: int = 5
    rank_tol: float = 1e-14
    strict: bool = True


@dataclass
class BellmanDataset:
    Y0: np.ndarray
    Ys: np.ndarray
    costs: np.ndarray
    rank: int
    required: int

    @property
    def M(self):
        return len(self.costs)

    def design(self):
        return sym_vec_outer_rows(self.Y0) - sym_vec_outer_rows(self.Ys)


def _numerical_rank(Phi, tol):
    s = np.linalg.svd(Phi, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def collect_bellman_data(plant, K, s, grid, M=None, rng=None, max_retries=5, rank_tol=1e-14,
                         strict=True):
    """Roll out ``u = -K y`` from M sampled initial states for s + T time units.

    Each record holds ybar(0), ybar(s) and the running cost over [0, s].  The
    whole draw is repeated when the records do not span n(n+1)/2 dimensions;
    after ``max_retries`` the last draw is returned if ``strict`` is false.
    """
    n = plant.n
    required = sym_dim(n)
    M = required if M is None else int(M)
    if M < required:
        raise ConfigurationError(f"need M >= n(n+1)/2 = {required}, got {M}")
    if rng is None:
        raise ConfigurationError("an explicit random generator is required")
    h = grid.delays
    times = np.concatenate([h, s + h])
    D, p = grid.D, plant.p
    rank = 0
    for _ in range(max_retries + 1):
        X0 = plant.sample_initial(rng, M)
        costs, outs = plant.rollout(K, X0, s, times)
        Y0 = outs[:, :D, :].reshape(M, D * p)
        Ys = outs[:, D:, :].reshape(M, D * p)
        zero = np.linalg.norm(Y0, axis=1) == 0
        while zero.any():
            # an all-zero observation carries no information; redraw those rows
            Xr = plant.sample_initial(rng, int(zero.sum()))
            c_r, o_r = plant.rollout(K, Xr, s, times)
            costs[zero] = c_r
            Y0[zero] = o_r[:, :D, :].reshape(-1, D * p)
            Ys[zero] = o_r[:, D:, :].reshape(-1, D * p)
            zero = np.linalg.norm(Y0, axis=1) == 0
        data = BellmanDataset(Y0, Ys, costs, 0, required)
        rank = _numerical_rank(data.design(), rank_tol)
        if rank >= required:
            data.rank = rank
            return data
    if not strict:
        data.rank = rank
        return data
    raise IdentifiabilityError(
        f"Bellman data rank {rank} < n(n+1)/2 = {required} after {max_retries} retries "
        "(a shorter delay window T often helps; non-strict identification fits anyway)",
        rank=rank, required=required)


@dataclass
class ValueModel:
    """Quadratic value model on stacked observations.

    ``theta`` holds the isometric symmetric-vector coordinates of P-hat and
    is the stored representation; ``P`` is derived from it.
    """

    theta: np.ndarray
    grid: DelayGrid
    s: float
    gain: np.ndarray
    residual: float
    p: int
    deficient: bool = False

    @property
    def P(self):
        return sym_unvec(self.theta)

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "D": self.grid.D, "T": self.grid.T, "delays": self.grid.delays.tolist(),
            "s": self.s, "p": self.p, "gain": np.asarray(self.gain).tolist(),
            "P_symvec": self.theta.tolist(), "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT:
            raise SystemFileError(f"not a value model document: {doc.get('format')!r}", field="format")
        try:
            grid = DelayGrid(int(doc["D"]), float(doc["T"]))
            theta = np.array(doc["P_symvec"], dtype=float)
            model = cls(theta, grid, float(doc["s"]), np.array(doc["gain"], dtype=float),
                        float(doc["residual"]), int(doc["p"]))
        except KeyError as exc:
            raise SystemFileError(f"missing field {exc.args[0]!r}", field=exc.args[0]) from exc
        if theta.size != sym_dim(grid.D * model.p):
            raise SystemFileError("P_symvec length does not match p * D", field="P_symvec")
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_value_model(data, grid, s, K, p=None, rank_tol=1e-14, strict=True):
    """Minimum-norm least-squares solution of the Bellman equations.

    Solves ``<P, ybar0 ybar0^T - ybars ybars^T> = cost`` over symmetric P in
    isometric coordinates.  Any solution reproduces the infinite-horizon cost
    on reachable observations, so the minimum-norm one is as good as any.
    """
    Phi = data.design()
    rank = _numerical_rank(Phi, rank_tol)
    if rank < data.required and strict:
        raise IdentifiabilityError(
            f"Bellman system has rank {rank} < n(n+1)/2 = {data.required}",
            rank=rank, required=data.required)
    theta, *_ = np.linalg.lstsq(Phi, data.costs, rcond=None)
    resid = float(np.max(np.abs(Phi @ theta - data.costs))) if len(data.costs) else 0.0
    if p is None:
        p = data.Y0.shape[1] // grid.D
    return ValueModel(theta, grid, float(s), np.array(K, dtype=float), resid, int(p),
                      deficient=rank < data.required)


def value_estimate(model, ybar0):
    """ybar0^T P-hat ybar0 (rows of a batch are handled too)."""
    y = np.asarray(ybar0, dtype=float)
    d = model.grid.D * model.p
    if y.shape[-1] != d:
        raise DimensionError(f"stacked observation must have length {d}, got {y.shape[-1]}")
    P = model.P
    if y.ndim == 1:
        return float(y @ P @ y)
    return np.einsum("ij,jk,ik->i", y, P, y)


def identify_value_model(plant, K, settings, rng):
    """Collect Bellman data for gain K and fit a value model."""
    data = collect_bellman_data(plant, K, settings.s, settings.grid, settings.M, rng,
                                settings.max_retries, settings.rank_tol, settings.strict)
    return fit_value_model(data, settings.grid, settings.s, K, plant.p, settings.rank_tol,
                           settings.strict)


def observe_initial(plant, K, X0, grid):
    """ybar(0; x0) for each row of X0 from unperturbed rollouts of length T."""
    _, outs = plant.rollout(K, X0, 0.0, grid.delays)
    return outs.reshape(len(X0), grid.D * plant.p)


def estimate_gradient_baseline(plant, K, cfg, baseline, stream=()):
    """Estimate ``(1 / rN) sum_i (c_i - b_i) U_i`` with a given baseline.

    ``baseline`` is a float (constant baseline) or a callable mapping the
    stacked observations ybar(0; x_i(0)) (rows) to baseline values; the
    callable case costs one auxiliary unperturbed rollout per sample.
    Samples are drawn exactly as in :func:`pgp_lqr.zeroth.estimate_gradient`,
    so equal seeds give paired estimates.
    """
    start = plant.rollouts
    costs, diverged, U, X0 = perturbed_rollouts(plant, K, cfg, stream)
    if callable(baseline):
        grid = getattr(baseline, "grid")
        b = np.asarray(baseline(observe_initial(plant, K, X0, grid)), dtype=float)
    else:
        b = np.full(cfg.N, float(baseline))
    G = combine(costs, b, U, cfg.r)
    return GradientEstimate(G, costs, int(diverged.sum()), U, X0, b,
                            plant.rollouts - start, cfg.r)


class _ModelBaseline:
    def __init__(self, model):
        self.model = model
        self.grid = model.grid

    def __call__(self, Ybar):
        return value_estimate(self.model, Ybar)


def estimate_gradient_vr(plant, K, cfg, model, stream=()):
    """Baseline-corrected estimate with b(x) = value model prediction."""
    K = np.asarray(K, dtype=float)
    if model.gain.shape != K.shape or not np.array_equal(model.gain, K):
        raise ConfigurationError("value model was fitted for a different gain")
    return estimate_gradient_baseline(plant, K, cfg, _ModelBaseline(model), stream)


def optimal_baseline_mc(plant, K, x0, r, tau, M, rng):
    """Monte-Carlo estimate of E_U[ cost_tau(K + r U; x0) ]."""
    K = np.asarray(K, dtype=float)
    U = np.array([sample_sphere(plant.m, plant.p, rng) for _ in range(M)])
    X0 = np.repeat(np.asarray(x0, dtype=float)[None], M, axis=0)
    costs, diverged = plant.perturbed_costs(K[None] + r * U, X0, tau)
    if diverged.any():
        raise ConfigurationError(f"{int(diverged.sum())} of {M} perturbed rollouts diverged")
    return float(np.mean(costs))

