"""Zeroth-order gradient estimation from black-box rollouts, plus the
diagnostics used to study its error."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analytic import exact_gradient, in_sublevel
from .errors import ConfigurationError, EstimationError
from .rng import make_rng

DEFAULT_COST_CEILING = 1e12


@dataclass(frozen=True)
class EstimatorConfig:
    N: int
    r: float
    tau: float
    seed: int = 0
    cost_ceiling: float = DEFAULT_COST_CEILING

    def __post_init__(self):
        if self.N < 1 or not self.r > 0 or not self.tau > 0:
            raise ConfigurationError(f"need N >= 1, r > 0, tau > 0 (got {self.N}, {self.r}, {self.tau})")


@dataclass
class GradientEstimate:
    matrix: np.ndarray
    costs: np.ndarray
    diverged: int
    perturbations: Optional[np.ndarray] = None
    initial_states: Optional[np.ndarray] = None
    baselines: Optional[np.ndarray] = None
    rollouts: int = 0
    r: float = field(default=np.nan)

    def reconstruct(self):
        """Recompute the estimate from the retained samples."""
        b = 0.0 if self.baselines is None else self.baselines
        w = (self.costs - b) / (self.r * len(self.costs))
        return np.tensordot(w, self.perturbations, axes=1)


def sample_sphere(m, p, rng):
    """Uniform draw from the Frobenius sphere of radius sqrt(m p)."""
    while True:
        Z = rng.standard_normal((m, p))
        nrm = np.linalg.norm(Z)
        if nrm > 0:
            return Z * (np.sqrt(m * p) / nrm)


def draw_samples(m, p, n_samples, sampler, seed, stream=()):
    """Perturbations and initial states for one estimate.

    Sample ``i`` comes from its own sub-stream ``(seed, *stream, i)`` so the
    draw does not depend on how the rollouts are scheduled.  ``sampler`` is
    the plant's initial-state sampler ``(rng) -> state``.
    """
    U, X0 = [], []
    for i in range(n_samples):
        rng = make_rng(seed, *stream, i)
        U.append(sample_sphere(m, p, rng))
        X0.append(sampler(rng))
    return np.array(U), np.array(X0)


def _clip_costs(costs, diverged, ceiling):
    costs = np.where(diverged | ~np.isfinite(costs), ceiling, costs)
    over = costs > ceiling
    return np.minimum(costs, ceiling), diverged | over


def combine(costs, baselines, U, r):
    """(1 / rN) sum_i (c_i - b_i) U_i."""
    w = (np.asarray(costs) - baselines) / (r * len(costs))
    return np.tensordot(w, U, axes=1)


def perturbed_rollouts(plant, K, cfg, stream=()):
    """Run the N perturbed rollouts of one estimate.

    Returns ``(costs, diverged_mask, U, X0)`` with diverged costs clipped to
    the configured ceiling.
    """
    K = np.asarray(K, dtype=float)
    U, X0 = draw_samples(plant.m, plant.p, cfg.N, plant.sample_initial, cfg.seed, stream)
    costs, diverged = plant.perturbed_costs(K[None] + cfg.r * U, X0, cfg.tau)
    costs, diverged = _clip_costs(costs, diverged, cfg.cost_ceiling)
    if diverged.all():
        raise EstimationError(
            f"all {cfg.N} perturbed rollouts diverged; try a smaller radius r (r={cfg.r})")
    return costs, diverged, U, X0


def estimate_gradient(plant, K, cfg, stream=(), keep_samples=True):
    """Zeroth-order estimate ``(1 / rN) sum_i c_i U_i``.

    ``c_i`` is the cost of rolling out ``K + r U_i`` from ``x_i(0)`` for
    ``cfg.tau`` time units.  Diverging rollouts are clipped to
    ``cfg.cost_ceiling`` and counted in ``diverged``.
    """
    costs, diverged, U, X0 = perturbed_rollouts(plant, K, cfg, stream)
    G = combine(costs, 0.0, U, cfg.r)
    return GradientEstimate(G, costs, int(diverged.sum()),
                            U if keep_samples else None, X0 if keep_samples else None,
                            None, cfg.N, cfg.r)


def safe_radius(sys, K, a, radii, probes=1000, seed=0):
    """Largest candidate radius whose probe perturbations all stay in S(2a).

    Candidates are tried in increasing order and the scan stops at the first
    failure, so the answer is monotone in the candidate list.
    """
    K = np.asarray(K, dtype=float)
    rng = make_rng(seed)
    U = np.array([sample_sphere(sys.m, sys.p, rng) for _ in range(probes)])
    best = None
    for r in sorted(float(x) for x in radii):
        if r == 0 or all(in_sublevel(sys, K + r * u, 2 * a) for u in U):
            best = r
        else:
            break
    if best is None or best == 0:
        raise ConfigurationError(
            "no candidate radius keeps K + rU in S(2a); lower a or start deeper in the sublevel set")
    return best


def relative_error(G_est, G_true):
    return float(np.linalg.norm(G_est - G_true) / np.linalg.norm(G_true))


def error_study(sys, K, grid, repetitions, seed=0, baseline=None, dt=None):
    """Relative gradient error over repeated estimates for each (N, r, tau).

    ``baseline`` is ``None`` for the plain estimator or a
    :class:`pgp_lqr.baseline.ValueModelSettings`; in the latter case a value
    model is refitted for every repetition.  Returns ``(rows, summary)``:
    one row per repetition and one summary dict (median, quartiles) per cell.
    """
    from .baseline import estimate_gradient_vr, identify_value_model
    from .system import DEFAULT_DT, Plant

    K = np.asarray(K, dtype=float)
    G_true = exact_gradient(sys, K)
    rows, summary = [], []
    for cell, spec in enumerate(grid):
        N, r, tau = int(spec["N"]), float(spec["r"]), float(spec["tau"])
        errs, deficient = [], 0
        for rep in range(repetitions):
            plant = Plant(sys, dt=DEFAULT_DT if dt is None else dt)
            cfg = EstimatorConfig(N, r, tau, seed=seed)
            stream = (cell, rep)
            if baseline is None:
                est = estimate_gradient(plant, K, cfg, stream, keep_samples=False)
            else:
                model = identify_value_model(plant, K, baseline, make_rng(seed, cell, rep, 1 << 20))
                deficient += model.deficient
                est = estimate_gradient_vr(plant, K, cfg, model, stream)
            err = relative_error(est.matrix, G_true)
            errs.append(err)
            rows.append({"N": N, "r": r, "tau": tau, "repetition": rep,
                         "rel_error": err, "diverged_count": est.diverged,
                         "rollouts": plant.rollouts})
        q1, med, q3 = np.percentile(errs, [25, 50, 75])
        summary.append({"N": N, "r": r, "tau": tau, "median": float(med),
                        "q1": float(q1), "q3": float(q3), "deficient_models": deficient})
    return rows, summary
