"""Experiment configuration, seeding and result files shared by the CLI and
the validation suite.

A configuration is a JSON document; anything it leaves out falls back to
:data:`DEFAULT_CONFIG` (the reference experiment: n=10, m=4, p=2, N=2,
r=1e-3, tau=100, alpha=1e-4, decentralised pattern).  A run is fully
determined by the merged configuration and the master seed, and every
output file carries both the configuration hash and the seed.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .analytic import exact_cost
from .baseline import (DelayGrid, ValueModelSettings, estimate_gradient_vr, identify_value_model,
                       min_delay_count, spectral_spread)
from .errors import ConfigurationError
from .optimize import (ConstraintSet, KnownModelLogger, OptimizerConfig, exact_oracle,
                       reference_pattern, pgp_run)
from .rng import make_rng
from .system import (DEFAULT_DT, Plant, closed_loop, load_system, observability_rank,
                     random_phl_system)
from .zeroth import EstimatorConfig, error_study, estimate_gradient

# stream tag separating value-model data from estimator samples
VALUE_STREAM = 1 << 20
TREND_WINDOW = 50

DEFAULT_CONFIG = {
    "system": {"generator": {"n": 10, "m": 4, "p": 2, "seed": None}},
    "constraint": {"kind": "pattern", "mask": reference_pattern().mask.astype(int).tolist()},
    "estimator": {"kind": "baseline", "N": 2, "r": 1e-3, "tau": 100.0,
                  "value_model": {"T": 1.0, "D": None, "s": 1.0, "M": None,
                                  "strict": False}},
    "optimizer": {"alpha": 1e-4, "epsilon": 1e-6, "max_iter": 2000, "lam": 0.5,
                  "persist": False},
    "grad_error": {"grid": [{"N": 2, "r": 1e-3, "tau": 100.0}], "repetitions": 200,
                   "variants": ["plain", "baseline"]},
    "constants": {"a": None},
    "validate": {"checks": None},
    "dt": DEFAULT_DT,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Merged configuration document plus the master seed."""

    doc: dict
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def load(cls, path=None, seed=0):
        if path is None:
            return cls(copy.deepcopy(DEFAULT_CONFIG), int(seed))
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: configuration must be a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(_merge(DEFAULT_CONFIG, user), int(seed),
                   os.path.dirname(os.path.abspath(path)))

    @property
    def hash(self):
        blob = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def provenance(self):
        return {"config_sha256": self.hash, "seed": self.seed}

    # -- builders -------------------------------------------------------

    def system(self):
        spec = self.doc["system"]
        if "file" in spec:
            path = spec["file"]
            if not os.path.isabs(path):
                path = os.path.join(self.base_dir, path)
            return load_system(path)
        gen = spec.get("generator", {})
        seed = self.seed if gen.get("seed") is None else int(gen["seed"])
        return random_phl_system(int(gen.get("n", 10)), int(gen.get("m", 4)),
                                 int(gen.get("p", 2)), seed=seed)

    def constraint(self):
        return ConstraintSet.from_dict(self.doc["constraint"])

    def estimator(self, N=None, r=None, tau=None):
        e = self.doc["estimator"]
        return EstimatorConfig(int(e["N"] if N is None else N), float(e["r"] if r is None else r),
                               float(e["tau"] if tau is None else tau), seed=self.seed)

    def value_settings(self, sys):
        return value_settings(sys, self.doc["estimator"]["value_model"])

    def optimizer(self):
        o = self.doc["optimizer"]
        return OptimizerConfig(float(o["alpha"]), float(o["epsilon"]), int(o["max_iter"]),
                               lam=float(o.get("lam", 0.5)), persist=bool(o.get("persist", False)))

    @property
    def dt(self):
        return float(self.doc.get("dt", DEFAULT_DT))


def value_settings(sys, spec):
    """Delay grid for value identification.

    With ``D`` unset the delay count is the smallest admissible one for the
    spread of the closed-loop spectrum at the system's known gain.  Unless
    ``strict`` is set, rank-deficient Bellman data still yields a
    (minimum-norm) baseline instead of stopping the run.
    """
    T = float(spec.get("T", 1.0))
    D = spec.get("D")
    if D is None:
        D = min_delay_count(sys.n, T, spectral_spread(closed_loop(sys, sys.K0)))
    return ValueModelSettings(DelayGrid(int(D), T), s=float(spec.get("s", 1.0)), M=spec.get("M"),
                              strict=bool(spec.get("strict", False)))


def model_free_oracle(plant, cfg, kind, settings=None, seed=0):
    """Gradient oracle ``(K, i) -> (estimate, rollouts used)`` for pgp_run.

    ``oracle.deficient_fits`` counts value models fitted to rank-deficient data.
    """
    if kind not in ("plain", "baseline"):
        raise ConfigurationError(f"unknown estimator kind {kind!r}")

    def oracle(K, i):
        before = plant.rollouts
        if kind == "baseline":
            model = identify_value_model(plant, K, settings, make_rng(seed, i, VALUE_STREAM))
            oracle.deficient_fits += model.deficient
            est = estimate_gradient_vr(plant, K, cfg, model, (i,))
        else:
            est = estimate_gradient(plant, K, cfg, (i,), keep_samples=False)
        return est.matrix, plant.rollouts - before

    oracle.deficient_fits = 0
    return oracle


def run_training(sys, omega, kind, est_cfg, opt_cfg, settings=None, seed=0, dt=DEFAULT_DT,
                 log_true_cost=True):
    """One training run; ``kind`` is "exact", "plain" or "baseline"."""
    if kind == "exact":
        oracle = exact_oracle(sys)
    else:
        oracle = model_free_oracle(Plant(sys, dt=dt), est_cfg, kind, settings, seed)
    logger = KnownModelLogger(sys) if log_true_cost else None
    log = pgp_run(oracle, sys.K0, omega, opt_cfg, logger)
    deficient = getattr(oracle, "deficient_fits", 0)
    if deficient:
        note = f"{deficient} value model(s) fitted to rank-deficient data"
        log.message = f"{log.message}; {note}" if log.message else note
    return log


def windowed_trend(costs, window=TREND_WINDOW):
    """Per-third means of the running median of ``costs``.

    Returns ``(third_means, decreasing)``; non-finite costs make the trend
    non-decreasing by definition.
    """
    c = np.asarray(costs, dtype=float)
    if c.size < 3 * window or not np.all(np.isfinite(c)):
        return [], False
    med = np.array([np.median(c[i:i + window]) for i in range(c.size - window + 1)])
    thirds = [float(np.mean(t)) for t in np.array_split(med, 3)]
    return thirds, bool(thirds[0] > thirds[1] > thirds[2])


def grad_error_study(sys, cfg, variants=None):
    """Relative-error study for each estimator variant over the configured grid."""
    ge = cfg.doc["grad_error"]
    variants = ge.get("variants", ["plain", "baseline"]) if variants is None else variants
    results = {}
    for variant in variants:
        if variant not in ("plain", "baseline"):
            raise ConfigurationError(f"unknown estimator variant {variant!r}")
        baseline = cfg.value_settings(sys) if variant == "baseline" else None
        results[variant] = error_study(sys, sys.K0, ge["grid"], int(ge["repetitions"]),
                                       seed=cfg.seed, baseline=baseline, dt=cfg.dt)
    return results


def initial_report(sys):
    AK0 = closed_loop(sys, sys.K0)
    return {"spectral_abscissa": float(np.max(np.linalg.eigvals(AK0).real)),
            "observability_rank": observability_rank(sys.A, sys.C),
            "f_K0": exact_cost(sys, sys.K0)}


# -- output files ---------------------------------------------------------

def write_csv(path, rows, columns, provenance):
    """CSV whose first line is a ``#`` comment carrying the provenance."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={provenance['config_sha256']} seed={provenance['seed']}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_json(path, doc, provenance):
    out = dict(doc)
    out["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(_jsonable(out), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj

