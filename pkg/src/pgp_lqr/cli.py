"""``pgp-lqr`` command line interface."""
from __future__ import annotations

import argparse
import json
import os
import sys as _sys

from . import checks
from .analytic import constants, exact_cost
from .errors import PGPError
from .experiments import (ExperimentConfig, grad_error_study, initial_report, run_training,
                          windowed_trend, write_csv, write_json)
from .optimize import check_stationarity
from .system import system_from_dict, system_to_dict

RUNLOG_COLUMNS = ["iter", "f_true_if_available", "grad_est_norm", "step_norm", "hurwitz",
                  "samples_cumulative"]
ERROR_COLUMNS = ["variant", "N", "r", "tau", "repetition", "rel_error", "diverged_count",
                 "rollouts"]


def _report(title, values):
    print(title)
    for k, v in values.items():
        print(f"  {k}: {v}")


def cmd_gen_system(cfg, out):
    spec = cfg.doc["system"]
    if "generator" not in spec:
        raise PGPError("gen-system needs a 'system.generator' block in the configuration")
    sys = ExperimentConfig({**cfg.doc, "system": {"generator": spec["generator"]}},
                           cfg.seed).system()
    doc = system_to_dict(sys)
    system_from_dict(doc)  # the emitted file must pass the loader's checks
    doc["provenance"] = cfg.provenance()
    path = os.path.join(out, "system.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    _report(f"wrote {path}", initial_report(sys))
    return 0


def cmd_constants(cfg, out):
    sys = cfg.system()
    c = constants(sys, a=cfg.doc["constants"].get("a"))
    doc = {"f_K0": exact_cost(sys, sys.K0), **c.as_dict()}
    write_json(os.path.join(out, "constants.json"), doc, cfg.provenance())
    _report("sublevel constants", {k: f"{v:.6g}" for k, v in doc.items()})
    return 0


def cmd_grad_error(cfg, out):
    sys = cfg.system()
    results = grad_error_study(sys, cfg)
    rows, summary = [], {}
    for variant, (vrows, vsummary) in results.items():
        rows += [{"variant": variant, **r} for r in vrows]
        summary[variant] = vsummary
    prov = cfg.provenance()
    write_csv(os.path.join(out, "grad_error.csv"), rows, ERROR_COLUMNS, prov)
    # plot-ready series: one column of errors per variant
    variants = list(results)
    series = []
    for row in rows:
        if row["variant"] != variants[0]:
            continue
        entry = {"N": row["N"], "r": row["r"], "tau": row["tau"], "repetition": row["repetition"]}
        for v in variants:
            match = next(x for x in rows if x["variant"] == v and x["N"] == row["N"] and
                         x["r"] == row["r"] and x["tau"] == row["tau"] and
                         x["repetition"] == row["repetition"])
            entry[v] = match["rel_error"]
        series.append(entry)
    write_csv(os.path.join(out, "grad_error_series.csv"), series,
              ["N", "r", "tau", "repetition"] + variants, prov)
    write_json(os.path.join(out, "grad_error_summary.json"),
               {"summary": summary, "config": cfg.doc}, prov)
    for v, cells in summary.items():
        for cell in cells:
            print(f"{v:9s} N={cell['N']} r={cell['r']:g} tau={cell['tau']:g} "
                  f"median={cell['median']:.4g} [q1={cell['q1']:.4g}, q3={cell['q3']:.4g}]")
    return 0


def cmd_train(cfg, out):
    sys = cfg.system()
    omega = cfg.constraint()
    kind = cfg.doc["estimator"].get("kind", "baseline")
    settings = cfg.value_settings(sys) if kind == "baseline" else None
    opt = cfg.optimizer()
    log = run_training(sys, omega, kind, cfg.estimator(), opt, settings, cfg.seed, cfg.dt)
    prov = cfg.provenance()
    write_csv(os.path.join(out, "runlog.csv"), log.rows(), RUNLOG_COLUMNS, prov)
    thirds, decreasing = windowed_trend(log.costs())
    doc = {"reason": log.reason, "message": log.message, "iterations": len(log.records),
           "alpha_final": log.alpha_final, "K_final": log.K_final,
           "trend_third_means": thirds, "converging": decreasing, "config": cfg.doc}
    if log.reason == "step_norm":
        ok, nrm = check_stationarity(sys, log.K_final, log.alpha_final, omega,
                                     (1 + opt.lam) * opt.epsilon)
        doc.update(stationary=ok, gradient_mapping_norm=nrm)
    write_json(os.path.join(out, "train.json"), doc, prov)
    costs = log.costs()
    span = f"{costs[0]:.6g} / {costs[-1]:.6g}" if len(costs) else "n/a"
    _report("training run", {"estimator": kind, "termination": log.reason or "?",
                             "iterations": len(log.records),
                             "f first/last": span,
                             "trend": ("too short for the trend window" if not thirds else
                                       "decreasing" if decreasing else "non-converging"),
                             **({"note": log.message} if log.message else {})})
    return 0


def cmd_validate(cfg, out):
    if "file" in cfg.doc["system"]:
        cfg.system()  # surfaces parse errors naming the offending field
    names = cfg.doc["validate"].get("checks") or checks.VALIDATE_DEFAULT
    unknown = [n for n in names if n not in checks.CHECKS]
    if unknown:
        raise PGPError(f"unknown checks {unknown}; available: {sorted(checks.CHECKS)}")
    results = []
    for name in names:
        res = checks.CHECKS[name](seed=cfg.seed)
        print(res.line(), flush=True)
        results.append(res)
    failed = [r.name for r in results if not r.passed]
    doc = {"results": [{"name": r.name, "passed": r.passed, "seconds": r.seconds, "detail": r.detail}
                       for r in results], "failed": failed}
    write_json(os.path.join(out, "validate.json"), doc, cfg.provenance())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "gen-system": cmd_gen_system,
    "constants": cmd_constants,
    "grad-error": cmd_grad_error,
    "train": cmd_train,
    "validate": cmd_validate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pgp-lqr",
        description="Model-free projected policy gradient for structured output-feedback LQR.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None,
                        help="JSON configuration (missing keys take the reference defaults)")
    parser.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=_sys.stderr)
        return 2
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except (PGPError, ValueError, OSError) as exc:
        field = getattr(exc, "field", None)
        where = f" [field: {field}]" if field else ""
        print(f"error: {exc}{where}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    _sys.exit(main())
