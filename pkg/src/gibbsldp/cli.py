"""Batch front end: config ingestion, task dispatch, CSV/JSON emission,
reproducibility manifest.

Exit codes: 0 success; 2 config validation error; 3 numeric failure
(no convergence, duality gap, zero hits, count space); 4 violated
acceptance invariant (including --selftest failures).

Determinism contract: report.json and all CSVs depend only on the config
and seeds (17-significant-digit floats, LF endings, sorted JSON keys);
wall-clock timings go to manifest.json only.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, materialize_measure, parse_config
from .errors import (
    AcceptanceError,
    ConfigError,
    EngineError,
    NumericError,
    ValidationError,
)
from . import certify, ldp, measures, selftest as selftest_mod, thermo


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _jsonify(obj):
    if isinstance(obj, dict):
        return {(_word_key(k) if isinstance(k, tuple) else str(k)): _jsonify(v)
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x) or math.isnan(x):
            return repr(x)
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    return obj


def _word_key(w: tuple) -> str:
    return "".join(str(int(x)) for x in w)


# ---------------------------------------------------------------------------
# task runners: each returns (json payload, list of (csv name, header, rows))
# ---------------------------------------------------------------------------

def _run_pressure(cfg: ExperimentConfig, params) -> tuple[dict, list]:
    phi = cfg.potentials[params["potential"]]
    pr = thermo.pressure(phi, cfg.sft, tol=params["tol"])
    payload = {
        "potential": params["potential"],
        "log_lambda": pr.log_lambda,
        "iterations": pr.iterations,
        "residual": pr.residual,
        "blocks": [_word_key(w) for w in pr.op.blocks],
        "right_vec": pr.right_vec,
        "left_vec": pr.left_vec,
    }
    rows = [( _word_key(w), pr.right_vec[i], pr.left_vec[i], pr.log_lambda,
              pr.iterations, pr.residual)
            for i, w in enumerate(pr.op.blocks)]
    return payload, [("pressure", ["block", "right_vec", "left_vec", "log_lambda",
                                   "iterations", "residual"], rows)]


def _run_gibbs(cfg: ExperimentConfig, params) -> tuple[dict, list]:
    phi = cfg.potentials[params["potential"]]
    gm = thermo.gibbs_measure(phi, cfg.sft)
    payload = {
        "potential": params["potential"],
        "block_order": gm.block_order,
        "blocks": [_word_key(w) for w in gm.blocks],
        "pi": gm.pi,
        "Q": gm.Q,
        "stationarity_residual": gm.stationarity_residual,
        "provenance": gm.provenance,
    }
    rows = []
    for i, u in enumerate(gm.blocks):
        for j, v in enumerate(gm.blocks):
            if gm.Q[i, j] > 0:
                rows.append((_word_key(u), _word_key(v), gm.Q[i, j], gm.pi[i]))
    return payload, [("gibbs", ["from_block", "to_block", "Q", "pi_from"], rows)]


def _default_m_grid(m_max: int) -> list[int]:
    grid = sorted({1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, m_max})
    return [m for m in grid if 1 <= m <= m_max]


def _run_certify(cfg: ExperimentConfig, params, threads: int) -> tuple[dict, list]:
    nu = materialize_measure(cfg, params["measure"])
    phi = cfg.potentials[params["potential"]]
    table = certify.weak_gibbs_table(nu, phi, params["deltas"], params["epsilons"],
                                     params["m_max"])
    constants = [certify.strong_gibbs_constant(nu, phi, t, params["m_max"])
                 for t in params["strong_tails"]]
    m_grid = params["m_grid"] or _default_m_grid(params["m_max"])
    tails = sorted({row.t for row in table.rows})

    def one(args):
        t, m = args
        return certify.exact_defect_extrema(nu, phi, m, t)

    grid = [(t, m) for t in tails for m in m_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            extrema = list(pool.map(one, grid))
    else:
        extrema = [one(g) for g in grid]

    csv_rows = []
    for (t, m), ex in zip(grid, extrema):
        sup_abs = ex.sup_abs
        csv_rows.append((t, 2.0 ** -t, m, ex.min_defect, ex.max_defect,
                         m * sup_abs, str(ex.argmax_word)))

    witness = None
    if not table.certified:
        t_fine = max(row.t for row in table.rows)
        ex = certify.exact_defect_extrema(nu, phi, params["m_max"], t_fine)
        word = ex.argmax_word if abs(ex.max_defect) >= abs(ex.min_defect) \
            else ex.argmin_word
        witness = str(word)
    payload = {
        "measure": params["measure"],
        "potential": params["potential"],
        "weak_gibbs": "PASS" if table.certified else "FAILED",
        "witness_word": witness,
        "table": [{"delta": r.delta, "epsilon": r.epsilon, "t": r.t,
                   "n_required": r.n_required, "m_max_checked": r.m_max_checked}
                  for r in table.rows],
        "epsilon_witnesses": {
            _fmt(d): (table.epsilon_witness(d).epsilon
                      if table.epsilon_witness(d) else None)
            for d in sorted({r.delta for r in table.rows})},
        "strong_constants": [{"t": c.t, "epsilon": c.epsilon, "K": c.constant,
                              "fit_residual": c.fit_residual} for c in constants],
    }
    header = ["t", "epsilon", "m", "min_defect", "max_defect",
              "m_times_sup_abs_defect", "argmax_word"]
    return payload, [("certify", header, csv_rows)]


def _run_rate(cfg: ExperimentConfig, params) -> tuple[dict, list]:
    phi = cfg.potentials[params["potential"]]
    cset = params["constraints"]
    payload: dict = {"potential": params["potential"], "method": params["method"]}
    rows = []
    primal = dual = None
    if params["method"] in ("primal", "both"):
        primal = ldp.rate_primal(cset, phi, cfg.sft, tol=params["tol"])
        payload["primal"] = _rate_payload(primal)
        rows.append(("primal", primal.value, "", primal.kkt_residual,
                     primal.iterations))
    if params["method"] in ("dual", "both") and len(cset.functionals) == 1:
        dual = ldp.rate_dual(cset, phi, cfg.sft,
                             primal_value=primal.value if primal else None)
        payload["dual"] = _rate_payload(dual)
        rows.append(("dual", dual.value,
                     dual.dual_theta[0] if dual.dual_theta else "",
                     dual.kkt_residual, dual.iterations))
    if primal and dual and math.isfinite(primal.value):
        payload["primal_dual_gap"] = abs(primal.value - dual.value)
    return payload, [("rate", ["method", "value", "theta", "kkt_residual",
                               "iterations"], rows)]


def _rate_payload(r: ldp.RateResult) -> dict:
    return {
        "value": r.value,
        "method": r.method,
        "iterations": r.iterations,
        "kkt_residual": r.kkt_residual,
        "dual_theta": list(r.dual_theta) if r.dual_theta else None,
        "optimizer_q": {_word_key(w): v for w, v in sorted(r.optimizer_q.items())},
    }


def _run_probability(cfg: ExperimentConfig, params, seed: int) -> tuple[dict, list]:
    nu = materialize_measure(cfg, params["measure"])
    cset = params["constraints"]
    if params["method"] == "exact":
        est = ldp.exact_probability(nu, cset, params["m"])
    else:
        task_seed = params.get("seed")
        est = ldp.mc_probability(nu, cset, params["m"], params["n_samples"],
                                 task_seed if task_seed is not None else seed,
                                 tilt=params.get("tilt"))
    payload = {
        "measure": params["measure"],
        "m": est.m, "method": est.method, "prob": est.prob,
        "log_prob_over_m": est.log_prob_over_m,
        "stderr": est.stderr, "n_samples": est.n_samples,
        "threshold_attainable": est.threshold_attainable,
    }
    rows = [(est.m, est.method, est.log_prob_over_m,
             est.stderr if est.stderr is not None else "", "", "")]
    return payload, [("probability", ["m", "method", "log_prob_over_m", "stderr",
                                      "rate_limit", "gap"], rows)]


def _run_report(cfg: ExperimentConfig, params, seed: int) -> tuple[dict, list]:
    nu = materialize_measure(cfg, params["measure"])
    phi = cfg.potentials[params["potential"]]
    task_seed = params.get("seed")
    rep = ldp.ldp_bounds_report(nu, phi, params["constraints"], params["m_grid"],
                                mc_n_samples=params["mc_n_samples"],
                                seed=task_seed if task_seed is not None else seed,
                                trend_tol=params["trend_tol"])
    payload = {
        "measure": params["measure"], "potential": params["potential"],
        "rate": rep.rate,
        "primal": _rate_payload(rep.primal),
        "dual": _rate_payload(rep.dual) if rep.dual else None,
        "fit_a": rep.fit_a, "fit_b": rep.fit_b,
        "trend_tol": rep.trend_tol, "violation": rep.violation,
        "rows": [{
            "m": r.estimate.m, "method": r.estimate.method,
            "log_prob_over_m": r.estimate.log_prob_over_m,
            "stderr": r.estimate.stderr, "gap": r.gap,
            "corrected_gap": r.corrected_gap,
            "threshold_attainable": r.estimate.threshold_attainable,
        } for r in rep.rows],
    }
    rows = [(r.estimate.m, r.estimate.method, r.estimate.log_prob_over_m,
             r.estimate.stderr if r.estimate.stderr is not None else "",
             rep.rate, r.gap) for r in rep.rows]
    return payload, [("report", ["m", "method", "log_prob_over_m", "stderr",
                                 "rate_limit", "gap"], rows)], rep.violation


def run(config_path: str, out_dir: str | None = None, seed: int | None = None,
        threads: int = 1) -> int:
    """Execute a config end to end; returns the process exit code."""
    try:
        text = Path(config_path).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if seed is not None:
        cfg.seed = seed
    out = Path(out_dir or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)

    results = []
    manifest_tasks = []
    violation = False
    for task in cfg.tasks:
        t0 = time.perf_counter()
        try:
            if task.kind == "pressure":
                payload, csvs = _run_pressure(cfg, task.params)
            elif task.kind == "gibbs":
                payload, csvs = _run_gibbs(cfg, task.params)
            elif task.kind == "certify":
                payload, csvs = _run_certify(cfg, task.params, threads)
            elif task.kind == "rate":
                payload, csvs = _run_rate(cfg, task.params)
            elif task.kind == "probability":
                payload, csvs = _run_probability(cfg, task.params, cfg.seed)
            else:
                payload, csvs, vio = _run_report(cfg, task.params, cfg.seed)
                violation = violation or vio
        except NumericError as exc:
            print(f"numeric failure in task {task.name!r}: {exc}", file=sys.stderr)
            return 3
        except (ConfigError, ValidationError) as exc:
            print(f"invalid input in task {task.name!r}: {exc}", file=sys.stderr)
            return 2
        elapsed = time.perf_counter() - t0
        outputs = []
        for csv_name, header, rows in csvs:
            path = out / f"{task.name}.{csv_name}.csv"
            _write_csv(path, header, rows)
            outputs.append(path.name)
        results.append({"task": task.kind, "name": task.name,
                        "outputs": outputs, "result": payload})
        manifest_tasks.append({"name": task.name, "task": task.kind,
                               "wall_clock_s": elapsed, "outputs": outputs})

    report = {
        "artifact_version": __version__,
        "config_hash": cfg.config_hash(),
        "name": cfg.name,
        "seed": cfg.seed,
        "results": results,
    }
    (out / "report.json").write_text(
        json.dumps(_jsonify(report), sort_keys=True, indent=1) + "\n")
    manifest = {
        "artifact_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "tasks": manifest_tasks,
        "report": "report.json",
    }
    (out / "manifest.json").write_text(
        json.dumps(_jsonify(manifest), sort_keys=True, indent=1) + "\n")
    return 4 if violation else 0


def run_selftest(pressure_tol: float, mc_samples: int) -> int:
    print(f"gibbsldp selftest v{__version__}")
    print(f"{'status':<6} {'crit':<4} {'check':<34} detail")
    results = selftest_mod.run_all(pressure_tol=pressure_tol,
                                   mc_samples=mc_samples)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return 4 if n_fail else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="gibbsldp",
        description="Gibbs measures, pressure, weak-Gibbs certification and "
                    "large-deviation rates on subshifts of finite type")
    ap.add_argument("--config", help="experiment config (JSON)")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, help="seed override")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker cap for grid evaluation")
    ap.add_argument("--selftest", action="store_true",
                    help="run the built-in acceptance suite")
    ap.add_argument("--selftest-tol", type=float, default=1e-9,
                    help="pressure-identity tolerance for --selftest "
                         "(tighten to demonstrate a controlled failure)")
    ap.add_argument("--selftest-samples", type=int, default=1_000_000,
                    help="Monte Carlo sample count for the tilted cross-check")
    args = ap.parse_args(argv)
    if args.selftest:
        return run_selftest(args.selftest_tol, args.selftest_samples)
    if not args.config:
        ap.print_usage(sys.stderr)
        print("error: --config or --selftest required", file=sys.stderr)
        return 2
    return run(args.config, out_dir=args.out, seed=args.seed, threads=args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
