#!/usr/bin/env python3
"""Run the simulation studies and write CSV/JSON results plus a short summary.

Each study is a named group of experiment settings. Example:

    python3 scripts/run_experiments.py --study mse --reps 100 --out-dir results
    python3 scripts/run_experiments.py --study all --quick

``--quick`` shrinks the grids and replicate counts for a smoke run.
"""

import argparse
import logging
import math
from pathlib import Path

import numpy as np

from covmc.io import dump_json, versions
from covmc.simulate import (
    RHO_GRID,
    DgpConfig,
    rejection_rates,
    run_coverage_experiment,
    run_mse_experiment,
    run_rank_experiment,
    run_rejection_experiment,
    run_timing_experiment,
)

log = logging.getLogger("run_experiments")


def _median(res, key):
    return float(np.median(res.column(key)))


def study_mse(sizes, pis, reps, seed, out):
    rows = []
    for n in sizes:
        for pi in pis:
            cfg = DgpConfig(n=n, m=n, pi=pi, seed=seed)
            res = run_mse_experiment(cfg, reps)
            res.write(out / f"mse_n{n}_pi{pi}.csv", out / f"mse_n{n}_pi{pi}.json")
            row = {"n": n, "pi": pi}
            for meth in ("init", "ls3", "lsc", "pca3", "pcac"):
                row[f"median_mse_gamma_{meth}"] = _median(res, f"mse_gamma_{meth}")
                row[f"median_mse_beta_{meth}"] = _median(res, f"mse_beta_{meth}")
            row["median_iters_lsc"] = _median(res, "iters_lsc")
            row["median_iters_pcac"] = _median(res, "iters_pcac")
            rows.append(row)
    return rows


def study_timing(sizes, pis, reps, seed, out):
    rows = []
    for n in sizes:
        for pi in pis:
            res = run_timing_experiment(DgpConfig(n=n, m=n, pi=pi, seed=seed), reps)
            res.write(out / f"timing_n{n}_pi{pi}.csv", out / f"timing_n{n}_pi{pi}.json")
            rows.append({"n": n, "pi": pi, **{f"median_{k}": _median(res, k) for k in (
                "iters_lsc", "iters_pcac", "seconds_per_iter_lsc", "seconds_per_iter_pcac")}})
    return rows


def study_coverage(sizes, reps, seed, out):
    rows = []
    for n in sizes:
        res = run_coverage_experiment(DgpConfig(n=n, m=n, kind="dgp2", C=2.0, seed=seed), reps)
        res.write(out / f"coverage_n{n}.csv", out / f"coverage_n{n}.json")
        row = {"n": n}
        for t in ("gamma", "theta"):
            row[f"coverage_{t}"] = float(np.mean(res.column(f"hit_{t}_1_2")))
            row[f"mean_bias_{t}"] = float(np.mean(res.column(f"bias_{t}_1_2")))
            row[f"sd_z_{t}"] = float(np.std(res.column(f"z_{t}_1_2"), ddof=1))
        rows.append(row)
    return rows


def study_rejection(sizes, reps, B, seed, out):
    rows = []
    for n in sizes:
        res = run_rejection_experiment(DgpConfig(n=n, m=n, kind="dgp2", C=2.0, seed=seed), reps, RHO_GRID, B=B)
        res.write(out / f"rejection_n{n}.csv", out / f"rejection_n{n}.json")
        for name in res.config["hypotheses"]:
            rates = rejection_rates(res, name)
            rows.append({"n": n, "hypothesis": name, **{f"rho={RHO_GRID[k]:.4f}": v for k, v in rates.items()}})
    return rows


def study_rank(sizes, pis, reps, seed, out):
    rows = []
    for n in sizes:
        designs = [DgpConfig(n=n, m=n, pi=pi, seed=seed) for pi in pis]
        designs.append(DgpConfig(n=n, m=n, kind="dgp2", C=2.0, seed=seed))
        for cfg in designs:
            tag = f"{cfg.kind}_n{n}" + (f"_pi{cfg.pi}" if cfg.kind == "dgp1" else "")
            res = run_rank_experiment(cfg, reps, diagnostic=cfg.kind == "dgp1")
            res.write(out / f"rank_{tag}.csv", out / f"rank_{tag}.json")
            rows.append({"design": tag, "p_correct": float(np.mean(res.column("r_hat") == cfg.r)),
                         "mean_r_hat": float(np.mean(res.column("r_hat")))})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--study", choices=("mse", "timing", "coverage", "rejection", "rank", "all"), default="all")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--B", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--out-dir", default="results")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.quick:
        sizes, pis, reps, B = (60,), (0.5,), min(args.reps, 3), 100
    else:
        sizes, pis, reps, B = (200, 500, 1000), (0.2, 0.5, 0.8), args.reps, args.B

    studies = ("mse", "timing", "coverage", "rejection", "rank") if args.study == "all" else (args.study,)
    summary = {"args": vars(args), "versions": versions()}
    for name in studies:
        log.info("running %s", name)
        if name == "mse":
            summary[name] = study_mse(sizes, pis, reps, args.seed, out)
        elif name == "timing":
            summary[name] = study_timing(sizes, pis, reps, args.seed, out)
        elif name == "coverage":
            summary[name] = study_coverage(sizes, reps, args.seed, out)
        elif name == "rejection":
            summary[name] = study_rejection(sizes, reps, B, args.seed, out)
        else:
            summary[name] = study_rank(sizes, pis, reps, args.seed, out)
    dump_json(summary, out / f"summary_{args.study}.json")
    for name in studies:
        for row in summary[name]:
            print(name, {k: (round(v, 4) if isinstance(v, float) and math.isfinite(v) else v) for k, v in row.items()})


if __name__ == "__main__":
    main()
