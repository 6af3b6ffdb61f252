"""``covmc`` command line.

Every subcommand accepts ``--config FILE`` holding flat ``key = value`` lines
(keys are option names, with ``-`` or ``_``); flags given on the command line
override the file. Each run writes a manifest of the resolved arguments and
library versions beside its output.

Exit codes: 0 success, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .als import FitConfig, fit_iterative
from .bootstrap import ContrastSpec, simultaneous_test
from .data import read_covariates, read_triplets, write_covariates, write_triplets
from .errors import CovmcError, DataError, NumericalError
from .inference import infer_gamma, infer_theta, plugin_moments, z_test_beta
from .io import dump_json, load_model, save_model, write_manifest
from .pca import PCA_MAX_STEPS, fit_iterative_pca
from .propensity import AlphaMode, estimate_alpha, estimate_propensity
from .rank import select_rank
from .ratings import RatingsDataset, build_dataset, evaluate, read_ratings, read_users
from .simulate import EXPERIMENTS, RHO_GRID, DgpConfig

log = logging.getLogger("covmc")

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


# -- config files ------------------------------------------------------------------


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _apply_config(sub: argparse.ArgumentParser, cfg: dict):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in cfg.items():
        act = actions.get(key)
        if act is None:
            raise DataError(f"unknown config key {key!r}")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = val.lower()
            if low not in _TRUE | _FALSE:
                raise DataError(f"config key {key!r}: expected a boolean, got {val!r}")
            defaults[key] = low in _TRUE
        elif isinstance(act, argparse._AppendAction):
            defaults[key] = [v.strip() for v in val.split(";") if v.strip()]
        else:
            # argparse runs string defaults through the option's type
            defaults[key] = val
        act.required = False
    sub.set_defaults(**defaults)


# -- helpers -------------------------------------------------------------------------


def _load_data(args, n=None, m=None):
    X = read_covariates(args.x)
    n = n if n is not None else (args.n if getattr(args, "n", None) is not None else X.n)
    Y = read_triplets(args.y, n, m if m is not None else getattr(args, "m", None))
    if Y.n != X.n:
        raise DataError(f"Y has {Y.n} rows but X has {X.n}")
    return Y, X


def _emit(obj, out):
    text = dump_json(obj, out)
    if out is None:
        sys.stdout.write(text)


def _args_record(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _manifest(args, out, seed=None):
    if out is not None:
        write_manifest(out, args.command, _args_record(args), seed)


def _parse_cell(text: str, what: str):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError as exc:
        raise DataError(f"bad {what} index {text!r}; expected two comma-separated integers") from exc
    return a, b


# -- subcommands ---------------------------------------------------------------------


def cmd_fit(args):
    Y, X = _load_data(args)
    prop = estimate_propensity(Y, X)
    mode = AlphaMode(args.propensity_mode)
    prop = replace(prop, alpha_hat=estimate_alpha(prop, mode))
    rank_report = None
    rank = args.rank
    if rank == "auto":
        sel = select_rank(Y, X, prop, args.max_rank, args.steps, mode)
        rank_report = sel.to_dict()
        rank = sel.r_hat
    rank = int(rank)
    max_steps = max(args.steps, PCA_MAX_STEPS) if args.converge and args.method == "pca" else args.steps
    cfg = FitConfig(rank=rank, max_steps=max_steps, converge=args.converge, tol=args.tol)
    if args.method == "pca":
        state, trace = fit_iterative_pca(Y, X, prop, cfg)
    else:
        state, trace = fit_iterative(Y, X, prop, cfg)
    config = {"rank": rank, "steps": args.steps, "converge": args.converge, "tol": args.tol, "propensity_mode": mode.value}
    extra = {"rank_selection": rank_report} if rank_report else None
    save_model(args.out, state, prop, trace, config, args.method, extra)
    _manifest(args, args.out)
    return EXIT_OK


def cmd_rank(args):
    Y, X = _load_data(args)
    prop = estimate_propensity(Y, X)
    sel = select_rank(Y, X, prop, args.max_rank, args.steps, args.propensity_mode, args.C_h, args.delta_h)
    _emit(sel.to_dict(), args.out)
    _manifest(args, args.out)
    return EXIT_OK


def cmd_infer(args):
    state, prop, meta = load_model(args.model)
    Y, X = _load_data(args, meta["n"], meta["m"])
    mom = plugin_moments(state, Y, X, prop)
    reports = []
    for target in args.target:
        kind, _, idx = target.partition(":")
        a, b = _parse_cell(idx, kind)
        if kind == "gamma":
            rep = infer_gamma(a, b, state, mom, args.level, args.null)
        elif kind == "theta":
            rep = infer_theta(a, b, state, mom, args.level, args.null)
        elif kind == "beta":
            rep = z_test_beta(a, b, state, Y, X, prop, args.null, args.level, mom)
        else:
            raise DataError(f"unknown target kind {kind!r}; use gamma:i,j, theta:i,j or beta:j,p")
        reports.append(rep.to_dict())
    _emit(reports[0] if len(reports) == 1 else reports, args.out)
    _manifest(args, args.out)
    return EXIT_OK


def cmd_test(args):
    state, prop, meta = load_model(args.model)
    Y, X = _load_data(args, meta["n"], meta["m"])
    spec = ContrastSpec.load(args.contrast, Y.m)
    if spec.d != X.d:
        raise DataError(f"contrast has d={spec.d} but the model has d={X.d}")
    if spec.group.max() >= Y.m or spec.group.min() < 0:
        raise DataError("contrast group indexes a column outside the matrix")
    res = simultaneous_test(state, Y, X, prop, spec, args.B, args.alpha, args.seed)
    _emit(res.to_dict(include_samples=args.samples), args.out)
    _manifest(args, args.out, args.seed)
    return EXIT_OK


def _simulate_kwargs(args) -> dict:
    exp = args.experiment
    if exp == "mse":
        return {"g": args.steps}
    if exp == "coverage":
        return {"g": args.steps, "level": args.level, "targets": (_parse_cell(args.cell, "cell"),)}
    if exp == "rejection":
        grid = RHO_GRID if args.rho_grid is None else tuple(float(v) for v in args.rho_grid.split(","))
        return {"g": args.steps, "B": args.B, "alpha": args.alpha, "rho_grid": grid}
    if exp == "rank":
        return {"g": args.steps, "r_bar": args.max_rank, "diagnostic": args.diagnostic}
    return {}


def cmd_simulate(args):
    kind = f"dgp{args.dgp}"
    cfg = DgpConfig(n=args.n, m=args.m, d=args.d, r=args.r, kind=kind, pi=args.pi, C=args.C, rho=args.rho, seed=args.seed)
    res = EXPERIMENTS[args.experiment](cfg, args.reps, **_simulate_kwargs(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.write(out / f"{args.experiment}.csv", out / f"{args.experiment}.json")
    _manifest(args, out, args.seed)
    if res.failures:
        log.warning("%d of %d replicates failed", len(res.failures), args.reps)
    return EXIT_OK


def cmd_ingest(args):
    ds = build_dataset(read_ratings(args.ratings), read_users(args.users), args.test_per_user, args.seed, args.interactions)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_triplets(out / "train.csv", ds.train)
    write_triplets(out / "test.csv", ds.test)
    write_covariates(out / "covariates.csv", ds.X)
    for name, ids, col in (("users.csv", ds.user_ids, "row"), ("items.csv", ds.item_ids, "col")):
        with open(out / name, "w") as fh:
            fh.write(f"{col},id\n")
            fh.writelines(f"{k},{v}\n" for k, v in enumerate(ids))
    summary = {"n": ds.train.n, "m": ds.train.m, "d": ds.X.d, "train": ds.train.total_observed, "test": len(ds.test)}
    dump_json(summary, out / "summary.json")
    _manifest(args, out, args.seed)
    return EXIT_OK


def cmd_eval(args):
    state, _, meta = load_model(args.model)
    X = read_covariates(args.x)
    train = read_triplets(args.train, meta["n"], meta["m"])
    test = read_triplets(args.test, meta["n"], meta["m"]).triplets()
    if X.n != meta["n"] or X.d != state.beta.shape[1]:
        raise DataError("covariates do not match the model dimensions")
    ds = RatingsDataset(train, test, X, list(range(train.n)), list(range(train.m)))
    report = evaluate(state, ds).to_dict()
    report["model"] = str(args.model)
    _emit(report, args.out)
    _manifest(args, args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def _rank_arg(text):
    if text == "auto":
        return text
    k = int(text)
    if k < 0:
        raise argparse.ArgumentTypeError("rank must be >= 0")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covmc", description="Matrix completion with row covariates.")
    p.add_argument("-v", "--verbose", action="store_true")
    subs = p.add_subparsers(dest="command", required=True)

    def sub(name, func, help_):
        s = subs.add_parser(name, help=help_)
        s.add_argument("--config", help="key = value file; command-line flags override it")
        s.set_defaults(func=func)
        return s

    def data_args(s, dims=True):
        s.add_argument("--y", required=True, help="observed entries, CSV row,col,value")
        s.add_argument("--x", required=True, help="covariates, CSV x0,x1,...")
        if dims:
            s.add_argument("--n", type=int, help="number of rows (default: covariate rows)")
            s.add_argument("--m", type=int, help="number of columns (default: max col + 1)")

    s = sub("fit", cmd_fit, "fit the model")
    data_args(s)
    s.add_argument("--rank", type=_rank_arg, required=True, help="latent rank, or 'auto'")
    s.add_argument("--max-rank", type=int, default=10)
    s.add_argument("--steps", type=int, default=3)
    s.add_argument("--converge", action="store_true")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--method", choices=("ls", "pca"), default="ls")
    s.add_argument("--propensity-mode", choices=[m.value for m in AlphaMode], default="covariate")
    s.add_argument("--out", required=True)

    s = sub("rank", cmd_rank, "select the latent rank")
    data_args(s)
    s.add_argument("--max-rank", type=int, default=10)
    s.add_argument("--steps", type=int, default=3)
    s.add_argument("--C-h", dest="C_h", type=float, default=0.9)
    s.add_argument("--delta-h", dest="delta_h", type=float, default=0.1)
    s.add_argument("--propensity-mode", choices=[m.value for m in AlphaMode], default=None)
    s.add_argument("--out")

    s = sub("infer", cmd_infer, "pointwise confidence intervals and z-tests")
    s.add_argument("--model", required=True)
    data_args(s, dims=False)
    s.add_argument("--target", action="append", required=True, help="gamma:i,j | theta:i,j | beta:j,p")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--null", type=float, default=0.0)
    s.add_argument("--out")

    s = sub("test", cmd_test, "multiplier-bootstrap simultaneous test")
    s.add_argument("--model", required=True)
    data_args(s, dims=False)
    s.add_argument("--contrast", required=True, help="JSON {group, A, a0}")
    s.add_argument("--B", type=int, default=1000)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", action="store_true", help="include bootstrap draws in the output")
    s.add_argument("--out")

    s = sub("simulate", cmd_simulate, "Monte Carlo experiments")
    s.add_argument("--dgp", type=int, choices=(1, 2), default=1)
    s.add_argument("--experiment", choices=sorted(EXPERIMENTS), default="mse")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--m", type=int, default=200)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--r", type=int, default=3)
    s.add_argument("--pi", type=float, default=0.5)
    s.add_argument("--C", type=float, default=2.0)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=3)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--cell", default="1,2", help="0-based cell for the coverage experiment")
    s.add_argument("--B", type=int, default=500)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--rho-grid", help="comma-separated signal sizes for the rejection experiment")
    s.add_argument("--max-rank", type=int, default=9)
    s.add_argument("--diagnostic", action="store_true", help="also record initial-estimate mse(k) curves")
    s.add_argument("--out-dir", required=True)

    s = sub("ingest", cmd_ingest, "build train/test files from ratings and user tables")
    s.add_argument("--ratings", required=True, help="CSV user,item,rating")
    s.add_argument("--users", required=True, help="CSV user,gender,age_group")
    s.add_argument("--test-per-user", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--interactions", action="store_true")
    s.add_argument("--out-dir", required=True)

    s = sub("eval", cmd_eval, "train/test RMSE of a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--out")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cmd = next((a for a in argv if not a.startswith("-")), None)
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if cmd in subs.choices:
            _apply_config(subs.choices[cmd], read_config(known.config))
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except DataError as exc:
        print(f"covmc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, OSError, KeyError, ValueError) as exc:
        print(f"covmc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, CovmcError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"covmc: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
