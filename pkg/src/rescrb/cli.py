"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 numerical or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds, matcalc
from .errors import ConvergenceError, DomainError, InvalidInputError, NumericalRankError, SingularityError
from .estimators import FixedPointOptions, WeightSpec, cscm, m_estimate, sample_mean
from .mc_harness import (
    ExperimentConfig,
    figure_config,
    load_config,
    run_experiment,
    write_csv,
    write_json,
)
from .res_model import RESParams, calibrate_scale, moments, sample_res, toeplitz_scatter
from .special import RngStream

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt_matrix(a) -> str:
    return "\n".join(",".join(f"{v:.10g}" for v in row) for row in np.atleast_2d(a))


def _model_args(p: argparse.ArgumentParser, m_default: int = 24) -> None:
    p.add_argument("--family", choices=["t", "gg"], required=True, help="density generator family")
    p.add_argument("--shape", type=float, required=True, help="shape: lambda (t, > 2) or s (gg, > 0)")
    p.add_argument("--n", type=int, default=8, help="dimension N (default 8)")
    p.add_argument("--m", type=int, default=m_default, help=f"samples per dataset M (default {m_default})")
    p.add_argument("--rho", type=float, default=0.8, help="Toeplitz correlation of the scatter (default 0.8)")
    p.add_argument("--power", type=float, default=4.0, help="data power E{Q}/N (default 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rescrb", description="RES sampling, constrained scatter estimation and CRB/CSCRB bounds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", help="print constrained CRB and semiparametric CRB indices")
    _model_args(p)
    p.add_argument("--matrices", action="store_true", help="also print the full bound matrices")
    p.add_argument("--json", action="store_true", help="emit JSON instead of key=value lines")

    p = sub.add_parser("sample", help="draw an RES dataset and write it as CSV")
    _model_args(p)
    p.add_argument("--mu", type=float, default=1.0, help="value filling the mean vector (default 1)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--out", required=True, help="output CSV path, one observation per row")
    p.add_argument("--header", action="store_true", help="write a header line x1..xN")

    p = sub.add_parser("estimate", help="run an estimator on a CSV dataset")
    p.add_argument("--input", required=True, help="CSV dataset, one observation per row, optional header")
    p.add_argument("--estimator", required=True, choices=["sample_mean", "cscm", "tyler", "huber"])
    p.add_argument("--u", type=float, default=0.9, help="Huber tuning parameter in (0, 1] (default 0.9)")
    p.add_argument("--tol", type=float, default=1e-9, help="fixed-point relative tolerance (default 1e-9)")
    p.add_argument("--max-iter", type=int, default=1000, help="fixed-point iteration cap (default 1000)")

    p = sub.add_parser("simulate", help="run a Monte Carlo sweep from a config file")
    p.add_argument("--config", required=True, help="flat YAML key-value config file")
    p.add_argument("--out", default="results.csv", help="output CSV path (default results.csv)")
    p.add_argument("--json", action="store_true", help="also write a JSON mirror next to the CSV")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("reproduce", help="run a preset figure sweep and write fig{K}.csv")
    p.add_argument("--figure", type=int, required=True, choices=[1, 2, 3, 4])
    p.add_argument("--runs", type=int, default=10_000, help="Monte Carlo runs per grid point (default 10000)")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--out-dir", default=".", help="directory for fig{K}.csv (default .)")
    p.add_argument("--json", action="store_true", help="also write fig{K}.json")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    return parser


def _truth(args) -> tuple[RESParams, object]:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.m < 1:
        raise UsageError("--m must be >= 1")
    if not -1 < args.rho < 1:
        raise UsageError("--rho must lie in (-1, 1)")
    try:
        gen = calibrate_scale(args.family, args.shape, args.power, args.n)
    except (InvalidInputError, DomainError) as exc:
        raise UsageError(str(exc)) from exc
    mu = np.full(args.n, float(getattr(args, "mu", 0.0)))
    return RESParams(mu, toeplitz_scatter(args.n, args.rho), constrained=True), gen


def _cmd_bounds(args) -> int:
    params, gen = _truth(args)
    report = bounds.bound_report(params, moments(gen, args.n), args.m)
    idx = {
        "eps_ccrb_sigma": report.eps_ccrb_sigma,
        "eps_cscrb_mu": report.eps_cscrb_mu,
        "eps_cscrb_sigma": report.eps_cscrb_sigma,
    }
    if args.json:
        out = {k: float(f"{v:.10g}") for k, v in idx.items()}
        if args.matrices:
            for name in ("ccrb_mu", "ccrb_sigma", "cscrb_mu", "cscrb_sigma"):
                out[name] = getattr(report, name).tolist()
        print(json.dumps(out, indent=2))
        return EXIT_OK
    for k, v in idx.items():
        print(f"{k}={v:.10g}")
    if args.matrices:
        for name in ("ccrb_mu", "ccrb_sigma", "cscrb_mu", "cscrb_sigma"):
            print(f"# {name}")
            print(_fmt_matrix(getattr(report, name)))
    return EXIT_OK


def _cmd_sample(args) -> int:
    params, gen = _truth(args)
    x = sample_res(params, gen, args.m, RngStream(args.seed, 0))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        if args.header:
            fh.write(",".join(f"x{i + 1}" for i in range(args.n)) + "\n")
        fh.write(_fmt_matrix(x) + "\n")
    return EXIT_OK


def read_dataset(path: str | Path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{path}: empty dataset")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines])
    except ValueError as exc:
        raise UsageError(f"{path}: malformed dataset ({exc})") from exc
    if data.ndim != 2 or data.shape[0] == 0:
        raise UsageError(f"{path}: dataset rows must have equal length")
    return data


def _cmd_estimate(args) -> int:
    x = read_dataset(args.input)
    mu = sample_mean(x)
    if args.estimator == "sample_mean":
        print(_fmt_matrix(mu))
        return EXIT_OK
    if args.estimator == "cscm":
        print(_fmt_matrix(cscm(x, mu)))
        return EXIT_OK
    try:
        spec = WeightSpec.tyler() if args.estimator == "tyler" else WeightSpec.huber(args.u)
        opts = FixedPointOptions(args.tol, args.max_iter)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    print(_fmt_matrix(m_estimate(x, mu, spec, opts)))
    return EXIT_OK


def _finish_sweep(rows, out: Path, want_json: bool) -> int:
    write_csv(rows, out)
    if want_json:
        write_json(rows, out.with_suffix(".json"))
    bad = [r for r in rows if r.failed]
    for r in bad:
        print(f"shape {r.shape:g}: {r.failures}/{r.trials} trials failed", file=sys.stderr)
    return EXIT_NUMERICAL if bad else EXIT_OK


def _cmd_simulate(args) -> int:
    try:
        config = load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except (InvalidInputError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    rows = run_experiment(config, workers=max(1, args.threads))
    return _finish_sweep(rows, Path(args.out), args.json)


def _cmd_reproduce(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    config = figure_config(args.figure, runs=args.runs, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = run_experiment(config, workers=max(1, args.threads))
    return _finish_sweep(rows, out_dir / f"fig{args.figure}.csv", args.json)


_COMMANDS = {
    "bounds": _cmd_bounds,
    "sample": _cmd_sample,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "reproduce": _cmd_reproduce,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rescrb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, SingularityError, NumericalRankError, np.linalg.LinAlgError) as exc:
        print(f"rescrb {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidInputError as exc:
        print(f"rescrb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
