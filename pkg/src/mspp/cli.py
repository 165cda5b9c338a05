"""Command-line entry point: ``mspp {lasso,logistic,stability} [flags]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import (
    ALGORITHMS,
    ConfigError,
    DataError,
    ExperimentConfig,
    emit_csv,
    run_lasso_experiment,
    run_logistic_experiment,
    run_stability_experiment,
    write_summary,
)
from .inner import SolverError
from .libsvm import LibSVMFormatError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


def _rho(text: str):
    return text if text == "case2" else float(text)


def _gamma(text: str):
    return text if text == "auto" else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mspp", description="Minibatch stochastic proximal point experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in ("lasso", "logistic", "stability"):
        sp = sub.add_parser(name)
        # every default is None so that only flags actually given override the JSON config
        add = sp.add_argument
        add("--config", help="JSON file supplying any of the flags below")
        add("--algo", dest="algorithm", choices=ALGORITHMS)
        add("--p", type=int)
        add("--n", type=int)
        add("--t", dest="T", type=int)
        add("--N", dest="N", type=int, help="total sample count (lasso) or synthetic dataset size (logistic)")
        add("--epochs", type=int)
        add("--sigma", type=float)
        add("--mu", type=float)
        add("--reg", choices=("l1", "l2", "none"))
        add("--k-frac", type=float, help="fraction of nonzero coordinates in the true parameter")
        add("--w-scale", type=float)
        add("--lam", type=float, help="quadratic-growth modulus")
        add("--L", dest="L", type=float, help="override the smoothness constant")
        add("--rho", type=_rho, help="a value in (0, 0.5] or 'case2'")
        add("--gamma-schedule", choices=("linear-qg", "linear-qg-offset", "constant"))
        add("--gamma", type=_gamma, help="constant gamma value or 'auto'")
        add("--tol-schedule", choices=("exact", "poly-qg", "poly-convex", "fixed"))
        add("--eps", type=float)
        add("--inner", choices=("certified", "heuristic", "sgd"))
        add("--averaging", choices=("tweighted", "uniform", "gamma"))
        add("--m", type=int, help="phase-I sub-minibatch size for mspp-tp")
        add("--step-rule", choices=("invsqrt", "invt", "constant"))
        add("--step-c", type=float)
        add("--radius", type=float, help="restrict the domain to a Euclidean ball")
        add("--perturbations", type=int)
        add("--sampling-reps", type=int, help="coupled permutation draws for mspp-swor stability")
        add("--data", help="LIBSVM file (logistic)")
        add("--eval-every", type=int)
        add("--metric", choices=("excess_risk", "log10_excess_risk", "test_error"))
        add("--seed", type=int)
        add("--reps", type=int, help="replications with seeds seed, seed+1, ...")
        add("--jobs", type=int, help="worker processes for independent replications")
        add("--out", help="CSV output path (default: standard output)")
        add("--summary", help="JSON summary path (stability)")
        add("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        # accept the command-line spellings too
        values = {k.replace("-", "_"): v for k, v in values.items()}
        for alias, name in (("t", "T"), ("algo", "algorithm")):
            if alias in values:
                values[name] = values.pop(alias)
        values.pop("experiment", None)
    for key, value in vars(args).items():
        if key in ("config", "verbose") or value is None:
            continue
        values[key] = value
    cfg = ExperimentConfig.from_dict(values)
    cfg.validate()
    return cfg


def run(cfg: ExperimentConfig) -> None:
    summary = None
    if cfg.experiment == "lasso":
        rows = run_lasso_experiment(cfg)
    elif cfg.experiment == "logistic":
        rows = run_logistic_experiment(cfg)
    else:
        rows, summary = run_stability_experiment(cfg)
    emit_csv(rows, cfg.out or sys.stdout)
    if summary is not None:
        path = cfg.summary or (cfg.out.rsplit(".", 1)[0] + ".json" if cfg.out else None)
        if path:
            write_summary(summary, path)
        else:
            sys.stderr.write(json.dumps(summary, indent=2) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        run(cfg)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, LibSVMFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
