"""``bayesfl`` command-line entry point.

Verbs: ``train``, ``mse-verify``, ``bound-check``, ``sweep`` and ``oracle``.
Every verb reads its config and data read-only and writes only under the
output directory. Failures are reported on stderr as one JSON record.

Exit codes: 0 success (a diverged run is flagged in its outputs, not in the
exit code), 1 a verification check failed, 2 invalid config or input,
3 numerical or capability failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import CapabilityError, ConfigError, InvalidInputError, NumericalFailure
from . import experiments as ex
from .config import ExperimentConfig, MseVerifyConfig, OracleConfig, load_config, parse_config
from .runner import default_jobs
from .summary import write_rows, write_summary, write_trace

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


def _parse_seeds(text):
    """``N`` means seeds 0..N-1; ``a,b,c`` lists them; ``a-b`` is inclusive."""
    try:
        if "," in text:
            seeds = [int(s) for s in text.split(",") if s.strip()]
        elif "-" in text.strip()[1:]:
            lo, hi = text.split("-", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = list(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed spec {text!r}") from None
    if not seeds or min(seeds) < 0 or len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError(f"seed spec {text!r} must name distinct non-negative ints")
    return seeds


def _parse_mode(text):
    mode = text.replace("-", "_")
    if mode not in ("corrected", "paper_literal"):
        raise argparse.ArgumentTypeError("mode must be corrected or paper-literal")
    return mode


def build_parser():
    parser = argparse.ArgumentParser(prog="bayesfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name, help_, config_required):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=config_required, help="YAML config file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")
        p.add_argument("--mode", type=_parse_mode, default=None,
                       help="aggregator algebra: corrected or paper-literal")
        return p

    for name, help_ in (("train", "train one config over seeds"),
                        ("bound-check", "compare gradient norms with the convergence bound"),
                        ("sweep", "rounds-to-threshold over a step-size/momentum grid")):
        add(name, help_, True).add_argument("--seeds", type=_parse_seeds,
                                             help="N, a-b or a,b,c")
    add("mse-verify", "quadrature vs closed forms vs Monte Carlo MSE", False)
    add("oracle", "genie conditional mean vs the separable estimator", False)
    return parser


def _with_mode(config, mode):
    if mode is None:
        return config
    return config.model_copy(update={"training": config.training.model_copy(update={"mode": mode})})


def _out_dir(args, config):
    out = Path(args.out or config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(record):
    print(json.dumps(record, default=str))


def _save_config(out, config):
    (out / "config.json").write_text(config.model_dump_json(indent=2) + "\n")


def cmd_train(args):
    config = _with_mode(load_config(args.config, ExperimentConfig), args.mode)
    out = _out_dir(args, config)
    _save_config(out, config)
    results = ex.train(config, args.seeds, args.jobs)
    for r in results:
        write_trace(out, r, config.output.trace_aggregate, config.output.wall_time)
    rows, stats = write_summary(out, results, config.threshold)
    _emit({"verb": "train", "out": str(out), "seeds": len(rows),
           "diverged": sum(r["diverged"] for r in rows),
           **{s["metric"]: s["mean"] for s in stats if s["metric"] != "diverged"}})
    return EXIT_OK


def cmd_bound_check(args):
    config = _with_mode(load_config(args.config, ExperimentConfig), args.mode)
    out = _out_dir(args, config)
    _save_config(out, config)
    rows = ex.bound_check(config, args.seeds, args.jobs)
    write_rows(out / "bound_check.csv", rows)
    bad = [r for r in rows if not r["ok"]]
    _emit({"verb": "bound-check", "out": str(out), "rows": len(rows), "violations": len(bad),
           "max_ratio": max(r["running_avg"] / r["bound"] for r in rows)})
    return EXIT_CHECK_FAILED if bad else EXIT_OK


def _fmt_cell(row):
    if row["rounds"] is None:
        return f"- ({row['n_reached']}/{row['n_seeds']})"
    return f"{row['rounds']:.1f}"


def cmd_sweep(args):
    config = _with_mode(load_config(args.config, ExperimentConfig), args.mode)
    out = _out_dir(args, config)
    _save_config(out, config)
    rows = ex.sweep(config, args.seeds, args.jobs)
    write_rows(out / "sweep.csv", rows)
    for row in rows:
        print(f"{row['algorithm']:>15} gamma={row['gamma']:<8g} delta={row['delta']:<4g} "
              f"threshold={row['threshold']:<6g} rounds={_fmt_cell(row)}")
    return EXIT_OK


def _load_optional(path, model):
    return parse_config({}, model) if path is None else load_config(path, model)


def cmd_mse_verify(args):
    cfg = _load_optional(args.config, MseVerifyConfig)
    out = _out_dir(args, cfg)
    rows = ex.mse_verify(cfg, args.jobs, args.mode or "corrected")
    write_rows(out / "mse_verify.csv", rows)
    failed = [(r["nu"], r["h"], r["sigma2"], k)
              for r in rows for k, v in r.items() if k.startswith("pass_") and not v]
    _emit({"verb": "mse-verify", "out": str(out), "cells": len(rows), "failed": failed})
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_oracle(args):
    cfg = _load_optional(args.config, OracleConfig)
    out = _out_dir(args, cfg)
    rows = ex.oracle(cfg)
    write_rows(out / "oracle.csv", rows)
    _emit({"verb": "oracle", "out": str(out), "points": len(rows), "rho": cfg.rho,
           "max_abs_dev": max(r["max_abs_dev"] for r in rows)})
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "bound-check": cmd_bound_check,
    "sweep": cmd_sweep,
    "mse-verify": cmd_mse_verify,
    "oracle": cmd_oracle,
}


def _fail(exc, code):
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        record["key"] = exc.key
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        return _fail(InvalidInputError("--jobs must be >= 1"), EXIT_INVALID)
    try:
        return COMMANDS[args.verb](args)
    except (NumericalFailure, CapabilityError) as exc:
        return _fail(exc, EXIT_NUMERICAL)
    except (ConfigError, InvalidInputError) as exc:
        return _fail(exc, EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
