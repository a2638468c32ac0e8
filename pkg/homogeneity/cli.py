#!/usr/bin/env python3
"""
Command-line surface for the unordered-pair homogeneity tests.

  python cli.py test pairs.csv                      # four LRTs with raw and adjusted p-values
  python cli.py dist pvalue Rstar-adjusted 16.69 --n 40
  python cli.py simulate --n 75 --rho -0.5 --reps 10000 --out table.csv
  python cli.py calibrate --grid 10,20,30,40,50,60,70,80,90,100 --out coefficients.yaml

Exit status: 0 on full output, 1 on data/fit/runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from config import load_config
from errors import ParameterDomainError, UphtError
from estimation import FitOptions
from null_laws import (
    RLawSettings,
    RStarLaw,
    StatId,
    adjusted_pvalue,
    adjusted_quantile,
    coefficients_from_config,
    default_r_law,
    load_coefficients,
    raw_pvalue,
)
from report import Provenance, ReportDocument, format_test_report, save_report

USAGE_ERROR = 2
FAILURE = 1

# law id -> (statistic whose law it is, adjusted?)
LAWS = {
    "chibar": (StatId.RN1, False),
    "R": (StatId.RN2, False),
    "Rstar": (StatId.RN2_STAR, False),
    "chibar-adjusted": (StatId.RN1, True),
    "chibar-star-adjusted": (StatId.RN1_STAR, True),
    "R-adjusted": (StatId.RN2, True),
    "Rstar-adjusted": (StatId.RN2_STAR, True),
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="Base seed (defaults from config.yaml)")
    p.add_argument("--threads", type=int, default=d, help="Worker processes")
    p.add_argument("--out", type=Path, default=d, help="Output file")
    p.add_argument("--coeffs", type=Path, default=d, help="Adjustment coefficients file")
    p.add_argument("--reps", type=int, default=d, help="Monte-Carlo replicates")
    p.add_argument("--tolerance", type=float, default=d, help="Optimizer loglik tolerance")
    p.add_argument("--config", type=Path, default=d, help="YAML config overlay")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="upht", description="Homogeneity tests for unordered paired observations"
    )
    _add_common(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", parents=[common], help="Run the four LRTs on a pairs file")
    t.add_argument("input", type=Path, help="CSV: two numeric columns, optional group column")
    t.add_argument("--pooled", action="store_true", help="Ignore the group column")

    d = sub.add_parser("dist", parents=[common], help="Quantile or p-value of a null law")
    d.add_argument("what", choices=["quantile", "pvalue"])
    d.add_argument("law", choices=sorted(LAWS))
    d.add_argument("value", type=float, help="alpha for quantile, statistic for pvalue")
    d.add_argument("--n", type=int, default=None, help="Sample size (adjusted laws)")

    s = sub.add_parser("simulate", parents=[common], help="Rejection-rate study")
    s.add_argument("--n", type=int, default=75)
    s.add_argument("--theta", type=_float_list, default=None,
                   help="mu1,mu2,sigma1,sigma2,rho (default: standard null)")
    s.add_argument("--rho", type=float, default=None, help="Shortcut: null theta with this rho")
    s.add_argument("--levels", type=_float_list, default=None)
    s.add_argument("--mode", choices=["raw", "adjusted", "both"], default="adjusted")
    s.add_argument("--scenarios", choices=["null", "power"], default=None,
                   help="Run the standard null or power scenario set")
    s.add_argument("--scenario-file", type=Path, default=None, help="YAML list of scenarios")
    s.add_argument("--sweep", type=_int_list, default=None,
                   help="Type-I error sweep over these n (rho = 0), plot-ready CSV")

    c = sub.add_parser("calibrate", parents=[common], help="Fit adjustment coefficients")
    c.add_argument("--grid", type=_int_list, default=None, help="Comma-separated n values")
    c.add_argument("--reference-draws", type=int, default=None)
    c.add_argument("--report", type=Path, default=None, help="Also write a JSON calibration report")
    return p


def _fit_options(args, config: dict) -> FitOptions:
    opts = FitOptions.from_config(config)
    if args.tolerance is not None:
        opts.tolerance = args.tolerance
    return opts


def _coefficients(args, config: dict):
    if args.coeffs is not None:
        return load_coefficients(args.coeffs)
    return coefficients_from_config(config)


def _threads(args, config: dict) -> int:
    if args.threads is not None:
        return int(args.threads)
    return int(config.get("runtime", {}).get("threads", 1))


def cmd_test(args, config: dict) -> int:
    from data_io import file_sha256, load_dataset, load_grouped
    from lrt import run_all

    opts = _fit_options(args, config)
    if args.seed is not None:
        opts.seed = args.seed
    coeffs = _coefficients(args, config)
    groups = {"": load_dataset(args.input)} if args.pooled else load_grouped(args.input)
    r_law = default_r_law(RLawSettings.from_config(config), threads=_threads(args, config))
    rstar = RStarLaw.from_config(config)

    payload, ok = {}, True
    for name, ds in groups.items():
        report = run_all(ds, opts, coeffs, r_law=r_law, rstar=rstar)
        print(format_test_report(report, title=f"group {name}" if name else ""))
        print()
        payload[name or "all"] = report.to_dict()
        if not report.complete:
            ok = False
            for key, msg in report.errors.items():
                print(f"{args.input}: {name or 'all'}: {key}: {msg}", file=sys.stderr)
    if args.out:
        doc = ReportDocument(
            kind="test_report",
            payload={"groups": payload},
            provenance=Provenance(seed=opts.seed, input_sha256=file_sha256(args.input),
                                  config={"fit": opts.to_dict()}),
        )
        save_report(args.out, doc)
        print(f"Saved report to {args.out}")
    return 0 if ok else FAILURE


def cmd_dist(args, config: dict) -> int:
    stat, adjusted = LAWS[args.law]
    if adjusted and args.n is None:
        raise UsageError(f"law {args.law} needs --n")
    if adjusted and args.n < 3:
        raise UsageError(f"--n must be >= 3, got {args.n}")
    if args.what == "quantile" and not 0.0 < args.value < 1.0:
        raise UsageError(f"alpha must be in (0, 1), got {args.value}")
    if args.what == "pvalue" and not args.value >= 0:
        raise UsageError(f"statistic must be >= 0, got {args.value}")

    settings = RLawSettings.from_config(config)
    if args.seed is not None:
        settings = replace(settings, seed=args.seed)
    r_law = default_r_law(settings, threads=_threads(args, config)) if stat is StatId.RN2 else None
    rstar = RStarLaw.from_config(config)
    coeffs = _coefficients(args, config) if adjusted else None
    n = args.n if adjusted else None

    if args.what == "quantile":
        q = adjusted_quantile(stat, args.value, n, coeffs, r_law=r_law, rstar=rstar)
        print(f"{q:.6g}")
    else:
        if adjusted:
            p = adjusted_pvalue(stat, args.value, n, coeffs, r_law=r_law, rstar=rstar)
        else:
            p = raw_pvalue(stat, args.value, r_law=r_law, rstar=rstar)
        print(p.format())
        if p.clipped:
            print(f"note: adjustment clipped at n={n}", file=sys.stderr)
    return 0


def _simulation_scenarios(args, config: dict, reps: int, seed: int, levels: List[float]):
    from model import Theta
    from simulate import Calibration, ScenarioConfig, standard_scenarios, scenarios_from_config

    modes = {
        "raw": (Calibration.RAW,),
        "adjusted": (Calibration.ADJUSTED,),
        "both": (Calibration.RAW, Calibration.ADJUSTED),
    }[args.mode]
    if args.scenarios:
        return standard_scenarios(args.scenarios, reps=reps, seed=seed)
    if args.scenario_file:
        cfgs, _ = scenarios_from_config(args.scenario_file)
        if args.reps is not None:
            for cfg in cfgs:
                cfg.reps = reps
        return cfgs
    try:
        if args.theta is not None:
            if len(args.theta) != 5:
                raise UsageError("--theta needs five values: mu1,mu2,sigma1,sigma2,rho")
            theta = Theta(*args.theta)
        else:
            theta = Theta(0.0, 0.0, 1.0, 1.0, args.rho if args.rho is not None else 0.0)
    except ParameterDomainError as e:
        raise UsageError(str(e))
    return [ScenarioConfig(n=args.n, theta=theta, reps=reps, levels=tuple(levels), seed=seed,
                           modes=modes, label="cli")]


def cmd_simulate(args, config: dict) -> int:
    import pandas as pd

    from simulate import rejection_study, type1_sweep, write_table_csv

    sim = config.get("simulation", {})
    reps = args.reps if args.reps is not None else int(sim.get("reps", 10000))
    seed = args.seed if args.seed is not None else int(sim.get("seed", 4242))
    levels = args.levels or list(sim.get("levels", [0.01, 0.05, 0.10]))
    if reps < 1:
        raise UsageError(f"--reps must be >= 1, got {reps}")
    if not all(0.0 < a < 1.0 for a in levels):
        raise UsageError(f"levels must be in (0, 1), got {levels}")
    if args.n < 7:
        raise UsageError(f"--n must be >= 7, got {args.n}")

    opts = _fit_options(args, config)
    coeffs = _coefficients(args, config)
    threads = _threads(args, config)
    r_law = default_r_law(RLawSettings.from_config(config), threads=threads)
    metadata = {
        "command": "simulate",
        "seed": seed,
        "reps": reps,
        "fit": opts.to_dict(),
        "coefficients": {k.value: v.to_dict() for k, v in coeffs.items()},
    }
    if args.sweep:
        if min(args.sweep) < 7:
            raise UsageError(f"sweep values must be >= 7, got {args.sweep}")
        level = args.levels[0] if args.levels else 0.05
        frame = type1_sweep(args.sweep, reps, seed, level, opts, coeffs, r_law, threads)
        metadata["sweep"] = {"n": list(args.sweep), "level": level}
    else:
        cfgs = _simulation_scenarios(args, config, reps, seed, levels)
        max_fail = float(sim.get("max_failure_rate", 0.005))
        tables = [
            rejection_study(cfg, opts, coeffs, r_law, threads=threads, max_failure_rate=max_fail)
            for cfg in cfgs
        ]
        frame = pd.concat([t.to_frame() for t in tables], ignore_index=True)
        metadata["scenarios"] = [c.to_dict() for c in cfgs]
    if args.out and args.out.suffix == ".json":
        doc = ReportDocument(
            kind="sweep" if args.sweep else "rejection_table",
            payload={"rows": json.loads(frame.to_json(orient="records")), "metadata": metadata},
            provenance=Provenance(seed=seed, config={"fit": opts.to_dict(), "reps": reps}),
        )
        save_report(args.out, doc)
        print(f"Saved {len(frame)} rows to {args.out}")
    elif args.out:
        write_table_csv(args.out, frame, metadata)
        print(f"Saved {len(frame)} rows to {args.out}")
    else:
        print(frame.to_string(index=False))
    return 0


def cmd_calibrate(args, config: dict) -> int:
    from calibration import calibrate, save_coefficients

    cal = config.get("calibration", {})
    grid = args.grid or list(cal.get("n_grid", range(10, 101, 10)))
    reps = args.reps if args.reps is not None else int(cal.get("reps", 50000))
    seed = args.seed if args.seed is not None else int(cal.get("seed", 2011))
    draws = args.reference_draws or int(cal.get("reference_draws", 200000))
    if len(grid) < 3 or len(set(grid)) != len(grid):
        raise UsageError(f"--grid needs at least 3 distinct values, got {grid}")
    if min(grid) < 10:
        raise UsageError(f"grid values must be >= 10, got {min(grid)}")
    if reps < 1:
        raise UsageError(f"--reps must be >= 1, got {reps}")

    result = calibrate(
        grid, reps, seed, draws,
        opts=_fit_options(args, config),
        threads=_threads(args, config),
        max_failure_rate=float(cal.get("max_failure_rate", 0.001)),
        low_precision_reps=int(cal.get("low_precision_reps", 10000)),
    )
    out = args.out or Path("coefficients.yaml")
    save_coefficients(out, result.coefficients(), result.provenance)
    if args.report:
        save_report(args.report, ReportDocument(
            kind="calibration",
            payload=result.to_dict(),
            provenance=Provenance(seed=seed, config={"n_grid": grid, "reps": reps}),
        ))
        print(f"Saved calibration report to {args.report}")
    for s, fit in result.fits.items():
        print(f"{s.label:<8} c={fit.c:.1f}  a={fit.a:.4f}  b={fit.b:.4f}  rss={fit.rss:.3g}")
    if result.provenance["low_precision"]:
        print(f"note: reps={reps} is below the precision threshold; file flagged low_precision")
    print(f"Saved coefficients to {out}")
    return 0


COMMANDS = {
    "test": cmd_test,
    "dist": cmd_dist,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (UphtError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
