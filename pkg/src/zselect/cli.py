"""Command-line surface: ingest, analyze, simulate, butterfly.

Every command resolves its configuration, writes machine-readable outputs
(CSV and JSON) plus a rendered figure into the output directory, and drops
a manifest recording the command, resolved options, input file hashes,
seed, and library version.  Re-running with the same inputs and seed
reproduces the data outputs byte for byte.

Exit codes: 0 success, 2 usage, 3 data, 4 solver.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .estimands import ESTIMAND_IDS, GLOBAL_ESTIMANDS
from .floc import (
    CACHE_ENV_VAR,
    EmptyLocalizationError,
    FLocProblem,
    InsufficientDataError,
    IntervalResult,
    floc_band,
    omega_interval,
    results_to_csv,
    results_to_json,
)
from .ingest import fold_and_truncate, ingest_corpus, read_z_csv, write_z_csv
from .kernel import RegionError, SelectionRegion
from .poisson import poisson_posterior_mean_band, read_counts_csv
from .priors import PriorClassSpec, build_dictionary
from .sim import SimConfig, coverage_to_csv, coverage_to_json, mc_coverage

USAGE_EXIT, DATA_EXIT, SOLVER_EXIT = 2, 3, 4

PRIOR_CLASS_FLAGS = {"sn": "scale_normal", "unm": "unimodal", "all": "all", "zcurve": "zcurve"}


class UsageError(ValueError):
    """Bad combination of command-line options."""


@dataclass
class RunManifest:
    command: str
    config: dict
    input_hashes: dict
    seed: int | None
    version: str
    timestamp: float

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command: str, config: dict, inputs: list, seed: int | None) -> RunManifest:
    return RunManifest(
        command=command,
        config=config,
        input_hashes={str(p): _hash_file(p) for p in inputs},
        seed=seed,
        version=__version__,
        timestamp=time.time(),
    )


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _region(args) -> SelectionRegion:
    upper = getattr(args, "s_upper", None)
    if upper is None:
        return SelectionRegion.half_line(args.s_lower)
    return SelectionRegion.interval(args.s_lower, upper)


def _parse_z_grid(text: str) -> np.ndarray:
    try:
        a, b, n = text.split(":")
        grid = np.linspace(float(a), float(b), int(n))
    except ValueError as exc:
        raise UsageError(f"--z-grid expects start:stop:count, got {text!r}") from exc
    if np.any(grid < 0):
        raise UsageError("--z-grid must stay nonnegative")
    return grid


def _parse_power_bin(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"--power-bin expects lo:hi, got {text!r}") from exc
    return lo, hi


def cmd_ingest(args) -> int:
    out = _outdir(args.out)
    region = _region(args)
    z_records, sample, report = ingest_corpus(args.input, region, args.seed, args.ci_level)
    write_z_csv(z_records, out / "zscores.csv")
    report.write(out / "ingest_report.json")
    _manifest(
        "ingest",
        {
            "input": str(args.input),
            "s_lower": args.s_lower,
            "s_upper": args.s_upper,
            "ci_level": args.ci_level,
            "out": str(out),
        },
        [args.input],
        args.seed,
    ).write(out / "manifest.json")
    print(f"ingest: {report.n_parsed} rows parsed, {report.n_trun} truncated |z| retained")
    return 0


def _analyze_config(args) -> dict:
    return {
        "zscores": str(args.zscores),
        "estimand": args.estimand,
        "prior_class": args.prior_class,
        "alpha": args.alpha,
        "z": args.z,
        "z_grid": args.z_grid,
        "s_lower": args.s_lower,
        "s_upper": args.s_upper,
        "atoms": args.atoms,
        "grid_size": args.grid_size,
        "power_bin": args.power_bin,
        "cache_dir": args.cache_dir,
        "threads": args.threads,
        "no_figures": args.no_figures,
        "out": str(args.out),
    }


def cmd_analyze(args) -> int:
    out = _outdir(args.out)
    region = _region(args)
    class_id = PRIOR_CLASS_FLAGS[args.prior_class]
    records = read_z_csv(args.zscores)
    sample = fold_and_truncate(records, region)

    if args.estimand == "omega":
        dictionary = build_dictionary(
            PriorClassSpec(class_id, atom_count=args.atoms), region, args.atoms
        )
        result = omega_interval(dictionary, sample, args.alpha, args.grid_size, args.cache_dir)
        with open(out / "omega.json", "w", encoding="utf-8") as fh:
            json.dump(result.as_dict(), fh, indent=2)
            fh.write("\n")
        rows = [
            IntervalResult(
                "omega", None, result.omega[0], result.omega[1], args.alpha, class_id, "floc"
            )
        ]
        results_to_csv(rows, out / "intervals.csv")
        results_to_json(rows, out / "intervals.json")
        figure_written = False
    else:
        if args.estimand in GLOBAL_ESTIMANDS:
            z_grid = None
        elif args.z is not None:
            z_grid = [args.z]
        elif args.z_grid is not None:
            z_grid = _parse_z_grid(args.z_grid)
        else:
            raise UsageError(f"estimand {args.estimand} needs --z or --z-grid")
        power_bin = _parse_power_bin(args.power_bin) if args.power_bin else None
        if args.estimand == "power_bin" and power_bin is None:
            raise UsageError("power_bin needs --power-bin lo:hi")

        dictionary = build_dictionary(
            PriorClassSpec(class_id, atom_count=args.atoms), region, args.atoms
        )
        problem = FLocProblem.from_sample(
            dictionary, sample, args.alpha, args.grid_size, args.cache_dir
        )
        rows = floc_band(problem, args.estimand, z_grid, region, power_bin)
        results_to_csv(rows, out / "intervals.csv")
        results_to_json(rows, out / "intervals.json")
        figure_written = False
        if not args.no_figures:
            from .report import band_figure

            figure_written = band_figure(
                rows,
                out / "intervals.png",
                title=f"{args.estimand} ({class_id}, alpha={args.alpha:g})",
                sample_values=sample.values if args.estimand == "marginal_norm" else None,
            )

    _manifest("analyze", _analyze_config(args), [args.zscores], args.seed).write(
        out / "manifest.json"
    )
    print(f"analyze: wrote {out / 'intervals.csv'}" + (" and figure" if figure_written else ""))
    return 0


def cmd_simulate(args) -> int:
    out = _outdir(args.out)
    config = SimConfig.from_json(args.config)
    if args.threads is not None:
        config.workers = max(1, args.threads)
    rows = mc_coverage(config)
    coverage_to_csv(rows, out / "coverage.csv")
    coverage_to_json(rows, config, out / "coverage.json")
    if not args.no_figures:
        from .report import coverage_figure

        coverage_figure(rows, out / "coverage.png", nominal=1 - config.alpha)
    _manifest("simulate", config.to_dict(), [args.config], config.seed).write(
        out / "manifest.json"
    )
    print(f"simulate: {len(rows)} coverage rows -> {out / 'coverage.csv'}")
    return 0


def cmd_butterfly(args) -> int:
    out = _outdir(args.out)
    sample = read_counts_csv(args.counts)
    z_values = list(range(1, args.z_max + 1))
    rows = poisson_posterior_mean_band(sample, z_values, alpha=args.alpha)
    results_to_csv(rows, out / "intervals.csv")
    results_to_json(rows, out / "intervals.json")
    with open(out / "reference.csv", "w", encoding="utf-8") as fh:
        fh.write("z,zipf_posterior_mean\n")
        for z in z_values:
            fh.write(f"{z},{float(z)!r}\n")
    if not args.no_figures:
        from .report import butterfly_figure

        butterfly_figure(rows, out / "butterfly.png")
    _manifest(
        "butterfly",
        {"counts": str(args.counts), "alpha": args.alpha, "z_max": args.z_max, "out": str(out)},
        [args.counts],
        None,
    ).write(out / "manifest.json")
    print(f"butterfly: intervals for counts 1..{args.z_max} -> {out / 'intervals.csv'}")
    return 0


def _nonneg_float(text: str) -> float:
    val = float(text)
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zselect",
        description="Confidence intervals for empirical-Bayes estimands from truncated z-scores.",
    )
    parser.add_argument("--version", action="version", version=f"zselect {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common_region = argparse.ArgumentParser(add_help=False)
    common_region.add_argument("--s-lower", type=float, default=2.1, help="selection region lower edge")
    common_region.add_argument("--s-upper", type=float, default=None, help="optional upper edge (default unbounded)")

    p = sub.add_parser("ingest", parents=[common_region], help="CSV confidence intervals -> truncated |z| corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ci-level", type=float, default=0.95, help="nominal level of the input intervals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", parents=[common_region], help="localization intervals for one estimand")
    p.add_argument("--zscores", required=True, help="z-score CSV from the ingest step")
    p.add_argument("--estimand", required=True, choices=ESTIMAND_IDS)
    p.add_argument("--prior-class", default="sn", choices=sorted(PRIOR_CLASS_FLAGS))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--z", type=_nonneg_float, default=None, help="single evaluation point")
    p.add_argument("--z-grid", default=None, help="start:stop:count evaluation grid")
    p.add_argument("--power-bin", default=None, help="lo:hi bin for the power_bin estimand")
    p.add_argument("--atoms", type=int, default=512, help="atoms per dictionary element")
    p.add_argument("--grid-size", type=int, default=1000, help="CDF band grid size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--cache-dir", default=os.environ.get(CACHE_ENV_VAR))
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte-Carlo coverage run from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("butterfly", help="posterior-mean intervals for zero-truncated counts")
    p.add_argument("--counts", required=True, help="count,species_frequency CSV")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--z-max", type=int, default=10)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_butterfly)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (EmptyLocalizationError,) as exc:
        print(
            f"solver error: {exc}\n"
            "hint: a wider prior class, larger alpha, or more data may make the band feasible",
            file=sys.stderr,
        )
        return SOLVER_EXIT
    except (InsufficientDataError, RegionError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
