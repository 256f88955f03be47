"""
Command-line entry point: ``aparchlm <command> [options]``.

Commands
--------
ingest    tick file -> bars CSV, returns CSV, ingest report
acf       returns CSV -> (lag, rho, band) CSV and JSON
sweep     returns CSV(s) -> significance-count table over power exponents
fit       returns CSV -> FitResult JSON and text report
search    returns CSV -> ranked FitResults over an order/distribution grid
simulate  preset or parameter file -> simulated returns CSV
diagnose  returns CSV + fit JSON -> standardized residuals, sweep, periodicity

Every run writes ``<command>.manifest.json`` beside its outputs with input
digests, the resolved configuration, library versions and output digests.
File names in manifests are relative to the output directory, so reruns on
identical inputs reproduce every byte.

Exit status: 0 ok, 2 usage, 3 data error, 4 non-convergence, 5 internal fault.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from . import __version__
from .aparch import PRESETS, DistSpec, half_life, classify_nested, params_from_json, params_to_json, simulate
from .errors import ConvergenceError, DataError
from .estimator import (
    FitResult,
    ModelSearchError,
    OptimizerConfig,
    delta_power_tests,
    fit,
    format_report,
    model_search,
    standardized_residuals,
)
from .ingest import FormatDescriptor, IngestConfig, ingest
from .longmem import (
    DEFAULT_KS,
    acf,
    periodicity_profile,
    power_sweep,
    write_sweep_csv,
    write_sweep_json,
)
from .series import PowerTransform, ReturnSeries, load_calendar, moments, power_transform

logger = logging.getLogger("aparchlm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NONCONVERGENCE = 4
EXIT_INTERNAL = 5

OUTPUT_ENV = "APARCHLM_OUTPUT_DIR"


class UsageError(Exception):
    """Bad flag combination detected after argparse succeeded."""


class NonConvergence(Exception):
    """Outputs were written but the optimiser did not converge."""


# -- argument parsing --------------------------------------------------------------


def _order(text: str) -> tuple[int, int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"order must be p,q,ar,ma integers, got {text!r}") from None
    if len(parts) != 4 or min(parts) < 0:
        raise argparse.ArgumentTypeError(f"order must be four non-negative integers, got {text!r}")
    return parts


def _k_list(text: str) -> tuple[float, ...]:
    try:
        ks = tuple(float(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k-list {text!r}") from None
    if not ks or min(ks) <= 0:
        raise argparse.ArgumentTypeError("k-list needs positive values")
    return ks


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _fixed(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value in {text!r}") from None


def _add_common(p: argparse.ArgumentParser, input_required: bool = True, many: bool = False) -> None:
    if input_required:
        p.add_argument("--input", required=True, nargs="+" if many else None,
                       help="input file" + ("s" if many else ""))
    p.add_argument("--output-dir", default=None,
                   help=f"output directory (default ${OUTPUT_ENV} or the current directory)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dist", choices=("normal", "t", "ged"), default="normal")
    p.add_argument("--shape", type=float, default=None,
                   help="Student-t degrees of freedom or GED shape (starting value when fitting)")


def _add_optimizer(p: argparse.ArgumentParser) -> None:
    p.add_argument("--starts", type=_positive_int, default=3, help="number of starting points (1-3)")
    p.add_argument("--max-iterations", type=_positive_int, default=500)
    p.add_argument("--loglik-rel-tol", type=float, default=1e-8)
    p.add_argument("--grad-tol", type=float, default=1e-5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aparchlm",
        description="Long-memory diagnostics and APARCH estimation for intraday returns.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="tick file to bars and returns")
    _add_common(p)
    p.add_argument("--calendar", required=True, help="bundled name (ftse100, gilt, sterling) or .cfg path")
    p.add_argument("--bar-minutes", type=_positive_int, default=5)
    p.add_argument("--format", default=None, help="JSON format descriptor for the tick file")
    p.add_argument("--roll-rule", choices=("volume-crossover", "none"), default="volume-crossover")
    p.add_argument("--drop-overnight", action="store_true", help="drop returns spanning two sessions")
    p.add_argument("--contract-id", default="")

    p = sub.add_parser("acf", help="sample autocorrelations of a power-transformed series")
    _add_common(p)
    p.add_argument("--max-lag", type=_positive_int, default=None)
    p.add_argument("--k", type=float, default=None, help="power exponent; omit for the raw series")
    p.add_argument("--mode", choices=("absolute", "squared"), default="absolute")

    p = sub.add_parser("sweep", help="significant-lag counts over power exponents")
    _add_common(p, many=True)
    p.add_argument("--k-list", type=_k_list, default=DEFAULT_KS)
    p.add_argument("--max-lag", type=_positive_int, default=None)
    p.add_argument("--labels", nargs="+", default=None, help="row labels, one per input")

    p = sub.add_parser("fit", help="fit an ARMA-APARCH model")
    _add_common(p)
    p.add_argument("--order", type=_order, default=(1, 1, 0, 0), help="p,q,ar,ma (default 1,1,0,0)")
    _add_model(p)
    p.add_argument("--fix", type=_fixed, action="append", default=[],
                   help="hold a parameter fixed, e.g. --fix delta=2 --fix gamma[1]=0")
    _add_optimizer(p)

    p = sub.add_parser("search", help="fit and rank an order/distribution grid")
    _add_common(p)
    p.add_argument("--order", type=_order, nargs="+", default=[(1, 1, 0, 0)], dest="orders")
    p.add_argument("--dists", nargs="+", choices=("normal", "t", "ged"), default=["normal", "t"])
    p.add_argument("--workers", type=_positive_int, default=1)
    _add_optimizer(p)

    p = sub.add_parser("simulate", help="simulate returns from an ARMA-APARCH model")
    _add_common(p, input_required=False)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), default=None)
    src.add_argument("--params", default=None, help="parameter JSON (as written by fit or simulate)")
    _add_model(p)
    p.add_argument("--n", type=_positive_int, default=50000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=1000)

    p = sub.add_parser("diagnose", help="residual long-memory diagnostics for a fitted model")
    _add_common(p)
    p.add_argument("--fit", required=True, help="FitResult JSON written by the fit command")
    p.add_argument("--k-list", type=_k_list, default=DEFAULT_KS)
    p.add_argument("--max-lag", type=_positive_int, default=None)
    p.add_argument("--calendar", default=None, help="calendar giving intervals per day")
    p.add_argument("--bar-minutes", type=_positive_int, default=5)
    p.add_argument("--days", type=_positive_int, default=5, help="trading days in the periodicity profile")
    return parser


# -- output and manifest helpers ---------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict[str, str]:
    import numba
    import scipy

    return {
        "aparchlm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class _Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, out_dir: Path, config: dict):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.inputs: list[dict] = []
        self.outputs: list[str] = []
        self.seed: int | None = None

    def add_input(self, path: str | Path, role: str) -> Path:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"cannot read {role} file {p}")
        self.inputs.append({"role": role, "name": p.name, "sha256": _sha256(p)})
        return p

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self, status: str) -> Path:
        manifest = {
            "command": self.command,
            "status": status,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "versions": _versions(),
            "outputs": [{"name": n, "sha256": _sha256(self.out_dir / n)} for n in self.outputs],
        }
        path = self.out_dir / f"{self.command}.manifest.json"
        _write_json(path, manifest)
        return path


def _config_of(args: argparse.Namespace) -> dict:
    skip = {"output_dir", "verbose", "input", "fit", "params", "format", "func"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, list):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[key] = value
    return out


def _dist(args: argparse.Namespace) -> DistSpec:
    return DistSpec(args.dist, args.shape)


def _optimizer(args: argparse.Namespace) -> OptimizerConfig:
    if args.starts > 3:
        raise UsageError("--starts accepts at most 3 preset starting points")
    return OptimizerConfig(
        max_iterations=args.max_iterations,
        loglik_rel_tol=args.loglik_rel_tol,
        grad_tol=args.grad_tol,
        n_starts=args.starts,
    )


def _read_returns(run: _Run, path: str, intervals_per_day: int = 1) -> ReturnSeries:
    return ReturnSeries.read_csv(run.add_input(path, "returns"), intervals_per_day)


# -- commands ---------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, run: _Run) -> str:
    calendar = load_calendar(args.calendar)
    fmt = FormatDescriptor.from_json(run.add_input(args.format, "format")) if args.format else None
    config = IngestConfig(calendar, bar_width=args.bar_minutes, roll_rule=args.roll_rule)
    result = ingest(run.add_input(args.input, "ticks"), config, fmt,
                    drop_overnight=args.drop_overnight, contract_id=args.contract_id)
    result.bars.to_csv(run.path("bars.csv"))
    result.returns.to_csv(run.path("returns.csv"))
    _write_json(run.path("ingest_report.json"), result.report)
    return "ok"


def cmd_acf(args: argparse.Namespace, run: _Run) -> str:
    series = _read_returns(run, args.input)
    x = series.values if args.k is None else power_transform(series, PowerTransform(args.k, args.mode))
    result = acf(x, args.max_lag)
    result.to_csv(run.path("acf.csv"))
    _write_json(run.path("acf.json"), {
        "n": result.n,
        "band": result.band,
        "k": args.k,
        "mode": args.mode if args.k is not None else None,
        "lags": result.lags.tolist(),
        "rho": result.rho.tolist(),
    })
    return "ok"


def cmd_sweep(args: argparse.Namespace, run: _Run) -> str:
    labels = args.labels or [Path(p).stem for p in args.input]
    if len(labels) != len(args.input):
        raise UsageError("--labels needs one label per input")
    tables = {}
    for label, path in zip(labels, args.input):
        tables[label] = power_sweep(_read_returns(run, path), args.k_list, args.max_lag)
    write_sweep_csv(run.path("sweep.csv"), tables)
    write_sweep_json(run.path("sweep.json"), tables)
    return "ok"


def _fit_payload(result: FitResult) -> dict:
    payload = result.to_dict()
    payload["delta_tests"] = delta_power_tests(result)
    payload["half_life"] = half_life(result.params) if result.params.persistence > 0 else None
    payload["nested_model"] = classify_nested(result.params)
    return payload


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_fit(args: argparse.Namespace, run: _Run) -> str:
    series = _read_returns(run, args.input)
    result = fit(series, args.order, _dist(args), _optimizer(args), dict(args.fix) or None)
    _write_json(run.path("fit.json"), _json_safe(_fit_payload(result)))
    run.path("fit_report.txt").write_text(format_report(result, Path(args.input).stem))
    if not result.converged:
        raise NonConvergence(f"optimiser did not converge: {result.messages}")
    return "ok"


def cmd_search(args: argparse.Namespace, run: _Run) -> str:
    series = _read_returns(run, args.input)
    status = "ok"
    try:
        ranked = model_search(series, args.orders, args.dists, _optimizer(args), args.workers)
    except ModelSearchError as exc:
        ranked, status = exc.results, "non-converged"
        logger.error("%s", exc)
    fields = ["rank", "order", "dist", "loglik", "k_params", "aic_total", "bic_total",
              "aic_per_obs", "bic_per_obs", "converged"]
    with open(run.path("search.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for i, res in enumerate(ranked, start=1):
            w.writerow([i, ",".join(map(str, res.order)), res.dist.family, repr(res.loglik), res.k_params,
                        repr(res.aic_total), repr(res.bic_total), repr(res.aic_per_obs),
                        repr(res.bic_per_obs), res.converged])
    _write_json(run.path("search.json"), _json_safe([_fit_payload(r) for r in ranked]))
    report = "\n".join(format_report(r, f"rank {i}") for i, r in enumerate(ranked, start=1))
    run.path("search_report.txt").write_text(report)
    if status != "ok":
        raise NonConvergence("no model in the grid converged")
    return status


def cmd_simulate(args: argparse.Namespace, run: _Run) -> str:
    run.seed = args.seed
    if args.params:
        params, dist = params_from_json(run.add_input(args.params, "params").read_text())
        if args.shape is not None or args.dist != "normal":
            dist = _dist(args)
    else:
        params = PRESETS[args.preset or "gilt"]
        dist = _dist(args)
    if dist.n_shape:
        dist.require_shape()
    series = simulate(params, dist, args.n, seed=args.seed, burn_in=args.burn_in)
    series.to_csv(run.path("returns.csv"))
    run.path("params.json").write_text(params_to_json(params, dist))
    return "ok"


def _intervals_per_day(args: argparse.Namespace, series: ReturnSeries) -> int:
    if args.calendar:
        return load_calendar(args.calendar).intervals_per_day(args.bar_minutes)
    days = series.timestamps.astype("datetime64[D]")
    _, counts = np.unique(days, return_counts=True)
    return int(np.median(counts))


def cmd_diagnose(args: argparse.Namespace, run: _Run) -> str:
    series = _read_returns(run, args.input)
    result = FitResult.read_json(run.add_input(args.fit, "fit"))
    z = standardized_residuals(series, result)
    ipd = _intervals_per_day(args, series)
    run.config["intervals_per_day"] = ipd

    sweep = power_sweep(z, args.k_list, args.max_lag)
    length = ipd * args.days
    if length >= z.n:
        raise DataError(f"periodicity profile needs {length} lags but only {z.n} residuals exist")
    profile = periodicity_profile(acf(power_transform(z, PowerTransform(1.0)), length), ipd, args.days)

    z.to_csv(run.path("residuals.csv"))
    write_sweep_csv(run.path("residual_sweep.csv"), {"residuals": sweep})
    write_sweep_json(run.path("residual_sweep.json"), {"residuals": sweep})
    profile.to_csv(run.path("periodicity.csv"))
    _write_json(run.path("periodicity.json"), {
        "intervals_per_day": ipd,
        "days": args.days,
        "band": profile.band,
        "lags": profile.lags.tolist(),
        "rho": profile.rho.tolist(),
        "day_boundaries": profile.day_boundaries.tolist(),
    })
    _write_json(run.path("residual_moments.json"), moments(z))
    return "ok"


COMMANDS = {
    "ingest": cmd_ingest,
    "acf": cmd_acf,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "search": cmd_search,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    run = _Run(args.command, out_dir, _config_of(args))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        status = COMMANDS[args.command](args, run)
        run.finish(status)
        return EXIT_OK
    except UsageError as exc:
        print(f"aparchlm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergence as exc:
        run.finish("non-converged")
        print(f"aparchlm {args.command}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ConvergenceError as exc:
        print(f"aparchlm {args.command}: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (DataError, OSError) as exc:
        print(f"aparchlm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort fault report
        logger.debug("internal fault", exc_info=True)
        print(f"aparchlm {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
