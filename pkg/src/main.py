#!/usr/bin/env python3
"""simpd: discrete-event simulator for unified, disaggregated and semi-PD LLM serving.

Usage Examples:
  # One run; reports go to --out (or SIMPD_OUTPUT_DIR)
  python src/main.py run scenarios/semi_pd_dynamic.yaml --out results/dyn

  # Rate sweep with the goodput at 90% attainment
  python src/main.py sweep scenarios/unified_pf.yaml --rates 2,4,6,8

  # Merge several engines into one table plus plot-ready files
  python src/main.py compare scenarios/unified_pf.yaml scenarios/semi_pd.yaml --rates 2,4,6

  # Refit the latency model offline from a controller log
  python src/main.py fit results/dyn/controller.csv

  # Write a trace CSV from a preset
  python src/main.py trace gen --preset sharegpt-like --rate 4 --count 1000 --out trace.csv

Exit status: 0 on success, 1 for invalid input, 2 when a run fails.
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

# Add src to Python path
sys.path.insert(0, str(Path(__file__).parent))

from analysis.reports import read_controller_csv  # noqa: E402
from control.fitting import Observation, fit_latency_model  # noqa: E402
from core.config import Settings  # noqa: E402
from harness.runner import ScenarioRunner  # noqa: E402
from harness.scenario import ScenarioError, load_scenario  # noqa: E402
from harness.sweep import compare, goodput_of, sweep, write_compare, write_sweep  # noqa: E402
from workload.presets import PRESETS, preset_params  # noqa: E402
from workload.trace import TraceFormatError, generate_trace, write_trace  # noqa: E402

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the invalid-input status."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _rates(text: str) -> list[float]:
    try:
        rates = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid rate list {text!r}") from e
    if not rates or any(r <= 0 for r in rates):
        raise argparse.ArgumentTypeError("rates must be a comma-separated list of positive numbers")
    return rates


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simpd", description="semi-PD LLM serving simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one scenario")
    run.add_argument("config", help="Scenario file (.yaml or .toml)")
    run.add_argument("--seed", type=int, help="Override the scenario seed")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--rate", type=float, help="Override the workload rate")

    sw = sub.add_parser("sweep", help="Run a scenario at several rates")
    sw.add_argument("config")
    sw.add_argument("--rates", type=_rates, help="Comma-separated rates (default: the scenario's sweep.rates)")
    sw.add_argument("--threshold", type=float, help="Attainment threshold for goodput")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--out")
    sw.add_argument("--workers", type=int, help="Parallel runs (default: SIMPD_MAX_WORKERS)")

    cmp_ = sub.add_parser("compare", help="Merge summaries of several scenarios")
    cmp_.add_argument("configs", nargs="+")
    cmp_.add_argument("--rates", type=_rates)
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out")
    cmp_.add_argument("--workers", type=int)

    fit = sub.add_parser("fit", help="Fit the latency model from a controller log")
    fit.add_argument("controller_csv")

    trace = sub.add_parser("trace", help="Trace utilities")
    trace_sub = trace.add_subparsers(dest="trace_command", required=True)
    gen = trace_sub.add_parser("gen", help="Generate a trace CSV")
    source = gen.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=sorted(PRESETS))
    source.add_argument("--config", help="Take the workload section of a scenario")
    gen.add_argument("--rate", type=float, help="Total requests per second")
    gen.add_argument("--count", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    runner = ScenarioRunner(args.config, out_dir=args.out, seed=args.seed)
    result = runner.run(args.rate)
    summary = result.summary
    print(
        f"{summary['engine']} rate={summary['rate']:g} attainment={summary['attainment']:.3f} "
        f"p90_ttft={summary['p90_ttft']:.4f}s p90_tpot={summary['p90_tpot']:.4f}s -> {runner.out_dir}"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_scenario(args.config, seed=args.seed)
    rates = args.rates or config.sweep.rates
    if not rates:
        raise ScenarioError(["sweep.rates: give --rates or set sweep.rates in the scenario"], args.config)
    threshold = args.threshold if args.threshold is not None else config.sweep.threshold
    if threshold is None:
        threshold = Settings.GOODPUT_THRESHOLD
    results = sweep(config, rates, args.workers)
    out = Path(args.out or config.output_dir or Settings.OUTPUT_DIR)
    path = write_sweep(results, out)
    for r in results:
        print(f"rate={r.rate:g} attainment={r.summary['attainment']:.3f} p90_tpot={r.summary['p90_tpot']:.4f}s")
    print(f"goodput@{threshold:g} = {goodput_of(results, threshold):g} req/s per GPU ({path})")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    configs = [load_scenario(path, seed=args.seed) for path in args.configs]
    try:
        merged = compare(configs, args.rates, args.workers)
    except ValueError as e:
        print(f"compare: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or Settings.OUTPUT_DIR)
    written = write_compare(merged, out)
    print(merged.to_string(index=False))
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    frame = read_controller_csv(args.controller_csv)
    history = [
        Observation(
            int(row.window),
            float(row.x_norm),
            float(row.y_norm),
            None if pd.isna(row.ttft_p) else float(row.ttft_p),
            None if pd.isna(row.tpot_p) else float(row.tpot_p),
        )
        for row in frame.itertuples(index=False)
    ]
    model = fit_latency_model(history)
    if model is None:
        print("fit: need at least two distinct shares on each side", file=sys.stderr)
        return EXIT_INVALID
    print(f"TTFT = {model.a1:.6g} / (x' - {model.lam:g}) + {model.b1:.6g}   R^2 = {model.r2_ttft:.4f}")
    print(f"TPOT = {model.a2:.6g} / y' + {model.b2:.6g}   R^2 = {model.r2_tpot:.4f}")
    if model.degraded:
        print("warning: a negative slope was clamped to 0")
    return EXIT_OK


def cmd_trace_gen(args: argparse.Namespace) -> int:
    if args.config:
        config = load_scenario(args.config, seed=args.seed)
        rate = args.rate or config.workload.rate
        if rate is None:
            raise ScenarioError(["workload.rate: give --rate or set workload.rate"], args.config)
        params = config.workload.trace_params(rate, args.seed).model_copy(update={"count": args.count})
    else:
        if args.rate is None:
            print("trace gen: --rate is required with --preset", file=sys.stderr)
            return EXIT_INVALID
        params = preset_params(args.preset, args.rate, args.count, args.seed)
    requests = generate_trace(params)
    write_trace(requests, args.out)
    print(f"wrote {len(requests)} requests to {args.out}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "fit": cmd_fit,
}


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the simpd command."""
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else Settings.LOG_LEVEL,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )

    handler = cmd_trace_gen if args.command == "trace" else COMMANDS[args.command]
    try:
        return handler(args)
    except (ScenarioError, ValidationError, TraceFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
