"""Command-line entry point for kvcomm.

Subcommands:
    run      Process a workload and write transcript, timings and reports.
    sweep    Re-run one workload over a list of gamma or capacity values.
    analyze  Run one analysis experiment and write CSV and JSON reports.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
runtime contract violations.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

from kvcomm import __version__
from kvcomm.analysis.experiments import (
    EXPERIMENTS,
    kv_proximity_experiment,
    offset_proximity_experiment,
    offset_variance_experiment,
)
from kvcomm.analysis.reports import (
    approximation_error_profile,
    profile_rows,
    savings_report,
    write_csv,
    write_summary,
    write_sweep_csv,
)
from kvcomm.anchors.dump import dump_pools
from kvcomm.config import WorkloadConfig, get_settings, load_workload_config
from kvcomm.errors import ConfigError, ContractError
from kvcomm.model.transformer import Transformer
from kvcomm.model.weights import dump_weights
from kvcomm.orchestrator.runner import KVCommSystem
from kvcomm.state.machine import TurnSink
from kvcomm.state.storage import TranscriptStorage

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3

SWEEP_PARAMETERS = ("gamma", "capacity")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def setup_logging(level: str) -> None:
    """Configure root logging in the project's format."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with run, sweep and analyze subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="Workload JSON")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--seed", type=int, help="Seed override")
    common.add_argument("--threads", type=int, help="Worker threads (1 = serial)")
    common.add_argument("--log-level", choices=LOG_LEVELS, help="Logging level")
    common.add_argument(
        "--shadow-dense",
        action="store_true",
        help="Also prefill reused prompts densely and record the error",
    )
    common.add_argument(
        "--dump-tensors",
        action="store_true",
        help="Write anchor tensors and model weights next to the reports",
    )

    parser = argparse.ArgumentParser(
        prog="kvcomm", description="Anchor-based KV-cache sharing between agents"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="Run a workload")

    sweep = sub.add_parser("sweep", parents=[common], help="Sweep gamma or capacity")
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sweep.add_argument("--values", nargs="*", default=[], help="Values to sweep")

    analyze = sub.add_parser("analyze", parents=[common], help="Run an experiment")
    analyze.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    return parser


def _threads(args: argparse.Namespace) -> int:
    threads = args.threads if args.threads is not None else get_settings().threads
    if threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {threads}")
    return threads


def _out_dir(args: argparse.Namespace, config: WorkloadConfig) -> Path:
    return args.out or Path(config.output_dir)


def _resolved(
    config: WorkloadConfig, args: argparse.Namespace, threads: int
) -> dict[str, Any]:
    return {
        **config.to_dict(),
        "threads": threads,
        "shadow_dense": args.shadow_dense,
        "command": args.command,
    }


def build_system(
    config: WorkloadConfig,
    model: Transformer,
    threads: int = 1,
    shadow_dense: bool = False,
    sink: Optional[TurnSink] = None,
) -> KVCommSystem:
    """Create a KVCommSystem for a resolved workload."""
    return KVCommSystem(
        model,
        config.build_graph(),
        gamma=config.gamma,
        capacity=config.capacity,
        max_new_tokens=config.max_new_tokens,
        mode=config.approximation,
        reuse_enabled=config.reuse_enabled,
        condition_default=config.condition_default,
        threads=threads,
        shadow_dense=shadow_dense,
        sink=sink,
    )


def cmd_run(args: argparse.Namespace) -> int:
    """Run a workload; write transcript, timings, summary and pool dump."""
    config = load_workload_config(args.config, args.seed)
    threads = _threads(args)
    out = _out_dir(args, config)
    model = Transformer.from_config(config.model)

    storage = TranscriptStorage(out)
    storage.write_header(config.to_dict())
    system = build_system(config, model, threads, args.shadow_dense, sink=storage)
    result = system.run_workload(config.requests)

    results: dict[str, Any] = {
        "metrics": result.metrics,
        "savings": savings_report(result.turns, system),
    }
    if args.shadow_dense:
        results["approximation_error"] = approximation_error_profile(
            system.shadow_records
        )
    resolved = _resolved(config, args, threads)
    write_summary(out / "summary.json", resolved, results)
    dump_pools(system.pools, out, dump_tensors=args.dump_tensors, config=resolved)
    if args.dump_tensors:
        dump_weights(model.weights, out / "weights.kvc1")
    logger.info(
        "Run finished: reuse rate %.3f, outputs in %s",
        result.metrics["reuse_rate"],
        out,
    )
    return EXIT_OK


def _sweep_values(param: str, raw: Sequence[str]) -> list[float | int]:
    if not raw:
        raise ConfigError("--values must list at least one value")
    values: list[float | int] = []
    for text in raw:
        try:
            value: float | int = float(text) if param == "gamma" else int(text)
        except ValueError as e:
            raise ConfigError(f"Invalid {param} value: {text!r}") from e
        if param == "gamma" and not 0.0 <= value <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {value}")
        if param == "capacity" and value < 0:
            raise ConfigError(f"capacity must be >= 0, got {value}")
        values.append(value)
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run the same request stream once per value and tabulate reuse."""
    config = load_workload_config(args.config, args.seed)
    values = _sweep_values(args.param, args.values)
    threads = _threads(args)
    out = _out_dir(args, config)
    model = Transformer.from_config(config.model)

    rows = []
    for value in values:
        swept = replace(config, **{args.param: value})
        system = build_system(swept, model, threads, args.shadow_dense)
        metrics = system.run_workload(swept.requests).metrics
        row = {
            "parameter": args.param,
            "value": value,
            "reuse_rate": metrics["reuse_rate"],
            "prefilled_tokens": metrics["prefilled_tokens"],
            "reused_tokens": metrics["reused_tokens"],
            "pool_bytes": metrics["pool_bytes"],
        }
        logger.info(
            "Sweep %s=%s: reuse rate %.3f", args.param, value, row["reuse_rate"]
        )
        rows.append(row)

    write_sweep_csv(out / f"sweep_{args.param}.csv", rows)
    write_summary(
        out / f"sweep_{args.param}.json",
        _resolved(config, args, threads),
        {"parameter": args.param, "rows": rows},
    )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    """Run one analysis experiment and write ``<experiment>.csv``/``.json``."""
    config = load_workload_config(args.config, args.seed)
    threads = _threads(args)
    out = _out_dir(args, config)
    model = Transformer.from_config(config.model)
    experiment = replace(config.experiment, threads=threads)
    name = args.experiment

    results: dict[str, Any] = {"experiment": name}
    if name == "proximity":
        rows = kv_proximity_experiment(model, experiment).rows()
    elif name == "offset-proximity":
        rows = offset_proximity_experiment(model, experiment).rows()
    elif name == "offset-variance":
        rows = offset_variance_experiment(model, experiment).rows()
    else:
        system = build_system(config, model, threads, shadow_dense=True)
        result = system.run_workload(config.requests)
        profile = approximation_error_profile(system.shadow_records)
        rows = profile_rows(profile)
        results["profile"] = profile
        results["reuse_rate"] = result.metrics["reuse_rate"]
    results["rows"] = rows

    resolved = {**_resolved(config, args, threads), "experiment": experiment.to_dict()}
    write_csv(out / f"{name}.csv", rows)
    write_summary(out / f"{name}.json", resolved, results)
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "analyze": cmd_analyze}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch the subcommand and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        setup_logging(args.log_level or get_settings().log_level)
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error("Configuration error [%s]: %s", e.error_type, e)
        return EXIT_CONFIG
    except ContractError as e:
        logger.error("Contract violation [%s]: %s", e.error_type, e)
        return EXIT_CONTRACT


if __name__ == "__main__":
    raise SystemExit(main())
