"""
Command handlers for the CLI subcommands.

Each handler takes the parsed arguments, does its work through the services
and returns a JSON-serialisable summary. ``run_command`` turns package
errors into an ErrorReport and an exit code.
"""

import json
import logging
import sys
from argparse import Namespace
from pathlib import Path
from typing import Any, Callable, Dict

import pandas as pd
from pydantic import ValidationError

from rnnrecon.app.exceptions import (
    ConfigError,
    DataSchemaError,
    DivergenceError,
    NumericOverflowError,
    ParameterRangeError,
    ReconError,
    ShapeMismatchError,
    WindowCoverageError,
)
from rnnrecon.app.models.gr4j import calibrate_grid
from rnnrecon.app.schemas.config import DEFAULT_SWEEPS, GR4J_PARAM_NAMES, ExperimentConfig, SweepSpec, preset
from rnnrecon.app.schemas.report import CalibrationRow, ErrorReport
from rnnrecon.app.services import datasets
from rnnrecon.app.services.experiment import (
    DATA_FILES,
    ExperimentService,
    evaluate_checkpoint,
    read_config,
    verify_report,
    write_config,
)
from rnnrecon.app.services.sweep import SWEEP_FILE, run_sweep


logger = logging.getLogger(__name__)

Summary = Dict[str, Any]

EXIT_CODES = (
    ((ConfigError, ParameterRangeError, ValidationError), 1),
    ((ShapeMismatchError, DataSchemaError, WindowCoverageError, OSError), 2),
    ((NumericOverflowError, DivergenceError), 3),
)


def exit_code_for(exc: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 1


def resolve_config(args: Namespace, experiment: str = None) -> ExperimentConfig:
    """Config file or preset, then the command-line overrides."""
    experiment = experiment or getattr(args, "experiment", None)
    if args.config:
        config = read_config(args.config)
        if experiment and experiment != config.experiment:
            raise ConfigError(f"config file describes a {config.experiment} experiment, not {experiment}")
    elif experiment:
        config = preset(experiment, desk=args.desk, variant=getattr(args, "variant", None), seed=args.seed or 0)
    else:
        raise ConfigError("name an experiment or pass --config")
    return config.with_overrides(
        seed=args.seed,
        eta=getattr(args, "eta", None),
        sigma=getattr(args, "sigma", None),
        window=getattr(args, "window", None),
        n_orbits=getattr(args, "n_orbits", None),
    )


def output_dir(args: Namespace, config: ExperimentConfig, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(config.output_dir) / config.experiment / command


def cmd_generate(args: Namespace) -> Summary:
    config = resolve_config(args)
    out = output_dir(args, config, "data")
    manifest = ExperimentService(config, jobs=args.jobs).generate(out)
    return {"status": "success", "output_dir": str(out), "files": manifest.files, "counts": manifest.counts}


def cmd_train(args: Namespace) -> Summary:
    config = resolve_config(args)
    out = output_dir(args, config, "train")
    report = ExperimentService(config, jobs=args.jobs).train(args.data, out)
    return {
        "status": report.status,
        "output_dir": str(out),
        "best_epoch": report.best_epoch,
        "train_rmse": report.train_rmse,
        "test_rmse": report.test_rmse,
        "test_rmse_per_step": report.test_rmse_per_step,
        "baseline_rmse": report.baseline_rmse,
        "wall_clock_seconds": report.wall_clock_seconds,
    }


def cmd_eval(args: Namespace) -> Summary:
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    report = evaluate_checkpoint(args.checkpoint, args.data, out)
    summary = report.model_dump()
    summary["output_dir"] = str(out)
    return summary


def cmd_sweep(args: Namespace) -> Summary:
    spec = SweepSpec(axis=args.axis, values=args.values or DEFAULT_SWEEPS[args.axis])
    config = resolve_config(args, experiment=spec.experiment)
    out = output_dir(args, config, f"sweep_{spec.axis}")
    rows = run_sweep(config, spec, out, jobs=args.jobs)
    return {
        "status": "success",
        "output_dir": str(out),
        "table": str(out / SWEEP_FILE),
        "rows": [row.model_dump() for row in rows],
    }


def cmd_calibrate(args: Namespace) -> Summary:
    config = resolve_config(args, experiment="hydro")
    settings = config.hydro
    out = output_dir(args, config, "calibrate")
    series = datasets.read_hydro(Path(args.data) / DATA_FILES["hydro"]["record"])
    n_points = args.points or settings.calibration_points
    result = calibrate_grid(series, n_points, config.seed, jobs=args.jobs,
                            span=(0, min(settings.n_train_days, len(series))), warmup_days=settings.warmup_days)

    rows = [
        CalibrationRow(rank=rank, rmse=float(result.rmses[index]),
                       **dict(zip(GR4J_PARAM_NAMES, map(float, result.points[index]))))
        for rank, index in enumerate(result.ranking(), start=1)
    ]
    datasets.write_frame(pd.DataFrame([row.model_dump() for row in rows]), out / "calibration.csv")
    datasets.write_json(out / "gr4j_best.json", {"params": result.best.model_dump(), "rmse": result.best_rmse})
    write_config(out, config)
    return {"status": "success", "output_dir": str(out), "best": result.best.model_dump(),
            "best_rmse": result.best_rmse, "points": n_points}


def cmd_verify_report(args: Namespace) -> Summary:
    checked = verify_report(args.run_dir)
    return {"status": "success", "checked": checked}


def run_command(handler: Callable[[Namespace], Summary], args: Namespace) -> int:
    """
    Run a handler, print its summary as JSON on stdout and return the exit code.

    Package, validation and file-system errors print an ErrorReport on stderr instead.
    """
    try:
        summary = handler(args)
    except (ReconError, ValidationError, OSError) as exc:
        logger.error("%s failed: %s", getattr(handler, "__name__", "command"), exc)
        return report_error(exc)
    print(json.dumps(summary, indent=2, default=str))
    return 0


def report_error(exc: BaseException) -> int:
    """Print the ErrorReport of ``exc`` on stderr and return its exit code."""
    code = exit_code_for(exc)
    detail = ""
    if isinstance(exc, ValidationError):
        detail = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
    lines = str(exc).splitlines()
    message = f"{type(exc).__name__}: {lines[0] if lines else ''}"
    print(ErrorReport(message=message, detail=detail, exit_code=code).model_dump_json(indent=2), file=sys.stderr)
    return code
