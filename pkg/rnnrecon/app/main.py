"""
Command-line entry point for recurrent reconstruction experiments.

Subcommands:
    generate       write a dataset (orbits, trajectories or a hydro record)
    train          two-pass training, checkpoint and run report
    eval           score a checkpoint on a dataset
    sweep          one run per value of a data or network setting
    calibrate      GR4J grid search on a hydro record
    verify-report  recompute every score of a run report from its artifacts

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.
"""

import argparse
import logging
import sys
from typing import List, Optional

from rnnrecon import __version__
from rnnrecon.app.api import commands
from rnnrecon.app.exceptions import ConfigError
from rnnrecon.app.schemas.config import SWEEP_AXES


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class UsageError(ConfigError):
    """Malformed command line."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit code 1."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _common_options() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="Experiment config file (JSON)")
    common.add_argument("--seed", type=int, default=None, help="Experiment seed")
    common.add_argument("--out", default=None, help="Output directory")
    common.add_argument("--jobs", type=int, default=1, help="Worker processes")
    common.add_argument("--desk", action="store_true", help="Desk-scale preset")
    common.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    return common


def _data_options() -> argparse.ArgumentParser:
    data = CliParser(add_help=False)
    data.add_argument("--variant", default=None, help="Alternative preset (lorenz: figure, wide; hydro: table)")
    data.add_argument("--eta", type=int, default=None, help="Lorenz corruption level")
    data.add_argument("--n-orbits", dest="n_orbits", type=int, default=None, help="Lorenz orbit count (80%% train)")
    data.add_argument("--sigma", type=float, default=None, help="Swarm position noise")
    data.add_argument("--window", type=int, default=None, help="Hydro window length")
    return data


def build_parser() -> argparse.ArgumentParser:
    common, data = _common_options(), _data_options()
    parser = CliParser(prog="rnnrecon", description="Recurrent reconstruction of erroneous and noisy dynamics")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", parents=[common, data], help="Write a dataset")
    generate.add_argument("experiment", nargs="?", choices=["lorenz", "swarm", "hydro"])
    generate.set_defaults(handler=commands.cmd_generate)

    train = sub.add_parser("train", parents=[common, data], help="Train and report")
    train.add_argument("experiment", nargs="?", choices=["lorenz", "swarm", "hydro"])
    train.add_argument("--data", required=True, help="Dataset directory")
    train.set_defaults(handler=commands.cmd_train)

    evaluate = sub.add_parser("eval", parents=[common], help="Score a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True, help="Dataset directory")
    evaluate.set_defaults(handler=commands.cmd_eval)

    sweep = sub.add_parser("sweep", parents=[common, data], help="Run one cell per axis value")
    sweep.add_argument("axis", choices=list(SWEEP_AXES))
    sweep.add_argument("--values", nargs="+", default=None, help="Axis values (default: published list)")
    sweep.add_argument("--experiment", choices=["lorenz", "swarm", "hydro"], default=None,
                       help="Experiment of a network axis sweep")
    sweep.set_defaults(handler=commands.cmd_sweep)

    calibrate = sub.add_parser("calibrate", parents=[common], help="GR4J grid calibration")
    calibrate.add_argument("--data", required=True, help="Directory holding hydro.csv")
    calibrate.add_argument("--points", type=int, default=None, help="Grid points")
    calibrate.set_defaults(handler=commands.cmd_calibrate)

    verify = sub.add_parser("verify-report", parents=[common], help="Recompute report scores")
    verify.add_argument("run_dir")
    verify.set_defaults(handler=commands.cmd_verify_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return commands.report_error(exc)
    configure_logging(args.verbose)
    if args.jobs < 1:
        return commands.report_error(UsageError("--jobs must be at least 1"))
    return commands.run_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
