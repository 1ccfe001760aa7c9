"""
Sweep runner: one full generate -> train -> evaluate cycle per axis value.

Cells are isolated (own sub-seed, own output directory) and may run in
parallel; the aggregated table is ordered by axis value.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from rnnrecon.app.exceptions import ConfigError, ReconError
from rnnrecon.app.schemas.config import ExperimentConfig, SweepSpec, SweepValue
from rnnrecon.app.schemas.report import SweepRow
from rnnrecon.app.services import datasets
from rnnrecon.app.services.experiment import ExperimentService


logger = logging.getLogger(__name__)

SWEEP_FILE = "sweep.csv"


def cell_seed(seed: int, index: int) -> int:
    """Sub-seed of sweep cell ``index``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cell_name(axis: str, value: SweepValue) -> str:
    return f"{axis}_{value}" if isinstance(value, str) else f"{axis}_{value:g}"


def _run_cell(args: Tuple[ExperimentConfig, SweepSpec, int, SweepValue, str]) -> SweepRow:
    base, spec, index, value, out_root = args
    seed = cell_seed(base.seed, index)
    try:
        config = base.with_overrides(seed=seed, output_dir=str(Path(out_root) / cell_name(spec.axis, value)),
                                     **{spec.axis: value})
        report = ExperimentService(config).run(config.output_dir)
    except (ReconError, ValidationError) as exc:
        logger.warning("sweep cell %s=%s failed: %s", spec.axis, value, exc)
        return SweepRow(axis=spec.axis, value=value, status="failed", seed=seed, error=str(exc))
    return SweepRow(
        axis=spec.axis,
        value=value,
        status="ok",
        seed=seed,
        best_epoch=report.best_epoch,
        train_rmse=report.train_rmse,
        test_rmse=report.test_rmse,
        test_rmse_per_step=report.test_rmse_per_step,
        baseline_rmse=report.baseline_rmse,
    )


def run_sweep(base: ExperimentConfig, spec: SweepSpec, out_dir: Union[str, Path], jobs: int = 1) -> List[SweepRow]:
    """
    Run every cell of the sweep and write the aggregated CSV.

    Args:
        base: Configuration the axis value is applied to
        spec: Axis and its values
        out_dir: Root directory; each cell writes into its own subdirectory
        jobs: Cells run concurrently

    Returns:
        Rows ordered by axis value; failed cells are kept with their error
    """
    if spec.experiment is not None and spec.experiment != base.experiment:
        raise ConfigError(f"axis '{spec.axis}' sweeps {spec.experiment} experiments, not {base.experiment}")
    out_dir = datasets.ensure_dir(out_dir)
    cells = [(base, spec, index, value, str(out_dir)) for index, value in enumerate(spec.values)]
    logger.info("sweeping %s over %d values with %d worker(s)", spec.axis, len(cells), jobs)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            rows = list(executor.map(_run_cell, cells))
    else:
        rows = [_run_cell(cell) for cell in cells]

    rows.sort(key=lambda row: row.value)
    frame = pd.DataFrame([row.model_dump() for row in rows])
    datasets.write_frame(frame, out_dir / SWEEP_FILE)
    failed = sum(row.status == "failed" for row in rows)
    logger.info("sweep finished: %d ok, %d failed", len(rows) - failed, failed)
    return rows
