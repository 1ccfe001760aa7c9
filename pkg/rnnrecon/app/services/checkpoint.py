"""
Versioned checkpoint container: an .npz archive of float64 arrays plus a
JSON header (format version, config echo, epoch, optimizer scalars, metadata).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from rnnrecon.app.exceptions import DataSchemaError
from rnnrecon.app.models.rnn import AdamState, RnnParams, check_params
from rnnrecon.app.schemas.config import ExperimentConfig


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    params: RnnParams
    config: ExperimentConfig
    epoch: int
    optimizer: Optional[AdamState] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    header = {
        "format_version": FORMAT_VERSION,
        "config": checkpoint.config.model_dump(mode="json"),
        "epoch": checkpoint.epoch,
        "metadata": checkpoint.metadata,
        "adam": None,
    }
    arrays = {f"param/{name}": value for name, value in checkpoint.params.as_dict().items()}
    if checkpoint.optimizer is not None:
        opt = checkpoint.optimizer
        header["adam"] = {"step_count": opt.step_count, "beta1": opt.beta1, "beta2": opt.beta2,
                          "epsilon": opt.epsilon}
        arrays.update({f"adam_m/{name}": value for name, value in opt.m.as_dict().items()})
        arrays.update({f"adam_v/{name}": value for name, value in opt.v.as_dict().items()})

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as handle:
            np.savez(handle, header=np.array(json.dumps(header)), **arrays)
    except OSError as exc:
        raise DataSchemaError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("saved checkpoint %s (epoch %d)", path, checkpoint.epoch)
    return path


def _group(archive, prefix: str) -> Dict[str, np.ndarray]:
    return {key[len(prefix):]: archive[key] for key in archive.files if key.startswith(prefix)}


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load and check a checkpoint; parameter shapes must match its own config."""
    path = Path(path)
    if not path.is_file():
        raise DataSchemaError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            params = RnnParams.from_dict(_group(archive, "param/"))
            m_named, v_named = _group(archive, "adam_m/"), _group(archive, "adam_v/")
    except (OSError, ValueError, KeyError) as exc:
        raise DataSchemaError(f"unreadable checkpoint {path}: {exc}") from exc

    if header.get("format_version") != FORMAT_VERSION:
        raise DataSchemaError(f"checkpoint format {header.get('format_version')} is not supported")
    config = ExperimentConfig.model_validate(header["config"])
    check_params(params, config.rnn)

    optimizer = None
    if header.get("adam"):
        optimizer = AdamState(m=RnnParams.from_dict(m_named), v=RnnParams.from_dict(v_named), **header["adam"])
    return Checkpoint(params=params, config=config, epoch=header["epoch"], optimizer=optimizer,
                      metadata=header.get("metadata", {}))
