"""
Pydantic schemas for run reports, sweep tables, manifests and CLI errors.
"""

from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field

from rnnrecon.app.schemas.config import ExperimentConfig


class Manifest(BaseModel):
    """Written next to every generated dataset."""
    experiment: str
    seed: int
    config: ExperimentConfig
    files: Dict[str, str] = Field(..., description="Role -> file name, relative to the dataset directory")
    counts: Dict[str, int] = Field(default_factory=dict, description="Sequence or day counts per role")


class RunReport(BaseModel):
    """Training and evaluation outcome of one run."""
    status: str = Field(default="success")
    experiment: str
    best_epoch: int = Field(..., ge=1, description="Epoch selected by the search pass")
    loss_history: List[float] = Field(..., description="Search-pass training loss per epoch")
    train_rmse: float = Field(..., description="Per-sequence RMSE on the training set (or span)")
    test_rmse: float = Field(..., description="Per-sequence RMSE on the test set (or forecast span)")
    train_rmse_per_step: float = Field(..., description="RMSE with each time-step as one observation")
    test_rmse_per_step: float
    baseline_rmse: Optional[float] = Field(
        default=None, description="Uncorrected input (or calibrated GR4J) against truth on the test set"
    )
    wall_clock_seconds: float = Field(..., ge=0.0)
    config: ExperimentConfig
    artifacts: Dict[str, str] = Field(default_factory=dict, description="Role -> file path, relative to the run")


class EvalReport(BaseModel):
    """Outcome of evaluating a checkpoint on a dataset."""
    status: str = Field(default="success")
    experiment: str
    rmse: Dict[str, float] = Field(..., description="Split -> per-sequence RMSE")
    rmse_per_step: Dict[str, float]
    baseline_rmse: Optional[float] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)


class SweepRow(BaseModel):
    """One cell of a sweep; failed cells carry the error and no scores."""
    axis: str
    value: Union[int, float, str]
    status: Literal["ok", "failed"]
    seed: int
    best_epoch: Optional[int] = None
    train_rmse: Optional[float] = None
    test_rmse: Optional[float] = None
    test_rmse_per_step: Optional[float] = None
    baseline_rmse: Optional[float] = None
    error: str = ""


class CalibrationRow(BaseModel):
    rank: int = Field(..., ge=1)
    x1: float
    x2: float
    x3: float
    x4: float
    tt: float
    cfmax: float
    cfr: float
    cwh: float
    rmse: float


class ErrorReport(BaseModel):
    """JSON body printed on stderr when a command fails."""
    status: str = Field(default="error")
    message: str = Field(..., description="Error message")
    detail: str = Field(default="", description="Detailed error information")
    exit_code: int = Field(..., ge=1, le=3)
