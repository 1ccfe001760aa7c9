"""
Pydantic configuration schemas for networks, data generators and experiments.

Defaults reproduce the parameter table of the three experiments; ``preset``
returns a complete, validated ``ExperimentConfig`` at full or desk scale.
"""

from typing import Dict, List, Literal, Optional, Union, get_args

from pydantic import BaseModel, Field, model_validator

from rnnrecon.app.exceptions import ConfigError


Activation = Literal["tanh", "relu"]
BatchMode = Literal["full", "instance"]
ExperimentName = Literal["lorenz", "swarm", "hydro"]

CONFIG_VERSION = 1


class RnnConfig(BaseModel):
    """Stacked RNN hyperparameters."""
    seq_len: int = Field(..., gt=0, description="Sequence length T")
    input_size: int = Field(..., gt=0, description="Input nodes N_i")
    output_size: int = Field(..., gt=0, description="Output nodes N_o")
    num_layers: int = Field(..., gt=0, description="Number of stacked recurrent layers K")
    hidden_size: int = Field(..., gt=0, description="Hidden nodes per layer N_h")
    learning_rate: float = Field(..., gt=0.0, description="ADAM step size")
    max_epochs: int = Field(..., ge=1, description="Epochs of the first (search) pass")
    hidden_activation: Activation = Field(default="tanh", description="Hidden activation f")
    rng_seed: int = Field(default=0, ge=0, description="Seed for weight initialization")
    batch_mode: BatchMode = Field(
        default="full",
        description="'full': one update per epoch on the whole set; 'instance': one update per sequence"
    )
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    log_every: int = Field(default=50, ge=1, description="Epoch interval of DEBUG loss records")


class LorenzParams(BaseModel):
    """Lorenz system constants and integration controls."""
    sigma: float = 3.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    delta: float = Field(default=0.01, gt=0.0, description="Integration step (time units)")
    steps: int = Field(default=5000, ge=1, description="Number of integration steps T")


class CorruptionSpec(BaseModel):
    """Corruption level: erroneous-system steps applied to every true point."""
    eta: int = Field(default=1, ge=0)


class LorenzSettings(BaseModel):
    params: LorenzParams = Field(default_factory=LorenzParams)
    corruption: CorruptionSpec = Field(default_factory=CorruptionSpec)
    n_orbits: int = Field(default=500, ge=1)
    n_train: int = Field(default=400, ge=1, description="First n_train orbits train, the rest test")
    integrator: Literal["rk4", "euler"] = "rk4"
    init_low: float = -15.0
    init_high: float = 15.0

    @model_validator(mode="after")
    def _check_counts(self) -> "LorenzSettings":
        if self.corruption.eta >= self.params.steps:
            raise ValueError("corruption eta must be smaller than the number of steps")
        if self.n_train >= self.n_orbits:
            raise ValueError("n_train must leave at least one test orbit")
        if self.init_low >= self.init_high:
            raise ValueError("init_low must be below init_high")
        return self


class SwarmConfig(BaseModel):
    """Generalized Vicsek simulation controls."""
    n_agents: int = Field(default=30, ge=1, description="Number of agents N")
    steps: int = Field(default=201, ge=2, description="Trajectory length T")
    radius: float = Field(default=2.0, gt=0.0, description="Interaction radius r_d")
    speed: float = Field(default=0.05, gt=0.0, description="Speed v per step")
    angle_noise: float = Field(default=0.05, ge=0.0, description="Angular noise amplitude (radians)")
    delta: float = Field(default=1.0, gt=0.0, description="Step size")
    domain_side: float = Field(default=10.0, gt=0.0, description="Side of the periodic square, centred at 0")
    rng_seed: int = Field(default=0, ge=0)
    noise_kind: Literal["uniform", "gaussian"] = Field(
        default="uniform",
        description="'uniform' draws on [-eps/2, eps/2]; 'gaussian' uses eps as standard deviation"
    )


class SwarmSettings(BaseModel):
    swarm: SwarmConfig = Field(default_factory=SwarmConfig)
    sigma: float = Field(default=0.4, ge=0.0, description="Std of the additive Gaussian position noise")
    n_train: int = Field(default=24, ge=1)

    @model_validator(mode="after")
    def _check_counts(self) -> "SwarmSettings":
        if self.n_train >= self.swarm.n_agents:
            raise ValueError("n_train must leave at least one test agent")
        return self


class Gr4jParams(BaseModel):
    """GR4J + degree-day snow parameters, bounded by their recommended ranges."""
    x1: float = Field(..., ge=0.0, le=1000.0, description="Production store capacity (mm)")
    x2: float = Field(..., ge=-5.0, le=5.0, description="Groundwater exchange coefficient (mm/day)")
    x3: float = Field(..., ge=0.0, le=300.0, description="Routing store capacity (mm)")
    x4: float = Field(..., ge=0.5, le=5.0, description="Unit hydrograph time base (days)")
    tt: float = Field(..., ge=-3.0, le=3.0, description="Threshold temperature (degC)")
    cfmax: float = Field(..., ge=0.0, le=20.0, description="Degree-day factor (mm/degC/day)")
    cfr: float = Field(..., ge=0.0, le=1.0, description="Refreezing coefficient")
    cwh: float = Field(..., ge=0.0, le=0.8, description="Water holding capacity of the pack")


GR4J_PARAM_NAMES = ("x1", "x2", "x3", "x4", "tt", "cfmax", "cfr", "cwh")

GR4J_BOUNDS = {
    "x1": (0.0, 1000.0),
    "x2": (-5.0, 5.0),
    "x3": (0.0, 300.0),
    "x4": (0.5, 5.0),
    "tt": (-3.0, 3.0),
    "cfmax": (0.0, 20.0),
    "cfr": (0.0, 1.0),
    "cwh": (0.0, 0.8),
}

# Best grid point reported for the first MOPEX catchment (ID 2365500).
SITE1_PARAMS = Gr4jParams(
    x1=571.0, x2=-0.03, x3=48.0, x4=2.0, tt=-0.20, cfmax=4.41, cfr=0.36, cwh=0.23
)


class HydroSettings(BaseModel):
    window_len: int = Field(default=45, ge=1, description="Window length L (days)")
    n_days: int = Field(default=3653, ge=2)
    n_train_days: int = Field(default=2557, ge=1, description="Leading days used for training")
    warmup_days: int = Field(default=365, ge=0, description="GR4J warm-up days excluded from scores")
    catchment: Gr4jParams = Field(default_factory=lambda: SITE1_PARAMS.model_copy())
    catchment_seed: int = Field(default=2365500, ge=0, description="Seed of the synthetic forcing")
    flow_noise: float = Field(default=0.05, ge=0.0, description="Multiplicative lognormal noise on flow")
    calibration_points: int = Field(default=50000, ge=1, description="Grid points for the GR4J benchmark")
    benchmark: bool = Field(default=True, description="Calibrate GR4J alongside the RNN")
    data_file: Optional[str] = Field(default=None, description="Hydro CSV to use instead of the synthetic catchment")

    @model_validator(mode="after")
    def _check_spans(self) -> "HydroSettings":
        if self.n_train_days >= self.n_days:
            raise ValueError("n_train_days must leave a forecast span")
        if self.window_len > self.n_train_days:
            raise ValueError("window_len must fit inside the training span")
        return self


EXPECTED_SIZES = {"lorenz": (3, 3), "swarm": (2, 2), "hydro": (2, 1)}


class ExperimentConfig(BaseModel):
    """A complete, self-describing experiment definition (the config echo)."""
    version: int = Field(default=CONFIG_VERSION, description="Config schema version")
    experiment: ExperimentName
    seed: int = Field(default=0, ge=0, description="Seed for data draws and network initialization")
    rnn: RnnConfig
    lorenz: Optional[LorenzSettings] = None
    swarm: Optional[SwarmSettings] = None
    hydro: Optional[HydroSettings] = None
    standardize: bool = Field(default=True, description="Per-channel standardization from training data")
    output_dir: str = Field(default="runs")

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        section = getattr(self, self.experiment)
        if section is None:
            raise ValueError(f"missing '{self.experiment}' settings section")
        for other in ("lorenz", "swarm", "hydro"):
            if other != self.experiment and getattr(self, other) is not None:
                raise ValueError(f"settings section '{other}' does not belong to a {self.experiment} experiment")

        n_in, n_out = EXPECTED_SIZES[self.experiment]
        if (self.rnn.input_size, self.rnn.output_size) != (n_in, n_out):
            raise ValueError(f"{self.experiment} needs input_size={n_in}, output_size={n_out}")

        expected_len = {
            "lorenz": lambda: self.lorenz.params.steps,
            "swarm": lambda: self.swarm.swarm.steps,
            "hydro": lambda: self.hydro.window_len,
        }[self.experiment]()
        if self.rnn.seq_len != expected_len:
            raise ValueError(f"rnn.seq_len={self.rnn.seq_len} but the {self.experiment} data has length {expected_len}")
        return self

    def with_overrides(
        self,
        seed: Optional[int] = None,
        eta: Optional[int] = None,
        sigma: Optional[float] = None,
        window: Optional[int] = None,
        n_orbits: Optional[int] = None,
        output_dir: Optional[str] = None,
        learning_rate: Optional[float] = None,
        num_layers: Optional[int] = None,
        hidden_size: Optional[int] = None,
        activation: Optional[str] = None,
    ) -> "ExperimentConfig":
        """
        Return a validated copy with CLI/sweep overrides applied.

        Changing the window length also changes the RNN sequence length.
        The network options replace the matching ``rnn`` fields.
        """
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
            data["rnn"]["rng_seed"] = seed
            if data.get("swarm"):
                data["swarm"]["swarm"]["rng_seed"] = seed
        if output_dir is not None:
            data["output_dir"] = output_dir
        if eta is not None:
            self._require("lorenz", "eta")
            data["lorenz"]["corruption"]["eta"] = int(eta)
        if n_orbits is not None:
            self._require("lorenz", "n_orbits")
            data["lorenz"]["n_orbits"] = int(n_orbits)
            data["lorenz"]["n_train"] = max(1, int(round(0.8 * int(n_orbits))))
        if sigma is not None:
            self._require("swarm", "sigma")
            data["swarm"]["sigma"] = float(sigma)
        if window is not None:
            self._require("hydro", "window")
            data["hydro"]["window_len"] = int(window)
            data["rnn"]["seq_len"] = int(window)
        if learning_rate is not None:
            data["rnn"]["learning_rate"] = float(learning_rate)
        if num_layers is not None:
            data["rnn"]["num_layers"] = int(num_layers)
        if hidden_size is not None:
            data["rnn"]["hidden_size"] = int(hidden_size)
        if activation is not None:
            data["rnn"]["hidden_activation"] = activation
        return ExperimentConfig.model_validate(data)

    def _require(self, experiment: str, option: str) -> None:
        if self.experiment != experiment:
            raise ConfigError(f"'{option}' only applies to {experiment} experiments, not {self.experiment}")


SweepAxis = Literal["eta", "sigma", "window", "learning_rate", "num_layers", "hidden_size", "activation"]
SweepValue = Union[int, float, str]

# axis -> experiment it belongs to; network axes apply to any experiment
SWEEP_AXES: Dict[str, Optional[str]] = {
    "eta": "lorenz",
    "sigma": "swarm",
    "window": "hydro",
    "learning_rate": None,
    "num_layers": None,
    "hidden_size": None,
    "activation": None,
}
AXIS_TYPES = {
    "eta": int,
    "sigma": float,
    "window": int,
    "learning_rate": float,
    "num_layers": int,
    "hidden_size": int,
    "activation": str,
}


def _axis_value(axis: str, value: SweepValue) -> SweepValue:
    kind = AXIS_TYPES[axis]
    if kind is str:
        if value not in get_args(Activation):
            raise ValueError(f"'{value}' is not an activation, use one of {list(get_args(Activation))}")
        return str(value)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"'{value}' is not a number for axis '{axis}'") from None
    if kind is int:
        if not number.is_integer():
            raise ValueError(f"axis '{axis}' takes whole numbers, got {value}")
        return int(number)
    return number


class SweepSpec(BaseModel):
    """One sweep axis and its values, cast to the axis type."""
    axis: SweepAxis
    values: List[SweepValue] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _cast_values(self) -> "SweepSpec":
        self.values = [_axis_value(self.axis, value) for value in self.values]
        return self

    @property
    def experiment(self) -> Optional[str]:
        """Experiment the axis belongs to, None for network axes."""
        return SWEEP_AXES[self.axis]


DEFAULT_SWEEPS = {
    "eta": [1, 2, 3, 4, 5, 6, 7, 8, 9],
    "sigma": [0.2, 0.4, 0.6],
    # "10" is printed in the published window list where 120 is expected; both are swept.
    "window": [5, 15, 30, 45, 60, 10, 120, 240, 365],
    "learning_rate": [0.0001, 0.0005, 0.001, 0.005, 0.01],
    "num_layers": [1, 2, 3, 4],
    "hidden_size": [32, 64, 128, 256, 512],
    "activation": ["tanh", "relu"],
}


def preset(experiment: str, desk: bool = False, variant: Optional[str] = None, seed: int = 0) -> ExperimentConfig:
    """
    Build the default configuration of an experiment.

    Args:
        experiment: One of "lorenz", "swarm", "hydro"
        desk: Shrink data and networks so a training finishes in minutes on one core
        variant: Alternative published settings. Lorenz: "figure" (120 orbits),
            "wide" (256 hidden nodes). Hydro: "table" (4 stacked layers).
        seed: Experiment seed

    Returns:
        Validated ExperimentConfig
    """
    if experiment == "lorenz":
        settings = LorenzSettings()
        rnn = dict(seq_len=5000, input_size=3, output_size=3, num_layers=3, hidden_size=128,
                   learning_rate=0.01, max_epochs=1000, hidden_activation="relu", batch_mode="full")
        if variant == "figure":
            settings = LorenzSettings(n_orbits=120, n_train=96)
        elif variant == "wide":
            rnn["hidden_size"] = 256
        elif variant is not None:
            raise ConfigError(f"unknown lorenz variant '{variant}'")
        if desk:
            settings = LorenzSettings(params=LorenzParams(steps=500), n_orbits=50, n_train=40)
            rnn.update(seq_len=500, hidden_size=32, max_epochs=400)
        config = dict(experiment="lorenz", rnn=rnn, lorenz=settings.model_dump())
    elif experiment == "swarm":
        if variant is not None:
            raise ConfigError(f"unknown swarm variant '{variant}'")
        rnn = dict(seq_len=201, input_size=2, output_size=2, num_layers=2, hidden_size=64,
                   learning_rate=0.0005, max_epochs=15000, hidden_activation="tanh", batch_mode="instance")
        if desk:
            rnn.update(max_epochs=300, hidden_size=32, log_every=10)
        config = dict(experiment="swarm", rnn=rnn, swarm=SwarmSettings().model_dump())
    elif experiment == "hydro":
        settings = HydroSettings()
        rnn = dict(seq_len=45, input_size=2, output_size=1, num_layers=3, hidden_size=512,
                   learning_rate=0.001, max_epochs=100000, hidden_activation="tanh", batch_mode="full",
                   log_every=1000)
        if variant == "table":
            rnn["num_layers"] = 4
        elif variant is not None:
            raise ConfigError(f"unknown hydro variant '{variant}'")
        if desk:
            settings = HydroSettings(n_days=800, n_train_days=600, calibration_points=2048)
            rnn.update(hidden_size=32, max_epochs=1000, log_every=100)
        config = dict(experiment="hydro", rnn=rnn, hydro=settings.model_dump())
    else:
        raise ConfigError(f"unknown experiment '{experiment}'")

    config["rnn"]["rng_seed"] = seed
    config["seed"] = seed
    if experiment == "swarm":
        config["swarm"]["swarm"]["rng_seed"] = seed
    return ExperimentConfig.model_validate(config)
