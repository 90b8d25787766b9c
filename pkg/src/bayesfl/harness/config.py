"""Experiment configuration schema.

A config is a YAML mapping validated by the pydantic models below. Unknown
keys are rejected, and every validation failure is reported as a
:class:`~bayesfl.errors.ConfigError` carrying the dotted path of the
offending key.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..aggregate import MODES
from ..channel import NetworkGeometry
from ..errors import ConfigError
from ..learn import ALGORITHMS, OBJECTIVES, SCHEDULES, TrainingPlan
from ..prior import PriorQuantizer


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetConfig(_Strict):
    kind: Literal["synthetic", "file"] = "synthetic"
    K: int = Field(20, ge=1)
    N_k: int = Field(100, ge=1)
    M: int = Field(300, ge=1)
    heterogeneity: Literal["heterogeneous", "homogeneous"] = "heterogeneous"
    a: float = Field(5.0, ge=0)
    a_max: float = Field(5.0, gt=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("path is required when kind is 'file'")
        return self


class GeometryConfig(_Strict):
    cell_radius: float = Field(1000.0, gt=0)
    bs_height: float = Field(70.0, gt=0)
    device_height: float = Field(1.5, gt=0)
    carrier_freq: float = Field(2000.0, gt=0)
    tx_power: float = 23.0
    noise_floor: float = -100.0
    metropolitan: bool = True
    min_distance: float = Field(20.0, gt=0)

    def build(self):
        return NetworkGeometry(**self.model_dump())


class NetworkConfig(_Strict):
    """Either a random cell drop (``geometry``) or explicit per-device values.

    ``sigma2`` may be one number for all devices or a per-device list;
    ``gains`` (explicit only) pins the fading coefficients.
    """

    kind: Literal["geometry", "explicit"] = "geometry"
    fading: Literal["block", "fixed"] = "block"
    geometry: GeometryConfig = GeometryConfig()
    sigma2: Union[float, list[float], None] = None
    gains: Optional[list[float]] = None

    @model_validator(mode="after")
    def _explicit_needs_sigma2(self):
        if self.kind == "explicit" and self.sigma2 is None:
            raise ValueError("sigma2 is required when kind is 'explicit'")
        if self.kind == "geometry" and (self.sigma2 is not None or self.gains is not None):
            raise ValueError("sigma2/gains only apply when kind is 'explicit'")
        return self


class QuantizerConfig(_Strict):
    bits: int = Field(4, ge=1, le=16)
    scale_max: Optional[float] = Field(None, gt=0)
    span: float = Field(4.0, gt=0)
    track: Optional[float] = Field(2.0, gt=1)

    def build(self):
        return PriorQuantizer(bits=self.bits, scale_max=self.scale_max, span=self.span,
                              track=self.track)


class TrainingConfig(_Strict):
    """Training hyperparameters.

    With ``gamma_units: inverse_L`` the step is ``gamma / L`` where ``L`` is
    the smoothness constant of the seed's objective.
    """

    algorithm: Literal[ALGORITHMS] = "sbfl_gaussian"  # type: ignore[valid-type]
    gamma: float = Field(1.0, gt=0)
    gamma_units: Literal["absolute", "inverse_L"] = "inverse_L"
    delta: float = Field(0.0, ge=0, lt=1)
    schedule: Literal[SCHEDULES] = "constant"  # type: ignore[valid-type]
    rounds: int = Field(500, ge=1)
    downlink_compression: bool = False
    prior_quantizer: Optional[QuantizerConfig] = None
    mode: Literal[MODES] = "corrected"  # type: ignore[valid-type]
    batch_size: Optional[int] = Field(None, ge=1)
    divergence_threshold: float = Field(1e12, gt=0)
    objective: Literal[OBJECTIVES] = "mean"  # type: ignore[valid-type]
    init_scale: float = Field(1.0, ge=0)

    def build(self, L, **overrides):
        fields = self.model_dump(exclude={"gamma_units", "init_scale", "prior_quantizer"})
        fields.update(overrides)
        gamma = fields.pop("gamma")
        units = overrides.get("gamma_units", self.gamma_units)
        fields.pop("gamma_units", None)
        if units == "inverse_L":
            gamma = gamma / L
        q = self.prior_quantizer.build() if self.prior_quantizer is not None else None
        return TrainingPlan(gamma=gamma, prior_quantizer=q, **fields)


class OutputConfig(_Strict):
    dir: str = "runs/default"
    trace_aggregate: bool = False
    wall_time: bool = False


class SweepConfig(_Strict):
    algorithms: list[Literal[ALGORITHMS]] = ["signSGD", "sbfl_gaussian"]  # type: ignore[valid-type]
    gammas: list[float] = [1e-2, 1e-3, 1e-4]
    deltas: list[float] = [0.0, 0.9]
    thresholds: list[float] = [1.0]


class ExperimentConfig(_Strict):
    dataset: DatasetConfig
    network: NetworkConfig = NetworkConfig()
    training: TrainingConfig = TrainingConfig()
    seeds: Union[int, list[int]] = 30
    threshold: Optional[float] = None
    output: OutputConfig = OutputConfig()
    sweep: Optional[SweepConfig] = None

    @property
    def seed_list(self):
        if isinstance(self.seeds, int):
            return list(range(self.seeds))
        return list(self.seeds)

    @model_validator(mode="after")
    def _seeds_valid(self):
        seeds = self.seed_list
        if not seeds or any(s < 0 for s in seeds) or len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be a positive count or a list of distinct non-negative ints")
        return self


class MseVerifyConfig(_Strict):
    nus: list[float] = [0.5, 1.0, 2.0]
    hs: list[float] = [0.5, 1.0, 2.0]
    sigma2s: list[float] = [0.5, 1.0, 2.0]
    extra_cells: list[tuple[float, float, float]] = [(1.0, 1.0, 1e-8), (1.0, 0.0, 1.0)]
    M: int = Field(1, ge=1)
    n_samples: int = Field(1_000_000, ge=1000)
    seed: int = Field(0, ge=0)
    output: OutputConfig = OutputConfig(dir="runs/mse_verify")


class OracleConfig(_Strict):
    K: int = Field(2, ge=1, le=3)
    nu: list[float] = [1.0, 1.0]
    rho: float = Field(0.0, gt=-1, lt=1)
    h: list[float] = [1.0, 0.8]
    sigma2: list[float] = [1.0, 2.0]
    n_points: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    output: OutputConfig = OutputConfig(dir="runs/oracle")


def _error_key(err):
    loc = [str(p) for p in err["loc"] if not str(p).startswith("function-")]
    # pydantic appends the union member / literal tag to the path; keep real keys
    return ".".join(loc) if loc else "<root>"


def _validate(model, data, source):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"{source}: expected a mapping at top level")
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_error_key(err), err["msg"]) from None


def parse_config(data, model=ExperimentConfig, source="<dict>"):
    return _validate(model, data, source)


def load_config(path, model=ExperimentConfig):
    """Read and validate a YAML config file (never modifies it)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"{path}: invalid YAML ({exc})") from None
    return _validate(model, data, str(path))
