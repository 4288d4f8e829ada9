"""
Pipeline configuration for symflow

Configuration is a pydantic model loaded from TOML, with a small set of
environment overrides (``SYMFLOW_SEED``, ``SYMFLOW_JOBS``, ``SYMFLOW_OUT``)
read after ``load_dotenv()``. Validation runs before any stage so that a bad
χ or ρ never reaches the numerics.
"""
import logging
import os
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .types import FlowKind

logger = logging.getLogger(__name__)


class ScaleLaws(BaseModel):
    """
    Exponents of the scale laws tying chart sizes to hyperbolicity.

    - Q(x) = eps^(q_eps_power/beta) * |C(x)^-1|^(-q_cinv_power/beta)
    - overlap radius = (eta1*eta2)^overlap_power
    - snapping cell = q^snap_power / 4

    ``literal()`` holds the exponents of the theory; they drive radii far
    below float64 resolution, so the pipeline runs with ``desk()``.
    """
    model_config = ConfigDict(frozen=True)

    q_eps_power: float = 1.0
    q_cinv_power: float = 4.0
    overlap_power: float = 0.75
    snap_power: float = 1.5

    @classmethod
    def literal(cls) -> "ScaleLaws":
        return cls(q_eps_power=6.0, q_cinv_power=48.0, overlap_power=4.0, snap_power=8.0)

    @classmethod
    def desk(cls) -> "ScaleLaws":
        return cls()

    def Q(self, eps: float, c_inv_norm: float, beta: float) -> float:
        return eps ** (self.q_eps_power / beta) * c_inv_norm ** (-self.q_cinv_power / beta)

    def overlap_radius(self, eta1: float, eta2: float) -> float:
        return (eta1 * eta2) ** self.overlap_power

    def snap_cell(self, q: float) -> float:
        return 0.25 * q ** self.snap_power

    # Bounds implied by an overlap, scaled with the overlap law
    def cinv_control(self, eta1: float, eta2: float) -> float:
        return (eta1 * eta2) ** (0.75 * self.overlap_power)

    def q_control(self, eta1: float, eta2: float) -> float:
        return (eta1 * eta2) ** (0.5 * self.overlap_power)


class ModelSpec(BaseModel):
    """Which flow to build and with what parameters"""
    kind: FlowKind = FlowKind.MAPPING_TORUS
    matrix: List[List[int]] = Field(default_factory=lambda: [[2, 1], [1, 1]])
    roof: float = 1.0
    torus_scale: float = 0.2
    speed_scale: Optional[float] = None
    beta: float = 1.0
    system: str = "saddle_circle"
    system_params: Dict[str, float] = Field(default_factory=dict)
    step: float = 1e-3
    horizon: float = 50.0

    @field_validator("roof", "torus_scale", "step", "horizon")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("beta")
    @classmethod
    def _beta_range(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("beta must lie in (0, 1]")
        return value


class Tolerances(BaseModel):
    """Numerical tolerances used across stages"""
    group_law: float = 1e-8
    newton: float = 1e-11
    fixed_point: float = 1e-11
    tail: float = 1e-8
    membership: float = 1e-7
    markov: float = 1e-6
    angle: float = 1e-4
    off_block: float = 1e-6


class PipelineConfig(BaseModel):
    """
    Complete configuration of a pipeline run.

    Invariants: 0 < eps < rho < 0.25 and chi in (0, 1) when given. A missing
    chi is resolved to a quarter of the smallest measured exponent.
    """
    model: ModelSpec = Field(default_factory=ModelSpec)
    rho: float = 0.2
    chi: Optional[float] = None
    eps: float = 0.01
    laws: ScaleLaws = Field(default_factory=ScaleLaws.desk)
    tolerances: Tolerances = Field(default_factory=Tolerances)

    splitting_returns: int = 20
    frame_horizon: float = 16.0
    quadrature_nodes: int = 1601

    window: int = 150
    random_orbits: int = 8
    periodic_denominator: int = 4
    grid_nodes: int = 9
    manifold_depth: int = 60
    fibre_samples: int = 7
    refine_depth: int = 1
    cylinder_depth: int = 3
    section_samples: int = 400
    sanity_samples: int = 1000
    reduction_points: int = 100
    reduction_times: int = 20
    shadow_checks: int = 20
    contraction_pairs: int = 100
    coding_samples: int = 8

    seed: int = 0
    jobs: int = 1
    out: str = "symflow_out"

    @field_validator("rho")
    @classmethod
    def _rho_range(cls, value: float) -> float:
        if not 0 < value < 0.25:
            raise ValueError("rho must lie in (0, 0.25)")
        return value

    @field_validator("chi")
    @classmethod
    def _chi_range(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0 < value < 1:
            raise ValueError("chi must lie in (0, 1)")
        return value

    @field_validator("quadrature_nodes")
    @classmethod
    def _odd_nodes(cls, value: int) -> int:
        if value < 3 or value % 2 == 0:
            raise ValueError("quadrature_nodes must be odd and >= 3")
        return value

    @field_validator("jobs", "window", "grid_nodes", "splitting_returns", "manifold_depth",
                     "fibre_samples", "refine_depth", "cylinder_depth", "section_samples",
                     "sanity_samples", "reduction_points", "reduction_times", "shadow_checks", "contraction_pairs",
                     "coding_samples")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("periodic_denominator", "random_orbits")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @model_validator(mode="after")
    def _eps_below_rho(self) -> "PipelineConfig":
        if not 0 < self.eps < self.rho:
            raise ValueError("eps must satisfy 0 < eps < rho")
        if self.frame_horizon <= 0:
            raise ValueError("frame_horizon must be positive")
        if self.window < 2 * self.manifold_depth + 2:
            raise ValueError("window must exceed twice manifold_depth")
        return self

    @property
    def beta(self) -> float:
        return self.model.beta


ENV_OVERRIDES = {
    "SYMFLOW_SEED": ("seed", int),
    "SYMFLOW_JOBS": ("jobs", int),
    "SYMFLOW_OUT": ("out", str),
}


def _env_overrides() -> Dict[str, Any]:
    load_dotenv()
    found: Dict[str, Any] = {}
    for var, (key, cast) in ENV_OVERRIDES.items():
        raw = os.environ.get(var, "").strip()
        if not raw:
            continue
        try:
            found[key] = cast(raw)
        except ValueError as e:
            raise ConfigurationError(f"{var}={raw!r} is not a valid {cast.__name__}") from e
    return found


def build_config(data: Optional[Dict[str, Any]] = None, **overrides: Any) -> PipelineConfig:
    """
    Validate a raw mapping into a PipelineConfig.

    Args:
        data: Parsed TOML / dict content
        **overrides: Top-level keys that win over ``data`` (None values ignored)

    Returns:
        Validated configuration

    Raises:
        ConfigurationError: If validation fails
    """
    merged = dict(data or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def load_config(path: Optional[str] = None, use_env: bool = True, **overrides: Any) -> PipelineConfig:
    """
    Load configuration from a TOML file, then environment, then overrides.

    Args:
        path: TOML file; defaults are used when None
        use_env: Apply SYMFLOW_* environment overrides
        **overrides: Explicit overrides (CLI flags)

    Returns:
        Validated configuration
    """
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        with p.open("rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as e:
                raise ConfigurationError(f"cannot parse {p}: {e}") from e
        logger.info(f"Loaded configuration from {p}")
    if use_env:
        data.update(_env_overrides())
    return build_config(data, **overrides)
