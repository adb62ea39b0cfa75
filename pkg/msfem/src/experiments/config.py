"""Experiment files: parsing, defaults and validation.

An experiment file is a ``key=value`` file (dotenv syntax). Lists are comma
separated and reals accept ``0.25``, ``1/4096`` or ``2^-12``.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from msfem.src.config import Settings, settings as default_settings
from msfem.src.multiscale.msbasis import default_l_star
from msfem.src.potentials.catalog import (
    PotentialSpec,
    catalog,
    load_custom_potential,
    mesh_condition_ratio,
    potential_bound,
)
from msfem.src.utils.exceptions import ConfigValidationError, MsfemError

logger = logging.getLogger(__name__)

Method = Literal["FEM", "MsFEM", "EnMsFEM"]
METHOD_ORDER: Dict[str, int] = {"FEM": 0, "MsFEM": 1, "EnMsFEM": 2}
_METHOD_ALIASES = {"fem": "FEM", "msfem": "MsFEM", "enmsfem": "EnMsFEM", "en-msfem": "EnMsFEM"}

# Time grids must agree to this absolute tolerance
TIME_TOL = 1e-9
# Meshes are given by H; 1/H must be an integer to this tolerance
MESH_TOL = 1e-9


def parse_real(value: Any) -> float:
    """Parse ``0.25``, ``1/4096``, ``2^-12`` or ``3*2^-10`` into a float"""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().replace(" ", "")
    if not text:
        raise ValueError("empty number")
    if "*" in text:
        result = 1.0
        for part in text.split("*"):
            result *= parse_real(part)
        return result
    if "/" in text:
        numerator, _, denominator = text.partition("/")
        return parse_real(numerator) / parse_real(denominator)
    if "^" in text:
        base, _, exponent = text.partition("^")
        return float(base) ** float(exponent)
    return float(text)


def parse_int(value: Any) -> int:
    real = parse_real(value)
    if not real.is_integer():
        raise ValueError(f"expected an integer, got {value!r}")
    return int(real)


def split_list(value: Any) -> List[Any]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [item.strip() for item in str(value).split(",") if item.strip()]


def _optional(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
        return None
    return value


class ExperimentConfig(BaseModel):
    """One experiment: potential, meshes, time grid, methods and reference"""

    model_config = ConfigDict(extra="forbid")

    # Potential
    example_id: Optional[int] = None
    custom_potential: Optional[str] = None
    epsilon: float
    e0: float = 20.0
    symmetric_checkerboard: bool = False
    potential_shift: float = 0.0
    grid_n: Optional[int] = None

    # Meshes
    coarse_h: List[float]
    fine_n: int
    l_star: Optional[Union[int, Literal["global"]]] = None
    l_star_by_mesh: Dict[int, Union[int, Literal["global"]]] = {}
    mesh_condition_max: float = 4.0

    # Time grid
    dt: float
    t0: float = 0.0
    t_final: float = 1.0
    series_times: List[float] = []
    observer_stride: int = 64

    # Methods and enrichment
    methods: List[Method] = ["FEM", "MsFEM", "EnMsFEM"]
    enrichment_mode: Literal["none", "one_step", "greedy"] = "one_step"
    keep_fraction: Optional[float] = None
    delta: Optional[float] = None
    n_snapshots: int = 64
    drop_tol: float = 1e-8

    # Reference
    reference_fine_n: Optional[int] = None
    reference_dt: Optional[float] = None
    reference_method: Literal["fem", "enmsfem"] = "fem"
    reference_coarse_h: Optional[float] = None
    reference_self_convergence: bool = False

    # Run
    output_dir: Path = Path("./results")
    seed: int = 0
    full_scale: bool = False

    @field_validator(
        "example_id",
        "grid_n",
        "reference_fine_n",
        "fine_n",
        "observer_stride",
        "n_snapshots",
        "seed",
        mode="before",
    )
    @classmethod
    def _integers(cls, value: Any) -> Any:
        value = _optional(value)
        return None if value is None else parse_int(value)

    @field_validator(
        "epsilon",
        "e0",
        "dt",
        "t0",
        "t_final",
        "keep_fraction",
        "delta",
        "drop_tol",
        "reference_dt",
        "reference_coarse_h",
        "potential_shift",
        "mesh_condition_max",
        mode="before",
    )
    @classmethod
    def _reals(cls, value: Any) -> Any:
        value = _optional(value)
        return None if value is None else parse_real(value)

    @field_validator("coarse_h", "series_times", mode="before")
    @classmethod
    def _real_lists(cls, value: Any) -> List[float]:
        return [parse_real(item) for item in split_list(value)]

    @field_validator("methods", mode="before")
    @classmethod
    def _methods(cls, value: Any) -> List[str]:
        methods = []
        for item in split_list(value):
            key = str(item).strip().lower()
            if key not in _METHOD_ALIASES:
                raise ValueError(f"unknown method {item!r}; expected FEM, MsFEM or EnMsFEM")
            methods.append(_METHOD_ALIASES[key])
        return sorted(set(methods), key=METHOD_ORDER.__getitem__)

    @field_validator("l_star", mode="before")
    @classmethod
    def _l_star(cls, value: Any) -> Any:
        value = _optional(value)
        if value is None or value == "global":
            return value
        return parse_int(value)

    @field_validator("l_star_by_mesh", mode="before")
    @classmethod
    def _l_star_by_mesh(cls, value: Any) -> Dict[int, Any]:
        """``64:6,128:7`` keyed by coarse cells per side"""
        if isinstance(value, Mapping):
            return {parse_int(k): v for k, v in value.items()}
        result: Dict[int, Any] = {}
        for item in split_list(value):
            n, _, level = str(item).partition(":")
            result[parse_int(n)] = level.strip() if level.strip() == "global" else parse_int(level)
        return result

    @field_validator("custom_potential", mode="before")
    @classmethod
    def _custom(cls, value: Any) -> Any:
        return _optional(value)

    @model_validator(mode="after")
    def _one_potential(self) -> "ExperimentConfig":
        if (self.example_id is None) == (self.custom_potential is None):
            raise ValueError("set exactly one of example_id or custom_potential")
        return self

    @property
    def coarse_ns(self) -> List[int]:
        return [round(1.0 / h) for h in self.coarse_h]

    @property
    def reference_coarse_n(self) -> Optional[int]:
        return None if self.reference_coarse_h is None else round(1.0 / self.reference_coarse_h)

    @property
    def example_label(self) -> str:
        return str(self.example_id) if self.example_id is not None else str(self.custom_potential)

    def l_star_for(self, coarse_n: int) -> Union[int, Literal["global"]]:
        if coarse_n in self.l_star_by_mesh:
            return self.l_star_by_mesh[coarse_n]
        if self.l_star is not None:
            return self.l_star
        return default_l_star(coarse_n)

    def record_times(self) -> List[float]:
        """Series times plus the final time, sorted"""
        return sorted({round(t, 12) for t in self.series_times} | {round(self.t_final, 12)})


@dataclass
class ValidationReport:
    config: ExperimentConfig
    warnings: List[str] = field(default_factory=list)
    v0: float = float("nan")
    mesh_ratios: Dict[float, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.model_dump(mode="json"),
            "warnings": list(self.warnings),
            "v0": self.v0,
            "mesh_ratios": {str(h): r for h, r in self.mesh_ratios.items()},
        }


def resolve_potential(config: ExperimentConfig) -> PotentialSpec:
    if config.custom_potential is not None:
        return load_custom_potential(config.custom_potential, config.epsilon, config.e0)
    return catalog(
        config.example_id,
        config.epsilon,
        config.e0,
        symmetric_checkerboard=config.symmetric_checkerboard,
    )


def _format_validation_error(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "config"
        messages.append(f"{location}: {item['msg']}")
    return messages


def config_from_mapping(values: Mapping[str, Any]) -> ExperimentConfig:
    """Build a config from raw key-value pairs; keys are case-insensitive"""
    normalized = {str(k).strip().lower(): v for k, v in values.items() if v is not None}
    try:
        return ExperimentConfig.model_validate(normalized)
    except ValidationError as e:
        raise ConfigValidationError(_format_validation_error(e)) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError([f"experiment file not found: {path}"])
    logger.info(f"Loading experiment file {path}")
    return config_from_mapping(dotenv_values(path))


def _mesh_n(h: float) -> Optional[int]:
    if h <= 0.0:
        return None
    n = round(1.0 / h)
    return n if n >= 2 and abs(n * h - 1.0) <= MESH_TOL else None


def _divides(t0: float, t: float, dt: float) -> bool:
    n = round((t - t0) / dt)
    return n >= 0 and abs(n * dt - (t - t0)) <= TIME_TOL


def validate_config(
    config: ExperimentConfig, settings: Optional[Settings] = None
) -> ValidationReport:
    """Check nesting, divisibility and scale limits; fill defaults.

    Returns:
        ValidationReport with the normalized config, warnings (mesh-condition
        ratio per coarse mesh, full-scale runs) and the sampled V0

    Raises:
        ConfigValidationError: with every problem found, not just the first
    """
    settings = settings or default_settings
    errors: List[str] = []
    warnings: List[str] = []

    spec: Optional[PotentialSpec] = None
    try:
        spec = resolve_potential(config)
    except (MsfemError, ValueError) as e:
        errors.append(f"potential: {e}")
    dim = spec.dim if spec is not None else 1

    if not 0.0 < config.epsilon < 1.0:
        errors.append(f"epsilon must lie in (0, 1), got {config.epsilon}")
    if not config.methods:
        errors.append("methods must not be empty")
    if not config.coarse_h:
        errors.append("coarse_h must list at least one mesh size")
    if config.fine_n < 2:
        errors.append(f"fine_n must be >= 2, got {config.fine_n}")

    coarse_ns: List[int] = []
    for h in config.coarse_h:
        n = _mesh_n(h)
        if n is None:
            errors.append(f"coarse H={h} is not 1/n for an integer n >= 2")
            continue
        coarse_ns.append(n)
        if config.fine_n % n != 0:
            errors.append(f"coarse H=1/{n} is not nested in fine h=1/{config.fine_n}")
    if len(set(coarse_ns)) != len(coarse_ns):
        errors.append("coarse_h contains duplicates")

    reference_fine_n = config.reference_fine_n or config.fine_n
    reference_dt = config.reference_dt or config.dt
    if reference_fine_n % config.fine_n != 0:
        errors.append(
            f"reference mesh 1/{reference_fine_n} must refine the method fine mesh 1/{config.fine_n}"
        )
    reference_coarse_n = None
    if config.reference_method == "enmsfem":
        if config.reference_coarse_h is None:
            errors.append("reference_method=enmsfem needs reference_coarse_h")
        else:
            reference_coarse_n = _mesh_n(config.reference_coarse_h)
            if reference_coarse_n is None or reference_fine_n % reference_coarse_n != 0:
                errors.append(
                    f"reference coarse H={config.reference_coarse_h} is not nested in 1/{reference_fine_n}"
                )

    if config.dt <= 0.0 or reference_dt <= 0.0:
        errors.append("dt and reference_dt must be positive")
    elif config.t_final <= config.t0:
        errors.append(f"t_final={config.t_final} must exceed t0={config.t0}")
    else:
        if not _divides(config.t0, config.t_final, config.dt):
            errors.append(f"dt={config.dt} does not divide T - t0 = {config.t_final - config.t0}")
        if not _divides(config.t0, config.t_final, reference_dt):
            errors.append(f"reference_dt={reference_dt} does not divide T - t0")
        for t in config.series_times:
            if t < config.t0 or t > config.t_final + TIME_TOL:
                errors.append(f"series time {t} lies outside [t0, T]")
            elif not (_divides(config.t0, t, config.dt) and _divides(config.t0, t, reference_dt)):
                errors.append(f"series time {t} is not on both the method and reference time grids")

    if config.keep_fraction is not None and not 0.0 < config.keep_fraction <= 1.0:
        errors.append(f"keep_fraction must lie in (0, 1], got {config.keep_fraction}")
    if config.delta is not None and config.delta <= 0.0:
        errors.append(f"delta must be positive, got {config.delta}")
    if config.n_snapshots < 1:
        errors.append("n_snapshots must be >= 1")
    if config.observer_stride < 1:
        errors.append("observer_stride must be >= 1")
    for n, level in config.l_star_by_mesh.items():
        if n not in coarse_ns:
            errors.append(f"l_star_by_mesh names 1/{n}, which is not a coarse mesh")
        if level != "global" and int(level) < 0:
            errors.append(f"l_star for 1/{n} must be non-negative")
    if isinstance(config.l_star, int) and config.l_star < 0:
        errors.append("l_star must be non-negative")

    if not errors:
        reference_dofs = reference_fine_n**dim
        reference_steps = round((config.t_final - config.t0) / reference_dt)
        too_large = []
        if reference_dofs > settings.desk_scale_max_dofs:
            too_large.append(f"{reference_dofs} reference dofs > {settings.desk_scale_max_dofs}")
        if reference_steps > settings.desk_scale_max_steps:
            too_large.append(f"{reference_steps} reference steps > {settings.desk_scale_max_steps}")
        if too_large:
            message = "beyond desk scale: " + ", ".join(too_large)
            if config.full_scale:
                warnings.append(message)
            else:
                errors.append(message + " (set full_scale=true to run anyway)")

    if errors:
        raise ConfigValidationError(errors)

    updates: Dict[str, Any] = {
        "reference_fine_n": reference_fine_n,
        "reference_dt": reference_dt,
        "l_star_by_mesh": {n: config.l_star_for(n) for n in coarse_ns},
        "keep_fraction": config.keep_fraction
        if config.keep_fraction is not None
        else (0.125 if dim == 1 else 0.0625),
    }
    normalized = config.model_copy(update=updates)

    v0 = potential_bound(spec, config.grid_n)
    ratios: Dict[float, float] = {}
    for h in config.coarse_h:
        ratios[h] = mesh_condition_ratio(v0, h, config.epsilon)
        if ratios[h] > 1.0:
            warnings.append(
                f"sqrt(V0)*H/eps = {ratios[h]:.3f} at H={h:.6g} (V0={v0:.4g}); "
                "localized bases may decay slowly"
            )
    for message in warnings:
        logger.warning(message)
    return ValidationReport(config=normalized, warnings=warnings, v0=v0, mesh_ratios=ratios)
