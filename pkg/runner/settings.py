# runner/settings.py
"""
Settings tree read from configs/defaults.yaml.

Precedence: yaml file < environment (.env is loaded first) < explicit
overrides from the command line. Library code never reads settings; the
runner passes values down as keyword arguments.
"""
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml
from dotenv import load_dotenv

from network.case_model import CaseDefaults
from network.errors import ConfigurationError
from network.qpf import QPF_TOL
from network.zip_loads import RESPLIT_THRESHOLD
from dynamics.he_linearizer import PADE_L, PADE_M
from dynamics.reference_sims import DAMPING_MODES, DT_MIN, HTMS_TERMS, TDS_DT
from dynamics.region_tracker import CHECK_STEP, DEFAULT_EPS, SAMPLE_DT

logger = logging.getLogger(__name__)

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG = os.path.join(ROOT_DIR, "configs", "defaults.yaml")
ENGINES = ("analytic", "tds", "htms")
POLICIES = ("auto", "never", "always")
INIT_MODES = ("both", "position", "velocity")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and value > 0):
        raise ConfigurationError(f"{name} must be positive, got {value!r}")


def _choice(name: str, value: str, allowed: Tuple[str, ...]) -> None:
    if value not in allowed:
        raise ConfigurationError(f"{name} must be one of {', '.join(allowed)}, got {value!r}")


# ------------------ sections ------------------

@dataclass(frozen=True)
class QpfSettings:
    tol: float = QPF_TOL

    def __post_init__(self):
        _positive("qpf.tol", self.tol)


@dataclass(frozen=True)
class LoadSettings:
    resplit_threshold: float = RESPLIT_THRESHOLD

    def __post_init__(self):
        _positive("loads.resplit_threshold", self.resplit_threshold)


@dataclass(frozen=True)
class LinearizationSettings:
    l: int = PADE_L
    m: int = PADE_M

    def __post_init__(self):
        for name in ("l", "m"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"linearization.{name} must be an integer >= 1, got {value!r}")


@dataclass(frozen=True)
class RegionSettings:
    eps: float = DEFAULT_EPS
    eps_o2: Optional[float] = None
    policy: str = "auto"
    check_step: float = CHECK_STEP
    sample_dt: float = SAMPLE_DT
    init_mode: str = "both"

    def __post_init__(self):
        _positive("region.eps", self.eps)
        if self.eps_o2 is not None:
            _positive("region.eps_o2", self.eps_o2)
        _choice("region.policy", self.policy, POLICIES)
        _choice("region.init_mode", self.init_mode, INIT_MODES)
        _positive("region.check_step", self.check_step)
        _positive("region.sample_dt", self.sample_dt)


@dataclass(frozen=True)
class TdsSettings:
    dt: float = TDS_DT
    damping: str = "on-speed"

    def __post_init__(self):
        _positive("tds.dt", self.dt)
        _choice("tds.damping", self.damping, DAMPING_MODES)


@dataclass(frozen=True)
class HtmsSettings:
    terms: int = HTMS_TERMS
    dt_min: float = DT_MIN

    def __post_init__(self):
        if not isinstance(self.terms, int) or self.terms < 1:
            raise ConfigurationError(f"htms.terms must be an integer >= 1, got {self.terms!r}")
        _positive("htms.dt_min", self.dt_min)


@dataclass(frozen=True)
class AssessmentSettings:
    engine: str = "analytic"
    horizon: float = 3.0
    recovery_attempts: int = 2
    clusters: int = 2
    workers: int = 4

    def __post_init__(self):
        _choice("assessment.engine", self.engine, ENGINES)
        _positive("assessment.horizon", self.horizon)
        if not math.isfinite(self.horizon):
            raise ConfigurationError("assessment.horizon must be finite")
        if self.recovery_attempts < 0:
            raise ConfigurationError("assessment.recovery_attempts cannot be negative")
        if self.clusters < 2:
            raise ConfigurationError("assessment.clusters must be at least 2")
        _positive("assessment.workers", self.workers)


@dataclass(frozen=True)
class PathSettings:
    cases_dir: str = "cases"
    plans_dir: str = "plans"
    output_dir: str = "output"

    def resolve(self, name: str) -> str:
        path = getattr(self, name)
        return path if os.path.isabs(path) else os.path.join(ROOT_DIR, path)


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    qpf: QpfSettings = field(default_factory=QpfSettings)
    loads: LoadSettings = field(default_factory=LoadSettings)
    linearization: LinearizationSettings = field(default_factory=LinearizationSettings)
    region: RegionSettings = field(default_factory=RegionSettings)
    tds: TdsSettings = field(default_factory=TdsSettings)
    htms: HtmsSettings = field(default_factory=HtmsSettings)
    assessment: AssessmentSettings = field(default_factory=AssessmentSettings)
    case_defaults: CaseDefaults = field(default_factory=CaseDefaults)
    paths: PathSettings = field(default_factory=PathSettings)

    def __post_init__(self):
        _choice("log_level", self.log_level, LOG_LEVELS)

    def apply(self, overrides: Mapping[str, Any]) -> "Settings":
        """
        New settings with dotted-key overrides, e.g. {"region.eps": 0.1}.
        None values are skipped so unset CLI flags leave the file value alone.
        """
        current = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if not name:
                if section not in current or isinstance(current[section], dict):
                    raise ConfigurationError(f"unknown setting '{key}'")
                current[section] = value
                continue
            if section not in current or not isinstance(current[section], dict) or name not in current[section]:
                raise ConfigurationError(f"unknown setting '{key}'")
            current[section][name] = value
        return settings_from_dict(current)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "qpf": QpfSettings,
    "loads": LoadSettings,
    "linearization": LinearizationSettings,
    "region": RegionSettings,
    "tds": TdsSettings,
    "htms": HtmsSettings,
    "assessment": AssessmentSettings,
    "case_defaults": CaseDefaults,
    "paths": PathSettings,
}


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigurationError(f"unknown key '{name}.{key}'")
    values = dict(raw)
    if cls is CaseDefaults and "zip_split" in values:
        split = tuple(float(x) for x in values["zip_split"])
        if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
            raise ConfigurationError("case_defaults.zip_split must be three non-negative fractions summing to 1")
        values["zip_split"] = split
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(f"section '{name}': {exc}") from exc


def settings_from_dict(raw: Mapping[str, Any]) -> Settings:
    unknown = set(raw) - set(_SECTIONS) - {"log_level"}
    if unknown:
        raise ConfigurationError(f"unknown key '{sorted(unknown)[0]}'")
    parts = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    return Settings(log_level=str(raw.get("log_level", "INFO")).upper(), **parts)


def load_settings(path: Optional[str] = None) -> Settings:
    """
    Read the yaml settings file, then apply environment overrides:
      - SWINGLINE_CONFIG: settings file used when `path` is not given
      - SWINGLINE_LOG_LEVEL, SWINGLINE_OUTPUT_DIR
    """
    load_dotenv()
    path = path or os.getenv("SWINGLINE_CONFIG") or DEFAULT_CONFIG
    if not os.path.exists(path):
        raise ConfigurationError(f"settings file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"{path} does not hold a mapping")
    settings = settings_from_dict(raw)

    level = os.getenv("SWINGLINE_LOG_LEVEL")
    out_dir = os.getenv("SWINGLINE_OUTPUT_DIR")
    if level:
        settings = replace(settings, log_level=level.upper())
    if out_dir:
        settings = replace(settings, paths=replace(settings.paths, output_dir=out_dir))
    logger.debug("Settings loaded from %s", path)
    return settings
