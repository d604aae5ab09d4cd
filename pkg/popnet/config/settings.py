"""
Configuration settings for the population / network pipeline.
"""
import os
import json
import logging
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional

import yaml

# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger("popnet")

# Industry categories used throughout (census C24030 regrouped)
INDUSTRIES = [
    "AGR_EXT", "CON", "MFG", "WHL", "RET", "TRN_UTL", "INF", "FIN",
    "PRF", "EDU", "MED", "ENT_art", "ENT_food", "SRV", "ADM_MIL",
]
INDUSTRY_INDEX = {name: i for i, name in enumerate(INDUSTRIES)}
TEACHER_INDUSTRY = "EDU"
STAFF_INDUSTRY = "ADM_MIL"

# Sentinel for origins/destinations outside the synthesis area
OUTSIDE = "OUTSIDE"

# Group quarters: age bands x residence types
GQ_BANDS = ["under18", "18_64", "65plus"]
GQ_TYPES = ["institutional", "civilian_noninst", "military"]
P43_TYPE_CODES = {"institutional": "inst", "civilian_noninst": "noninst", "military": "mil"}
# Only these five (band, type) pairs are ever instantiated as places
GQ_KINDS = [
    ("under18", "institutional"),
    ("18_64", "institutional"),
    ("18_64", "civilian_noninst"),
    ("18_64", "military"),
    ("65plus", "institutional"),
]
GQ_AGE_RANGES = {"under18": (10, 17), "18_64": (18, 64), "65plus": (65, 95)}

# Grades: PK=-1, KG=0, 1..12
GRADE_CODES = {"PK": -1, "KG": 0}
GRADE_CODES.update({str(g): g for g in range(1, 13)})
GRADE_LABELS = {v: k for k, v in GRADE_CODES.items()}
ALL_GRADES = list(range(-1, 13))

LAYERS = ["home", "work", "school", "gq", "ref"]

# Default check values from the source method
DEFAULT_COST_CUTOFF = 15.0
DEFAULT_MAX_STEPS = 200000
DEFAULT_COOLING = [0.99, 0.99, 0.99, 0.995]
DEFAULT_MASTER_SEED = 20240501
MIN_PLACE_RESIDENTS = 20


class ConfigError(ValueError):
    """Raised when a configuration value is invalid; message names the field."""
    pass


def setup_logging(level: str = "INFO"):
    """Change the package log level (called by the CLI)."""
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"log_level: unknown level {level!r}")
    logging.getLogger().setLevel(numeric)
    logger.setLevel(numeric)


@dataclass
class AnnealConfig:
    """Simulated-annealing settings for the per-CBG household search."""
    cost_cutoff: float = DEFAULT_COST_CUTOFF
    max_steps_per_level: int = DEFAULT_MAX_STEPS
    cooling: List[float] = field(default_factory=lambda: list(DEFAULT_COOLING))
    start_temp_fraction: float = 0.5
    urban_threshold: float = 20.0
    critical_quantile: float = 0.95
    temp_floor: float = 1e-12
    verify_interval: int = 10000

    def _validate(self):
        """验证配置的有效性"""
        if not self.cost_cutoff > 0:
            raise ConfigError(f"anneal.cost_cutoff must be > 0, got {self.cost_cutoff}")
        if self.max_steps_per_level < 0:
            raise ConfigError(f"anneal.max_steps_per_level must be >= 0, got {self.max_steps_per_level}")
        if len(self.cooling) != 4:
            raise ConfigError(f"anneal.cooling needs one multiplier per ladder level (4), got {len(self.cooling)}")
        for m in self.cooling:
            if not 0.0 < m < 1.0:
                raise ConfigError(f"anneal.cooling multipliers must be in (0, 1), got {m}")
        if not 0.0 < self.start_temp_fraction:
            raise ConfigError("anneal.start_temp_fraction must be > 0")
        if not 0.0 < self.critical_quantile < 1.0:
            raise ConfigError("anneal.critical_quantile must be in (0, 1)")
        if self.urban_threshold < 0:
            raise ConfigError("anneal.urban_threshold must be >= 0")
        if self.verify_interval < 1:
            raise ConfigError("anneal.verify_interval must be >= 1")


@dataclass
class NetworkConfig:
    """Layer parameters for the contact network."""
    work_k: float = 8.0
    work_alpha: float = 0.9
    school_k: float = 12.0
    school_alpha: float = 0.9
    gq_k: int = 12
    gq_beta: float = 0.25
    income_split: float = 40000.0
    placeholder_block: str = "low"
    static_sf_exponent: float = 2.5

    def _validate(self):
        for name in ("work_alpha", "school_alpha", "gq_beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"network.{name} must be in [0, 1], got {value}")
        for name in ("work_k", "school_k"):
            if getattr(self, name) < 0:
                raise ConfigError(f"network.{name} must be >= 0")
        if self.gq_k < 2 or self.gq_k % 2:
            raise ConfigError(f"network.gq_k must be a positive even integer, got {self.gq_k}")
        if self.placeholder_block not in ("low", "high"):
            raise ConfigError("network.placeholder_block must be 'low' or 'high'")
        if self.static_sf_exponent <= 2.0:
            raise ConfigError("network.static_sf_exponent must be > 2")


@dataclass
class PlacementConfig:
    """School / workplace / staff assignment parameters."""
    first_choice_prob: float = 0.9
    n_ranked_schools: int = 5
    institutional_staff_ratio: float = 0.1
    noninstitutional_staff_ratio: float = 0.02
    min_gq_residents: int = MIN_PLACE_RESIDENTS

    def _validate(self):
        if not 0.0 <= self.first_choice_prob <= 1.0:
            raise ConfigError("placement.first_choice_prob must be in [0, 1]")
        if self.n_ranked_schools < 1:
            raise ConfigError("placement.n_ranked_schools must be >= 1")
        if self.institutional_staff_ratio < 0 or self.noninstitutional_staff_ratio < 0:
            raise ConfigError("placement staff ratios must be >= 0")


@dataclass
class SimConfig:
    """SEIR agent-based simulation parameters."""
    p_transmit: float = 0.15
    exposed_days: int = 5
    infectious_days_min: int = 8
    infectious_days_max: int = 12
    n_seeds: int = 300
    horizon_days: int = 600
    boundary_interval_days: int = 10
    replicates: int = 10
    boundary_mode: str = "all_cause"

    def _validate(self):
        if not 0.0 <= self.p_transmit <= 1.0:
            raise ConfigError(f"sim.p_transmit must be in [0, 1], got {self.p_transmit}")
        if self.exposed_days < 1:
            raise ConfigError("sim.exposed_days must be >= 1")
        if self.infectious_days_min < 1 or self.infectious_days_max < self.infectious_days_min:
            raise ConfigError("sim.infectious_days_min..infectious_days_max must be a non-empty range of positive days")
        if self.n_seeds < 0:
            raise ConfigError("sim.n_seeds must be >= 0")
        if self.horizon_days < 1:
            raise ConfigError("sim.horizon_days must be >= 1")
        if self.boundary_interval_days < 1:
            raise ConfigError("sim.boundary_interval_days must be >= 1")
        if self.replicates < 1:
            raise ConfigError("sim.replicates must be >= 1")
        if self.boundary_mode not in ("all_cause", "home_only"):
            raise ConfigError("sim.boundary_mode must be 'all_cause' or 'home_only'")


_SECTIONS = {
    "anneal": AnnealConfig,
    "network": NetworkConfig,
    "placement": PlacementConfig,
    "sim": SimConfig,
}
_RUN_FIELDS = ("input_dir", "out_dir", "master_seed", "threads", "min_households", "min_gq_residents")


def _build_section(name: str, cls, values: Dict[str, Any]):
    """Instantiate a sub-config from a dict, rejecting unknown keys."""
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown setting")
    section = cls(**values)
    section._validate()
    return section


class RunConfig:
    """
    Configuration class that handles loading and saving of settings.
    """
    def __init__(self, config_file: Optional[str] = None):
        """
        初始化配置

        Args:
            config_file: YAML/JSON config path; None keeps all defaults
        """
        self.config_file = config_file
        self.input_dir: Optional[str] = None
        self.out_dir: Optional[str] = None
        self.master_seed: int = DEFAULT_MASTER_SEED
        self.threads: int = 1
        self.min_households: int = MIN_PLACE_RESIDENTS
        self.min_gq_residents: int = MIN_PLACE_RESIDENTS
        self.anneal = AnnealConfig()
        self.network = NetworkConfig()
        self.placement = PlacementConfig()
        self.sim = SimConfig()
        if config_file:
            self.load_config()

    def load_config(self):
        """加载配置文件"""
        if not os.path.exists(self.config_file):
            raise ConfigError(f"config: file {self.config_file} does not exist")
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                config_data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"config: cannot parse {self.config_file}: {e}") from e
        if not isinstance(config_data, dict):
            raise ConfigError("config: top level must be a mapping of sections")

        for key in config_data:
            if key != "run" and key not in _SECTIONS:
                raise ConfigError(f"{key}: unknown config section")
        self.apply_overrides(config_data.get("run") or {})
        for name, cls in _SECTIONS.items():
            if name in config_data:
                setattr(self, name, _build_section(name, cls, config_data[name]))
        logger.info("Loaded configuration from %s", self.config_file)

    def apply_overrides(self, overrides: Dict[str, Any]):
        """
        Apply flat overrides. Keys are either run-level fields or
        ``section.field`` (e.g. ``sim.p_transmit``). None values are ignored.
        """
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section_name, field_name = key.split(".", 1)
                if section_name not in _SECTIONS:
                    raise ConfigError(f"{key}: unknown config section")
                section = getattr(self, section_name)
                values = asdict(section)
                values[field_name] = value
                setattr(self, section_name, _build_section(section_name, _SECTIONS[section_name], values))
            elif key in _RUN_FIELDS:
                setattr(self, key, value)
            else:
                raise ConfigError(f"run.{key}: unknown setting")
        self._validate()

    def _validate(self):
        try:
            self.master_seed = int(self.master_seed)
            self.threads = int(self.threads)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"run.master_seed/threads must be integers: {e}") from e
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError(f"run.master_seed must be a 64-bit unsigned value, got {self.master_seed}")
        if self.threads < 1:
            raise ConfigError(f"run.threads must be >= 1, got {self.threads}")
        if self.min_households < 0 or self.min_gq_residents < 0:
            raise ConfigError("run.min_households/min_gq_residents must be >= 0")

    def as_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        data = {
            "run": {
                "input_dir": self.input_dir,
                "out_dir": self.out_dir,
                "master_seed": self.master_seed,
                "threads": self.threads,
                "min_households": self.min_households,
                "min_gq_residents": self.min_gq_residents,
            }
        }
        for name in _SECTIONS:
            data[name] = asdict(getattr(self, name))
        return data

    def save_config(self, path: str) -> bool:
        """保存配置到文件"""
        try:
            with open(path, "w", encoding="utf-8") as f:
                if path.endswith(".json"):
                    json.dump(self.as_dict(), f, indent=4)
                else:
                    yaml.safe_dump(self.as_dict(), f, sort_keys=False)
            logger.info("配置已保存到 %s", path)
            return True
        except OSError as e:
            logger.error("保存配置失败: %s", e)
            return False

    def __repr__(self):
        return f"RunConfig(input_dir={self.input_dir}, out_dir={self.out_dir}, master_seed={self.master_seed}, threads={self.threads})"
