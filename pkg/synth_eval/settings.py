"""
Settings Manager for synth-eval
Handles all configuration: dataclass defaults, environment variables, TOML
config files and CLI overrides.
Runtime-only fields (threads, logging, output location) never enter reports.
"""

import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
from dataclasses import dataclass, field, asdict, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULT_OUT_DIR = "synth-eval-out"

# Fields that describe how a run executes, not what it computes.
# They are excluded from the resolved config embedded in reports.
RUNTIME_FIELDS = {
    'global': ['threads', 'log_level', 'log_format', 'out_dir', 'plots'],
}


@dataclass
class GlobalSettings:
    """Global run settings."""
    seed: int = 0
    threads: int = 0  # 0 means all cores
    log_level: str = "INFO"
    log_format: str = "text"
    out_dir: str = DEFAULT_OUT_DIR
    output_format: str = "both"  # csv, json or both
    plots: bool = False

    def load_from_env(self):
        """Load settings from environment variables."""
        threads = os.environ.get('SYNTH_EVAL_THREADS', '')
        if threads:
            try:
                self.threads = int(threads)
            except ValueError:
                raise ConfigError(f"SYNTH_EVAL_THREADS must be an integer, got {threads!r}")
        seed = os.environ.get('SYNTH_EVAL_SEED', '')
        if seed:
            try:
                self.seed = int(seed)
            except ValueError:
                raise ConfigError(f"SYNTH_EVAL_SEED must be an integer, got {seed!r}")
        self.log_level = os.environ.get('SYNTH_EVAL_LOG_LEVEL', self.log_level)
        self.log_format = os.environ.get('SYNTH_EVAL_LOG_FORMAT', self.log_format)

    def effective_threads(self) -> int:
        """Worker count after applying the 0 = all cores rule."""
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1

    def validate(self):
        if self.output_format not in ('csv', 'json', 'both'):
            raise ConfigError(f"output_format must be csv, json or both, got {self.output_format!r}")
        if self.log_format not in ('text', 'json'):
            raise ConfigError(f"log_format must be text or json, got {self.log_format!r}")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")


@dataclass
class MetricSettings:
    """Image-quality metric settings and the inputs of the ``metrics`` run."""
    L: float = 1.0
    k1: float = 0.01
    k2: float = 0.03
    ssim_mode: str = "global"  # global or windowed
    window: int = 11
    gaussian_sigma: float = 1.5
    ref_dir: str = ""
    syn_dir: str = ""
    compare_dir: str = ""
    manifest: str = ""
    direction: str = ""

    def validate(self):
        if self.L <= 0:
            raise ConfigError("metrics.L must be > 0")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("metrics.k1 and metrics.k2 must be > 0")
        if self.ssim_mode not in ('global', 'windowed'):
            raise ConfigError(f"metrics.ssim_mode must be global or windowed, got {self.ssim_mode!r}")


@dataclass
class PreprocessSettings:
    """Resampling and resizing applied before slice-wise evaluation."""
    target_spacing: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    target_dims: List[int] = field(default_factory=lambda: [224, 224])
    resize: bool = True

    def validate(self):
        if len(self.target_spacing) != 3 or any(s <= 0 for s in self.target_spacing):
            raise ConfigError("preprocess.target_spacing must be three positive numbers")
        if len(self.target_dims) != 2 or any(d <= 0 for d in self.target_dims):
            raise ConfigError("preprocess.target_dims must be two positive integers")


@dataclass
class PhantomSettings:
    """Synthetic phantom and phantom-embedding settings."""
    dims: List[int] = field(default_factory=lambda: [64, 64, 24])
    spacing: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    n_structures: int = 6
    lesion: bool = True
    subjects: int = 1
    embedding_dim: int = 16
    slice_signal_scale: float = 1.0
    modality_offset_scale: float = 0.2
    noise_scale: float = 0.01

    def validate(self):
        if self.subjects < 1:
            raise ConfigError("phantom.subjects must be >= 1")


@dataclass
class CorruptionSettings:
    """Corruption settings for the ``corrupt`` and ``robustness`` runs."""
    input: str = ""
    family: str = "GaussianNoise"
    severity: str = "Minor"
    params: Dict[str, float] = field(default_factory=dict)
    # family name -> parameter overrides applied to every severity
    overrides: Dict[str, Dict[str, float]] = field(default_factory=dict)
    input_dir: str = ""
    prediction_dir: str = ""
    sweep: bool = False


@dataclass
class DiceSettings:
    """Inputs of the ``dice`` run."""
    pred: str = ""
    gt: str = ""


@dataclass
class LossSettings:
    """Loss functional and gradient-check settings."""
    tau: float = 0.07
    normalize: bool = True
    l1_weight: float = 1.0
    w_pixel: float = 1.0
    w_semantic: float = 1.0
    fd_step: float = 1e-5
    fd_tolerance: float = 1e-4
    instances: int = 50
    embeddings: str = ""

    def validate(self):
        if self.tau <= 0:
            raise ConfigError("losses.tau must be > 0")
        if self.w_pixel < 0 or self.w_semantic < 0 or self.w_pixel + self.w_semantic <= 0:
            raise ConfigError("losses.w_pixel and losses.w_semantic must be >= 0 with a positive sum")
        if self.l1_weight < 0:
            raise ConfigError("losses.l1_weight must be >= 0")
        if self.instances < 1:
            raise ConfigError("losses.instances must be >= 1")


@dataclass
class EmbedSettings:
    """Inputs and parameters of the ``embed-analyze`` run."""
    embeddings: str = ""
    prototypes: str = ""
    k: int = 2
    temperature: float = 0.07

    def validate(self):
        if self.temperature <= 0:
            raise ConfigError("embed.temperature must be > 0")


# TOML table name -> SettingsManager attribute
SECTIONS: Tuple[Tuple[str, str], ...] = (
    ("global", "global_settings"),
    ("metrics", "metrics"),
    ("preprocess", "preprocess"),
    ("phantom", "phantom"),
    ("corruption", "corruption"),
    ("dice", "dice"),
    ("losses", "losses"),
    ("embed", "embed"),
)


class SettingsManager:
    """Manages all run settings.

    Precedence, lowest first: dataclass defaults, environment variables,
    the TOML config file, then explicit overrides (CLI flags).
    """

    def __init__(self, config_path: Optional[str] = None,
                 overrides: Optional[Dict[str, Dict[str, Any]]] = None):
        self.config_path = config_path

        # Initialize all settings objects
        self.global_settings = GlobalSettings()
        self.metrics = MetricSettings()
        self.preprocess = PreprocessSettings()
        self.phantom = PhantomSettings()
        self.corruption = CorruptionSettings()
        self.dice = DiceSettings()
        self.losses = LossSettings()
        self.embed = EmbedSettings()

        # Load from environment first
        self.global_settings.load_from_env()

        # Then the config file
        if config_path:
            self._load_file(Path(config_path))

        # CLI overrides win
        if overrides:
            self.apply(overrides)

        self.validate()

    def _section(self, name: str) -> Any:
        for table, attr in SECTIONS:
            if table == name:
                return getattr(self, attr)
        raise ConfigError(f"Unknown config section [{name}]")

    def _load_file(self, path: Path):
        """Load a TOML config file."""
        try:
            with path.open('rb') as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}")
        self.apply(data)

    def apply(self, data: Dict[str, Dict[str, Any]]):
        """Apply a {section: {field: value}} mapping, rejecting unknown keys."""
        for section, values in data.items():
            obj = self._section(section)
            if not isinstance(values, dict):
                raise ConfigError(f"Config section [{section}] must be a table")
            known = {f.name: f for f in fields(obj)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"Unknown config key {section}.{key}")
                if value is None:
                    continue
                setattr(obj, key, _coerce(getattr(obj, key), value, f"{section}.{key}"))

    def validate(self):
        """Validate every section that defines a check."""
        for _, attr in SECTIONS:
            obj = getattr(self, attr)
            if hasattr(obj, 'validate'):
                obj.validate()

    def resolved(self) -> Dict[str, Dict[str, Any]]:
        """Plain dict of every non-runtime field, suitable for embedding in reports."""
        result = {}
        for table, attr in SECTIONS:
            runtime = RUNTIME_FIELDS.get(table, [])
            data = asdict(getattr(self, attr))
            result[table] = {k: v for k, v in data.items() if k not in runtime}
        return result

    def get_out_dir(self) -> Path:
        """Output directory for the current run."""
        return Path(self.global_settings.out_dir)


def _coerce(current: Any, value: Any, name: str) -> Any:
    """Convert ``value`` to the type of the field's current value."""
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                return value.lower() in ('true', '1', 'yes')
            return bool(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, str):
            return str(value)
        if isinstance(current, list):
            return list(value)
        if isinstance(current, dict):
            return dict(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for {name}: {value!r}")
    return value
