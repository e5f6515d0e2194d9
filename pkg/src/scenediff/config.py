"""Run configuration: one JSON document drives a reproducible run."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .decoder import DecoderConfig
from .diffusion import DiffusionConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .metrics import KernelConfig
from .model import ModelConfig
from .scenario import SceneGenConfig
from .training import LossConfig, TrainConfig

CONFIG_VERSION = 1


@dataclass
class Seeds:
    data: int = 0
    init: int = 0
    train: int = 0
    sample: int = 0


@dataclass
class Paths:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class MetricsConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    n_samples: int = 1
    scene_count: int = 0  # scenes taken from the data dir for eval; 0 means all


@dataclass
class RunConfig:
    scenario: SceneGenConfig = field(default_factory=SceneGenConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seeds: Seeds = field(default_factory=Seeds)
    paths: Paths = field(default_factory=Paths)
    data_count: int = 10
    config_version: int = CONFIG_VERSION

    @property
    def model(self):
        return ModelConfig(encoder=self.encoder, decoder=self.decoder, diffusion=self.diffusion,
                           horizon_history=self.scenario.horizon_history)

    def validate(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigError(f"config_version {self.config_version} unsupported (expected {CONFIG_VERSION})")
        self.scenario.validate()
        self.model.validate()
        if self.scenario.horizon_future != self.decoder.T_f:
            raise ConfigError(f"scenario.horizon_future {self.scenario.horizon_future} != decoder.T_f {self.decoder.T_f}")
        self.loss.validate(self.decoder.T_f)
        self.train.validate()
        self.metrics.kernel.validate()
        if self.metrics.n_samples < 1:
            raise ConfigError("metrics.n_samples must be >= 1")
        if self.metrics.scene_count < 0:
            raise ConfigError("metrics.scene_count must be >= 0")
        if self.data_count < 0:
            raise ConfigError("data_count must be >= 0")
        for name, value in dataclasses.asdict(self.seeds).items():
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(f"seeds.{name} must be a non-negative integer, got {value!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def resolve(self, base):
        """Copy with relative paths anchored at ``base`` (usually the config file's folder)."""
        base = Path(base)
        paths = Paths(**{k: str(base / v) for k, v in dataclasses.asdict(self.paths).items()})
        return dataclasses.replace(self, paths=paths)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else fields[name].default
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "config_version" not in data:
        raise ConfigError("config is missing config_version")
    try:
        return _build(RunConfig, data, "config").validate()
    except TypeError as e:
        raise ConfigError(f"config: {e}") from None


def load_config(path):
    """Read, validate and path-resolve a run configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    return config_from_dict(data).resolve(path.parent)


def ablation_variants(cfg):
    """The four architecture rows of the ablation table, sharing every seed."""
    rows = {
        "full": (True, True, True),
        "no_other_agent_former": (False, True, True),
        "no_hd_map_former": (True, False, True),
        "no_decoder_self_attention": (True, True, False),
    }
    out = {}
    for name, (oaf, hdm, dsa) in rows.items():
        enc = dataclasses.replace(cfg.encoder, enable_other_agent_former=oaf, enable_hd_map_former=hdm)
        dec = dataclasses.replace(cfg.decoder, enable_self_attention=dsa)
        out[name] = dataclasses.replace(cfg, encoder=enc, decoder=dec)
    return out
