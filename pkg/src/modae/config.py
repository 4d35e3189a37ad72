"""Network and training configuration.

Config files are plain JSON with exactly the fields of the dataclasses
below; unknown keys are rejected so typos fail loudly instead of being
silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# Paper-scale channel schedule divided by 8; latent 64. Configurable back up.
DESK_CHANNELS = (64, 64, 64, 64, 64, 32, 16)


@dataclass(frozen=True)
class NetworkConfig:
    latent_dim: int = 64
    channel_schedule: tuple[int, ...] = DESK_CHANNELS
    max_level: int = 6
    noise_enabled: bool = True
    leaky_slope: float = 0.2
    img_channels: int = 3
    # Inserts a second (non-upsampling) block at this resolution level,
    # freeing capacity when a layer range is pinned by invariance training.
    extra_block_level: int | None = None

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if len(self.channel_schedule) != self.max_level + 1:
            raise ConfigError(
                f"channel_schedule length {len(self.channel_schedule)} != max_level+1 = {self.max_level + 1}"
            )
        if any(c < 1 for c in self.channel_schedule):
            raise ConfigError("channel counts must be positive")
        if self.extra_block_level is not None and not (0 <= self.extra_block_level <= self.max_level):
            raise ConfigError(f"extra_block_level {self.extra_block_level} outside [0, {self.max_level}]")

    def resolution(self, level: int) -> int:
        return 4 * 2**level

    @property
    def max_resolution(self) -> int:
        return self.resolution(self.max_level)


@dataclass(frozen=True)
class LossWeights:
    lambda_x: float = 0.2
    lambda_z: float = 1.0
    margin_gap: float = 0.5

    def __post_init__(self):
        if min(self.lambda_x, self.lambda_z, self.margin_gap) < 0:
            raise ConfigError("loss weights must be non-negative")


def _default_lr(max_level: int) -> tuple[float, ...]:
    # 0.0005 through the 32x32 level (level 3), 0.001 above.
    return tuple(0.0005 if lvl <= 3 else 0.001 for lvl in range(max_level + 1))


def _default_margin(max_level: int) -> tuple[float, ...]:
    # 2.0 for the first two resolution steps, 0.5 thereafter.
    return tuple(2.0 if lvl <= 1 else 0.5 for lvl in range(max_level + 1))


@dataclass(frozen=True)
class TrainConfig:
    phase_budgets: tuple[int, ...] = (100_000,) * 7  # samples per level
    fade_budgets: tuple[int, ...] = (50_000,) * 7    # samples per fade-in
    batch_schedule: tuple[int, ...] = (64, 64, 32, 16, 8, 8, 8)
    lr_schedule: tuple[float, ...] | None = None     # None = built-in rule
    margin_schedule: tuple[float, ...] | None = None
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    ema_decay: float = 0.999
    lambda_x: float = 0.2
    lambda_z: float = 1.0
    # weight of the latent-cycle term in the *encoder* step; the alternating
    # scheme erodes the decode-encode cycle at desk scale without it. 0
    # recovers the plain alternating objectives.
    lambda_cycle: float = 1.0
    # encoder-step KL composition. "margin": the adversarial margin-clamped
    # real-vs-fake gap. "attract": attract real codes to the prior only; at
    # desk scale the repulsion direction never clamps off (the generator
    # cannot outrun it) and it stalls the latent cycle.
    gap_mode: str = "attract"
    attract_weight: float = 0.1
    mixed_fraction: float = 0.25
    mirror_augment: bool = False
    invariance_mode: str = "off"  # off | hflip
    seed: int = 0

    def __post_init__(self):
        if any(b < 0 for b in self.phase_budgets) or any(b < 0 for b in self.fade_budgets):
            raise ConfigError("budgets must be non-negative")
        if any(b < 1 for b in self.batch_schedule):
            raise ConfigError("batch sizes must be positive")
        if not 0.0 <= self.mixed_fraction <= 1.0:
            raise ConfigError(f"mixed_fraction {self.mixed_fraction} outside [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay {self.ema_decay} outside [0, 1)")
        if self.invariance_mode not in ("off", "hflip"):
            raise ConfigError(f"unknown invariance_mode {self.invariance_mode!r}")
        if self.gap_mode not in ("margin", "attract"):
            raise ConfigError(f"unknown gap_mode {self.gap_mode!r}")
        if self.invariance_mode == "hflip" and self.mirror_augment:
            raise ConfigError("mirror_augment and hflip invariance are mutually exclusive")

    def lr_for(self, level: int) -> float:
        sched = self.lr_schedule or _default_lr(max(level, len(self.phase_budgets) - 1))
        return sched[min(level, len(sched) - 1)]

    def margin_for(self, level: int) -> float:
        sched = self.margin_schedule or _default_margin(max(level, len(self.phase_budgets) - 1))
        return sched[min(level, len(sched) - 1)]

    def batch_for(self, level: int) -> int:
        return self.batch_schedule[min(level, len(self.batch_schedule) - 1)]


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def network_config_from_dict(data: dict) -> NetworkConfig:
    return _from_dict(NetworkConfig, data)


def train_config_from_dict(data: dict) -> TrainConfig:
    return _from_dict(TrainConfig, data)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def load_config_file(path: str | Path) -> tuple[NetworkConfig, TrainConfig]:
    """Read a JSON config with top-level "network" and "train" sections."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    unknown = set(raw) - {"network", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    net = network_config_from_dict(raw.get("network", {}))
    train = train_config_from_dict(raw.get("train", {}))
    return net, train


def save_config_file(path: str | Path, net: NetworkConfig, train: TrainConfig) -> None:
    payload = {"network": config_to_dict(net), "train": config_to_dict(train)}
    Path(path).write_text(json.dumps(payload, indent=2))
