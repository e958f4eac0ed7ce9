from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..exceptions import ConfigError


@dataclass(frozen=True)
class EncoderConfig:
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    output_stride: int = 8
    dilations: tuple[int, int] = (2, 4)
    multi_grid: tuple[int, ...] | None = None
    units_per_stage: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if self.multi_grid is not None:
            object.__setattr__(self, "multi_grid", tuple(self.multi_grid))
            if not self.multi_grid or min(self.multi_grid) < 1:
                raise ConfigError("multi_grid multipliers must be positive")
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise ConfigError("stage_channels needs four positive entries")
        if self.output_stride != 8:
            raise ConfigError("only output_stride 8 is supported")
        if len(self.dilations) != 2 or min(self.dilations) < 1:
            raise ConfigError("dilations needs two positive rates")
        if self.units_per_stage < 1:
            raise ConfigError("units_per_stage must be >= 1")

    @property
    def final_stage_rates(self) -> tuple[int, ...]:
        base = self.dilations[1]
        if self.multi_grid is None:
            return (base,) * self.units_per_stage
        return tuple(base * m for m in self.multi_grid)

    @property
    def bottleneck_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def lowlevel_channels(self) -> int:
        return self.stage_channels[0]


@dataclass(frozen=True)
class AttentionConfig:
    channel: str = "SE"
    spatial: str = "MSA"
    danet: bool = False
    se_reduction: int = 16
    eca_gamma: int = 2
    eca_b: int = 1
    aspp_rates: tuple[int, ...] = (1, 2, 4, 8)
    danet_reduction: int = 8

    def __post_init__(self):
        object.__setattr__(self, "aspp_rates", tuple(self.aspp_rates))
        if self.channel not in ("SE", "ECA", "none"):
            raise ConfigError(f"unknown channel attention {self.channel!r}")
        if self.spatial not in ("MSA", "ASPP", "none"):
            raise ConfigError(f"unknown spatial attention {self.spatial!r}")
        if self.danet and (self.channel != "none" or self.spatial != "none"):
            raise ConfigError("DANet excludes the channel and spatial selections")
        if self.se_reduction < 1 or self.danet_reduction < 1:
            raise ConfigError("reductions must be >= 1")
        if not self.aspp_rates or min(self.aspp_rates) < 1:
            raise ConfigError("aspp_rates must be positive")

    def check_channels(self, channels: int) -> None:
        if self.channel == "SE" and channels % self.se_reduction:
            raise ConfigError(f"se_reduction {self.se_reduction} does not divide {channels} channels")
        if self.spatial == "ASPP" and channels < 4:
            raise ConfigError("ASPP spatial attention needs at least 4 channels")


@dataclass(frozen=True)
class DecoderConfig:
    variant: str = "D1"
    d2_lowlevel_channels: int = 16

    def __post_init__(self):
        if self.variant not in ("D1", "D2"):
            raise ConfigError(f"unknown decoder {self.variant!r}")
        if self.d2_lowlevel_channels < 1:
            raise ConfigError("d2_lowlevel_channels must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self):
        self.attention.check_channels(self.encoder.bottleneck_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                encoder=EncoderConfig(**d.get("encoder", {})),
                attention=AttentionConfig(**d.get("attention", {})),
                decoder=DecoderConfig(**d.get("decoder", {})),
            )
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None
