"""The six generalized scenario parameters and their sampling distributions.

Every episode draws mass, speed, fog, brake deceleration, lane-change
distance and vertical (lateral) offset from configurable distributions in a
fixed order, so a dataset is a pure function of (master seed, configuration).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING

from .rng import RngStream

if TYPE_CHECKING:  # pragma: no cover
    from .scenarios import ScenarioTemplate

_MAX_REJECTIONS = 1000


class SamplingError(Exception):
    pass


class NonConvergentError(SamplingError):
    """Truncation bounds rejected 1000 consecutive candidate draws."""


class ConfigError(SamplingError):
    pass


class DistributionKind(enum.Enum):
    GAUSSIAN_TRUNCATED = "gaussian_truncated"
    HALF_NORMAL = "half_normal"


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistributionKind
    mean: float
    std: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.std < 0:
            raise ConfigError(f"std must be >= 0, got {self.std}")
        if not self.lower < self.upper:
            raise ConfigError(f"need lower < upper, got [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class ParameterSample:
    """One draw of the six scenario parameters."""

    mass_kg: float
    speed_mps: float
    fog_density_per_m: float
    brake_decel_mps2: float
    lane_change_distance_m: float
    vertical_offset_m: float

    def validate(self) -> None:
        ok = (
            800.0 <= self.mass_kg <= 2500.0
            and self.speed_mps > 0.0
            and 0.0 <= self.fog_density_per_m <= 0.05
            and 2.0 <= self.brake_decel_mps2 <= 9.0
            and self.lane_change_distance_m >= 10.0
            and self.vertical_offset_m > 0.0
        )
        if not ok:
            raise ValueError(f"parameter sample out of range: {self}")


def _gauss_spec(mean, std, lower, upper) -> DistributionSpec:
    return DistributionSpec(DistributionKind.GAUSSIAN_TRUNCATED, mean, std, lower, upper)


@dataclass(frozen=True)
class SamplingConfig:
    """Distribution for each parameter; speed is split by environment."""

    mass: DistributionSpec
    speed_highway: DistributionSpec
    speed_intersection: DistributionSpec
    fog: DistributionSpec
    brake: DistributionSpec
    lane_change_distance: DistributionSpec
    vertical_offset: DistributionSpec

    @staticmethod
    def defaults() -> "SamplingConfig":
        return SamplingConfig(
            mass=_gauss_spec(1500.0, 250.0, 800.0, 2500.0),
            speed_highway=_gauss_spec(25.0, 3.0, 10.0, 40.0),
            speed_intersection=_gauss_spec(12.5, 2.5, 4.0, 20.0),
            fog=DistributionSpec(DistributionKind.HALF_NORMAL, 0.0, 0.02, 0.0, 0.05),
            brake=_gauss_spec(6.0, 1.0, 2.0, 9.0),
            lane_change_distance=_gauss_spec(30.0, 8.0, 10.0, 80.0),
            vertical_offset=_gauss_spec(3.5, 0.5, 1.5, 5.5),
        )

    @staticmethod
    def from_file(path: str | Path) -> "SamplingConfig":
        """Load overrides from a flat ``key = value`` text file.

        Keys follow ``<param>.<field>``, e.g. ``mass.mean``, ``fog.std``,
        ``speed.highway.mean``. Unknown keys are rejected. ``#`` starts a
        comment.
        """
        cfg = SamplingConfig.defaults()
        fields = {
            "mass": "mass",
            "speed.highway": "speed_highway",
            "speed.intersection": "speed_intersection",
            "fog": "fog",
            "brake": "brake",
            "lane_change": "lane_change_distance",
            "vertical_offset": "vertical_offset",
        }
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            prefix, _, attr = key.rpartition(".")
            if prefix not in fields or attr not in ("mean", "std", "lower", "upper"):
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                number = float(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad number {value.strip()!r}") from exc
            name = fields[prefix]
            cfg = replace(cfg, **{name: replace(getattr(cfg, name), **{attr: number})})
        return cfg


def sample_gaussian_truncated(spec: DistributionSpec, rng: RngStream) -> float:
    """Box-Muller draw, rejection-resampled into [lower, upper]."""
    if spec.kind is not DistributionKind.GAUSSIAN_TRUNCATED:
        raise ValueError(f"expected truncated-gaussian spec, got {spec.kind}")
    if spec.std == 0.0:
        if not spec.lower <= spec.mean <= spec.upper:
            raise NonConvergentError(
                f"zero-variance mean {spec.mean} outside [{spec.lower}, {spec.upper}]"
            )
        return spec.mean
    for _ in range(_MAX_REJECTIONS):
        value = rng.gaussian(spec.mean, spec.std)
        if spec.lower <= value <= spec.upper:
            return value
    raise NonConvergentError(
        f"{_MAX_REJECTIONS} rejections for N({spec.mean}, {spec.std}) on "
        f"[{spec.lower}, {spec.upper}]"
    )


def sample_half_normal(spec: DistributionSpec, rng: RngStream) -> float:
    """|N(0, std)| clamped to [0, upper]."""
    if spec.kind is not DistributionKind.HALF_NORMAL:
        raise ValueError(f"expected half-normal spec, got {spec.kind}")
    if spec.std == 0.0:
        return 0.0
    return min(abs(rng.gaussian(0.0, spec.std)), spec.upper)


def _draw(spec: DistributionSpec, rng: RngStream) -> float:
    if spec.kind is DistributionKind.HALF_NORMAL:
        return sample_half_normal(spec, rng)
    return sample_gaussian_truncated(spec, rng)


def sample_parameters(
    template: "ScenarioTemplate", config: SamplingConfig, rng: RngStream
) -> ParameterSample:
    """Draw the six parameters in fixed order: mass, speed, fog, brake,
    lane-change distance, vertical offset.

    Intersection templates still consume the two lane-change draws so that
    the stream stays aligned across environments; the values are ignored
    downstream.
    """
    from .scenarios import Environment  # local import to avoid a cycle

    speed_spec = (
        config.speed_highway
        if template.environment is Environment.HIGHWAY
        else config.speed_intersection
    )
    sample = ParameterSample(
        mass_kg=_draw(config.mass, rng),
        speed_mps=_draw(speed_spec, rng),
        fog_density_per_m=_draw(config.fog, rng),
        brake_decel_mps2=_draw(config.brake, rng),
        lane_change_distance_m=_draw(config.lane_change_distance, rng),
        vertical_offset_m=_draw(config.vertical_offset, rng),
    )
    sample.validate()
    return sample
