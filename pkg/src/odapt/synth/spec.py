"""Domain and action parameterizations for the synthetic kitchen videos.

A DomainSpec fixes everything that makes one visual domain look like itself:
background style and colors, sprite palette, shapes, illumination, sensor
noise, and hand styling. An ActionSpec fixes one clip's motion: which of the
eight actions it is and the continuous parameters of its trajectory.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, asdict
from typing import Mapping

import numpy as np

from ..utils import rng_for

ACTIONS = ("pick", "put", "cut", "stir", "pour", "open", "close", "wipe")
NUM_ACTIONS = len(ACTIONS)

BACKGROUND_STYLES = ("flat", "gradient", "tiled")
SHAPE_FAMILIES = ("circles", "squares", "mixed")
HAND_STYLES = ("rounded", "angular")

PALETTE_SIZE = 6


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    background_style: str = "flat"
    background_seed: int = 0
    object_shape_family: str = "mixed"
    palette_seed: int = 0
    illumination_gain: float = 1.0
    sensor_noise_sigma: float = 0.0
    hand_sprite_style: str = "rounded"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.background_style not in BACKGROUND_STYLES:
            raise ValueError(f"unknown background_style {self.background_style!r}")
        if self.object_shape_family not in SHAPE_FAMILIES:
            raise ValueError(f"unknown object_shape_family {self.object_shape_family!r}")
        if self.hand_sprite_style not in HAND_STYLES:
            raise ValueError(f"unknown hand_sprite_style {self.hand_sprite_style!r}")
        if not (0.5 <= self.illumination_gain <= 1.5):
            raise ValueError(f"illumination_gain {self.illumination_gain} outside [0.5, 1.5]")
        if self.sensor_noise_sigma < 0:
            raise ValueError(f"sensor_noise_sigma {self.sensor_noise_sigma} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DomainSpec":
        return cls(**dict(d))


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def object_palette(palette_seed: int) -> np.ndarray:
    """Saturated sprite colors for one domain, shape (PALETTE_SIZE, 3)."""
    rng = rng_for("palette", palette_seed)
    base = rng.uniform(0.0, 1.0)
    colors = []
    for i in range(PALETTE_SIZE):
        hue = base + i / PALETTE_SIZE + rng.uniform(-0.04, 0.04)
        colors.append(_hsv(hue, rng.uniform(0.7, 0.95), rng.uniform(0.65, 0.95)))
    return np.stack(colors)


def hand_color(palette_seed: int) -> np.ndarray:
    """Skin-like hand tint, varying with the domain palette."""
    rng = rng_for("hand-color", palette_seed)
    return _hsv(rng.uniform(0.03, 0.11), rng.uniform(0.35, 0.6), rng.uniform(0.65, 0.9))


def background_colors(background_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two desaturated background colors (style decides how they are used)."""
    rng = rng_for("background", background_seed)
    hue = rng.uniform(0.0, 1.0)
    c0 = _hsv(hue, rng.uniform(0.05, 0.2), rng.uniform(0.3, 0.55))
    c1 = _hsv(hue + rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.2), rng.uniform(0.15, 0.35))
    return c0, c1


# Per-action parameter ranges. "speed" scales trajectory rates; anchors keep
# every sprite fully inside the frame for any in-range draw.
_PARAM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "pick": {"speed": (0.5, 1.5), "ax": (0.3, 0.7), "ay": (0.42, 0.55)},
    "put": {"speed": (0.5, 1.5), "ax": (0.3, 0.7), "ay": (0.42, 0.55)},
    "cut": {"speed": (0.5, 1.5), "phase": (0.0, 1.0), "ax": (0.35, 0.65), "ay": (0.4, 0.55)},
    "stir": {"speed": (0.5, 1.5), "phase": (0.0, 1.0), "ax": (0.3, 0.7), "ay": (0.35, 0.55)},
    "pour": {"speed": (0.5, 1.5), "ax": (0.35, 0.65), "ay": (0.35, 0.45)},
    "open": {"speed": (0.5, 1.5), "ax": (0.38, 0.62), "ay": (0.35, 0.6)},
    "close": {"speed": (0.5, 1.5), "ax": (0.38, 0.62), "ay": (0.35, 0.6)},
    "wipe": {"speed": (0.5, 1.5), "phase": (0.0, 1.0), "ax": (0.4, 0.6), "ay": (0.35, 0.65)},
}
_COMMON_RANGES: dict[str, tuple[float, float]] = {
    "hand_size": (0.05, 0.065),
    "obj_size": (0.042, 0.06),
}


@dataclass(frozen=True)
class ActionSpec:
    action_label: int
    motion_params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_action(self)

    @property
    def name(self) -> str:
        return ACTIONS[self.action_label]


def validate_action(action: ActionSpec) -> None:
    if not (0 <= action.action_label < NUM_ACTIONS):
        raise ValueError(f"action_label {action.action_label} outside [0, {NUM_ACTIONS})")
    ranges = dict(_COMMON_RANGES)
    ranges.update(_PARAM_RANGES[ACTIONS[action.action_label]])
    for key, value in action.motion_params.items():
        if key not in ranges:
            raise ValueError(f"unknown motion parameter {key!r} for action {ACTIONS[action.action_label]!r}")
        lo, hi = ranges[key]
        if not (lo <= value <= hi):
            raise ValueError(
                f"motion parameter {key}={value} outside [{lo}, {hi}] "
                f"for action {ACTIONS[action.action_label]!r}"
            )


def sample_action(action_label: int, rng: np.random.Generator) -> ActionSpec:
    """Draw an in-range ActionSpec for the given label."""
    if not (0 <= action_label < NUM_ACTIONS):
        raise ValueError(f"action_label {action_label} outside [0, {NUM_ACTIONS})")
    ranges = dict(_COMMON_RANGES)
    ranges.update(_PARAM_RANGES[ACTIONS[action_label]])
    params = {key: float(rng.uniform(lo, hi)) for key, (lo, hi) in sorted(ranges.items())}
    return ActionSpec(action_label, params)
