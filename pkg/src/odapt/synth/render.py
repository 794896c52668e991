"""Sprite-based clip rendering with analytically derived ground-truth boxes.

A clip is planned first (per-frame sprite geometry as pure math on the
action parameters), then rasterized. Ground-truth boxes come from the
analytic sprite extents, never from the rendered pixels, so tests can
rasterize the same plan independently and compare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..boxes import Box
from ..utils import rng_for
from .spec import (
    ACTIONS,
    ActionSpec,
    DomainSpec,
    background_colors,
    hand_color,
    object_palette,
    validate_action,
)

DEFAULT_FRAMES = 8
DEFAULT_SIZE = 64
TILE_PIXELS = 16

LEFT_HAND = "left-hand"
RIGHT_HAND = "right-hand"
OBJECT = "object"


@dataclass(frozen=True)
class Sprite:
    """One drawable: an axis-aligned ellipse ('disc') or rectangle ('rect')."""

    role: str
    shape: str  # "disc" | "rect"
    cx: float
    cy: float
    hw: float  # half width
    hh: float  # half height
    color: tuple[float, float, float]

    def box(self) -> Box:
        return Box(self.cx - self.hw, self.cy - self.hh, self.cx + self.hw, self.cy + self.hh)


@dataclass(frozen=True)
class LabeledBox:
    box: Box
    role: str


@dataclass
class VideoClip:
    clip_id: str
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    action_label: int
    gt: list[list[LabeledBox]] = field(default_factory=list)

    @property
    def t_frames(self) -> int:
        return self.frames.shape[0]

    def boxes(self, frame_index: int) -> list[Box]:
        return [lb.box for lb in self.gt[frame_index]]

    def roles(self, frame_index: int) -> list[str]:
        return [lb.role for lb in self.gt[frame_index]]


def _object_shape(family: str, rng: np.random.Generator) -> str:
    if family == "circles":
        return "disc"
    if family == "squares":
        return "rect"
    return "disc" if rng.uniform() < 0.5 else "rect"


def _hand(style: str, role: str, cx: float, cy: float, r: float, color) -> Sprite:
    shape = "disc" if style == "rounded" else "rect"
    return Sprite(role, shape, cx, cy, r, r, color)


def plan_clip(
    spec: DomainSpec,
    action: ActionSpec,
    seed: int,
    t_frames: int = DEFAULT_FRAMES,
) -> list[list[Sprite]]:
    """Per-frame sprite lists in canonical role order (hands, then objects).

    Pure function of its arguments. Every sprite extent stays strictly
    inside the frame, and every object's box intersects a hand's box in at
    least half of the frames; the trajectories are built to guarantee both.
    """
    validate_action(action)
    rng = rng_for("plan", spec.domain_id, spec.rng_seed, action.action_label, seed)
    palette = object_palette(spec.palette_seed)
    skin = tuple(hand_color(spec.palette_seed))
    pick_color = lambda: tuple(palette[rng.integers(len(palette))])  # noqa: E731
    shape = lambda: _object_shape(spec.object_shape_family, rng)  # noqa: E731

    p = dict(action.motion_params)
    name = ACTIONS[action.action_label]
    speed = p.get("speed", 1.0)
    ax, ay = p.get("ax", 0.5), p.get("ay", 0.5)
    r_h = p.get("hand_size", 0.055)
    r_o = p.get("obj_size", 0.05)
    style = spec.hand_sprite_style

    # Draw per-clip appearance before the per-frame loop so the RNG stream
    # does not depend on t_frames.
    obj_color, obj2_color = pick_color(), pick_color()
    obj_shape, obj2_shape = shape(), shape()

    frames: list[list[Sprite]] = []
    for t in range(t_frames):
        u = t / (t_frames - 1) if t_frames > 1 else 0.0
        sprites: list[Sprite] = []

        if name == "pick":
            oy = ay + 0.15
            lift = 0.22 * speed * max(0.0, u - 0.4) / 0.6
            if u < 0.4:
                hy = (oy - 0.3) + ((oy - 0.4 * r_o) - (oy - 0.3)) * (u / 0.4)
            else:
                hy = oy - 0.4 * r_o - lift
            sprites.append(_hand(style, RIGHT_HAND, ax, hy, r_h, skin))
            sprites.append(Sprite(OBJECT, obj_shape, ax, oy - lift, r_o, r_o, obj_color))

        elif name == "put":
            dy = ay + 0.15
            sy = dy - 0.22 * speed
            if u <= 0.6:
                oy = sy + (dy - sy) * (u / 0.6)
                hy = oy - 0.4 * r_o
            else:
                oy = dy
                hy = dy - 0.4 * r_o - (dy - sy) * ((u - 0.6) / 0.4)
            sprites.append(_hand(style, RIGHT_HAND, ax, hy, r_h, skin))
            sprites.append(Sprite(OBJECT, obj_shape, ax, oy, r_o, r_o, obj_color))

        elif name == "cut":
            ty = ay + 0.12
            osc = 0.035 * (0.5 + 0.5 * math.sin(2 * math.pi * (1.5 * speed * u + p.get("phase", 0.0))))
            ky = ty - r_o - 0.07 + osc
            sprites.append(_hand(style, LEFT_HAND, ax - r_o - 0.6 * r_h, ty, r_h, skin))
            sprites.append(_hand(style, RIGHT_HAND, ax + 0.01, ky - 0.05 - 0.4 * r_h, r_h, skin))
            sprites.append(Sprite(OBJECT, obj_shape, ax, ty, r_o, r_o, obj_color))
            sprites.append(Sprite(OBJECT, "rect", ax + 0.01, ky, 0.018, 0.05, obj2_color))

        elif name == "stir":
            by = ay + 0.12
            theta = 2 * math.pi * (1.2 * speed * u + p.get("phase", 0.0))
            sx = ax + 0.055 * math.cos(theta)
            sy_ = by + 0.055 * math.sin(theta)
            sprites.append(_hand(style, RIGHT_HAND, sx, sy_ - 0.055, r_h, skin))
            sprites.append(Sprite(OBJECT, "disc", ax, by, 0.12, 0.12, obj_color))
            sprites.append(Sprite(OBJECT, obj2_shape, sx, sy_, 0.7 * r_o, 0.7 * r_o, obj2_color))

        elif name == "pour":
            by = ay + 0.28
            cy = by - 0.135 + 0.03 * speed * u
            sprites.append(_hand(style, LEFT_HAND, ax - 0.1 - 0.5 * r_h, by, r_h, skin))
            sprites.append(_hand(style, RIGHT_HAND, ax + 0.02, cy - 0.05 - 0.4 * r_h, r_h, skin))
            sprites.append(Sprite(OBJECT, "disc", ax, by, 0.1, 0.1, obj_color))
            sprites.append(Sprite(OBJECT, "rect", ax + 0.02, cy, 0.035, 0.05, obj2_color))

        elif name in ("open", "close"):
            prog = u if name == "open" else 1.0 - u
            off = 0.03 + 0.14 * speed * prog
            sprites.append(_hand(style, LEFT_HAND, ax - off, ay, r_h, skin))
            sprites.append(_hand(style, RIGHT_HAND, ax + off, ay, r_h, skin))
            sprites.append(Sprite(OBJECT, "rect", ax, ay, 0.15, 0.1, obj_color))

        elif name == "wipe":
            wy = ay + 0.1
            wx = ax + 0.16 * math.sin(2 * math.pi * (0.9 * speed * u + p.get("phase", 0.0)))
            sprites.append(_hand(style, RIGHT_HAND, wx, wy - 0.02 - 0.4 * r_h, r_h, skin))
            sprites.append(Sprite(OBJECT, "rect", wx, wy, 0.05, 0.028, obj_color))

        else:  # pragma: no cover - exhaustive over ACTIONS
            raise ValueError(f"unhandled action {name!r}")

        frames.append(sprites)
    return frames


def render_background(spec: DomainSpec, height: int, width: int) -> np.ndarray:
    c0, c1 = background_colors(spec.background_seed)
    if spec.background_style == "flat":
        bg = np.broadcast_to(c0, (height, width, 3)).copy()
    elif spec.background_style == "gradient":
        w = np.linspace(0.0, 1.0, height)[:, None, None]
        bg = (1 - w) * c0 + w * c1
    else:  # tiled
        rows = np.arange(height)[:, None] // TILE_PIXELS
        cols = np.arange(width)[None, :] // TILE_PIXELS
        checker = ((rows + cols) % 2).astype(np.float64)[..., None]
        bg = (1 - checker) * c0 + checker * c1
    return bg.astype(np.float32)


def sprite_mask(sprite: Sprite, height: int, width: int) -> np.ndarray:
    """Boolean coverage mask: pixels whose centers fall inside the sprite."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    dx = (xs[None, :] - sprite.cx) / sprite.hw
    dy = (ys[:, None] - sprite.cy) / sprite.hh
    if sprite.shape == "disc":
        return dx * dx + dy * dy <= 1.0
    return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)


def _paint_order(sprites: list[Sprite]) -> list[Sprite]:
    # Objects first so hands occlude them, matching an egocentric viewpoint.
    return [s for s in sprites if s.role == OBJECT] + [s for s in sprites if s.role != OBJECT]


def render_clip(
    spec: DomainSpec,
    action: ActionSpec,
    seed: int,
    t_frames: int = DEFAULT_FRAMES,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    clip_id: Optional[str] = None,
) -> VideoClip:
    """Render one clip. Bitwise deterministic in (spec, action, seed)."""
    validate_action(action)
    plan = plan_clip(spec, action, seed, t_frames)
    bg = render_background(spec, height, width)
    noise_rng = rng_for("noise", spec.domain_id, spec.rng_seed, action.action_label, seed)

    frames = np.empty((t_frames, height, width, 3), dtype=np.float32)
    gt: list[list[LabeledBox]] = []
    for t, sprites in enumerate(plan):
        frame = bg.copy()
        for s in _paint_order(sprites):
            frame[sprite_mask(s, height, width)] = np.asarray(s.color, dtype=np.float32)
        frame = np.clip(frame * spec.illumination_gain, 0.0, 1.0)
        if spec.sensor_noise_sigma > 0:
            frame = frame + noise_rng.normal(0.0, spec.sensor_noise_sigma, frame.shape)
            frame = np.clip(frame, 0.0, 1.0)
        frames[t] = frame.astype(np.float32)
        gt.append([LabeledBox(s.box(), s.role) for s in sprites])

    if clip_id is None:
        clip_id = f"{spec.domain_id}-{action.name}-s{seed}"
    return VideoClip(clip_id=clip_id, frames=frames, action_label=action.action_label, gt=gt)
