"""The class-agnostic box detector and its training loops.

A small strided conv backbone maps one frame to four box slots, each a
(box, confidence logit) pair. Boxes are decoded through a center/size
sigmoid reparameterization so they are valid rectangles for any weights.
The same loss machinery drives both source training and target fine-tuning.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from .boxes import (
    N_SLOTS,
    Box,
    BoxPrediction,
    BoxesLike,
    as_box_array,
    detector_loss,
    greedy_match,
    iou_matrix,
)
from .errors import ConfigError, DivergenceError
from .nn_init import init_parameters
from .utils import torch_generator

MIN_BOX_SIZE = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1
    batch_size: int = 32
    iou_threshold: float = 0.5
    rng_seed: int = 0
    optimizer: str = "sgd"  # "sgd" is plain momentum-free gradient descent

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 < self.iou_threshold < 1.0):
            raise ConfigError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


class DetectorNet(nn.Module):
    """Four stride-2 conv stages (16-32-64-64) and a dense head emitting
    N_SLOTS x (4 box logits + 1 confidence logit) per frame."""

    def __init__(self, frame_size: int = 64, seed: int = 0):
        super().__init__()
        if frame_size % 16 != 0:
            raise ConfigError(f"frame_size must be divisible by 16, got {frame_size}")
        self.frame_size = frame_size
        self.seed = seed
        chans = (16, 32, 64, 64)
        layers: list[nn.Module] = []
        prev = 3
        for c in chans:
            layers += [nn.Conv2d(prev, c, 3, stride=2, padding=1), nn.GroupNorm(min(8, c), c), nn.ReLU()]
            prev = c
        self.backbone = nn.Sequential(*layers)
        grid = frame_size // 16
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(chans[-1] * grid * grid, 128),
            nn.ReLU(),
            nn.Linear(128, N_SLOTS * 5),
        )
        init_parameters(self, torch_generator("detector-init", seed))

    def forward(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """frames (B, H, W, 3) -> decoded boxes (B, N, 4) and logits (B, N)."""
        if frames.ndim != 4 or frames.shape[1] != self.frame_size or frames.shape[2] != self.frame_size or frames.shape[3] != 3:
            raise ValueError(
                f"expected frames of shape (B, {self.frame_size}, {self.frame_size}, 3), got {tuple(frames.shape)}"
            )
        x = frames.permute(0, 3, 1, 2)
        raw = self.head(self.backbone(x)).view(-1, N_SLOTS, 5)
        cx = torch.sigmoid(raw[..., 0])
        cy = torch.sigmoid(raw[..., 1])
        w = MIN_BOX_SIZE + (1 - MIN_BOX_SIZE) * torch.sigmoid(raw[..., 2])
        h = MIN_BOX_SIZE + (1 - MIN_BOX_SIZE) * torch.sigmoid(raw[..., 3])
        boxes = torch.stack(
            [
                (cx - w / 2).clamp(0.0, 1.0),
                (cy - h / 2).clamp(0.0, 1.0),
                (cx + w / 2).clamp(0.0, 1.0),
                (cy + h / 2).clamp(0.0, 1.0),
            ],
            dim=-1,
        )
        return boxes, raw[..., 4]


FramesLike = Union[np.ndarray, torch.Tensor]


def _as_frame_tensor(frames: FramesLike) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(frames, dtype=np.float32)) if not isinstance(frames, torch.Tensor) else frames
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t.float()


def detect(net: DetectorNet, frame: FramesLike) -> list[BoxPrediction]:
    """Run the detector on a single frame; always N_SLOTS predictions."""
    t = _as_frame_tensor(frame)
    if t.shape[0] != 1:
        raise ValueError(f"detect takes a single frame, got batch of {t.shape[0]}")
    with torch.no_grad():
        boxes, logits = net(t)
    return [
        BoxPrediction(Box.from_array(boxes[0, j].numpy()), float(logits[0, j]))
        for j in range(N_SLOTS)
    ]


def detect_batch(net: DetectorNet, frames: FramesLike) -> tuple[torch.Tensor, torch.Tensor]:
    with torch.no_grad():
        return net(_as_frame_tensor(frames))


def _make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.0)


def _fit(
    net: DetectorNet,
    frames: torch.Tensor,
    gt_boxes: Sequence[BoxesLike],
    cfg: TrainConfig,
    generator: torch.Generator,
) -> list[float]:
    """Minibatch descent on the summed slot loss; returns per-epoch mean loss."""
    m = frames.shape[0]
    if m == 0:
        raise ValueError("no training frames")
    if len(gt_boxes) != m:
        raise ValueError(f"{m} frames but {len(gt_boxes)} annotation lists")
    gts = [as_box_array(g) if len(g) else np.zeros((0, 4)) for g in gt_boxes]
    opt = _make_optimizer(net.parameters(), cfg)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(m, generator=generator)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            boxes, logits = net(frames[idx])
            batch_gts = [gts[int(i)] for i in idx]
            loss = detector_loss(boxes, logits, batch_gts, cfg.iou_threshold)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite detector loss at epoch {epoch} (lr={cfg.learning_rate}); "
                    "lower the learning rate"
                )
            total += float(loss.detach())
            opt.zero_grad()
            (loss / len(idx)).backward()
            opt.step()
        history.append(total / m)
    return history


def train_detector(
    frames: FramesLike,
    gt_boxes: Sequence[BoxesLike],
    cfg: TrainConfig,
    frame_size: int = 64,
) -> tuple[DetectorNet, list[float]]:
    """Train a fresh detector on annotated frames. Deterministic per seed."""
    t = _as_frame_tensor(frames)
    net = DetectorNet(frame_size=frame_size, seed=cfg.rng_seed)
    history = _fit(net, t, gt_boxes, cfg, torch_generator("detector-train", cfg.rng_seed))
    return net, history


def finetune_detector(
    net: DetectorNet,
    frames: FramesLike,
    gt_boxes: Sequence[BoxesLike],
    cfg: TrainConfig,
    reinit: bool = False,
) -> tuple[DetectorNet, list[float]]:
    """Continue training from existing weights (the input net is not touched).

    With epochs=0 the returned net is a bitwise copy of the input. reinit
    re-draws fresh weights instead of starting from the source detector.
    """
    if len(gt_boxes) == 0:
        raise ValueError("empty adaptation set")
    if reinit:
        adapted = DetectorNet(frame_size=net.frame_size, seed=cfg.rng_seed)
    else:
        adapted = copy.deepcopy(net)
    t = _as_frame_tensor(frames)
    history = _fit(adapted, t, gt_boxes, cfg, torch_generator("detector-finetune", cfg.rng_seed))
    return adapted, history


@dataclass(frozen=True)
class DetectorQuality:
    mean_best_iou: float  # per ground truth, best IoU over all slots
    confident_best_iou: float  # per confident slot, best IoU over ground truths
    recall: float  # matched ground truths at the threshold, confident slots only


def quality_from_predictions(
    pred_boxes: torch.Tensor,
    pred_logits: torch.Tensor,
    gt_boxes: Sequence[BoxesLike],
    iou_threshold: float = 0.5,
) -> DetectorQuality:
    gts = [as_box_array(g) if len(g) else np.zeros((0, 4)) for g in gt_boxes]
    best_per_gt: list[float] = []
    best_per_conf: list[float] = []
    matched = 0
    total_gt = 0
    for i, arr in enumerate(gts):
        total_gt += arr.shape[0]
        if arr.shape[0] == 0:
            continue
        grid = iou_matrix(pred_boxes[i].double(), torch.from_numpy(arr)).numpy()
        best_per_gt.extend(grid.max(axis=0).tolist())
        conf = pred_logits[i].numpy() > 0.0
        for j in range(N_SLOTS):
            if conf[j]:
                best_per_conf.append(float(grid[j].max()))
        gated = np.where(conf[:, None], grid, -1.0)
        indicators, _ = greedy_match(gated, iou_threshold)
        matched += sum(indicators)
    return DetectorQuality(
        mean_best_iou=float(np.mean(best_per_gt)) if best_per_gt else 0.0,
        confident_best_iou=float(np.mean(best_per_conf)) if best_per_conf else 0.0,
        recall=matched / total_gt if total_gt else 0.0,
    )


def detector_quality(
    net: DetectorNet,
    frames: FramesLike,
    gt_boxes: Sequence[BoxesLike],
    iou_threshold: float = 0.5,
    batch_size: int = 64,
) -> DetectorQuality:
    """Aggregate box quality of a detector over annotated frames."""
    t = _as_frame_tensor(frames)
    if t.shape[0] == 0:
        raise ValueError("no frames to evaluate")
    all_boxes, all_logits = [], []
    with torch.no_grad():
        for start in range(0, t.shape[0], batch_size):
            b, l = net(t[start : start + batch_size])
            all_boxes.append(b)
            all_logits.append(l)
    return quality_from_predictions(torch.cat(all_boxes), torch.cat(all_logits), gt_boxes, iou_threshold)
