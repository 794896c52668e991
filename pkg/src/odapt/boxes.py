"""Box geometry, prediction-to-truth matching, and the detector training loss.

Everything here is pure: no model state, no RNG. Boxes use normalized
corner coordinates (x1, y1, x2, y2) as fractions of image size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

N_SLOTS = 4
DEFAULT_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive area, in [0, 1] fractions."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValueError(
                f"invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in a)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class BoxPrediction:
    """One detector slot output: a box plus a raw confidence logit."""

    box: Box
    confidence_logit: float


@dataclass(frozen=True)
class MatchResult:
    """Outcome of greedy prediction-to-truth matching for one frame.

    indicators[j] is True iff prediction j was matched to a ground truth at
    IoU >= iou_threshold; assignment[j] is the matched truth index or None.
    """

    indicators: tuple[bool, ...]
    assignment: tuple[Optional[int], ...]
    iou_threshold: float


BoxesLike = Union[Sequence[Box], np.ndarray, torch.Tensor]


def as_box_array(boxes: BoxesLike) -> np.ndarray:
    """Normalize a per-frame box collection into a float64 (G, 4) array."""
    if isinstance(boxes, torch.Tensor):
        arr = boxes.detach().cpu().numpy().astype(np.float64)
    elif isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64)
    else:
        arr = np.array([b.as_array() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes. Symmetric, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU between (..., N, 4) and (..., G, 4) boxes -> (..., N, G)."""
    ax1, ay1, ax2, ay2 = a.unsqueeze(-2).unbind(-1)
    bx1, by1, bx2, by2 = b.unsqueeze(-3).unbind(-1)
    ix = (torch.minimum(ax2, bx2) - torch.maximum(ax1, bx1)).clamp(min=0)
    iy = (torch.minimum(ay2, by2) - torch.maximum(ay1, by1)).clamp(min=0)
    inter = ix * iy
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


def greedy_match(iou_grid: np.ndarray, iou_threshold: float) -> tuple[list[bool], list[Optional[int]]]:
    """Greedy descending-IoU assignment on an (N, G) IoU grid.

    Only pairs at or above the threshold participate. Ties break toward the
    lower prediction index, then the lower truth index, so the result is
    deterministic. Each truth and each prediction is used at most once.
    """
    n, g = iou_grid.shape
    pairs = [
        (-iou_grid[j, k], j, k)
        for j in range(n)
        for k in range(g)
        if iou_grid[j, k] >= iou_threshold
    ]
    pairs.sort()
    indicators = [False] * n
    assignment: list[Optional[int]] = [None] * n
    used_gt = [False] * g
    for _, j, k in pairs:
        if indicators[j] or used_gt[k]:
            continue
        indicators[j] = True
        assignment[j] = k
        used_gt[k] = True
    return indicators, assignment


def match_boxes(
    preds: Union[Sequence[BoxPrediction], BoxesLike],
    gts: BoxesLike,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> MatchResult:
    """Match N_SLOTS predictions against up to N_SLOTS ground-truth boxes."""
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    if len(preds) > 0 and isinstance(preds[0], BoxPrediction):
        pred_arr = np.array([p.box.as_array() for p in preds], dtype=np.float64)
    else:
        pred_arr = as_box_array(preds)  # type: ignore[arg-type]
    gt_arr = as_box_array(gts) if len(gts) else np.zeros((0, 4))
    if pred_arr.shape[0] != N_SLOTS:
        raise ValueError(f"expected exactly {N_SLOTS} predictions, got {pred_arr.shape[0]}")
    if gt_arr.shape[0] > N_SLOTS:
        raise ValueError(f"at most {N_SLOTS} ground-truth boxes supported, got {gt_arr.shape[0]}")
    grid = (
        iou_matrix(torch.from_numpy(pred_arr), torch.from_numpy(gt_arr)).numpy()
        if gt_arr.shape[0]
        else np.zeros((N_SLOTS, 0))
    )
    indicators, assignment = greedy_match(grid, iou_threshold)
    return MatchResult(tuple(indicators), tuple(assignment), iou_threshold)


def detector_loss(
    pred_boxes: torch.Tensor,
    pred_logits: torch.Tensor,
    gt_boxes: Sequence[BoxesLike],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> torch.Tensor:
    """Summed per-slot loss over a set of annotated frames.

    For every frame i and slot j, adds a binary cross-entropy term on the
    sigmoid of the confidence logit against the match indicator, plus, for
    matched slots only, the sum of absolute coordinate differences to the
    assigned truth box. Matching is recomputed here but treated as constant
    within a gradient step: gradients flow through logits and matched box
    coordinates only.

    pred_boxes: (F, N, 4), pred_logits: (F, N), gt_boxes: F per-frame
    collections of up to N boxes. Returns a differentiable scalar.
    """
    if pred_boxes.ndim != 3 or pred_boxes.shape[1:] != (N_SLOTS, 4):
        raise ValueError(f"pred_boxes must have shape (F, {N_SLOTS}, 4), got {tuple(pred_boxes.shape)}")
    if pred_logits.shape != pred_boxes.shape[:2]:
        raise ValueError(f"pred_logits must have shape (F, {N_SLOTS}), got {tuple(pred_logits.shape)}")
    if len(gt_boxes) != pred_boxes.shape[0]:
        raise ValueError(f"got {len(gt_boxes)} annotation frames for {pred_boxes.shape[0]} prediction frames")
    if not bool(torch.isfinite(pred_boxes).all()) or not bool(torch.isfinite(pred_logits).all()):
        raise ValueError("non-finite values in predictions")

    gt_arrays = [as_box_array(g) if len(g) else np.zeros((0, 4)) for g in gt_boxes]
    for arr in gt_arrays:
        if arr.shape[0] > N_SLOTS:
            raise ValueError(f"frame has {arr.shape[0]} ground-truth boxes, at most {N_SLOTS} supported")
        if not np.isfinite(arr).all():
            raise ValueError("non-finite values in ground-truth boxes")

    targets = torch.zeros_like(pred_logits)
    matched_pred: list[tuple[int, int]] = []
    matched_gt: list[np.ndarray] = []
    with torch.no_grad():
        detached = pred_boxes.detach().cpu().double().numpy()
    for i, arr in enumerate(gt_arrays):
        if arr.shape[0] == 0:
            continue
        grid = iou_matrix(torch.from_numpy(detached[i]), torch.from_numpy(arr)).numpy()
        indicators, assignment = greedy_match(grid, iou_threshold)
        for j, (ind, k) in enumerate(zip(indicators, assignment)):
            if ind:
                targets[i, j] = 1.0
                matched_pred.append((i, j))
                matched_gt.append(arr[k])

    loss = F.binary_cross_entropy_with_logits(pred_logits, targets, reduction="sum")
    if matched_pred:
        idx = torch.tensor(matched_pred, dtype=torch.long)
        pred_sel = pred_boxes[idx[:, 0], idx[:, 1]]
        gt_sel = torch.as_tensor(np.stack(matched_gt), dtype=pred_boxes.dtype, device=pred_boxes.device)
        loss = loss + (pred_sel - gt_sel).abs().sum()
    return loss
