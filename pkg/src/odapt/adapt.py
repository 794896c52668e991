"""The three-stage adaptation protocol and its baselines.

Stage one trains the source bundle (elsewhere); stage two fine-tunes only
the detector on a sparse set of annotated target frames; stage three runs
frozen-recognizer inference on the target test split. This module also
houses the two baselines bracketing that protocol, the frame-to-clip
mapping that keeps the fully-supervised budget comparable, and a noise
model simulating automatically generated box labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .boxes import Box, iou
from .bundle import ModelBundle
from .detector import TrainConfig, finetune_detector
from .errors import ContractViolationError
from .recognizer import _fit_recognizer, boxes_for_clip
from .synth.dataset import Dataset
from .synth.render import OBJECT, VideoClip
from .utils import rng_for

FILTER_IOU = 0.3
MIN_LABEL_SIZE = 1e-3


@dataclass(frozen=True)
class FrameAnnotation:
    """One annotated target frame: pixels plus hand/object boxes."""

    clip_id: str
    frame_index: int
    pixels: np.ndarray
    boxes: tuple[Box, ...]
    roles: tuple[str, ...]


@dataclass
class AdaptationSet:
    entries: list[FrameAnnotation] = field(default_factory=list)

    @property
    def n_t(self) -> int:
        return len(self.entries)

    def frames_array(self) -> np.ndarray:
        return np.stack([e.pixels for e in self.entries])

    def box_lists(self) -> list[list[Box]]:
        return [list(e.boxes) for e in self.entries]


@dataclass(frozen=True)
class NoiseModel:
    """Corruption applied to ground-truth labels to mimic automatic labeling.

    filter_enabled drops candidate boxes whose IoU against the true
    annotation falls below FILTER_IOU, the analog of post-filtering noisy
    machine-generated labels.
    """

    jitter_sigma: float = 0.0
    drop_prob: float = 0.0
    spurious_prob: float = 0.0
    filter_enabled: bool = False

    def __post_init__(self) -> None:
        if self.jitter_sigma < 0:
            raise ValueError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        for name in ("drop_prob", "spurious_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def sample_sparse_frames(dataset: Dataset, n_t: int, seed: int, split: str = "train") -> AdaptationSet:
    """Pick n_t distinct clips uniformly, one uniformly random frame each."""
    clips = dataset.clips(split)
    if n_t < 1:
        raise ValueError("n_t must be >= 1; an empty adaptation set is undefined")
    if n_t > len(clips):
        raise ValueError(f"n_t={n_t} exceeds the {len(clips)} clips in split {split!r}")
    rng = rng_for("sparse-frames", dataset.domain_id, split, seed)
    chosen = sorted(rng.choice(len(clips), size=n_t, replace=False).tolist())
    entries = []
    for ci in chosen:
        clip = clips[ci]
        fi = int(rng.integers(clip.t_frames))
        entries.append(
            FrameAnnotation(
                clip_id=clip.clip_id,
                frame_index=fi,
                pixels=clip.frames[fi],
                boxes=tuple(clip.boxes(fi)),
                roles=tuple(clip.roles(fi)),
            )
        )
    return AdaptationSet(entries)


def map_frames_to_clips(aset: AdaptationSet) -> list[str]:
    """Clip ids whose full supervision the fully-supervised baseline may use."""
    ids = [e.clip_id for e in aset.entries]
    if len(set(ids)) != len(ids):
        raise ValueError("adaptation set has duplicate clip ids; the frame-to-clip mapping must be one-to-one")
    return ids


def _jittered_box(box: Box, rng: np.random.Generator, sigma: float) -> Box:
    delta = rng.normal(0.0, sigma, 4)
    xs = sorted((box.x1 + delta[0], box.x2 + delta[2]))
    ys = sorted((box.y1 + delta[1], box.y2 + delta[3]))
    x1, x2 = max(0.0, xs[0]), min(1.0, xs[1])
    y1, y2 = max(0.0, ys[0]), min(1.0, ys[1])
    if x2 - x1 < MIN_LABEL_SIZE:
        cx = min(max((x1 + x2) / 2, MIN_LABEL_SIZE), 1.0 - MIN_LABEL_SIZE)
        x1, x2 = cx - MIN_LABEL_SIZE / 2, cx + MIN_LABEL_SIZE / 2
    if y2 - y1 < MIN_LABEL_SIZE:
        cy = min(max((y1 + y2) / 2, MIN_LABEL_SIZE), 1.0 - MIN_LABEL_SIZE)
        y1, y2 = cy - MIN_LABEL_SIZE / 2, cy + MIN_LABEL_SIZE / 2
    return Box(x1, y1, x2, y2)


def auto_label(aset: AdaptationSet, noise: NoiseModel, seed: int) -> AdaptationSet:
    """Perturb ground-truth annotations per the noise model.

    With all noise at zero the output boxes are bitwise identical to the
    input. Deterministic per (noise, seed).
    """
    entries = []
    for ei, entry in enumerate(aset.entries):
        rng = rng_for("auto-label", seed, ei)
        boxes: list[Box] = []
        roles: list[str] = []
        for box, role in zip(entry.boxes, entry.roles):
            candidate = _jittered_box(box, rng, noise.jitter_sigma)
            if rng.uniform() < noise.drop_prob:
                continue
            if noise.filter_enabled and iou(candidate, box) < FILTER_IOU:
                continue
            boxes.append(candidate)
            roles.append(role)
        if rng.uniform() < noise.spurious_prob:
            w, h = rng.uniform(0.05, 0.3, 2)
            cx = rng.uniform(w / 2, 1 - w / 2)
            cy = rng.uniform(h / 2, 1 - h / 2)
            spurious = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            best = max((iou(spurious, b) for b in entry.boxes), default=0.0)
            if not (noise.filter_enabled and best < FILTER_IOU):
                boxes.append(spurious)
                roles.append(OBJECT)
        entries.append(
            FrameAnnotation(entry.clip_id, entry.frame_index, entry.pixels, tuple(boxes), tuple(roles))
        )
    return AdaptationSet(entries)


def _random_boxes(clip_id: str, t_frames: int, rng_seed: int) -> np.ndarray:
    rng = rng_for("random-eval-boxes", rng_seed, clip_id)
    out = np.zeros((t_frames, 4, 4), dtype=np.float32)
    for t in range(t_frames):
        for j in range(4):
            w, h = rng.uniform(0.05, 0.3, 2)
            cx = rng.uniform(w / 2, 1 - w / 2)
            cy = rng.uniform(h / 2, 1 - h / 2)
            out[t, j] = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    return out


def evaluate_top1(
    bundle: ModelBundle,
    clips: Sequence[VideoClip],
    box_source: str = "detector",
    rng_seed: int = 0,
    batch_size: int = 16,
) -> float:
    """Top-1 accuracy over clips.

    box_source picks where crop boxes come from: the bundle's detector
    (deployment path), the ground truth (perfect-detector ceiling), or
    seeded random boxes (sensitivity control).
    """
    if box_source not in ("detector", "gt", "random"):
        raise ValueError(f"unknown box_source {box_source!r}")
    if not clips:
        raise ValueError("no clips to evaluate")
    correct = 0
    with torch.no_grad():
        for start in range(0, len(clips), batch_size):
            batch = clips[start : start + batch_size]
            frames = torch.from_numpy(np.stack([c.frames for c in batch]))
            bsz, t = frames.shape[0], frames.shape[1]
            if box_source == "detector":
                flat = frames.reshape(bsz * t, *frames.shape[2:])
                det_boxes, _ = bundle.detector(flat)
                boxes = det_boxes.reshape(bsz, t, 4, 4)
            elif box_source == "gt":
                boxes = torch.from_numpy(np.stack([boxes_for_clip(c) for c in batch]))
            else:
                boxes = torch.from_numpy(np.stack([_random_boxes(c.clip_id, t, rng_seed) for c in batch]))
            logits = bundle.recognizer(frames, boxes, bundle.encoder)
            pred = logits.argmax(dim=1).numpy()
            correct += int((pred == np.array([c.action_label for c in batch])).sum())
    return correct / len(clips)


def run_source_only(bundle: ModelBundle, target: Dataset, split: str = "test") -> float:
    """Evaluate the unmodified source bundle on the target test split."""
    return evaluate_top1(bundle, target.clips(split))


@dataclass
class OdaptRun:
    bundle: ModelBundle
    accuracy: float
    fingerprint_before: str
    fingerprint_after: str
    finetune_losses: list[float]


def run_odapt(bundle: ModelBundle, target: Dataset, aset: AdaptationSet, cfg: TrainConfig) -> OdaptRun:
    """Fine-tune only the detector on the adaptation set, then evaluate with
    the recognizer and encoder untouched. Raises if their fingerprint moves."""
    if aset.n_t < 1:
        raise ValueError("adaptation set is empty")
    fp_before = bundle.recognizer_fingerprint()
    adapted, losses = finetune_detector(bundle.detector, aset.frames_array(), aset.box_lists(), cfg)
    fp_after = bundle.recognizer_fingerprint()
    if fp_before != fp_after:
        raise ContractViolationError(
            "recognizer or encoder parameters changed during detector adaptation "
            f"({fp_before[:12]} -> {fp_after[:12]})"
        )
    adapted_bundle = bundle.with_detector(adapted)
    accuracy = evaluate_top1(adapted_bundle, target.clips("test"))
    return OdaptRun(
        bundle=adapted_bundle,
        accuracy=accuracy,
        fingerprint_before=fp_before,
        fingerprint_after=fp_after,
        finetune_losses=losses,
    )


@dataclass
class FullySupervisedRun:
    bundle: ModelBundle
    accuracy: float


def run_fully_supervised(
    bundle: ModelBundle,
    target: Dataset,
    clip_ids: Sequence[str],
    cfg: TrainConfig,
    detector_cfg: Optional[TrainConfig] = None,
) -> FullySupervisedRun:
    """Upper-bound baseline: end-to-end fine-tuning on fully labeled clips.

    The mapped clips supply action labels for the recognizer and encoder
    (cross-entropy, ground-truth boxes for crop as in source training) and
    box annotations for the detector. Evaluation uses detector boxes, like
    every other evaluation.
    """
    if not clip_ids:
        raise ValueError("no clips for fully-supervised fine-tuning")
    clips = [target.get_clip("train", cid) for cid in clip_ids]
    fs = bundle.clone()
    fs.detector_frozen = fs.encoder_frozen = fs.recognizer_frozen = False

    det_cfg = detector_cfg if detector_cfg is not None else cfg
    if det_cfg.epochs > 0:
        det_frames = np.concatenate([c.frames for c in clips])
        det_gts = [c.boxes(t) for c in clips for t in range(c.t_frames)]
        fs.detector, _ = finetune_detector(fs.detector, det_frames, det_gts, det_cfg)

    if cfg.epochs > 0:
        params = list(fs.recognizer.parameters()) + (list(fs.encoder.parameters()) if fs.encoder else [])
        _fit_recognizer(fs.recognizer, fs.encoder, params, clips, cfg, seed_tag="fully-supervised-train")

    accuracy = evaluate_top1(fs, target.clips("test"))
    return FullySupervisedRun(bundle=fs, accuracy=accuracy)


@dataclass
class ExperimentResult:
    """One matrix cell: a (source domain, target domain, seed) triple."""

    source_domain: str
    target_domain: str
    seed: int
    n_t: int
    encoder_mode: str
    accuracy_source_only: float
    accuracy_odapt: float
    accuracy_fully_supervised: float
    fingerprint_before: str
    fingerprint_after: str
    checkpoints: dict[str, str] = field(default_factory=dict)
    config_digest: str = ""

    def __post_init__(self) -> None:
        for name in ("accuracy_source_only", "accuracy_odapt", "accuracy_fully_supervised"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def delta_odapt(self) -> float:
        return self.accuracy_odapt - self.accuracy_source_only

    @property
    def delta_fully_supervised(self) -> float:
        return self.accuracy_fully_supervised - self.accuracy_source_only

    def to_dict(self) -> dict:
        return {
            "source_domain": self.source_domain,
            "target_domain": self.target_domain,
            "seed": self.seed,
            "n_t": self.n_t,
            "encoder_mode": self.encoder_mode,
            "accuracy_source_only": self.accuracy_source_only,
            "accuracy_odapt": self.accuracy_odapt,
            "accuracy_fully_supervised": self.accuracy_fully_supervised,
            "delta_odapt": self.delta_odapt,
            "delta_fully_supervised": self.delta_fully_supervised,
            "fingerprint_before": self.fingerprint_before,
            "fingerprint_after": self.fingerprint_after,
            "checkpoints": dict(self.checkpoints),
            "config_digest": self.config_digest,
        }
