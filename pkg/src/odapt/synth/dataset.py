"""Dataset assembly and the on-disk layout.

Layout: `<root>/<domain_id>/<split>/<clip_id>/` holding `frames.bin` (four
little-endian uint32s T, H, W, C, then float32 pixel data) and `meta.json`
(label and per-frame boxes/roles). `domain.json` stores the DomainSpec and
`manifest.json` stores content hashes of every other file, which is how
regeneration detects both corruption and already-complete datasets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..boxes import Box
from ..errors import ConfigError, DatasetCorruptionError, MissingArtifactError
from ..utils import canonical_json, rng_for, sha256_file
from .render import DEFAULT_FRAMES, DEFAULT_SIZE, LabeledBox, VideoClip, render_clip
from .spec import ACTIONS, NUM_ACTIONS, DomainSpec, sample_action

SPLITS = ("train", "val", "test")


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Clips per split for one action, by largest-remainder rounding."""
    if len(ratios) != 3:
        raise ConfigError(f"expected 3 split ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
    raw = [n * r for r in ratios]
    base = [int(x) for x in raw]
    rem = n - sum(base)
    order = sorted(range(3), key=lambda i: (-(raw[i] - base[i]), i))
    for i in range(rem):
        base[order[i]] += 1
    return tuple(base)  # type: ignore[return-value]


@dataclass
class Dataset:
    """Clips for one domain, split into train/val/test.

    May be fully in memory or attached to a directory, in which case splits
    load lazily on first access.
    """

    spec: DomainSpec
    root: Optional[Path] = None
    _splits: dict[str, list[VideoClip]] = field(default_factory=dict)

    def clips(self, split: str) -> list[VideoClip]:
        if split not in SPLITS:
            raise KeyError(f"unknown split {split!r}")
        if split not in self._splits:
            if self.root is None:
                raise MissingArtifactError(f"split {split!r} not materialized and no root directory")
            self._splits[split] = _load_split(self.root, split)
        return self._splits[split]

    def clip_ids(self, split: str) -> list[str]:
        return [c.clip_id for c in self.clips(split)]

    def get_clip(self, split: str, clip_id: str) -> VideoClip:
        for c in self.clips(split):
            if c.clip_id == clip_id:
                return c
        raise KeyError(f"clip {clip_id!r} not in split {split!r}")

    @property
    def domain_id(self) -> str:
        return self.spec.domain_id


def build_dataset(
    spec: DomainSpec,
    n_clips_per_action: int,
    split_ratios: Sequence[float] = (0.6, 0.2, 0.2),
    t_frames: int = DEFAULT_FRAMES,
    size: int = DEFAULT_SIZE,
) -> Dataset:
    """Render a balanced dataset in memory. Deterministic in the spec."""
    if n_clips_per_action < 1:
        raise ConfigError(f"n_clips_per_action must be >= 1, got {n_clips_per_action}")
    counts = split_counts(n_clips_per_action, split_ratios)
    splits: dict[str, list[VideoClip]] = {s: [] for s in SPLITS}
    for label in range(NUM_ACTIONS):
        for i in range(n_clips_per_action):
            rng = rng_for("action-params", spec.domain_id, spec.rng_seed, label, i)
            action = sample_action(label, rng)
            clip_id = f"{spec.domain_id}-{ACTIONS[label]}-{i:04d}"
            clip = render_clip(spec, action, seed=i, t_frames=t_frames, height=size, width=size, clip_id=clip_id)
            if i < counts[0]:
                splits["train"].append(clip)
            elif i < counts[0] + counts[1]:
                splits["val"].append(clip)
            else:
                splits["test"].append(clip)
    return Dataset(spec=spec, _splits=splits)


def write_frames_bin(path: Path, frames: np.ndarray) -> None:
    t, h, w, c = frames.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<4I", t, h, w, c))
        f.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_frames_bin(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise DatasetCorruptionError(f"{path}: truncated header")
    t, h, w, c = struct.unpack("<4I", data[:16])
    expected = 16 + 4 * t * h * w * c
    if len(data) != expected:
        raise DatasetCorruptionError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(t, h, w, c).astype(np.float32)


def _clip_meta(clip: VideoClip) -> dict:
    return {
        "clip_id": clip.clip_id,
        "action_label": clip.action_label,
        "gt_boxes": [[[lb.box.x1, lb.box.y1, lb.box.x2, lb.box.y2] for lb in frame] for frame in clip.gt],
        "gt_roles": [[lb.role for lb in frame] for frame in clip.gt],
    }


def _clip_from_meta(meta: dict, frames: np.ndarray) -> VideoClip:
    gt = [
        [LabeledBox(Box(*coords), role) for coords, role in zip(frame_boxes, frame_roles)]
        for frame_boxes, frame_roles in zip(meta["gt_boxes"], meta["gt_roles"])
    ]
    return VideoClip(clip_id=meta["clip_id"], frames=frames, action_label=meta["action_label"], gt=gt)


def save_dataset(ds: Dataset, root: Path) -> Path:
    """Persist all splits under root/<domain_id> and write the manifest."""
    import json

    domain_dir = Path(root) / ds.domain_id
    domain_dir.mkdir(parents=True, exist_ok=True)
    (domain_dir / "domain.json").write_text(canonical_json(ds.spec.to_dict()))
    for split in SPLITS:
        for clip in ds.clips(split):
            clip_dir = domain_dir / split / clip.clip_id
            clip_dir.mkdir(parents=True, exist_ok=True)
            write_frames_bin(clip_dir / "frames.bin", clip.frames)
            (clip_dir / "meta.json").write_text(canonical_json(_clip_meta(clip)))
    files = {}
    for path in sorted(domain_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(domain_dir).as_posix()] = sha256_file(path)
    (domain_dir / "manifest.json").write_text(canonical_json({"domain_id": ds.domain_id, "files": files}))
    ds.root = domain_dir
    return domain_dir


def _load_split(domain_dir: Path, split: str) -> list[VideoClip]:
    import json

    split_dir = domain_dir / split
    if not split_dir.is_dir():
        return []
    clips = []
    for clip_dir in sorted(split_dir.iterdir()):
        if not clip_dir.is_dir():
            continue
        meta = json.loads((clip_dir / "meta.json").read_text())
        frames = read_frames_bin(clip_dir / "frames.bin")
        clips.append(_clip_from_meta(meta, frames))
    return clips


def load_dataset(root: Path, domain_id: str) -> Dataset:
    import json

    domain_dir = Path(root) / domain_id
    spec_path = domain_dir / "domain.json"
    if not spec_path.is_file():
        raise MissingArtifactError(f"no dataset at {domain_dir} (missing domain.json)")
    spec = DomainSpec.from_dict(json.loads(spec_path.read_text()))
    return Dataset(spec=spec, root=domain_dir)


def verify_dataset(root: Path, domain_id: str) -> None:
    """Check every manifest hash; raise on corruption or missing files."""
    import json

    domain_dir = Path(root) / domain_id
    manifest_path = domain_dir / "manifest.json"
    if not manifest_path.is_file():
        raise MissingArtifactError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    for rel, expected in manifest["files"].items():
        path = domain_dir / rel
        if not path.is_file():
            raise DatasetCorruptionError(
                f"{path} is missing; delete {domain_dir} and regenerate with `odapt generate`"
            )
        if sha256_file(path) != expected:
            raise DatasetCorruptionError(
                f"{path} does not match its manifest hash; delete {domain_dir} "
                "and regenerate with `odapt generate`"
            )
    on_disk = {
        p.relative_to(domain_dir).as_posix()
        for p in domain_dir.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    }
    extra = on_disk - set(manifest["files"])
    if extra:
        raise DatasetCorruptionError(f"unexpected files in {domain_dir}: {sorted(extra)[:5]}")


def generate_domain(
    spec: DomainSpec,
    n_clips_per_action: int,
    split_ratios: Sequence[float],
    root: Path,
    t_frames: int = DEFAULT_FRAMES,
    size: int = DEFAULT_SIZE,
) -> Dataset:
    """Build and persist one domain's dataset.

    If the domain directory already exists and verifies against its
    manifest, nothing is rewritten and the existing data is returned.
    """
    domain_dir = Path(root) / spec.domain_id
    if domain_dir.exists():
        verify_dataset(root, spec.domain_id)
        existing = load_dataset(root, spec.domain_id)
        if existing.spec != spec:
            raise DatasetCorruptionError(
                f"dataset at {domain_dir} was generated from a different DomainSpec; "
                "delete it to regenerate"
            )
        return existing
    ds = build_dataset(spec, n_clips_per_action, split_ratios, t_frames=t_frames, size=size)
    save_dataset(ds, Path(root))
    return ds
