"""Model bundle (detector + encoder + recognizer) and checkpoint files.

Checkpoint format: one line of JSON (architecture dims, seed, epoch, frozen
flags, and the parameter name/shape table in blob order), then the raw
little-endian float32 weights concatenated in that declared order.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .detector import DetectorNet
from .errors import MissingArtifactError
from .recognizer import ObjectEncoder, RecognizerNet, freeze_fingerprint


@dataclass
class ModelBundle:
    """Everything the pipeline trains: detector F, encoder E, recognizer G.

    The frozen flags document which parts adaptation may touch; the freeze
    fingerprint makes the contract machine-checkable.
    """

    detector: DetectorNet
    recognizer: RecognizerNet
    encoder: Optional[ObjectEncoder]
    detector_frozen: bool = False
    encoder_frozen: bool = True
    recognizer_frozen: bool = True

    def clone(self) -> "ModelBundle":
        return replace(
            self,
            detector=copy.deepcopy(self.detector),
            recognizer=copy.deepcopy(self.recognizer),
            encoder=copy.deepcopy(self.encoder) if self.encoder is not None else None,
        )

    def with_detector(self, detector: DetectorNet) -> "ModelBundle":
        return replace(self, detector=detector)

    def recognizer_fingerprint(self) -> str:
        return freeze_fingerprint(self.recognizer, self.encoder)


def _collect_params(modules: dict[str, Optional[nn.Module]]):
    table: list[list] = []
    blobs: list[bytes] = []
    for prefix, mod in modules.items():
        if mod is None:
            continue
        for name, p in mod.named_parameters():
            arr = p.detach().cpu().numpy().astype("<f4")
            table.append([f"{prefix}.{name}", list(arr.shape)])
            blobs.append(arr.tobytes())
    return table, blobs


def _write_checkpoint(path: Path, header: dict, blobs: list[bytes]) -> None:
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode())
        f.write(b"\n")
        for b in blobs:
            f.write(b)


def _read_checkpoint(path: Path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"no checkpoint at {path}")
    data = path.read_bytes()
    nl = data.index(b"\n")
    return json.loads(data[:nl].decode()), data[nl + 1 :]


def _load_params(modules: dict[str, Optional[nn.Module]], header: dict, blob: bytes) -> None:
    offset = 0
    by_prefix: dict[str, dict[str, nn.Parameter]] = {
        prefix: dict(mod.named_parameters()) for prefix, mod in modules.items() if mod is not None
    }
    for full_name, shape in header["params"]:
        prefix, name = full_name.split(".", 1)
        params = by_prefix.get(prefix)
        if params is None or name not in params:
            raise ValueError(f"checkpoint parameter {full_name!r} has no destination")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        with torch.no_grad():
            params[name].copy_(torch.from_numpy(arr.copy()))
    if offset != len(blob):
        raise ValueError(f"checkpoint blob has {len(blob) - offset} unread bytes")


def save_detector_ckpt(path: Path, net: DetectorNet, seed: int = 0, epoch: int = 0) -> None:
    table, blobs = _collect_params({"detector": net})
    header = {
        "format": 1,
        "kind": "detector",
        "frame_size": net.frame_size,
        "seed": seed,
        "epoch": epoch,
        "params": table,
    }
    _write_checkpoint(Path(path), header, blobs)


def load_detector_ckpt(path: Path) -> DetectorNet:
    header, blob = _read_checkpoint(Path(path))
    if header.get("kind") != "detector":
        raise ValueError(f"{path} is not a detector checkpoint")
    net = DetectorNet(frame_size=header["frame_size"], seed=header.get("seed", 0))
    _load_params({"detector": net}, header, blob)
    return net


def save_recognizer_ckpt(
    path: Path,
    recognizer: RecognizerNet,
    encoder: Optional[ObjectEncoder],
    frozen: Optional[dict] = None,
    seed: int = 0,
    epoch: int = 0,
) -> None:
    table, blobs = _collect_params({"recognizer": recognizer, "encoder": encoder})
    header = {
        "format": 1,
        "kind": "recognizer",
        "arch": {
            "t_frames": recognizer.t_frames,
            "frame_size": recognizer.frame_size,
            "patch_size": recognizer.patch_size,
            "embed_dim": recognizer.embed_dim,
            "depth": len(recognizer.blocks),
            "heads": recognizer.blocks[0].attn.heads,
            "mlp_ratio": recognizer.mlp_ratio,
            "num_actions": recognizer.num_actions,
        },
        "has_encoder": encoder is not None,
        "frozen": frozen or {"recognizer": True, "encoder": True},
        "seed": seed,
        "epoch": epoch,
        "params": table,
    }
    _write_checkpoint(Path(path), header, blobs)


def load_recognizer_ckpt(path: Path) -> tuple[RecognizerNet, Optional[ObjectEncoder], dict]:
    header, blob = _read_checkpoint(Path(path))
    if header.get("kind") != "recognizer":
        raise ValueError(f"{path} is not a recognizer checkpoint")
    a = header["arch"]
    recognizer = RecognizerNet(
        t_frames=a["t_frames"],
        frame_size=a["frame_size"],
        patch_size=a["patch_size"],
        embed_dim=a["embed_dim"],
        depth=a["depth"],
        heads=a["heads"],
        mlp_ratio=a.get("mlp_ratio", 2),
        num_actions=a["num_actions"],
        seed=header.get("seed", 0),
    )
    encoder = ObjectEncoder(dim=a["embed_dim"], seed=header.get("seed", 0)) if header["has_encoder"] else None
    _load_params({"recognizer": recognizer, "encoder": encoder}, header, blob)
    return recognizer, encoder, header.get("frozen", {})


def save_bundle(dir_path: Path, bundle: ModelBundle, seed: int = 0) -> dict[str, str]:
    """Write detector.ckpt and recognizer.ckpt; returns their paths."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    det = dir_path / "detector.ckpt"
    rec = dir_path / "recognizer.ckpt"
    save_detector_ckpt(det, bundle.detector, seed=seed)
    save_recognizer_ckpt(
        rec,
        bundle.recognizer,
        bundle.encoder,
        frozen={"recognizer": bundle.recognizer_frozen, "encoder": bundle.encoder_frozen},
        seed=seed,
    )
    return {"detector": str(det), "recognizer": str(rec)}


def load_bundle(dir_path: Path) -> ModelBundle:
    dir_path = Path(dir_path)
    detector = load_detector_ckpt(dir_path / "detector.ckpt")
    recognizer, encoder, frozen = load_recognizer_ckpt(dir_path / "recognizer.ckpt")
    return ModelBundle(
        detector=detector,
        recognizer=recognizer,
        encoder=encoder,
        recognizer_frozen=frozen.get("recognizer", True),
        encoder_frozen=frozen.get("encoder", True),
    )
