"""The action recognizer and its object-token pathway.

Patch tokens (with positions) form a per-frame feature grid; predicted or
ground-truth boxes pool object tokens out of that grid (`crop`), a small
residual MLP re-encodes them (`ObjectEncoder`), and the recognizer attaches
them to its token sequence before the transformer blocks. Source training
teacher-forces ground-truth boxes; evaluation feeds detector boxes.
"""

from __future__ import annotations

import hashlib
import math
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .boxes import N_SLOTS, Box
from .detector import TrainConfig, _make_optimizer
from .errors import DivergenceError
from .nn_init import init_parameters
from .synth.render import LEFT_HAND, OBJECT, RIGHT_HAND, VideoClip
from .utils import torch_generator

ROLE_ORDER = {LEFT_HAND: 0, RIGHT_HAND: 1, OBJECT: 2}


def crop(grid: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
    """Pool one feature vector per box from a spatial grid.

    grid: (..., h, w, d); boxes: (..., N, 4) with matching leading dims.
    Averages a 2x2 lattice of bilinear samples placed at the quarter points
    of each box. Zero-area boxes fall back to the nearest single cell.
    Linear and differentiable in the grid values; boxes are treated as data.
    """
    lead = grid.shape[:-3]
    h, w, d = grid.shape[-3:]
    if boxes.shape[:-2] != lead:
        raise ValueError(f"grid leading dims {tuple(lead)} do not match boxes {tuple(boxes.shape[:-2])}")
    n = boxes.shape[-2]
    g = grid.reshape(-1, h * w, d)
    b = boxes.reshape(-1, n, 4).to(grid.dtype)
    m = g.shape[0]

    x1, y1, x2, y2 = b.unbind(-1)
    bw, bh = x2 - x1, y2 - y1
    offs = torch.tensor([0.25, 0.75], dtype=grid.dtype, device=grid.device)
    sx = x1.unsqueeze(-1) + bw.unsqueeze(-1) * offs  # (m, n, 2)
    sy = y1.unsqueeze(-1) + bh.unsqueeze(-1) * offs
    px = sx.unsqueeze(-2).expand(m, n, 2, 2).reshape(m, -1)  # x varies fastest
    py = sy.unsqueeze(-1).expand(m, n, 2, 2).reshape(m, -1)

    def gather(rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
        idx = (rows * w + cols).unsqueeze(-1).expand(-1, -1, d)
        return g.gather(1, idx)

    u = px * w - 0.5
    v = py * h - 0.5
    u0, v0 = torch.floor(u), torch.floor(v)
    au, av = u - u0, v - v0
    i0 = u0.long().clamp(0, w - 1)
    i1 = (u0.long() + 1).clamp(0, w - 1)
    j0 = v0.long().clamp(0, h - 1)
    j1 = (v0.long() + 1).clamp(0, h - 1)
    au, av = au.unsqueeze(-1), av.unsqueeze(-1)
    val = (
        gather(j0, i0) * (1 - au) * (1 - av)
        + gather(j0, i1) * au * (1 - av)
        + gather(j1, i0) * (1 - au) * av
        + gather(j1, i1) * au * av
    )
    pooled = val.reshape(m, n, 4, d).mean(dim=2)

    degenerate = (bw <= 0) | (bh <= 0)
    if bool(degenerate.any()):
        cc = (((x1 + x2) / 2) * w).floor().long().clamp(0, w - 1)
        cr = (((y1 + y2) / 2) * h).floor().long().clamp(0, h - 1)
        nearest = gather(cr, cc)
        pooled = torch.where(degenerate.unsqueeze(-1), nearest, pooled)
    return pooled.reshape(*lead, n, d)


class ObjectEncoder(nn.Module):
    """Residual two-layer MLP over each object token; exact identity at init."""

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.seed = seed
        self.fc1 = nn.Linear(dim, 2 * dim)
        self.fc2 = nn.Linear(2 * dim, dim)
        init_parameters(self, torch_generator("encoder-init", seed))
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.fc2(F.gelu(self.fc1(x)))


def encode_objects(encoder: Optional[ObjectEncoder], tokens: torch.Tensor) -> torch.Tensor:
    """Apply the object encoder per token; None means the identity (E off)."""
    return tokens if encoder is None else encoder(tokens)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        bsz, length, dim = x.shape
        hd = dim // self.heads
        q, k, v = self.qkv(x).reshape(bsz, length, 3, self.heads, hd).permute(2, 0, 3, 1, 4).unbind(0)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(bsz, length, dim)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class RecognizerNet(nn.Module):
    """ViT over patch tokens plus attached object tokens.

    Token budget: 1 class token + T*(h*w) patch tokens + T*N object tokens.
    """

    def __init__(
        self,
        t_frames: int = 8,
        frame_size: int = 64,
        patch_size: int = 8,
        embed_dim: int = 64,
        depth: int = 4,
        heads: int = 4,
        mlp_ratio: int = 2,
        num_actions: int = 8,
        seed: int = 0,
    ):
        super().__init__()
        if frame_size % patch_size:
            raise ValueError(f"frame_size {frame_size} not divisible by patch_size {patch_size}")
        self.t_frames = t_frames
        self.frame_size = frame_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.mlp_ratio = mlp_ratio
        self.num_actions = num_actions
        self.seed = seed
        self.grid_hw = frame_size // patch_size
        n_patches = self.grid_hw * self.grid_hw

        self.patch_embed = nn.Conv2d(3, embed_dim, kernel_size=patch_size, stride=patch_size)
        self.embed_norm = nn.LayerNorm(embed_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, embed_dim))
        self.patch_pos = nn.Parameter(torch.zeros(t_frames, n_patches, embed_dim))
        self.obj_time_pos = nn.Parameter(torch.zeros(t_frames, embed_dim))
        self.obj_slot_pos = nn.Parameter(torch.zeros(N_SLOTS, embed_dim))
        self.blocks = nn.ModuleList(Block(embed_dim, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(embed_dim)
        self.head = nn.Linear(embed_dim, num_actions)

        g = torch_generator("recognizer-init", seed)
        init_parameters(self, g)
        for p in (self.cls_token, self.patch_pos, self.obj_time_pos, self.obj_slot_pos):
            nn.init.normal_(p, std=0.02, generator=g)

    def patch_grid(self, frames: torch.Tensor) -> torch.Tensor:
        """frames (B, T, H, W, 3) -> positioned patch tokens (B, T, h, w, d)."""
        bsz, t, hh, ww, _ = frames.shape
        if t != self.t_frames or hh != self.frame_size or ww != self.frame_size:
            raise ValueError(
                f"expected clip shape (B, {self.t_frames}, {self.frame_size}, {self.frame_size}, 3), "
                f"got {tuple(frames.shape)}"
            )
        x = frames.reshape(bsz * t, hh, ww, 3).permute(0, 3, 1, 2)
        e = self.patch_embed(x).flatten(2).transpose(1, 2)  # (B*T, hw, d)
        e = self.embed_norm(e)
        e = e.reshape(bsz, t, -1, self.embed_dim) + self.patch_pos.to(e.dtype)
        return e.reshape(bsz, t, self.grid_hw, self.grid_hw, self.embed_dim)

    def attach(self, seq: torch.Tensor, obj_tokens: torch.Tensor) -> torch.Tensor:
        """Concatenate object tokens (with their slot positions) after seq.

        seq: (B, L, d); obj_tokens: (B, T, N, d) -> (B, L + T*N, d). The
        first L positions of the output are the input tokens, bit for bit.
        """
        if seq.shape[-1] != obj_tokens.shape[-1]:
            raise ValueError(f"token dim mismatch: {seq.shape[-1]} vs {obj_tokens.shape[-1]}")
        bsz = seq.shape[0]
        obj = obj_tokens + self.obj_time_pos.to(obj_tokens.dtype)[None, :, None, :]
        obj = obj + self.obj_slot_pos.to(obj_tokens.dtype)[None, None, :, :]
        return torch.cat([seq, obj.reshape(bsz, -1, obj.shape[-1])], dim=1)

    def forward(
        self,
        frames: torch.Tensor,
        boxes: torch.Tensor,
        encoder: Optional[ObjectEncoder] = None,
    ) -> torch.Tensor:
        """frames (B, T, H, W, 3) + boxes (B, T, N, 4) -> logits (B, A)."""
        bsz = frames.shape[0]
        grid = self.patch_grid(frames)
        xp = grid.reshape(bsz, -1, self.embed_dim)
        seq = torch.cat([self.cls_token.to(xp.dtype).expand(bsz, 1, -1), xp], dim=1)
        xobj = crop(grid, boxes.to(grid.dtype))
        xobj = encode_objects(encoder, xobj)
        seq = self.attach(seq, xobj)
        for blk in self.blocks:
            seq = blk(seq)
        return self.head(self.norm(seq[:, 0]))


def boxes_for_clip(clip: VideoClip, n_slots: int = N_SLOTS) -> np.ndarray:
    """Ground-truth crop boxes (T, N, 4): canonical role order, cycle-padded."""
    out = np.zeros((clip.t_frames, n_slots, 4), dtype=np.float32)
    for t, frame in enumerate(clip.gt):
        ordered = sorted(frame, key=lambda lb: ROLE_ORDER.get(lb.role, 3))
        if not ordered:
            raise ValueError(f"frame {t} of clip {clip.clip_id} has no ground-truth boxes")
        for j in range(n_slots):
            b = ordered[j % len(ordered)].box
            out[t, j] = (b.x1, b.y1, b.x2, b.y2)
    return out


BoxesInput = Union[np.ndarray, torch.Tensor, Sequence[Sequence[Box]]]


def _as_clip_boxes(boxes: BoxesInput, t_frames: int) -> torch.Tensor:
    if isinstance(boxes, (np.ndarray, torch.Tensor)):
        t = torch.as_tensor(np.asarray(boxes, dtype=np.float32))
    else:
        t = torch.tensor(
            [[[b.x1, b.y1, b.x2, b.y2] for b in frame] for frame in boxes], dtype=torch.float32
        )
    if t.shape != (t_frames, N_SLOTS, 4):
        raise ValueError(f"boxes must have shape ({t_frames}, {N_SLOTS}, 4), got {tuple(t.shape)}")
    return t


def recognize(
    recognizer: RecognizerNet,
    encoder: Optional[ObjectEncoder],
    clip: Union[VideoClip, np.ndarray, torch.Tensor],
    boxes: BoxesInput,
) -> np.ndarray:
    """Action logits for one clip, shape (num_actions,). Deterministic."""
    frames = clip.frames if isinstance(clip, VideoClip) else clip
    ft = torch.as_tensor(np.asarray(frames, dtype=np.float32))
    bt = _as_clip_boxes(boxes, recognizer.t_frames)
    with torch.no_grad():
        logits = recognizer(ft.unsqueeze(0), bt.unsqueeze(0), encoder)
    return logits[0].numpy()


def train_source(
    clips: Sequence[VideoClip],
    cfg: TrainConfig,
    use_encoder: bool = True,
    labels: Optional[Sequence[int]] = None,
) -> tuple[RecognizerNet, Optional[ObjectEncoder], list[float]]:
    """Train recognizer (and encoder) jointly with cross-entropy on action
    labels, using ground-truth boxes for the crop. Deterministic per seed.

    `labels` overrides the clips' own labels (used by the shuffled-label
    control); by default the stored labels train the model.
    """
    if not clips:
        raise ValueError("no training clips")
    t_frames, frame_size = clips[0].frames.shape[0], clips[0].frames.shape[1]
    recognizer = RecognizerNet(t_frames=t_frames, frame_size=frame_size, seed=cfg.rng_seed)
    encoder = ObjectEncoder(dim=recognizer.embed_dim, seed=cfg.rng_seed) if use_encoder else None
    params = list(recognizer.parameters()) + (list(encoder.parameters()) if encoder else [])
    history = _fit_recognizer(recognizer, encoder, params, clips, cfg, labels=labels)
    return recognizer, encoder, history


def _fit_recognizer(
    recognizer: RecognizerNet,
    encoder: Optional[ObjectEncoder],
    params: list[torch.nn.Parameter],
    clips: Sequence[VideoClip],
    cfg: TrainConfig,
    labels: Optional[Sequence[int]] = None,
    seed_tag: str = "recognizer-train",
) -> list[float]:
    label_arr = np.array([c.action_label for c in clips] if labels is None else list(labels), dtype=np.int64)
    if len(label_arr) != len(clips):
        raise ValueError(f"{len(clips)} clips but {len(label_arr)} labels")
    gt_boxes = [boxes_for_clip(c) for c in clips]
    generator = torch_generator(seed_tag, cfg.rng_seed)
    opt = _make_optimizer(params, cfg)
    m = len(clips)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(m, generator=generator).tolist()
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            frames = torch.from_numpy(np.stack([clips[i].frames for i in idx]))
            boxes = torch.from_numpy(np.stack([gt_boxes[i] for i in idx]))
            target = torch.from_numpy(label_arr[idx])
            logits = recognizer(frames, boxes, encoder)
            loss = F.cross_entropy(logits, target)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite recognizer loss at epoch {epoch} (lr={cfg.learning_rate}); "
                    "lower the learning rate"
                )
            total += float(loss.detach()) * len(idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(total / m)
    return history


def freeze_fingerprint(recognizer: nn.Module, encoder: Optional[nn.Module] = None) -> str:
    """Content digest of all recognizer and encoder parameters."""
    h = hashlib.sha256()
    for name, p in recognizer.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    if encoder is not None:
        for name, p in encoder.named_parameters():
            h.update(b"encoder." + name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
