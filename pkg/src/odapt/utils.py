"""Seeding, hashing, and deterministic-runtime helpers.

All randomness in the package flows through `rng_for` / `torch_generator`,
which derive generator states from string-and-integer key paths. Re-running
any operation with the same keys therefore reproduces it bitwise.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Union

import numpy as np
import torch

SeedPart = Union[int, str]

_threads_configured = False


def configure_threads() -> int:
    """Pin torch to a fixed thread count so repeated runs stay bitwise equal.

    Honors ODAPT_THREADS, otherwise uses min(4, cpu_count). Safe to call
    more than once; only the first call takes effect.
    """
    global _threads_configured
    n = int(os.environ.get("ODAPT_THREADS", min(4, os.cpu_count() or 1)))
    if not _threads_configured:
        torch.set_num_threads(n)
        _threads_configured = True
    return torch.get_num_threads()


def mix_seed(*parts: SeedPart) -> int:
    """Collapse a key path into a stable 64-bit seed."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def rng_for(*parts: SeedPart) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(mix_seed(*parts)))


def torch_generator(*parts: SeedPart) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(mix_seed(*parts) & 0x7FFF_FFFF_FFFF_FFFF)
    return g


def canonical_json(obj) -> str:
    """JSON with sorted keys and a trailing newline; identical input, identical bytes."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
