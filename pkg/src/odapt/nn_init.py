"""Generator-driven parameter initialization.

torch's default module init pulls from the global RNG, which would make
weights depend on construction order across a process. Routing every draw
through an explicit generator keeps model weights a pure function of their
seed, which the determinism guarantees elsewhere rely on.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Standard Linear/Conv init (kaiming-uniform weights, fan-in bias bound)
    from the given generator; norms get ones/zeros. Traversal order is the
    module definition order, so the result is reproducible."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=generator)
            if m.bias is not None:
                fan_in, _ = nn.init._calculate_fan_in_and_fan_out(m.weight)
                bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
                nn.init.uniform_(m.bias, -bound, bound, generator=generator)
        elif isinstance(m, (nn.LayerNorm, nn.GroupNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
