"""One-cycle learning-rate schedule."""

from __future__ import annotations

import numpy as np

from backbone_tooling.errors import FinetuneError


def one_cycle_lrs(max_lr: float, total_steps: int, pct_start: float = 0.3,
                  start_div: float = 25.0, final_div: float = 1e4) -> np.ndarray:
    """Per-step learning rates: cosine ramp from max_lr/start_div up to
    max_lr, then cosine anneal down to max_lr/(start_div*final_div).

    The trace starts below the peak, touches max_lr exactly once, and ends
    below its own starting value.
    """
    if max_lr <= 0:
        raise FinetuneError(f"max_lr must be positive, got {max_lr}")
    if total_steps < 3:
        raise FinetuneError(f"need at least 3 steps, got {total_steps}")
    if not 0.0 < pct_start < 1.0:
        raise FinetuneError(f"pct_start must be in (0, 1), got {pct_start}")
    start_lr = max_lr / start_div
    final_lr = start_lr / final_div
    peak = min(max(int(round(pct_start * (total_steps - 1))), 1),
               total_steps - 2)
    steps = np.arange(total_steps, dtype=np.float64)

    up = 0.5 * (1.0 - np.cos(np.pi * steps[: peak + 1] / peak))
    ramp = start_lr + (max_lr - start_lr) * up
    down_steps = steps[peak + 1 :] - peak
    down = 0.5 * (1.0 + np.cos(np.pi * down_steps / (total_steps - 1 - peak)))
    anneal = final_lr + (max_lr - final_lr) * down
    return np.concatenate([ramp, anneal])
