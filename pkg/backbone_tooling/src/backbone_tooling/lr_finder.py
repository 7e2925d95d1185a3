"""Learning-rate range test.

Runs one optimization step per candidate learning rate on an exponentially
increasing grid, tracks the smoothed loss, and suggests the rate at the
middle of the steepest downward stretch of the curve — the usual heuristic
for picking the one-cycle maximum.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from backbone_tooling.errors import LrFinderError

log = logging.getLogger("backbone_tooling")

DEFAULT_MIN_LR = 1e-7
DEFAULT_MAX_LR = 1.0


@dataclass(frozen=True)
class LrSuggestion:
    max_lr: float                 # suggested one-cycle peak
    lrs: tuple                    # evaluated learning rates
    smoothed_losses: tuple        # EMA-smoothed loss per evaluated rate


def find_learning_rate(step_fn, min_lr: float = DEFAULT_MIN_LR,
                       max_lr: float = DEFAULT_MAX_LR, steps: int = 100,
                       smoothing: float = 0.05,
                       divergence_factor: float = 4.0) -> LrSuggestion:
    """Run the range test over `step_fn`.

    step_fn(lr) must perform one optimizer step at that rate and return the
    batch loss. The model being stepped is consumed by the sweep; callers
    train a fresh copy afterwards.
    """
    if not 0.0 < min_lr < max_lr:
        raise LrFinderError(
            f"range must be ascending and positive, got [{min_lr}, {max_lr}]")
    if steps < 3:
        raise LrFinderError(f"need at least 3 steps, got {steps}")

    lrs = np.geomspace(min_lr, max_lr, steps)
    smoothed: list[float] = []
    avg = 0.0
    best = np.inf
    for i, lr in enumerate(lrs):
        loss = float(step_fn(float(lr)))
        if not np.isfinite(loss):
            break
        avg = (1.0 - smoothing) * avg + smoothing * loss
        current = avg / (1.0 - (1.0 - smoothing) ** (i + 1))
        best = min(best, current)
        smoothed.append(current)
        if current > divergence_factor * best:
            break

    if len(smoothed) < 2:
        raise LrFinderError(
            "loss diverged on the first step; lower the range minimum")
    slopes = np.diff(smoothed)            # uniform log-spaced grid
    k = int(np.argmin(slopes))
    noise_floor = 1e-9 * max(abs(v) for v in smoothed)
    if slopes[k] >= -noise_floor:
        raise LrFinderError(
            "loss never decreased across the range; widen or shift the "
            f"range [{min_lr:g}, {max_lr:g}]")
    suggestion = float(np.sqrt(lrs[k] * lrs[k + 1]))
    log.info("lr range test: steepest drop at %.3g (evaluated %d rates)",
             suggestion, len(smoothed))
    return LrSuggestion(max_lr=suggestion, lrs=tuple(lrs[: len(smoothed)]),
                        smoothed_losses=tuple(smoothed))


def torch_range_test(model, batches, *, min_lr: float = DEFAULT_MIN_LR,
                     max_lr: float = DEFAULT_MAX_LR, steps: int = 100,
                     device: str = "cpu", seed: int = 0) -> LrSuggestion:
    """Range-test a torch classifier over (inputs, labels) batches.

    Batches are cycled if the sweep needs more steps than there are batches.
    The model's weights are perturbed by the sweep — pass a throwaway copy.
    """
    import torch
    import torch.nn.functional as F

    torch.manual_seed(seed)
    model = model.to(device).train()
    optimizer = torch.optim.Adam(model.parameters(), lr=min_lr)
    stream = itertools.cycle(batches)

    def step(lr: float) -> float:
        for group in optimizer.param_groups:
            group["lr"] = lr
        inputs, labels = next(stream)
        optimizer.zero_grad()
        loss = F.cross_entropy(model(inputs.to(device)), labels.to(device))
        loss.backward()
        optimizer.step()
        return float(loss.item())

    return find_learning_rate(step, min_lr=min_lr, max_lr=max_lr, steps=steps)
