"""Batch loss protocol used by the training engine.

A loss takes the batch predictions, targets, and latent vectors and returns
its value split into (f1, f2, total) plus the gradients to inject at the
output layer and (optionally) at the latent tap.  The plain output loss puts
everything in f1; the composite adaptation loss in the adapt module fills
both terms.
"""

from __future__ import annotations

from typing import NamedTuple, Protocol

import numpy as np


class LossTerms(NamedTuple):
    f1: float
    f2: float
    total: float


class BatchLoss(Protocol):
    def terms(self, preds: np.ndarray, targets: np.ndarray,
              latents: np.ndarray) -> tuple[LossTerms, np.ndarray, np.ndarray | None]:
        ...


class MeanSquaredOutputLoss:
    """Mean over the batch of (prediction - target)^2."""

    def terms(self, preds, targets, latents):
        r = preds - targets
        f1 = float(np.mean(r * r))
        dpreds = 2.0 * r / len(r)
        return LossTerms(f1=f1, f2=0.0, total=f1), dpreds, None
