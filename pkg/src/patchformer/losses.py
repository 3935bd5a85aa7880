"""Training loss."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, log_softmax


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class, log-sum-exp stable.

    logits (B, K), labels (B,) integer class ids in [0, K).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (B, K), got shape {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")

    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(b), labels]
    return -picked.mean()
