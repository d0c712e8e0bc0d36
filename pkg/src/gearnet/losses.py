"""Supervised, divergence and composite losses, all built from autodiff ops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

PROB_FLOOR = 1e-8


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    return ad.neg(ad.mean(ad.gather(ad.log_softmax(logits), labels)))


def per_sample_cross_entropy(logits: Tensor, labels) -> np.ndarray:
    """Unreduced cross-entropy values, without recording a graph."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = ad.log_softmax(ad.Tensor(logits.data))
    return -logp.data[np.arange(labels.shape[0]), labels]


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Batch mean of ``sum_c p_c * ln(p_c / q_c)``, with both sides floored at 1e-8."""
    p, q = ad.as_tensor(p), ad.as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence shape mismatch: {p.shape} vs {q.shape}")
    pc = ad.clamp_min(p, PROB_FLOOR)
    qc = ad.clamp_min(q, PROB_FLOOR)
    log_ratio = ad.log(pc) - ad.log(qc)
    return ad.mean(ad.sum(ad.mul(pc, log_ratio), axis=1))


def symmetric_kl(p1: Tensor, p2: Tensor) -> Tensor:
    p1, p2 = ad.as_tensor(p1), ad.as_tensor(p2)
    if p1.shape != p2.shape:
        raise DimensionError(f"symmetric_kl shape mismatch: {p1.shape} vs {p2.shape}")
    return kl_divergence(p1, p2) + kl_divergence(p2, p1)


@dataclass
class LossBundle:
    super: Tensor
    guide: Tensor
    total: Tensor
    beta: float


def total_loss(sup: Tensor, guide: Tensor, beta: float) -> LossBundle:
    """Compose ``sup + beta * guide``, keeping the graph through both terms."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    sup, guide = ad.as_tensor(sup), ad.as_tensor(guide)
    return LossBundle(super=sup, guide=guide, total=sup + ad.mul(guide, beta), beta=beta)
