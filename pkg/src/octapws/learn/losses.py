"""The three training objectives: margin triplets, symmetric view
prediction with stop-gradient targets, and stabilized binary
cross-entropy."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, stop_gradient


def _rows(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.data.ndim == 1:
        return t.reshape((1, t.data.shape[0]))
    if t.data.ndim != 2:
        raise ValueError(f"expected a vector or a batch of vectors, got shape {t.data.shape}")
    return t


def triplet_loss(e_a, e_p, e_n, margin: float = 1.0) -> Tensor:
    """Sum over the batch of max(|a-p|^2 - |a-n|^2 + margin, 0)."""
    e_a, e_p, e_n = _rows(e_a), _rows(e_p), _rows(e_n)
    if not (e_a.shape == e_p.shape == e_n.shape):
        raise ValueError(
            f"triplet embeddings disagree in shape: {e_a.shape}, {e_p.shape}, {e_n.shape}"
        )
    d_ap = ad.tsum((e_a - e_p) ** 2.0, axis=1)
    d_an = ad.tsum((e_a - e_n) ** 2.0, axis=1)
    return ad.tsum(ad.relu(d_ap - d_an + float(margin)))


def neg_cosine(p, z) -> Tensor:
    """-cos(p, z) averaged over rows; z is detached so gradients stop there."""
    p, z = _rows(p), _rows(z)
    z = stop_gradient(z)
    p_norm = np.sqrt((p.data**2).sum(axis=1))
    z_norm = np.sqrt((z.data**2).sum(axis=1))
    if np.any(p_norm == 0) or np.any(z_norm == 0):
        raise ValueError("neg_cosine is undefined for zero-norm vectors")
    dots = ad.tsum(p * z, axis=1)
    norms = ad.sqrt(ad.tsum(p**2.0, axis=1)) * ad.sqrt(ad.tsum(z**2.0, axis=1))
    return ad.tmean(-dots / norms)


def self_supervised_loss(predictions, projections, query: int = 0) -> Tensor:
    """Symmetric prediction loss over T views of one sample.

    predictions[i] = h(f(view_i)), projections[i] = f(view_i). Each
    non-query view i contributes (D(p_q, z_i) + D(p_i, z_q)) / 2 with D
    the stop-gradient negative cosine; the mean over the T-1 terms keeps
    the loss in [-1, 1].
    """
    t = len(predictions)
    if t != len(projections):
        raise ValueError(f"{t} predictions vs {len(projections)} projections")
    if t < 2:
        raise ValueError("self-supervised loss needs at least two views")
    if not 0 <= query < t:
        raise ValueError(f"query index {query} out of range for {t} views")
    terms = []
    for i in range(t):
        if i == query:
            continue
        half = neg_cosine(predictions[query], projections[i]) * 0.5
        half = half + neg_cosine(predictions[i], projections[query]) * 0.5
        terms.append(half)
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / (t - 1))


def bce_loss(logits, labels) -> Tensor:
    """Mean sigmoid cross-entropy, softplus form: softplus(y) - y*·y."""
    logits = as_tensor(logits)
    flat = logits.reshape((logits.data.size,))
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != flat.data.shape[0]:
        raise ValueError(f"{flat.data.shape[0]} logits vs {y.shape[0]} labels")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return ad.tmean(ad.softplus(flat) - flat * Tensor(y))
