"""Normalization layers, activations, and loss functions on the autodiff tape.

Losses are fused ops (single tape record with a hand-written VJP, numerically
stable logit forms); the norms are composed from tensor primitives so their
gradients come from the tape for free.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, record_op, reshape, sigmoid_np


def softplus(x: Tensor) -> Tensor:
    """Elementwise ln(1 + e^x), stable for large |x|."""
    z = x.data
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return record_op(out, (x,), lambda g: (g * sigmoid_np(z),))


def _grouped_stats_norm(x: Tensor, groups: int, eps: float) -> Tensor:
    """Normalize x (..., C) to zero mean / unit variance per (sample, group).

    All axes between the leading (batch) axis and the channel axis count as
    spatial and share group statistics, the usual group-norm reduction.
    """
    shp = x.shape
    channels = shp[-1]
    if channels % groups != 0:
        raise ValueError(f"channels ({channels}) not divisible by groups ({groups})")
    batch = shp[0] if len(shp) > 1 else 1
    grouped = reshape(x, (batch, -1, groups, channels // groups))
    mean = grouped.mean(axis=(1, 3), keepdims=True)
    centered = grouped - mean
    var = (centered * centered).mean(axis=(1, 3), keepdims=True)
    from .tensor import power

    inv_std = power(var + eps, -0.5)
    return reshape(centered * inv_std, shp)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization over the trailing channel axis with affine gamma/beta."""
    return _grouped_stats_norm(x, groups, eps) * gamma + beta


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-position normalization over the feature (last) axis; group_norm with one group."""
    shp = x.shape
    flat = reshape(x, (-1, shp[-1]))
    return reshape(_grouped_stats_norm(flat, 1, eps), shp) * gamma + beta


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean -log softmax(logits)[label]; logits (K,) or (B, K), integer labels."""
    z = logits.data
    if z.ndim == 1:
        z2 = z[None, :]
    elif z.ndim == 2:
        z2 = z
    else:
        raise ValueError(f"logits must be 1D or 2D, got shape {z.shape}")
    n, k = z2.shape
    if k < 2:
        raise ValueError("cross_entropy needs at least 2 classes")
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape != (n,):
        raise ValueError(f"labels shape {lab.shape} does not match batch {n}")
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label out of range [0, {k})")

    m = z2.max(axis=1, keepdims=True)
    shifted = z2 - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    loss = (lse - z2[np.arange(n), lab]).mean()

    def vjp(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), lab] -= 1.0
        grad = (float(g) / n) * soft
        return (grad.reshape(z.shape),)

    return record_op(np.float64(loss), (logits,), vjp)


def bce_multilabel(logits: Tensor, targets, class_weights=None) -> Tensor:
    """Mean independent binary cross-entropy over all (position, class) cells.

    Computed in the stable logit form max(z,0) - z*y + log(1 + e^-|z|).
    ``class_weights`` optionally reweights classes along the last axis.
    """
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"targets shape {y.shape} != logits shape {z.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("targets must be 0 or 1")
    if class_weights is None:
        w = 1.0
    else:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (z.shape[-1],):
            raise ValueError("class_weights must have one entry per class")
    elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = (w * elem).mean()

    def vjp(g):
        grad = (float(g) / z.size) * w * (sigmoid_np(z) - y)
        return (np.ascontiguousarray(grad),)

    return record_op(np.float64(loss), (logits,), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is (C_in, C_out), x (..., C_in)."""
    out = x @ weight
    return out if bias is None else out + bias


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    """Gaussian init scaled by 1/sqrt(fan_in)."""
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.normal(0.0, fan_in**-0.5, size=shape), requires_grad=True)


def init_zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def init_ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
