"""Selective state-space scan: the hot kernel of the temporal encoder.

Implements the input-dependent linear recurrence

    h_t = exp(dt_t * a) * h_{t-1} + dt_t * b_t * u_t        (h_0 = 0)
    y_t = c_t . h_t + d * u_t

per channel, where ``a`` (negative, diagonal) and ``d`` are parameters and
``dt_t``, ``b_t``, ``c_t`` are per-token inputs produced upstream by learned
projections. Forward and backward both run either through a compiled Cython
kernel (built at install time) or a vectorized numpy fallback; the backend is
chosen at import and can be overridden with ``VIEWTAD_SCAN_BACKEND`` or
:func:`set_backend`.

Shapes: u, dt (B, L, C); b, c (B, L, N); a (C, N); d (C,). Output (B, L, C).
"""

from __future__ import annotations

import os

import numpy as np

from .tensor import NonFiniteError, Tensor, record_op

try:
    from . import _scan as _ext
except ImportError:  # extension not built; numpy fallback below
    _ext = None

_BACKEND = os.environ.get("VIEWTAD_SCAN_BACKEND", "auto")
if _BACKEND not in ("auto", "python", "cython"):
    raise ValueError(f"bad VIEWTAD_SCAN_BACKEND: {_BACKEND!r}")
if _BACKEND == "cython" and _ext is None:
    raise ImportError("VIEWTAD_SCAN_BACKEND=cython but the compiled kernel is missing")


def available_backends() -> list[str]:
    return ["python"] if _ext is None else ["cython", "python"]


def get_backend() -> str:
    if _BACKEND == "python" or _ext is None:
        return "python"
    return "cython"


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("auto", "python", "cython"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "cython" and _ext is None:
        raise ValueError("compiled kernel not available")
    _BACKEND = name


# ---------------------------------------------------------------------------
# numpy fallback


def _forward_np(u, dt, b, c, a, store_h):
    bsz, length, channels = u.shape
    n = a.shape[1]
    da = np.exp(dt[..., None] * a)  # (B, L, C, N)
    dbu = dt[..., None] * b[:, :, None, :] * u[..., None]
    h = np.zeros((bsz, channels, n))
    if store_h:
        hs = np.empty((bsz, length, channels, n))
        for t in range(length):
            h = da[:, t] * h + dbu[:, t]
            hs[:, t] = h
        y = np.einsum("blcn,bln->blc", hs, c)
        return y, hs
    y = np.empty_like(u)
    for t in range(length):
        h = da[:, t] * h + dbu[:, t]
        y[:, t] = np.einsum("bcn,bn->bc", h, c[:, t])
    return y, None


def _backward_np(grad_y, u, dt, b, c, a, hs):
    bsz, length, channels = u.shape
    da = np.exp(dt[..., None] * a)
    gy_c = grad_y[..., None] * c[:, :, None, :]  # dL/dh_t from the readout
    g = np.empty_like(hs)
    g[:, length - 1] = gy_c[:, length - 1]
    for t in range(length - 2, -1, -1):
        g[:, t] = gy_c[:, t] + da[:, t + 1] * g[:, t + 1]
    h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
    g_da = g * h_prev * da  # dL/d(dt*a) pathway through the decay
    grad_a = np.einsum("blcn,blc->cn", g_da, dt)
    grad_dt = (g_da * a).sum(-1) + (g * b[:, :, None, :]).sum(-1) * u
    grad_b = (g * (dt * u)[..., None]).sum(2)
    grad_c = (grad_y[..., None] * hs).sum(2)
    grad_u = (g * b[:, :, None, :]).sum(-1) * dt
    return grad_u, grad_dt, grad_b, grad_c, grad_a


# ---------------------------------------------------------------------------
# dispatch


def _forward(u, dt, b, c, a, store_h):
    if get_backend() == "cython":
        bsz, length, channels = u.shape
        n = a.shape[1]
        y = np.empty((bsz, length, channels))
        hs = np.empty((bsz, length, channels, n)) if store_h else None
        _ext.scan_forward(u, dt, b, c, a, y, hs)
        return y, hs
    return _forward_np(u, dt, b, c, a, store_h)


def _backward(grad_y, u, dt, b, c, a, hs):
    if get_backend() == "cython":
        grad_u = np.zeros_like(u)
        grad_dt = np.zeros_like(dt)
        grad_b = np.zeros_like(b)
        grad_c = np.zeros_like(c)
        grad_a = np.zeros_like(a)
        _ext.scan_backward(
            np.ascontiguousarray(grad_y), u, dt, b, c, a, hs,
            grad_u, grad_dt, grad_b, grad_c, grad_a,
        )
        return grad_u, grad_dt, grad_b, grad_c, grad_a
    return _backward_np(grad_y, u, dt, b, c, a, hs)


def selective_scan(u: Tensor, dt: Tensor, b: Tensor, c: Tensor, a: Tensor, d: Tensor) -> Tensor:
    """Run the selective scan over a batch of sequences (see module docstring).

    Recorded as a single fused op on the active tape; the hidden-state
    trajectory is kept only when a gradient will be needed.
    """
    bsz, length, channels = u.shape
    n = b.shape[2]
    if dt.shape != u.shape:
        raise ValueError(f"dt shape {dt.shape} != u shape {u.shape}")
    if b.shape != (bsz, length, n) or c.shape != (bsz, length, n):
        raise ValueError("b and c must both be (batch, length, state)")
    if a.shape != (channels, n):
        raise ValueError(f"a must be ({channels}, {n}), got {a.shape}")
    if d.shape != (channels,):
        raise ValueError(f"d must be ({channels},), got {d.shape}")
    if np.any(a.data >= 0.0):
        raise ValueError("a must be strictly negative for a stable scan")

    inputs = (u, dt, b, c, a, d)
    from .tensor import _active_tape

    store_h = _active_tape() is not None and any(t.requires_grad for t in inputs)
    y, hs = _forward(u.data, dt.data, b.data, c.data, a.data, store_h)
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("selective scan produced non-finite outputs")
    y = y + d.data * u.data

    def vjp(g):
        gu, gdt, gb, gc, ga = _backward(g, u.data, dt.data, b.data, c.data, a.data, hs)
        gu += g * d.data
        gd = (g * u.data).sum(axis=(0, 1))
        return gu, gdt, gb, gc, ga, gd

    return record_op(y, inputs, vjp)
