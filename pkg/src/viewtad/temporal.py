"""Multi-view, multi-scale temporal encoder over frozen window features.

Three parallel branches process the (views x windows x channels) feature
grid, one per temporal scale s in {1, 2, 3}. Each branch applies a
view-strided 2D convolution (stride s_v along views, temporal resolution
preserved), splits time into s interleaved strands, runs a four-direction
selective scan over each strand's view/time grid, and merges the strands
back. A fuser then pools each branch over the remaining view tokens,
projects and layer-normalizes per scale, runs a bidirectional scan across
the scale axis per time step, and maps the result through a two-layer MLP to
per-window, per-class logits.

Scan directions carry independent parameter sets (no sharing). Invalid grid
cells (missing detections) contribute zero input to every scan and have
their outputs re-zeroed; state still decays across the gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .grid import FeatureGrid
from .scan import selective_scan
from .tensor import Tensor, exp, neg, pad, relu, scatter, stack, transpose


@dataclass
class TemporalEncoderConfig:
    in_channels: int = 384
    conv_channels: int = 192
    view_kernel: int = 2
    temporal_kernel: int = 3
    view_stride: int = 2
    state_dim: int = 16
    scales: tuple = (1, 2, 3)
    fuse_channels: int = 192
    num_classes: int = 4

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        if self.view_stride < 1 or self.state_dim < 1 or min(self.scales) < 1:
            raise ValueError("view_stride, state_dim, and scales must be >= 1")


class ScanParams:
    """One direction's selective-scan parameters.

    The state decay is stored as log(-A) so A stays strictly negative; the
    per-token step is softplus(u @ w_dt + dt_bias).
    """

    def __init__(self, channels: int, state_dim: int, rng: np.random.Generator):
        # S4D-real style decay init: A = -(1..N) per channel
        self.a_log = Tensor(
            np.log(np.tile(np.arange(1.0, state_dim + 1.0), (channels, 1))),
            requires_grad=True,
        )
        self.w_b = nn.init_weight(rng, channels, state_dim)
        self.w_c = nn.init_weight(rng, channels, state_dim)
        self.w_dt = nn.init_weight(rng, channels, channels)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=channels))
        self.dt_bias = Tensor(np.log(np.expm1(dt)), requires_grad=True)
        self.d = nn.init_ones(channels)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "a_log": self.a_log,
            "w_b": self.w_b,
            "w_c": self.w_c,
            "w_dt": self.w_dt,
            "dt_bias": self.dt_bias,
            "d": self.d,
        }


def run_scan(u: Tensor, params: ScanParams) -> Tensor:
    """Selective scan of u (B, L, C) with input-dependent dt, b, c."""
    dt = nn.softplus(u @ params.w_dt + params.dt_bias)
    b = u @ params.w_b
    c = u @ params.w_c
    a = neg(exp(params.a_log))
    return selective_scan(u, dt, b, c, a, params.d)


def view_strided_conv(m: Tensor, weight: Tensor, view_stride: int) -> Tensor:
    """2D convolution with stride along views only, same-padded on both axes.

    m is (V, T, C); weight is (K_v, K_t, C, C'); output is (ceil(V/s_v), T, C').
    """
    if view_stride < 1:
        raise ValueError("view stride must be >= 1")
    v, t, _ = m.shape
    k_v, k_t = weight.shape[:2]
    v_out = -(-v // view_stride)
    pad_v = max((v_out - 1) * view_stride + k_v - v, 0)
    pv0 = pad_v // 2
    pt0 = (k_t - 1) // 2
    padded = pad(m, ((pv0, pad_v - pv0), (pt0, k_t - 1 - pt0), (0, 0)))
    out = None
    for i in range(k_v):
        row = padded[i : i + view_stride * (v_out - 1) + 1 : view_stride]
        for j in range(k_t):
            term = row[:, j : j + t] @ weight[i, j]
            out = term if out is None else out + term
    return out


def conv_validity(validity: np.ndarray, view_stride: int, view_kernel: int) -> np.ndarray:
    """Output token (k, t) is valid when any contributing input view row is."""
    v, t = validity.shape
    v_out = -(-v // view_stride)
    pad_v = max((v_out - 1) * view_stride + view_kernel - v, 0)
    pv0 = pad_v // 2
    out = np.zeros((v_out, t), dtype=bool)
    for k in range(v_out):
        for i in range(view_kernel):
            r = k * view_stride + i - pv0
            if 0 <= r < v:
                out[k] |= validity[r]
    return out


def _flip_t(x: Tensor) -> Tensor:
    return x[:, ::-1]


def ss2d_scan(x: Tensor, directions: list[ScanParams], validity: np.ndarray) -> Tensor:
    """Sum of four directional scans over the (views, time, channels) grid.

    Directions: time left-to-right and right-to-left (one scan per view row),
    then views forward and backward (one scan per time column). Invalid cells
    are zeroed on input and output.
    """
    if validity.shape != x.shape[:2]:
        raise ValueError("validity mask shape must match the grid")
    mask = Tensor(validity.astype(np.float64)[:, :, None])
    xm = x * mask
    out = run_scan(xm, directions[0])
    out = out + _flip_t(run_scan(_flip_t(xm), directions[1]))
    xv = transpose(xm, (1, 0, 2))
    out = out + transpose(run_scan(xv, directions[2]), (1, 0, 2))
    out = out + transpose(_flip_t(run_scan(_flip_t(xv), directions[3])), (1, 0, 2))
    return out * mask


def strand_split(length: int, step: int) -> list[slice]:
    """Interleaved strand index slices r, r+step, r+2*step, ... partitioning
    range(length); merging the strands back restores order exactly."""
    if step < 1:
        raise ValueError("strand step must be >= 1")
    return [slice(r, length, step) for r in range(min(step, max(length, 1)))]


class ViewScanBlock:
    """One branch: view-strided conv, temporal strands, four-direction scan."""

    def __init__(self, cfg: TemporalEncoderConfig, scale: int, rng: np.random.Generator):
        self.cfg = cfg
        self.scale = scale
        fan_in = cfg.view_kernel * cfg.temporal_kernel * cfg.in_channels
        self.conv_w = nn.init_weight(
            rng, fan_in, None,
            shape=(cfg.view_kernel, cfg.temporal_kernel, cfg.in_channels, cfg.conv_channels),
        )
        self.conv_b = nn.init_zeros(cfg.conv_channels)
        self.directions = [ScanParams(cfg.conv_channels, cfg.state_dim, rng) for _ in range(4)]

    def named_params(self) -> dict[str, Tensor]:
        params = {"conv_w": self.conv_w, "conv_b": self.conv_b}
        for k, direction in enumerate(self.directions):
            for key, val in direction.named_params().items():
                params[f"dir{k}.{key}"] = val
        return params

    def forward(self, values: Tensor, validity: np.ndarray) -> tuple[Tensor, np.ndarray]:
        conv = view_strided_conv(values, self.conv_w, self.cfg.view_stride) + self.conv_b
        out_valid = conv_validity(validity, self.cfg.view_stride, self.cfg.view_kernel)
        t = conv.shape[1]
        if self.scale == 1:
            return ss2d_scan(conv, self.directions, out_valid), out_valid
        out = None
        for strand in strand_split(t, self.scale):
            yr = ss2d_scan(conv[:, strand], self.directions, out_valid[:, strand])
            placed = scatter(yr, conv.shape, (slice(None), strand))
            out = placed if out is None else out + placed
        return out, out_valid


class ScaleFuser:
    """Per-scale projection + layer norm, bidirectional scan over the scale
    axis per time step, then a two-layer MLP head."""

    def __init__(self, cfg: TemporalEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        n_scales = len(cfg.scales)
        self.proj_w = [nn.init_weight(rng, cfg.conv_channels, cfg.fuse_channels) for _ in range(n_scales)]
        self.proj_b = [nn.init_zeros(cfg.fuse_channels) for _ in range(n_scales)]
        self.ln_gamma = [nn.init_ones(cfg.fuse_channels) for _ in range(n_scales)]
        self.ln_beta = [nn.init_zeros(cfg.fuse_channels) for _ in range(n_scales)]
        self.scan_fwd = ScanParams(cfg.fuse_channels, cfg.state_dim, rng)
        self.scan_bwd = ScanParams(cfg.fuse_channels, cfg.state_dim, rng)
        self.head_w1 = nn.init_weight(rng, cfg.fuse_channels, cfg.fuse_channels)
        self.head_b1 = nn.init_zeros(cfg.fuse_channels)
        self.head_w2 = nn.init_weight(rng, cfg.fuse_channels, cfg.num_classes)
        self.head_b2 = nn.init_zeros(cfg.num_classes)

    def named_params(self) -> dict[str, Tensor]:
        params = {}
        for i in range(len(self.cfg.scales)):
            params[f"proj{i}.w"] = self.proj_w[i]
            params[f"proj{i}.b"] = self.proj_b[i]
            params[f"ln{i}.gamma"] = self.ln_gamma[i]
            params[f"ln{i}.beta"] = self.ln_beta[i]
        for key, val in self.scan_fwd.named_params().items():
            params[f"scan_fwd.{key}"] = val
        for key, val in self.scan_bwd.named_params().items():
            params[f"scan_bwd.{key}"] = val
        params.update(
            {"head.w1": self.head_w1, "head.b1": self.head_b1,
             "head.w2": self.head_w2, "head.b2": self.head_b2}
        )
        return params

    def forward(self, branches: list[tuple[Tensor, np.ndarray]]) -> Tensor:
        pooled = []
        for i, (x, valid) in enumerate(branches):
            counts = np.maximum(valid.sum(axis=0), 1)[:, None]  # (T, 1)
            mean_views = x.sum(axis=0) * Tensor(1.0 / counts)
            proj = nn.linear(mean_views, self.proj_w[i], self.proj_b[i])
            pooled.append(nn.layer_norm(proj, self.ln_gamma[i], self.ln_beta[i]))
        stacked = transpose(stack(pooled, axis=0), (1, 0, 2))  # (T, scales, C'')
        fused = run_scan(stacked, self.scan_fwd)
        fused = fused + _flip_t(run_scan(_flip_t(stacked), self.scan_bwd))
        fused = fused.mean(axis=1)  # (T, C'')
        hidden = relu(nn.linear(fused, self.head_w1, self.head_b1))
        return nn.linear(hidden, self.head_w2, self.head_b2)


class TemporalEncoder:
    """The full multi-scale encoder: parallel branches into the fuser."""

    def __init__(self, cfg: TemporalEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [ViewScanBlock(cfg, s, rng) for s in cfg.scales]
        self.fuser = ScaleFuser(cfg, rng)

    def named_params(self) -> dict[str, Tensor]:
        params = {}
        for block in self.blocks:
            for key, val in block.named_params().items():
                params[f"block_s{block.scale}.{key}"] = val
        for key, val in self.fuser.named_params().items():
            params[f"fuser.{key}"] = val
        return params

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tensor in self.named_params().items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if arrays[name].shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for '{name}'")
            tensor.data[...] = arrays[name]

    def forward(self, grid: FeatureGrid | Tensor, validity: np.ndarray | None = None) -> Tensor:
        """(V, T, C) grid -> (T, K) logits."""
        if isinstance(grid, FeatureGrid):
            values = Tensor(grid.values)
            validity = grid.validity
        else:
            values = grid
            if validity is None:
                validity = np.ones(values.shape[:2], dtype=bool)
        branches = [block.forward(values, validity) for block in self.blocks]
        return self.fuser.forward(branches)
