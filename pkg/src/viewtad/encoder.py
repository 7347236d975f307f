"""Stage-1 spatial window encoder.

A stack of blocks, each graph convolution over the skeleton adjacency, group
normalization, a rectifier, and a stride-1 same-padded temporal convolution,
followed by global average pooling to one feature vector per window. Frame
count is preserved through the whole trunk. A single affine head classifies
windows during stage-1 training; afterwards the encoder is frozen and only
pooled features are extracted.

Window inputs are (u, v, visibility) per joint: projected coordinates are
normalized per window to zero mean and unit RMS over the visible joints
(camera scale drops out), invisible joints are zeroed, and the mask rides
along as a third channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import ProjectedWindow, RigSpec, SkeletonWindow3D, render_views
from .grid import FeatureGrid
from .tensor import Tensor, pad, relu


class EncoderNotFrozen(RuntimeError):
    """Feature extraction requires a frozen encoder."""


@dataclass
class WindowEncoderConfig:
    feature_dim: int = 384
    num_blocks: int = 3
    temporal_kernel: int = 5
    groups: int = 8
    num_classes: int = 5  # actions + background

    def __post_init__(self):
        if self.temporal_kernel % 2 == 0:
            raise ValueError("temporal kernel must be odd")
        for width in self.block_widths:
            if width % self.groups != 0:
                raise ValueError(
                    f"block width {width} not divisible by groups={self.groups}"
                )

    @property
    def block_widths(self) -> list[int]:
        # width doubles per block up to the feature dim
        return [self.feature_dim // 2 ** (self.num_blocks - 1 - i) for i in range(self.num_blocks)]


def build_adjacency(topology, num_joints: int) -> np.ndarray:
    """Symmetric-normalized adjacency D^-1/2 (A + I) D^-1/2 of the bone graph."""
    a = np.eye(num_joints)
    for parent, child in topology:
        a[parent, child] = 1.0
        a[child, parent] = 1.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def graph_conv(x: Tensor, adjacency: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per frame, Y = A X W over (B, F, J, C) input."""
    out = (adjacency @ x) @ weight
    return out if bias is None else out + bias


def temporal_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 convolution along the frame axis, per joint.

    weight is (k, C_in, C_out); output keeps the frame count exactly.
    """
    k = weight.shape[0]
    frames = x.shape[1]
    if k > frames:
        raise ValueError(f"temporal kernel {k} exceeds window length {frames}")
    half = (k - 1) // 2
    padded = pad(x, ((0, 0), (half, half), (0, 0), (0, 0)))
    out = None
    for tap in range(k):
        term = padded[:, tap : tap + frames] @ weight[tap]
        out = term if out is None else out + term
    return out if bias is None else out + bias


class WindowEncoder:
    """Graph-conv window encoder plus classification head."""

    def __init__(self, cfg: WindowEncoderConfig, topology, num_joints: int, rng: np.random.Generator):
        self.cfg = cfg
        self.num_joints = num_joints
        self.adjacency = Tensor(build_adjacency(topology, num_joints))
        self.frozen = False
        self.blocks = []
        c_in = 3  # u, v, visibility
        for width in cfg.block_widths:
            self.blocks.append(
                {
                    "gc_w": nn.init_weight(rng, c_in, width),
                    "gc_b": nn.init_zeros(width),
                    "gn_gamma": nn.init_ones(width),
                    "gn_beta": nn.init_zeros(width),
                    "tc_w": nn.init_weight(
                        rng, cfg.temporal_kernel * width, None,
                        shape=(cfg.temporal_kernel, width, width),
                    ),
                    "tc_b": nn.init_zeros(width),
                }
            )
            c_in = width
        self.head_w = nn.init_weight(rng, cfg.feature_dim, cfg.num_classes)
        self.head_b = nn.init_zeros(cfg.num_classes)

    def named_params(self) -> dict[str, Tensor]:
        params = {}
        for i, blk in enumerate(self.blocks):
            for key, val in blk.items():
                params[f"block{i}.{key}"] = val
        params["head.w"] = self.head_w
        params["head.b"] = self.head_b
        return params

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        for name, tensor in self.named_params().items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            if arrays[name].shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for '{name}'")
            tensor.data[...] = arrays[name]

    def freeze(self) -> None:
        self.frozen = True
        for tensor in self.named_params().values():
            tensor.requires_grad = False

    def forward_features(self, x: Tensor) -> Tensor:
        """(B, F, J, 3) -> pooled (B, d) features."""
        out = x
        for blk in self.blocks:
            out = graph_conv(out, self.adjacency, blk["gc_w"], blk["gc_b"])
            out = nn.group_norm(out, self.cfg.groups, blk["gn_gamma"], blk["gn_beta"])
            out = relu(out)
            out = temporal_conv(out, blk["tc_w"], blk["tc_b"])
        return out.mean(axis=(1, 2))

    def classify(self, features: Tensor) -> Tensor:
        return nn.linear(features, self.head_w, self.head_b)


def prepare_window_input(pw: ProjectedWindow) -> np.ndarray:
    """(F, J, 3) array of normalized coordinates plus the visibility channel."""
    uv = pw.joints2d
    vis = pw.visibility
    out = np.zeros(uv.shape[:2] + (3,))
    if vis.any():
        coords = uv[vis]
        centered = coords - coords.mean(axis=0)
        rms = np.sqrt((centered**2).mean())
        if rms > 1e-8:
            centered = centered / rms
        out[vis, :2] = centered
    out[:, :, 2] = vis
    return out


def encode_window(pw: ProjectedWindow, encoder: WindowEncoder) -> np.ndarray:
    """Feature vector of a single projected window (no tape, inference path)."""
    x = Tensor(prepare_window_input(pw)[None])
    return encoder.forward_features(x).data[0]


def extract_feature_grid(
    windows: np.ndarray,
    encoder: WindowEncoder,
    rig: RigSpec,
    torso_indices,
    drop_mask: np.ndarray | None = None,
    batch_size: int = 128,
) -> FeatureGrid:
    """M[v, t] = feature of window t rendered in view v; encoder must be frozen.

    ``drop_mask`` (V, T) optionally marks cells as missing detections; those
    cells are zero-filled and flagged invalid.
    """
    if not encoder.frozen:
        raise EncoderNotFrozen("freeze the encoder before extracting features")
    num_windows = windows.shape[0]
    num_views = rig.num_views
    inputs = np.empty((num_views, num_windows) + windows.shape[1:3] + (3,))
    for t in range(num_windows):
        w3d = SkeletonWindow3D(windows[t])
        target = w3d.joints[:, 0].mean(axis=0)  # window-mean root
        views = render_views(w3d, rig.build(target), torso_indices, rig.margin)
        for v, pw in enumerate(views):
            inputs[v, t] = prepare_window_input(pw)
    flat = inputs.reshape(num_views * num_windows, *inputs.shape[2:])
    feats = np.empty((flat.shape[0], encoder.cfg.feature_dim))
    for lo in range(0, flat.shape[0], batch_size):
        chunk = Tensor(flat[lo : lo + batch_size])
        feats[lo : lo + batch_size] = encoder.forward_features(chunk).data
    values = feats.reshape(num_views, num_windows, -1)
    validity = None
    if drop_mask is not None:
        validity = ~np.asarray(drop_mask, dtype=bool)
    return FeatureGrid(values, validity)
