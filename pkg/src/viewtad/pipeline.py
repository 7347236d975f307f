"""Two-stage training protocol, inference, and run-directory lifecycle.

Stage 1 trains the window encoder with cross-entropy over (window, view)
samples; views are drawn uniformly at random per step unless grouped
sampling is enabled. After stage 1 the encoder is frozen, feature grids are
extracted once per sequence and cached, and stage 2 trains the temporal
encoder with per-window multi-label BCE on those grids. The frozen encoder
is hash-checked before and after stage 2.

Run directory layout: config.json, manifest.json, stage1.ckpt, stage2.ckpt,
features/, log.csv.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, params_hash, save_checkpoint
from .data import (
    DatasetManifest,
    SkeletonSequence,
    TORSO_INDICES,
    frame_targets,
    segment_to_windows,
    split_windows,
)
from .encoder import (
    WindowEncoder,
    WindowEncoderConfig,
    extract_feature_grid,
    prepare_window_input,
)
from .evaluation import DetectionSegment, EvalReport, evaluate, extract_segments
from .geometry import RigSpec, SkeletonWindow3D, render_views
from .grid import FeatureGrid, grid_cache_path, load_grid, save_grid
from .optim import AdamWState, adamw_step, clip_grad_norm
from .temporal import TemporalEncoder, TemporalEncoderConfig
from .tensor import GradTape, Tensor, sigmoid_np


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 20
    lr: float = 4.5e-4
    batch_size: int = 4
    seed: int = 0
    views: int = 12
    window_len: int = 16
    window_stride: int = 16
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    class_loss_weights: list | None = None  # stage-2 BCE class weights
    grouped_views: bool = False  # stage 1: all views of a window in one batch

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class RunDir:
    """Owns config.json, manifest.json, and log.csv of one run."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.path / "manifest.json"
        self.log_path = self.path / "log.csv"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {"config": {}, "dataset_hash": "", "log": [], "checkpoints": {}}

    def write_config(self, config: dict) -> None:
        (self.path / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True))
        self.manifest["config"] = config
        self._flush()

    def log_epoch(self, **row) -> None:
        self.manifest["log"].append(row)
        new_file = not self.log_path.exists()
        with open(self.log_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "split", "loss", "metric"])
            if new_file:
                writer.writeheader()
            writer.writerow({k: row.get(k, "") for k in ("epoch", "split", "loss", "metric")})
        self._flush()

    def record_checkpoint(self, name: str, path) -> None:
        self.manifest["checkpoints"][name] = str(path)
        self._flush()

    def _flush(self) -> None:
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1))


# ---------------------------------------------------------------------------
# stage 1


def _windowed_views(
    seq: SkeletonSequence, cfg: TrainConfig, rig: RigSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Render every window of a sequence in every rig view.

    Returns (inputs (T, V, F, J, 3) float32, labels (T,))."""
    batch = split_windows(seq, cfg.window_len, cfg.window_stride)
    num_w = len(batch)
    inputs = np.empty((num_w, rig.num_views) + batch.windows.shape[1:3] + (3,), dtype=np.float32)
    for t in range(num_w):
        w3d = SkeletonWindow3D(batch.windows[t])
        target = w3d.joints[:, 0].mean(axis=0)
        for v, pw in enumerate(render_views(w3d, rig.build(target), TORSO_INDICES, rig.margin)):
            inputs[t, v] = prepare_window_input(pw)
    return inputs, batch.labels


def train_stage1(
    cfg: TrainConfig,
    enc_cfg: WindowEncoderConfig,
    manifest: DatasetManifest,
    run_dir,
    rig: RigSpec | None = None,
    dataset_hash: str = "",
) -> Path:
    """Train the window encoder; returns the best checkpoint path."""
    rig = rig or RigSpec(num_views=cfg.views)
    run = RunDir(run_dir)
    run.manifest["dataset_hash"] = dataset_hash
    run.write_config({"train": asdict(cfg), "encoder": asdict(enc_cfg), "rig": asdict(rig)})

    sequences = manifest.sequences("train")
    num_joints = sequences[0].num_joints
    rng = np.random.default_rng([cfg.seed, 11])
    encoder = WindowEncoder(enc_cfg, sequences[0].topology, num_joints, np.random.default_rng([cfg.seed, 10]))
    params = encoder.named_params()
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)

    rendered = [_windowed_views(seq, cfg, rig) for seq in sequences]
    all_inputs = np.concatenate([r[0] for r in rendered])  # (W, V, F, J, 3)
    all_labels = np.concatenate([r[1] for r in rendered])
    num_windows = all_inputs.shape[0]

    best_acc = -1.0
    best_params = None
    ckpt_path = Path(run_dir) / "stage1.ckpt"
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(num_windows)
        if cfg.grouped_views:
            sample_w = np.repeat(order, rig.num_views)
            sample_v = np.tile(np.arange(rig.num_views), num_windows)
        else:
            sample_w = order
            sample_v = rng.integers(0, rig.num_views, size=num_windows)
        correct = 0
        losses = []
        for lo in range(0, len(sample_w), cfg.batch_size):
            wi = sample_w[lo : lo + cfg.batch_size]
            vi = sample_v[lo : lo + cfg.batch_size]
            x = Tensor(all_inputs[wi, vi].astype(np.float64))
            labels = all_labels[wi]
            with GradTape() as tape:
                logits = encoder.classify(encoder.forward_features(x))
                loss = nn.cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"stage 1 loss is not finite at epoch {epoch}")
            grads = tape.backward(loss)
            grad_map = {name: grads[p] for name, p in params.items()}
            clip_grad_norm(grad_map, cfg.grad_clip)
            adamw_step(opt, params, grad_map)
            losses.append(float(loss.data))
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        acc = correct / len(sample_w)
        run.log_epoch(
            epoch=epoch, split="train", loss=float(np.mean(losses)), metric=acc,
            seconds=round(time.perf_counter() - t0, 3),
        )
        if acc > best_acc:
            best_acc = acc
            best_params = {k: v.data.copy() for k, v in params.items()}
    meta = {
        "stage": 1,
        "encoder_config": asdict(enc_cfg),
        "train_config": asdict(cfg),
        "rig": asdict(rig),
        "topology": [list(e) for e in sequences[0].topology],
        "num_joints": num_joints,
        "classes": manifest.classes,
        "dataset_hash": dataset_hash,
        "best_accuracy": best_acc,
        "step": opt.step,
    }
    for name, arr in best_params.items():
        params[name].data[...] = arr
    save_checkpoint(ckpt_path, params, meta)
    run.record_checkpoint("stage1", ckpt_path)
    return ckpt_path


def load_encoder(ckpt_path) -> tuple[WindowEncoder, dict]:
    arrays, meta = load_checkpoint(ckpt_path)
    enc_cfg = WindowEncoderConfig(**meta["encoder_config"])
    encoder = WindowEncoder(
        enc_cfg, [tuple(e) for e in meta["topology"]], meta["num_joints"],
        np.random.default_rng(0),
    )
    encoder.load_params(arrays)
    return encoder, meta


# ---------------------------------------------------------------------------
# feature grids


def get_feature_grid(
    seq: SkeletonSequence,
    encoder: WindowEncoder,
    rig: RigSpec,
    window_len: int,
    stride: int,
    cache_dir=None,
) -> FeatureGrid:
    """Extract (or load from cache) the full multi-view grid of a sequence.

    A cached grid with at least as many views can serve a smaller rig: the
    leading camera yaws coincide, so rows are simply sliced.
    """
    encoder_hash = params_hash(encoder.named_params())
    if cache_dir is not None and Path(cache_dir).is_dir():
        candidates = sorted(
            Path(cache_dir).glob(f"{seq.name}_v*_s{stride}.grid"),
            key=lambda p: int(p.stem.split("_v")[-1].split("_s")[0]),
        )
        for path in candidates:
            cached, header = load_grid(path)
            if header.get("encoder_hash") == encoder_hash and cached.num_views >= rig.num_views:
                return FeatureGrid(
                    cached.values[: rig.num_views].copy(),
                    cached.validity[: rig.num_views].copy(),
                )
    windows = split_windows(seq, window_len, stride)
    grid = extract_feature_grid(windows.windows, encoder, rig, TORSO_INDICES)
    if cache_dir is not None:
        path = grid_cache_path(cache_dir, seq.name, rig.num_views, stride)
        save_grid(path, grid, seq.name, stride, encoder_hash)
    return grid


# ---------------------------------------------------------------------------
# stage 2


def train_stage2(
    cfg: TrainConfig,
    tmp_cfg: TemporalEncoderConfig,
    manifest: DatasetManifest,
    stage1_ckpt,
    run_dir,
    rig: RigSpec | None = None,
    dataset_hash: str = "",
) -> Path:
    """Train the temporal encoder on cached grids; returns the checkpoint path."""
    stage1_ckpt = Path(stage1_ckpt)
    if not stage1_ckpt.exists():
        raise FileNotFoundError(f"stage-1 checkpoint not found: {stage1_ckpt}")
    run = RunDir(run_dir)
    run.manifest["dataset_hash"] = dataset_hash
    run.write_config(
        {"train": asdict(cfg), "temporal": asdict(tmp_cfg), "stage1_ckpt": str(stage1_ckpt)}
    )
    encoder, enc_meta = load_encoder(stage1_ckpt)
    encoder.freeze()
    frozen_hash = params_hash(encoder.named_params())
    rig = rig or RigSpec(num_views=cfg.views)
    cache_dir = Path(run_dir) / "features"

    train_seqs = manifest.sequences("train")
    val_seqs = manifest.sequences("val")
    k = manifest.num_classes
    grids = {
        seq.name: get_feature_grid(seq, encoder, rig, cfg.window_len, cfg.window_stride, cache_dir)
        for seq in train_seqs + val_seqs
    }
    targets = {
        seq.name: frame_targets(seq, cfg.window_len, cfg.window_stride)
        for seq in train_seqs
    }

    model = TemporalEncoder(tmp_cfg, np.random.default_rng([cfg.seed, 20]))
    params = model.named_params()
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 21])

    best_map = -1.0
    best_params = {kk: v.data.copy() for kk, v in params.items()}
    ckpt_path = Path(run_dir) / "stage2.ckpt"
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_seqs))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_seqs[i] for i in order[lo : lo + cfg.batch_size]]
            with GradTape() as tape:
                loss = None
                for seq in batch:
                    logits = model.forward(grids[seq.name])
                    term = nn.bce_multilabel(logits, targets[seq.name], cfg.class_loss_weights)
                    loss = term if loss is None else loss + term
                loss = loss * Tensor(1.0 / len(batch))
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"stage 2 loss is not finite at epoch {epoch}")
            grads = tape.backward(loss)
            grad_map = {name: grads[p] for name, p in params.items()}
            clip_grad_norm(grad_map, cfg.grad_clip)
            adamw_step(opt, params, grad_map)
            losses.append(float(loss.data))
        run.log_epoch(
            epoch=epoch, split="train", loss=float(np.mean(losses)), metric="",
            seconds=round(time.perf_counter() - t0, 3),
        )
        if val_seqs:
            report = _quick_eval(model, val_seqs, grids, cfg, v_infer=1)
            val_map = report.mean_ap[0.5]
            run.log_epoch(epoch=epoch, split="val", loss="", metric=val_map)
            if val_map > best_map:
                best_map = val_map
                best_params = {kk: v.data.copy() for kk, v in params.items()}
        else:
            best_params = {kk: v.data.copy() for kk, v in params.items()}

    if params_hash(encoder.named_params()) != frozen_hash:
        raise RuntimeError("frozen encoder changed during stage 2")
    for name, arr in best_params.items():
        params[name].data[...] = arr
    meta = {
        "stage": 2,
        "temporal_config": asdict(tmp_cfg),
        "train_config": asdict(cfg),
        "classes": manifest.classes,
        "encoder_hash": frozen_hash,
        "stage1_ckpt": str(stage1_ckpt),
        "dataset_hash": dataset_hash,
        "best_val_map50": best_map,
        "step": opt.step,
    }
    save_checkpoint(ckpt_path, params, meta)
    run.record_checkpoint("stage2", ckpt_path)
    return ckpt_path


def load_temporal(ckpt_path) -> tuple[TemporalEncoder, dict]:
    arrays, meta = load_checkpoint(ckpt_path)
    model = TemporalEncoder(
        TemporalEncoderConfig(**meta["temporal_config"]), np.random.default_rng(0)
    )
    model.load_params(arrays)
    return model, meta


def _quick_eval(model, seqs, grids, cfg, v_infer):
    dets, gts = [], []
    for seq in seqs:
        grid = grids[seq.name]
        sub = FeatureGrid(grid.values[:v_infer], grid.validity[:v_infer])
        probs = sigmoid_np(model.forward(sub).data)
        dets.extend(extract_segments(probs, 0.5, seq.name))
        gts.extend(gt_window_segments(seq, cfg.window_len, cfg.window_stride))
    return evaluate(dets, gts, thresholds=(0.5,))


def gt_window_segments(seq: SkeletonSequence, window_len: int, stride: int) -> list[DetectionSegment]:
    """Ground-truth segments mapped from frame indices to the window grid."""
    from .data import window_starts

    num_windows = len(window_starts(seq.num_frames, window_len, stride))
    out = []
    for seg in seq.segments:
        lo, hi = segment_to_windows(seg.start, seg.end, window_len, stride, num_windows)
        if hi > lo:
            out.append(DetectionSegment(seg.cls, lo, hi, 1.0, seq.name))
    return out


# ---------------------------------------------------------------------------
# inference and evaluation


def infer(
    seq: SkeletonSequence,
    encoder: WindowEncoder,
    model: TemporalEncoder,
    v_infer: int,
    window_len: int,
    stride: int,
    rig: RigSpec | None = None,
    cache_dir=None,
) -> np.ndarray:
    """Per-window class probabilities (T, K) in (0, 1)."""
    if v_infer < 1:
        raise ValueError("need at least one view at inference")
    rig = rig or RigSpec()
    rig_v = RigSpec(v_infer, rig.spacing_deg, rig.radius, rig.height, rig.focal, rig.margin)
    grid = get_feature_grid(seq, encoder, rig_v, window_len, stride, cache_dir)
    logits = model.forward(grid)
    return sigmoid_np(logits.data)


def run_eval(
    stage1_ckpt,
    stage2_ckpt,
    manifest: DatasetManifest,
    split: str = "test",
    v_infer: int = 1,
    thresholds=(0.1, 0.3, 0.5),
    prob_threshold: float = 0.5,
    cache_dir=None,
) -> tuple[EvalReport, list[DetectionSegment], list[DetectionSegment]]:
    """Infer on a split and compute the event-mAP report."""
    encoder, enc_meta = load_encoder(stage1_ckpt)
    encoder.freeze()
    model, meta = load_temporal(stage2_ckpt)
    if meta["classes"] != manifest.classes:
        raise ValueError("model and dataset class vocabularies differ")
    tc = meta["train_config"]
    window_len, stride = tc["window_len"], tc["window_stride"]
    rig_meta = enc_meta.get("rig", {})
    rig = RigSpec(
        v_infer,
        rig_meta.get("spacing_deg", 30.0),
        rig_meta.get("radius", 3.0),
        rig_meta.get("height", 0.0),
        rig_meta.get("focal", 1.0),
        rig_meta.get("margin", 0.0),
    )
    dets, gts = [], []
    for seq in manifest.sequences(split):
        probs = infer(seq, encoder, model, v_infer, window_len, stride, rig, cache_dir)
        dets.extend(extract_segments(probs, prob_threshold, seq.name))
        gts.extend(gt_window_segments(seq, window_len, stride))
    report = evaluate(dets, gts, thresholds, manifest.classes)
    return report, dets, gts
