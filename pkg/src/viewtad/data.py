"""Synthetic skeleton sequences, sequence file I/O, and temporal windowing.

The generator concatenates labeled motion primitives (one per action class)
separated by idle spans on a 15-joint human template, with per-sequence
orientation, per-segment amplitude/speed jitter, and small coordinate noise.
Everything is deterministic given the seed.

Sequence files (``.skel``) are a single-line JSON header followed by a
little-endian float32 frame payload; a ``manifest.json`` lists the class
vocabulary and the train/val/test file paths.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SKEL_FORMAT = "viewtad-skel-v1"
MANIFEST_FORMAT = "viewtad-manifest-v1"

# Template joint order is chosen so any prefix of length >= 5 is still a tree
# containing the four torso joints (indices 1..4).
JOINT_NAMES = (
    "pelvis", "l_shoulder", "r_shoulder", "l_hip", "r_hip",
    "chest", "head", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_knee", "r_knee", "l_ankle", "r_ankle",
)
TEMPLATE_POSE = np.array(
    [
        [0.00, 0.95, 0.00],  # pelvis
        [0.20, 1.40, 0.00],  # l_shoulder
        [-0.20, 1.40, 0.00],  # r_shoulder
        [0.12, 0.90, 0.00],  # l_hip
        [-0.12, 0.90, 0.00],  # r_hip
        [0.00, 1.25, 0.00],  # chest
        [0.00, 1.62, 0.00],  # head
        [0.42, 1.12, 0.00],  # l_elbow
        [-0.42, 1.12, 0.00],  # r_elbow
        [0.52, 0.86, 0.00],  # l_wrist
        [-0.52, 0.86, 0.00],  # r_wrist
        [0.14, 0.50, 0.00],  # l_knee
        [-0.14, 0.50, 0.00],  # r_knee
        [0.15, 0.06, 0.00],  # l_ankle
        [-0.15, 0.06, 0.00],  # r_ankle
    ]
)
TEMPLATE_PARENTS = (-1, 0, 0, 0, 0, 0, 5, 1, 2, 7, 8, 3, 4, 11, 12)
TORSO_INDICES = (1, 2, 4, 3)  # l_sho, r_sho, r_hip, l_hip: quad perimeter order

CLASS_NAMES = ("wave", "walk", "squat", "jump", "bend", "reach")


def template_topology(num_joints: int) -> list[tuple[int, int]]:
    if not 5 <= num_joints <= len(JOINT_NAMES):
        raise ValueError(f"num_joints must be in [5, {len(JOINT_NAMES)}]")
    return [(TEMPLATE_PARENTS[j], j) for j in range(1, num_joints)]


@dataclass
class GroundTruthSegment:
    cls: int
    start: int  # frame, inclusive
    end: int  # frame, exclusive

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty segment [{self.start}, {self.end})")


@dataclass
class SkeletonSequence:
    name: str
    frames: np.ndarray  # (N, J, 3)
    fps: float
    segments: list[GroundTruthSegment]
    class_names: list[str]
    topology: list[tuple[int, int]]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        n, j = self.frames.shape[:2]
        k = len(self.class_names)
        for seg in self.segments:
            if not (0 <= seg.start < seg.end <= n):
                raise ValueError(f"segment [{seg.start}, {seg.end}) outside sequence of {n} frames")
            if not 0 <= seg.cls < k:
                raise ValueError(f"segment class {seg.cls} out of range [0, {k})")
        parents = {child: parent for parent, child in self.topology}
        if len(self.topology) != j - 1 or set(parents) != set(range(1, j)):
            raise ValueError("topology is not a tree over the joints")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def frame_label_sets(self) -> list[set[int]]:
        """Per-frame sets of active class indices (empty set = idle)."""
        labels = [set() for _ in range(self.num_frames)]
        for seg in self.segments:
            for f in range(seg.start, seg.end):
                labels[f].add(seg.cls)
        return labels


# ---------------------------------------------------------------------------
# motion primitives


def _yaw_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _primitive_displacement(cls_name: str, phase: np.ndarray, amp: float, num_joints: int) -> np.ndarray:
    """Displacement field (T, J, 3) for one primitive; joints beyond the
    truncated template are simply absent."""
    t = phase.shape[0]
    disp = np.zeros((t, len(JOINT_NAMES), 3))
    s = np.sin(phase)[:, None]
    c = np.cos(phase)[:, None]
    if cls_name == "wave":
        # left arm raised, forearm oscillating sideways
        disp[:, 7] += amp * np.concatenate([0.10 * s, 0.28 + 0.02 * c, 0.06 * c], axis=1)
        disp[:, 9] += amp * np.concatenate([0.30 * s, 0.55 + 0.05 * c, 0.10 * c], axis=1)
        disp[:, 1, 1] += 0.05 * amp
    elif cls_name == "walk":
        # in-place gait: legs anti-phase fore/aft, arms counter-swinging
        for knee, ankle, sign in ((11, 13, 1.0), (12, 14, -1.0)):
            disp[:, knee, 2] += sign * amp * 0.16 * s[:, 0]
            disp[:, ankle, 2] += sign * amp * 0.30 * s[:, 0]
            disp[:, ankle, 1] += amp * 0.06 * np.maximum(sign * c[:, 0], 0.0)
        for elbow, wrist, sign in ((7, 9, -1.0), (8, 10, 1.0)):
            disp[:, elbow, 2] += sign * amp * 0.12 * s[:, 0]
            disp[:, wrist, 2] += sign * amp * 0.22 * s[:, 0]
        disp[:, :, 1] += amp * 0.015 * np.abs(c)
    elif cls_name == "squat":
        dip = amp * 0.22 * (0.5 - 0.5 * c)
        disp[:, :, 1] -= dip  # whole body sinks
        for knee in (11, 12):
            disp[:, knee, 2] += amp * 0.18 * (0.5 - 0.5 * c)[:, 0]
            disp[:, knee, 1] += dip[:, 0] * 0.5
        for ankle in (13, 14):
            disp[:, ankle, 1] += dip[:, 0]  # feet stay planted
    elif cls_name == "jump":
        lift = amp * 0.18 * np.maximum(s, 0.0)
        crouch = amp * 0.08 * np.maximum(-s, 0.0)
        disp[:, :, 1] += lift - crouch
        for wrist in (9, 10):
            disp[:, wrist, 1] += amp * 0.25 * np.maximum(s, 0.0)[:, 0]
    elif cls_name == "bend":
        lean = amp * (0.5 - 0.5 * c)
        for j, w in ((6, 0.45), (5, 0.22), (1, 0.3), (2, 0.3), (7, 0.3), (8, 0.3), (9, 0.35), (10, 0.35)):
            disp[:, j, 2] += w * lean[:, 0]
            disp[:, j, 1] -= 0.6 * w * lean[:, 0]
    elif cls_name == "reach":
        ext = amp * (0.5 - 0.5 * c)
        for elbow, wrist in ((7, 9), (8, 10)):
            disp[:, elbow, 2] += 0.30 * ext[:, 0]
            disp[:, elbow, 1] += 0.10 * ext[:, 0]
            disp[:, wrist, 2] += 0.62 * ext[:, 0]
            disp[:, wrist, 1] += 0.30 * ext[:, 0]
    else:
        raise ValueError(f"unknown primitive {cls_name!r}")
    return disp[:, :num_joints]


def _smooth_ramp(length: int, ramp: int = 5) -> np.ndarray:
    env = np.ones(length)
    r = min(ramp, length // 2)
    if r > 0:
        edge = np.sin(0.5 * np.pi * (np.arange(r) + 1) / r) ** 2
        env[:r] = edge
        env[length - r:] = edge[::-1]
    return env


def generate_synthetic(
    seed: int,
    num_classes: int = 4,
    num_joints: int = 15,
    n_sequences: int = 10,
    frames_per_sequence: int = 384,
    fps: float = 30.0,
    name_prefix: str = "seq",
) -> list[SkeletonSequence]:
    """Generate labeled synthetic sequences; deterministic per (seed, index).

    Every class is guaranteed to appear in at least one segment across the
    generated set (audited, raises if violated).
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if num_classes > len(CLASS_NAMES):
        raise ValueError(
            f"primitive bank has {len(CLASS_NAMES)} classes, requested {num_classes}"
        )
    topology = template_topology(num_joints)
    class_names = list(CLASS_NAMES[:num_classes])
    sequences = []
    for idx in range(n_sequences):
        rng = np.random.default_rng([seed, idx])
        frames, segments = _generate_one(
            rng, idx, num_classes, num_joints, frames_per_sequence, fps
        )
        sequences.append(
            SkeletonSequence(
                name=f"{name_prefix}{idx:04d}",
                frames=frames,
                fps=fps,
                segments=segments,
                class_names=class_names,
                topology=topology,
            )
        )
    seen = {seg.cls for s in sequences for seg in s.segments}
    if seen != set(range(num_classes)):
        raise RuntimeError(f"generator audit failed: classes {sorted(set(range(num_classes)) - seen)} never appear")
    return sequences


def _generate_one(rng, idx, num_classes, num_joints, num_frames, fps):
    base = TEMPLATE_POSE[:num_joints].copy()
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    rot = _yaw_matrix(yaw)
    offset = np.array([rng.uniform(-0.2, 0.2), 0.0, rng.uniform(-0.2, 0.2)])
    pelvis = base[0].copy()

    frames = np.tile(base, (num_frames, 1, 1))
    # idle micro-sway so quiet spans are not perfectly static
    sway_phase = 2.0 * np.pi * 0.3 * np.arange(num_frames) / fps + rng.uniform(0, 2 * np.pi)
    upper = [j for j in (1, 2, 5, 6, 7, 8, 9, 10) if j < num_joints]
    frames[:, upper, 0] += 0.006 * np.sin(sway_phase)[:, None]
    frames[:, upper, 1] += 0.003 * np.sin(2.1 * sway_phase)[:, None]

    segments = []
    # round-robin over a shuffled class order guarantees coverage
    order = rng.permutation(num_classes)
    slot = 0
    pos = int(rng.integers(8, 24))
    while True:
        dur = int(rng.integers(48, 81))
        if pos + dur > num_frames - 8:
            break
        cls = int(order[slot % num_classes])
        slot += 1
        freq = rng.uniform(0.9, 1.4)  # cycles per second
        amp = rng.uniform(0.85, 1.2)
        local_t = np.arange(dur) / fps
        phase = 2.0 * np.pi * freq * local_t
        disp = _primitive_displacement(CLASS_NAMES[cls], phase, amp, num_joints)
        disp *= _smooth_ramp(dur)[:, None, None]
        frames[pos : pos + dur] += disp
        segments.append(GroundTruthSegment(cls, pos, pos + dur))
        pos += dur + int(rng.integers(20, 49))  # idle gap of at least one window

    frames += rng.normal(0.0, 0.004, size=frames.shape)
    frames = (frames - pelvis) @ rot.T + pelvis + offset
    return frames, segments


# ---------------------------------------------------------------------------
# windowing


@dataclass
class WindowBatch:
    windows: np.ndarray  # (T, F, J, 3)
    starts: np.ndarray  # (T,)
    labels: np.ndarray  # (T,) window class; == num_classes for background

    def __len__(self):
        return self.windows.shape[0]


def window_starts(num_frames: int, window_len: int, stride: int) -> list[int]:
    """Full-window starts plus, when the tail is uncovered, one padded start."""
    if num_frames < 1:
        raise ValueError("empty sequence")
    starts = list(range(0, max(num_frames - window_len, 0) + 1, stride))
    covered = starts[-1] + window_len if starts else 0
    if covered < num_frames:
        starts.append(starts[-1] + stride if starts else 0)
    return starts


def split_windows(seq: SkeletonSequence, window_len: int = 16, stride: int | None = None) -> WindowBatch:
    """Cut a sequence into windows; a final partial window repeats the last
    frame. The window label is the majority class among frames carrying any
    label (ties to the lowest index); all-idle windows get the background
    label ``num_classes``."""
    if window_len < 2:
        raise ValueError("window length must be >= 2")
    stride = window_len if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = seq.num_frames
    starts = window_starts(n, window_len, stride)
    label_sets = seq.frame_label_sets()
    k = seq.num_classes
    windows = np.empty((len(starts), window_len, seq.num_joints, 3))
    labels = np.empty(len(starts), dtype=np.int64)
    for t, s in enumerate(starts):
        stop = min(s + window_len, n)
        chunk = seq.frames[s:stop]
        if stop - s < window_len:
            padding = np.repeat(seq.frames[-1:], window_len - (stop - s), axis=0)
            chunk = np.concatenate([chunk, padding], axis=0)
        windows[t] = chunk
        counts = np.zeros(k, dtype=np.int64)
        for f in range(s, stop):
            for cls in label_sets[f]:
                counts[cls] += 1
        labels[t] = int(np.argmax(counts)) if counts.any() else k
    return WindowBatch(windows, np.asarray(starts, dtype=np.int64), labels)


def frame_targets(seq: SkeletonSequence, window_len: int = 16, stride: int | None = None) -> np.ndarray:
    """(T, K) binary matrix: class k is on in window t when any real frame of
    the window carries label k."""
    stride = window_len if stride is None else stride
    starts = window_starts(seq.num_frames, window_len, stride)
    targets = np.zeros((len(starts), seq.num_classes))
    for seg in seq.segments:
        lo, hi = segment_to_windows(seg.start, seg.end, window_len, stride, len(starts))
        targets[lo:hi, seg.cls] = 1.0
    return targets


def segment_to_windows(start: int, end: int, window_len: int, stride: int, num_windows: int) -> tuple[int, int]:
    """Half-open window-index range of windows overlapping frame range [start, end)."""
    lo = max(0, (start - window_len) // stride + 1)
    hi = min(num_windows, -(-end // stride))  # ceil division
    return lo, max(lo, hi)


# ---------------------------------------------------------------------------
# file I/O


def save_sequence(path, seq: SkeletonSequence) -> None:
    header = {
        "format": SKEL_FORMAT,
        "name": seq.name,
        "num_frames": seq.num_frames,
        "num_joints": seq.num_joints,
        "fps": seq.fps,
        "topology": [list(edge) for edge in seq.topology],
        "class_names": list(seq.class_names),
        "segments": [[seg.cls, seg.start, seg.end] for seg in seq.segments],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def load_sequence(path) -> SkeletonSequence:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != SKEL_FORMAT:
            raise ValueError(f"not a {SKEL_FORMAT} file: {path}")
        n, j = header["num_frames"], header["num_joints"]
        frames = np.frombuffer(fh.read(n * j * 3 * 4), dtype="<f4").reshape(n, j, 3)
    return SkeletonSequence(
        name=header["name"],
        frames=frames.astype(np.float64),
        fps=float(header["fps"]),
        segments=[GroundTruthSegment(*row) for row in header["segments"]],
        class_names=list(header["class_names"]),
        topology=[tuple(edge) for edge in header["topology"]],
    )


@dataclass
class DatasetManifest:
    classes: list[str]
    splits: dict[str, list[str]]  # split name -> relative .skel paths
    generator: dict = field(default_factory=dict)
    root: Path = field(default_factory=Path)

    def sequences(self, split: str) -> list[SkeletonSequence]:
        return [load_sequence(self.root / rel) for rel in self.splits[split]]

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def save_manifest(path, manifest: DatasetManifest) -> None:
    payload = {
        "format": MANIFEST_FORMAT,
        "classes": manifest.classes,
        "splits": manifest.splits,
        "generator": manifest.generator,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"not a {MANIFEST_FORMAT} file: {path}")
    return DatasetManifest(
        classes=payload["classes"],
        splits=payload["splits"],
        generator=payload.get("generator", {}),
        root=path.parent,
    )


def manifest_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def generate_dataset(
    out_dir,
    seed: int,
    num_classes: int = 4,
    n_train: int = 20,
    n_val: int = 4,
    n_test: int = 6,
    frames_per_sequence: int = 384,
    num_joints: int = 15,
    fps: float = 30.0,
) -> DatasetManifest:
    """Generate train/val/test splits and write .skel files plus the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = n_train + n_val + n_test
    sequences = generate_synthetic(
        seed, num_classes, num_joints, total, frames_per_sequence, fps
    )
    splits = {"train": [], "val": [], "test": []}
    bounds = (("train", 0, n_train), ("val", n_train, n_train + n_val), ("test", n_train + n_val, total))
    for split, lo, hi in bounds:
        for seq in sequences[lo:hi]:
            rel = f"{split}_{seq.name}.skel"
            save_sequence(out_dir / rel, seq)
            splits[split].append(rel)
    manifest = DatasetManifest(
        classes=list(CLASS_NAMES[:num_classes]),
        splits=splits,
        generator={
            "seed": seed,
            "num_classes": num_classes,
            "n_train": n_train,
            "n_val": n_val,
            "n_test": n_test,
            "frames_per_sequence": frames_per_sequence,
            "num_joints": num_joints,
            "fps": fps,
        },
        root=out_dir,
    )
    save_manifest(out_dir / "manifest.json", manifest)
    return manifest
