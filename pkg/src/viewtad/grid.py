"""The multi-view feature grid: values (V, T, C) with a per-cell validity mask.

Grids are the hand-off point between the frozen window encoder and the
temporal encoder. Cache files are a JSON header line plus float32 values and
a uint8 validity payload, keyed by (sequence, views, stride).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRID_FORMAT = "viewtad-grid-v1"


@dataclass
class FeatureGrid:
    values: np.ndarray  # (V, T, C), zero at invalid cells
    validity: np.ndarray = None  # (V, T) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"grid must be (V, T, C), got {self.values.shape}")
        if self.validity is None:
            self.validity = np.ones(self.values.shape[:2], dtype=bool)
        else:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.values.shape[:2]:
                raise ValueError("validity shape must be (V, T)")
            self.values = np.where(self.validity[:, :, None], self.values, 0.0)

    @property
    def num_views(self) -> int:
        return self.values.shape[0]

    @property
    def num_windows(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def grid_cache_path(cache_dir, sequence: str, num_views: int, stride: int) -> Path:
    return Path(cache_dir) / f"{sequence}_v{num_views}_s{stride}.grid"


def save_grid(path, grid: FeatureGrid, sequence: str, stride: int, encoder_hash: str = "") -> None:
    header = {
        "format": GRID_FORMAT,
        "sequence": sequence,
        "num_views": grid.num_views,
        "num_windows": grid.num_windows,
        "channels": grid.channels,
        "stride": stride,
        "encoder_hash": encoder_hash,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(grid.validity, dtype=np.uint8).tobytes())


def load_grid(path) -> tuple[FeatureGrid, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != GRID_FORMAT:
            raise ValueError(f"not a {GRID_FORMAT} file: {path}")
        v, t, c = header["num_views"], header["num_windows"], header["channels"]
        values = np.frombuffer(fh.read(v * t * c * 4), dtype="<f4").reshape(v, t, c)
        validity = np.frombuffer(fh.read(v * t), dtype=np.uint8).reshape(v, t).astype(bool)
    return FeatureGrid(values.astype(np.float64), validity), header
