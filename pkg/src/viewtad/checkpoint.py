"""Checkpoint file format.

One file per checkpoint: a compact single-line JSON header (parameter names
and shapes in payload order, plus a free-form ``meta`` dict for
hyperparameters and step counters), a newline, then the little-endian
float64 payloads concatenated in header order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

FORMAT_TAG = "viewtad-ckpt-v1"


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    header = {
        "format": FORMAT_TAG,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "meta": meta or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for v in params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"not a {FORMAT_TAG} file: {path}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated checkpoint payload in {path}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return params, header["meta"]


def params_hash(params: dict[str, Tensor | np.ndarray]) -> str:
    """SHA-256 over names, shapes, and raw little-endian payloads."""
    h = hashlib.sha256()
    for name in sorted(params):
        v = params[name]
        arr = v.data if isinstance(v, Tensor) else np.asarray(v)
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()
