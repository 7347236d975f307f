"""Checkpoint round trips and payload hashing."""

import numpy as np
import pytest

from viewtad.checkpoint import load_checkpoint, params_hash, save_checkpoint
from viewtad.tensor import Tensor


def test_roundtrip_preserves_values_and_meta(tmp_path, rng):
    params = {
        "w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(rng.normal(size=4), requires_grad=True),
        "scalar": Tensor(rng.normal(size=()), requires_grad=True),
    }
    meta = {"lr": 4.5e-4, "step": 17, "nested": {"scales": [1, 2, 3]}}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, meta)
    arrays, loaded_meta = load_checkpoint(path)
    assert loaded_meta == meta
    for name, p in params.items():
        np.testing.assert_array_equal(arrays[name], p.data)  # bit-exact float64


def test_hash_is_order_insensitive_and_value_sensitive(rng):
    a = Tensor(rng.normal(size=(2, 2)))
    b = Tensor(rng.normal(size=3))
    h1 = params_hash({"a": a, "b": b})
    h2 = params_hash({"b": b, "a": a})
    assert h1 == h2
    mutated = {"a": Tensor(a.data + 1e-12), "b": b}
    assert params_hash(mutated) != h1


def test_hash_matches_between_memory_and_file(tmp_path, rng):
    params = {"p": Tensor(rng.normal(size=(4, 4)))}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, params)
    arrays, _ = load_checkpoint(path)
    assert params_hash(arrays) == params_hash(params)


def test_wrong_format_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b'{"format":"other"}\n')
    with pytest.raises(ValueError, match="not a"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    params = {"w": Tensor(np.ones((8, 8)))}
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, params)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
