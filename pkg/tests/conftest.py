"""Shared test utilities: the central finite-difference gradient oracle."""

import numpy as np
import pytest

from viewtad.tensor import GradTape, Tensor


def finite_difference(fn, arrays, index, h=1e-5):
    """Central-difference d fn / d arrays[index], one scalar per coordinate.

    ``fn`` maps a list of plain arrays to a float; arrays are modified in
    place and restored.
    """
    arr = arrays[index]
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        hi = fn(arrays)
        flat[k] = old - h
        lo = fn(arrays)
        flat[k] = old
        gflat[k] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(build_loss, arrays, h=1e-5, tol=1e-5):
    """Assert tape gradients of ``build_loss`` match central differences.

    ``build_loss`` takes a list of Tensors and returns a scalar Tensor.
    Returns the worst relative error actually observed.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = build_loss(tensors)
    grads = tape.backward(loss)

    def scalar_fn(arrs):
        ts = [Tensor(a) for a in arrs]
        return float(build_loss(ts).data)

    worst = 0.0
    for i in range(len(arrays)):
        if tensors[i] not in grads:
            raise AssertionError(f"input {i} received no gradient")
        fd = finite_difference(scalar_fn, [a.copy() for a in arrays], i, h=h)
        worst = max(worst, max_rel_err(grads[tensors[i]], fd))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol:g}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
