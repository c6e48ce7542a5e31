"""Central finite-difference oracle for the reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, fresh_tape, no_grad


def finite_difference_check(f, inputs, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensors in ``inputs`` to a scalar Tensor and must rebuild
    its graph on every call.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None

    with fresh_tape():
        loss = f(*inputs)
        backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = f(*inputs).item()
                flat[i] = orig - h
                dn = f(*inputs).item()
                flat[i] = orig
                numeric = (up - dn) / (2.0 * h)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


def random_tensor(rng: np.random.Generator, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
