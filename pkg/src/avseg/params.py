"""Named parameter registry with seeded, stream-keyed initialization.

Initial values depend only on (seed, parameter name), so two models built
with the same seed share identical values for every parameter they have in
common regardless of which optional branches exist.
"""

from __future__ import annotations

import numpy as np

from .seeding import stream
from .tensor import Tensor


class ParamStore:
    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def conv(self, name: str, cout: int, cin: int, k: int) -> Tensor:
        rng = stream(self.seed, "init", name)
        scale = np.sqrt(2.0 / (cin * k * k))
        return self._register(name, rng.standard_normal((cout, cin, k, k)) * scale)

    def linear(self, name: str, fan_in: int, fan_out: int,
               scale: float | None = None) -> Tensor:
        rng = stream(self.seed, "init", name)
        if scale is None:
            scale = np.sqrt(1.0 / fan_in)
        return self._register(name, rng.standard_normal((fan_in, fan_out)) * scale)

    def embedding(self, name: str, shape, scale: float = 0.02) -> Tensor:
        rng = stream(self.seed, "init", name)
        return self._register(name, rng.standard_normal(shape) * scale)

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape))
