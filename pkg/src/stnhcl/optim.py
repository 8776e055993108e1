"""Adam with bias correction, over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


class Adam:
    """Moment-tracked gradient descent; replaces each parameter's storage.

    Updates happen strictly between graph builds (parameters are treated
    as immutable while a graph is alive).  ``step`` expects a gradient
    for every registered parameter.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if not params:
            raise ConfigError("optimizer needs at least one parameter")
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        missing = self.params.keys() - grads.keys()
        if missing:
            raise ContractError(f"gradients missing for: {sorted(missing)[:4]}...")
        self.step_count += 1
        correct1 = 1.0 - self.beta1**self.step_count
        correct2 = 1.0 - self.beta2**self.step_count
        for name, param in self.params.items():
            g = np.asarray(grads[name], dtype=param.data.dtype)
            if g.shape != param.data.shape:
                raise ContractError(f"gradient shape {g.shape} != parameter shape {param.data.shape} for {name}")
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * (g * g)
            update = (m / correct1) / (np.sqrt(v / correct2) + self.eps)
            param.data = param.data - self.lr * update
