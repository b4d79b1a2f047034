"""Backward-adaptive step size for the unit-variance quantizer.

    v_n = k2 * v_{n-1} + d_{n-1}^2
    g_n = k1 * sqrt((1 - k2) * v_n)

where ``d`` is the quantized difference signal. ``g`` is floored at ``g_min``.
The energy accumulator starts at ``v0``; by default the value that reproduces
``g0`` through the same law, so the first few steps neither collapse nor
inflate the step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GainConfig:
    k1: float = 1.1
    k2: float = 0.9
    g0: float = 1.0
    g_min: float = 1e-6
    v0: float | None = None

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0 < self.k2 < 1:
            raise ValueError("k2 must lie in (0, 1)")
        if self.g0 <= 0 or self.g_min <= 0:
            raise ValueError("g0 and g_min must be positive")
        if self.v0 is not None and self.v0 < 0:
            raise ValueError("v0 must be non-negative")

    @property
    def initial_energy(self):
        if self.v0 is not None:
            return self.v0
        return self.g0 ** 2 / (self.k1 ** 2 * (1 - self.k2))


class GainEstimator:
    def __init__(self, config=GainConfig(), n_streams=1):
        self.config = config
        self.v = np.full(n_streams, float(config.initial_energy))
        self.g = np.full(n_streams, float(config.g0))

    def update(self, quantized_diff):
        """Advance with the last quantized difference and return the new gain."""
        cfg = self.config
        d2 = np.square(np.asarray(quantized_diff, dtype=float)).reshape(self.v.shape)
        radicand = cfg.k2 * self.v + d2
        self.v = radicand
        self.g = np.maximum(cfg.g_min, cfg.k1 * np.sqrt((1 - cfg.k2) * radicand))
        return self.g

    def copy(self):
        other = GainEstimator.__new__(GainEstimator)
        other.config = self.config
        other.v = self.v.copy()
        other.g = self.g.copy()
        return other


def update_gain(state, last_quantized_diff):
    return state.update(last_quantized_diff)
