"""One-step linear predictors of reconstructed streams (block LS and RLS).

A :class:`Predictor` runs a bank of independent real streams in lock-step.
All state is a function of the reconstructed samples pushed into it, so an
encoder and a decoder that push the same values hold identical state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

COND_LIMIT = 1e12


@dataclass(frozen=True)
class PredictorConfig:
    order: int = 2
    memory: float = 0.98
    learning_period: int = 100
    delta0: float = 0.01
    mode: str = "rls"
    psi_form: str = "desired"
    max_pole_radius: float | None = 0.999

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("predictor order must be >= 1")
        if not 0 < self.memory <= 1:
            raise ValueError("memory factor must lie in (0, 1]")
        if self.learning_period < self.order:
            raise ValueError("learning period must be >= predictor order")
        if self.delta0 <= 0:
            raise ValueError("delta0 must be positive")
        if self.mode not in ("rls", "lls"):
            raise ValueError(f"unknown predictor mode {self.mode!r}")
        if self.psi_form not in ("desired", "residual"):
            raise ValueError(f"unknown psi form {self.psi_form!r}")
        if self.max_pole_radius is not None and self.max_pole_radius <= 0:
            raise ValueError("max_pole_radius must be positive")

    @property
    def history_length(self):
        return self.learning_period + self.order


def lls_fit(history, order, learning_period):
    """Least-squares predictor weights over the trailing window.

    ``history`` holds reconstructed samples most-recent-first along the last
    axis and must be at least ``learning_period + order`` long. The normal
    equations carry a ridge of ``1e-8 * trace(A^T A) / order``.
    """
    history = np.asarray(history, dtype=float)
    window = history[..., : learning_period + order]
    # rows i = 0..Lp-1: target window[i], regressors window[i+1 .. i+order]
    lagged = sliding_window_view(window[..., 1:], order, axis=-1)[..., :learning_period, :]
    target = window[..., :learning_period]
    ata = np.einsum("...ij,...ik->...jk", lagged, lagged)
    atb = np.einsum("...ij,...i->...j", lagged, target)
    delta = 1e-8 * np.trace(ata, axis1=-2, axis2=-1) / order
    delta = np.maximum(delta, np.finfo(float).tiny)
    reg = ata + delta[..., None, None] * np.eye(order)
    return np.linalg.solve(reg, atb[..., None])[..., 0]


def fitting_error(history, weights, learning_period):
    """Mean squared in-window prediction error for ``weights``."""
    history = np.asarray(history, dtype=float)
    order = np.shape(weights)[-1]
    window = history[..., : learning_period + order]
    lagged = sliding_window_view(window[..., 1:], order, axis=-1)[..., :learning_period, :]
    resid = window[..., :learning_period] - lagged @ np.asarray(weights)
    return np.mean(resid ** 2, axis=-1)


def _solve_spd(phi, psi):
    """Solve ``phi w = psi`` per stream, adding a ridge where ``phi`` is ill-conditioned."""
    t = phi.shape[-1]
    if t == 2:
        a, b, d = phi[:, 0, 0], phi[:, 0, 1], phi[:, 1, 1]
        half_tr = (a + d) / 2
        root = np.sqrt(np.maximum(half_tr ** 2 - (a * d - b * b), 0.0))
        lo, hi = half_tr - root, half_tr + root
        bad = ~(lo * COND_LIMIT > hi)
        if np.any(bad):
            delta = np.maximum(1e-8 * half_tr, np.finfo(float).tiny)
            a = np.where(bad, a + delta, a)
            d = np.where(bad, d + delta, d)
        det = a * d - b * b
        det = np.where(det == 0, np.finfo(float).tiny, det)
        return np.stack([(d * psi[:, 0] - b * psi[:, 1]) / det,
                         (a * psi[:, 1] - b * psi[:, 0]) / det], axis=-1)
    cond = np.linalg.cond(phi)
    bad = ~(cond < COND_LIMIT)
    if np.any(bad):
        phi = phi.copy()
        delta = 1e-8 * np.trace(phi, axis1=-2, axis2=-1) / t
        delta = np.maximum(delta, np.finfo(float).tiny)
        phi[bad] += delta[bad, None, None] * np.eye(t)
    return np.linalg.solve(phi, psi[..., None])[..., 0]


def pole_radius(weights):
    """Largest root magnitude of z^T - w_1 z^(T-1) - ... - w_T."""
    w = np.asarray(weights, dtype=float)
    t = w.shape[-1]
    if t == 1:
        return np.abs(w[..., 0])
    if t == 2:
        w1, w2 = w[..., 0], w[..., 1]
        disc = w1 * w1 + 4 * w2
        sq = np.sqrt(np.abs(disc))
        real_roots = np.maximum(np.abs(w1 + sq), np.abs(w1 - sq)) / 2
        return np.where(disc >= 0, real_roots, np.sqrt(np.abs(w2)))
    comp = np.zeros(w.shape[:-1] + (t, t))
    comp[..., 0, :] = w
    comp[..., np.arange(1, t), np.arange(t - 1)] = 1.0
    return np.abs(np.linalg.eigvals(comp)).max(axis=-1)


def limit_poles(weights, radius):
    """Shrink all predictor poles by a common factor so none exceeds ``radius``.

    Scaling w_j by r^j scales every root by r. Keeps the reconstruction loop
    from running away after a slope-overload burst.
    """
    rho = pole_radius(weights)
    if not np.any(rho > radius):
        return weights
    r = np.where(rho > radius, radius / np.where(rho > 0, rho, 1.0), 1.0)
    return weights * r[..., None] ** np.arange(1, weights.shape[-1] + 1)


class Predictor:
    """Bank of ``n_streams`` one-step predictors sharing a configuration."""

    def __init__(self, config=PredictorConfig(), n_streams=1):
        self.config = config
        self.n_streams = n_streams
        t = config.order
        self.weights = np.zeros((n_streams, t))
        self.phi = np.broadcast_to(config.delta0 * np.eye(t), (n_streams, t, t)).copy()
        self.psi = np.zeros((n_streams, t))
        # history[:, 0] is the most recent reconstruction
        self.history = np.zeros((n_streams, config.history_length))
        self.count = 0

    def predict(self):
        t = self.config.order
        return (self.weights * self.history[:, :t]).sum(axis=1)

    def update(self, reconstruction, quantized_diff=None):
        """Push the newest reconstruction and refresh the weights."""
        cfg = self.config
        t = cfg.order
        recon = np.asarray(reconstruction, dtype=float).reshape(self.n_streams)
        regressor = self.history[:, :t].copy()
        self.history[:, 1:] = self.history[:, :-1]
        self.history[:, 0] = recon
        self.count += 1
        if cfg.mode == "rls":
            target = recon if cfg.psi_form == "desired" else np.asarray(quantized_diff, dtype=float).reshape(self.n_streams)
            lam = cfg.memory
            self.phi = lam * self.phi + regressor[:, :, None] * regressor[:, None, :]
            self.psi = lam * self.psi + regressor * target[:, None]
            self.weights = _solve_spd(self.phi, self.psi)
        elif self.count >= cfg.history_length:
            self.weights = lls_fit(self.history, t, cfg.learning_period)
        else:
            return
        if cfg.max_pole_radius is not None:
            self.weights = limit_poles(self.weights, cfg.max_pole_radius)

    def state_arrays(self):
        return (self.weights, self.phi, self.psi, self.history)

    def copy(self):
        other = Predictor.__new__(Predictor)
        other.config = self.config
        other.n_streams = self.n_streams
        other.weights = self.weights.copy()
        other.phi = self.phi.copy()
        other.psi = self.psi.copy()
        other.history = self.history.copy()
        other.count = self.count
        return other
