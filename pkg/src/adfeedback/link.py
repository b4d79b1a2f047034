"""Downstream evaluation of quantized CSI: SMSE, a regularized-inversion
precoder, QPSK transmission over the true channel and Monte Carlo BER.

The channel of user k is the M x N_k block ``H_k`` of ``H``; it receives
``y_k = H_k^H U sqrt(P) x + n_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codec import CodecConfig, COMPONENT_SCALE, encode_matrix_stream
from .quantizer import gaussian_codebook
from .svd import UserLayout, encode_singular_stream, svd_small

SCHEMES = ("perfect", "fixed2", "fixed3", "adaptive_channel", "adaptive_svd")


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    M: int = 4
    n_rx: tuple = (4, 4)
    n_streams: tuple = (2, 2)
    p_max: float = 1.0
    noise_var: float = 0.1
    snr_db: tuple = (10.0, 15.0, 20.0)

    def __post_init__(self):
        UserLayout(tuple(self.n_rx), tuple(self.n_streams))
        if sum(self.n_streams) > self.M:
            raise ValueError("total stream count L must not exceed M")
        if self.p_max <= 0 or self.noise_var <= 0:
            raise ValueError("p_max and noise_var must be positive")

    @property
    def K(self):
        return len(self.n_rx)

    @property
    def L(self):
        return int(sum(self.n_streams))

    @property
    def N(self):
        return int(sum(self.n_rx))

    @property
    def layout(self):
        return UserLayout(tuple(self.n_rx), tuple(self.n_streams))

    def noise_for_snr(self, snr_db):
        return self.p_max / (self.M * 10 ** (snr_db / 10))


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def smse(f, q, noise_var, sigma2_e, p_max):
    """Sum MSE ``L - M + s * tr(J^-1)`` with ``J = F Q F^H + s I``,
    ``s = noise_var + sigma2_e * p_max``.

    ``q`` is the diagonal of the virtual uplink power matrix (or the matrix).
    """
    f = np.asarray(f, dtype=complex)
    m, l = f.shape[-2:]
    q = np.asarray(q, dtype=float)
    if q.ndim >= 2 and q.shape[-1] == q.shape[-2] == l:
        q = np.diagonal(q, axis1=-2, axis2=-1)
    s = noise_var + sigma2_e * p_max
    j = (f * q[..., None, :]) @ _herm(f) + s * np.eye(m)
    try:
        np.linalg.cholesky(j)
    except np.linalg.LinAlgError as exc:
        raise NumericError("J is not positive definite") from exc
    jinv_trace = np.trace(np.linalg.solve(j, np.broadcast_to(np.eye(m), j.shape)), axis1=-2, axis2=-1).real
    return l - m + s * jinv_trace


def mmse_precoder(g, noise_var, p_max):
    """Regularized channel inversion on the effective channel ``g`` (..., M, L).

    Returns unit-norm beamformer columns ``U`` and equal powers ``p``.
    """
    g = np.asarray(g, dtype=complex)
    l = g.shape[-1]
    gram = _herm(g) @ g + (l * noise_var / p_max) * np.eye(l)
    u = g @ np.linalg.inv(gram)
    norms = np.linalg.norm(u, axis=-2, keepdims=True)
    u = u / np.where(norms > 0, norms, 1.0)
    p = np.full(g.shape[:-2] + (l,), p_max / l)
    return u, p


def effective_channel(h_hat, system):
    """``G_k = H_k V_k`` with ``V_k`` the dominant right singular vectors of ``H_k``."""
    blocks = []
    for hk, lk in zip(system.layout.user_channels(h_hat), system.n_streams):
        t = svd_small(hk)
        blocks.append(hk @ t.B[..., :lk])
    return np.concatenate(blocks, axis=-1)


def fixed_quantize(h, bits):
    """Memoryless per-component Gaussian Lloyd-Max quantization of unit-power entries."""
    cb = gaussian_codebook(bits)
    re = cb.quantize(COMPONENT_SCALE * np.real(h))[1]
    im = cb.quantize(COMPONENT_SCALE * np.imag(h))[1]
    return (re + 1j * im) / COMPONENT_SCALE


@dataclass
class CsiReport:
    """What the base station knows for every channel sample."""

    g_hat: np.ndarray             # (n, M, L) effective channel used to precode
    sigma2_e: float
    bits_per_sample: int


def csi_for_scheme(trajectory, scheme, system, codec=CodecConfig(), warmup=0):
    h = trajectory.samples
    if scheme == "perfect":
        return CsiReport(effective_channel(h, system), 0.0, 0)
    if scheme in ("fixed2", "fixed3"):
        bits = int(scheme[-1])
        h_hat = fixed_quantize(h, bits)
        err = float(np.mean(np.abs(h - h_hat) ** 2))
        return CsiReport(effective_channel(h_hat, system), err, bits * 2 * h.shape[1] * h.shape[2])
    if scheme == "adaptive_channel":
        fb = encode_matrix_stream(trajectory, codec)
        return CsiReport(effective_channel(fb.reconstruction, system), float(fb.error[warmup:].mean()),
                         fb.bits_per_sample)
    if scheme == "adaptive_svd":
        fb = encode_singular_stream(trajectory, system.layout, codec)
        return CsiReport(fb.f_hat, float(fb.error[warmup:].mean()), fb.bits_per_sample)
    raise ValueError(f"unknown scheme {scheme!r}")


_QPSK = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / math.sqrt(2)  # Gray: bit0 -> re, bit1 -> im


def _bit_errors(h, u, p, noise_var, system, rng, n_sym):
    """Count bit errors for ``n_sym`` symbol vectors per channel sample.

    ``h`` (n, M, N) true channels, ``u`` (n, M, L), ``p`` (n, L).
    """
    n = h.shape[0]
    l = system.L
    bits = rng.integers(0, 2, size=(n, n_sym, l, 2))
    x = _QPSK[bits[..., 0] + 2 * bits[..., 1]]                       # (n, S, L)
    tx = np.einsum("nml,nsl->nsm", u * np.sqrt(p)[:, None, :], x)   # (n, S, M)
    errors = 0
    off = system.layout.offsets
    soff = np.concatenate([[0], np.cumsum(system.n_streams)]).astype(int)
    for k in range(system.K):
        hk = h[:, :, off[k]:off[k + 1]]                               # (n, M, Nk)
        nk = hk.shape[-1]
        heff = _herm(hk) @ u * np.sqrt(p)[:, None, :]                 # (n, Nk, L)
        noise = math.sqrt(noise_var / 2) * (rng.standard_normal((n, n_sym, nk))
                                            + 1j * rng.standard_normal((n, n_sym, nk)))
        y = np.einsum("nkl,nsl->nsk", heff, x) + noise
        cov = heff @ _herm(heff) + noise_var * np.eye(nk)
        w = np.linalg.solve(cov, heff[:, :, soff[k]:soff[k + 1]])      # (n, Nk, Lk)
        est = np.einsum("nkl,nsk->nsl", np.conj(w), y)
        det = np.stack([est.real < 0, est.imag < 0], axis=-1)
        errors += int(np.count_nonzero(det != bits[:, :, soff[k]:soff[k + 1], :].astype(bool)))
    return errors


@dataclass
class BerPoint:
    snr_db: float
    ber: float
    ci_halfwidth: float
    n_bits: int
    n_errors: int


def ber_run(trajectory, scheme, system, seed=0, codec=CodecConfig(), warmup=200,
            min_bits=100_000, max_bits=4_000_000, rel_ci=0.2, csi=None):
    """Monte Carlo BER of ``scheme`` at every SNR in ``system.snr_db``.

    Bits are added in batches until the 95% half-width is within ``rel_ci`` of
    the estimate (and at least ``min_bits`` were sent) or ``max_bits`` is hit.
    """
    csi = csi if csi is not None else csi_for_scheme(trajectory, scheme, system, codec, warmup)
    h = trajectory.samples[warmup:]
    g = csi.g_hat[warmup:]
    if h.shape[0] == 0:
        raise ValueError("trajectory shorter than the warm-up period")
    rng = np.random.default_rng(seed)
    bits_per_pass = h.shape[0] * system.L * 2
    n_sym = max(1, int(math.ceil(min_bits / bits_per_pass / 4)))
    out = []
    for snr in system.snr_db:
        noise_var = system.noise_for_snr(snr)
        u, p = mmse_precoder(g, noise_var, system.p_max)
        errs = 0
        sent = 0
        while True:
            errs += _bit_errors(h, u, p, noise_var, system, rng, n_sym)
            sent += n_sym * bits_per_pass
            ber = errs / sent
            half = 1.96 * math.sqrt(max(ber * (1 - ber), 0.0) / sent)
            if sent >= min_bits and errs > 0 and half <= rel_ci * ber:
                break
            if sent >= max_bits:
                break
        out.append(BerPoint(float(snr), ber, half, sent, errs))
    return out


def overhead(bits_per_component, n_components, sample_rate):
    """Feedback bit rate in bit/s (integer arithmetic)."""
    for v in (bits_per_component, n_components, sample_rate):
        if v < 0:
            raise ValueError("overhead arguments must be non-negative")
    return int(bits_per_component) * int(n_components) * int(round(sample_rate))


def scheme_overhead(scheme, system, sample_rate):
    """Bits per second spent by each feedback scheme."""
    comps = 2 * system.M * system.N
    if scheme == "perfect":
        return 0
    if scheme == "fixed2" or scheme == "adaptive_channel":
        return overhead(2, comps, sample_rate)
    if scheme == "fixed3":
        return overhead(3, comps, sample_rate)
    if scheme == "adaptive_svd":
        return overhead(2, 2 * system.M * system.L, sample_rate) + overhead(2, system.L, sample_rate)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class SinrReport:
    per_stream_db: np.ndarray = field(repr=False)


def stream_sinr(h, u, p, noise_var, system):
    """Post-MMSE-receiver SINR of every stream, linear, shape (n, L)."""
    out = []
    off = system.layout.offsets
    soff = np.concatenate([[0], np.cumsum(system.n_streams)]).astype(int)
    for k in range(system.K):
        hk = h[..., :, off[k]:off[k + 1]]
        heff = _herm(hk) @ u * np.sqrt(p)[..., None, :]
        nk = hk.shape[-1]
        for l in range(soff[k], soff[k + 1]):
            cols = heff[..., :, l:l + 1]
            others = heff @ _herm(heff) - cols @ _herm(cols) + noise_var * np.eye(nk)
            out.append(np.real(_herm(cols) @ np.linalg.solve(others, cols))[..., 0, 0])
    return np.stack(out, axis=-1)
