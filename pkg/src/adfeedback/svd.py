"""Singular-vector feedback: small-matrix SVD, phase tracking, and the
differential codec applied to the dominant left singular vectors.

The receiver feeds back ``F_k = A_k[:, :L_k] @ diag(s_k[:L_k])``. Entries of
``sqrt(M) * A_k`` are close to unit complex Gaussians, so the same codec that
tracks channel entries can track them; singular values go through a fixed
2-bit Lloyd-Max codebook every sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codec import (
    CodecConfig, CodecError, DifferentialCodec, HEADER, components_to_complex,
    complex_to_components, read_bitstream, trailing_mean, unpack_indices, write_bitstream,
)
from .quantizer import singular_value_codebook

JACOBI_TOL = 1e-15
MAX_SWEEPS = 40


@dataclass(frozen=True)
class SingularTriple:
    """``H = A @ Sigma @ B^H`` with ``A`` M x M, ``B`` N x N, descending ``s``.

    Leading batch dimensions are allowed on every field.
    """

    A: np.ndarray
    s: np.ndarray
    B: np.ndarray

    @property
    def sigma(self):
        m, n = self.A.shape[-1], self.B.shape[-1]
        out = np.zeros(self.s.shape[:-1] + (m, n))
        k = self.s.shape[-1]
        out[..., np.arange(k), np.arange(k)] = self.s
        return out

    def reconstruct(self):
        return self.A @ (self.sigma * 1.0) @ np.conj(np.swapaxes(self.B, -1, -2))


def _jacobi_tall(h):
    """One-sided (Hestenes) Jacobi on a batch of tall matrices (..., M, N), M >= N."""
    g = np.array(h, dtype=complex)
    n = g.shape[-1]
    v = np.broadcast_to(np.eye(n, dtype=complex), g.shape[:-2] + (n, n)).copy()
    # columns carrying less than eps^2 of the total energy are numerically zero
    floor = np.finfo(float).eps ** 2 * np.sum(np.abs(g) ** 2, axis=(-2, -1))
    for _ in range(MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                gp, gq = g[..., :, p], g[..., :, q]
                alpha = np.sum(np.abs(gp) ** 2, axis=-1)
                beta = np.sum(np.abs(gq) ** 2, axis=-1)
                gamma = np.sum(np.conj(gp) * gq, axis=-1)
                mag = np.abs(gamma)
                active = (mag > JACOBI_TOL * np.sqrt(alpha) * np.sqrt(beta)) & (np.minimum(alpha, beta) > floor)
                if not np.any(active):
                    continue
                rotated = True
                safe = np.where(active, mag, 1.0)
                zeta = (beta - alpha) / (2 * safe)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
                c = 1 / np.sqrt(1 + t ** 2)
                s = c * t
                c = np.where(active, c, 1.0)
                s = np.where(active, s, 0.0)
                # rotate phase of column q so that gp^H gq is real positive
                ph = np.where(active, np.conj(gamma) / safe, 1.0)
                for mat in (g, v):
                    cp = mat[..., :, p].copy()
                    cq = mat[..., :, q] * ph[..., None]
                    mat[..., :, p] = c[..., None] * cp - s[..., None] * cq
                    mat[..., :, q] = s[..., None] * cp + c[..., None] * cq
        if not rotated:
            break
    return g, v


def _phase_normalize(a, b):
    """Rotate each column of ``a`` so its largest-magnitude entry is real positive."""
    m = a.shape[-2]
    k = b.shape[-1]
    idx = np.argmax(np.abs(a), axis=-2)
    peak = np.take_along_axis(a, idx[..., None, :], axis=-2)[..., 0, :]
    mag = np.abs(peak)
    ph = np.where(mag > 0, np.conj(peak) / np.where(mag > 0, mag, 1.0), 1.0)
    a = a * ph[..., None, :]
    b = b.copy()
    b[..., :, :min(k, m)] *= ph[..., None, :min(k, m)]
    return a, b


def svd_small(h):
    """SVD of a small complex matrix (or a batch of them) by one-sided Jacobi."""
    h = np.asarray(h, dtype=complex)
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix has non-finite entries")
    m, n = h.shape[-2:]
    if m < n:
        t = svd_small(np.conj(np.swapaxes(h, -1, -2)))
        a, b = _phase_normalize(t.B, t.A)
        return SingularTriple(a, t.s, b)
    g, v = _jacobi_tall(h)
    s = np.linalg.norm(g, axis=-2)
    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    g = np.take_along_axis(g, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    tol = max(m, n) * np.finfo(float).eps * s[..., :1]
    good = s > tol
    u = np.where(good[..., None, :], g / np.where(good, s, 1.0)[..., None, :], 0.0)
    # complete to an M x M unitary; rank-deficient columns come last after sorting
    q, _ = np.linalg.qr(np.concatenate([u, np.broadcast_to(np.eye(m), u.shape[:-1] + (m,))], axis=-1))
    a = q.copy()
    a[..., :, :n] = np.where(good[..., None, :], u, q[..., :, :n])
    s = np.where(good, s, 0.0)
    a, v = _phase_normalize(a, v)
    return SingularTriple(a, s, v)


def align_columns(current, previous):
    """Phase-align columns of ``current`` to ``previous`` (decoder-visible) columns.

    Column ``j`` is multiplied by ``exp(-1j*arg(<previous_j, current_j>))``;
    columns with a vanishing inner product are left as they are. Returns the
    aligned columns and the applied unit phasors.
    """
    current = np.asarray(current, dtype=complex)
    ip = np.sum(np.conj(previous) * current, axis=-2)
    mag = np.abs(ip)
    keep = mag < 1e-9
    ph = np.where(keep, 1.0, np.conj(ip) / np.where(keep, 1.0, mag))
    return current * ph[..., None, :], ph


def haar_normalize(entry, m):
    return np.asarray(entry) * np.sqrt(m)


def haar_denormalize(entry, m):
    return np.asarray(entry) / np.sqrt(m)


def haar_matrices(m, n_draws, n_k=None, seed=0):
    """Haar-distributed unitary matrices from SVDs of i.i.d. CN(0,1) channels.

    With ``n_k`` given, the channels are M x n_k and only the first ``n_k``
    columns (the ones tied to singular values) are returned. Each column gets
    an independent uniform phase, which undoes any SVD phase convention, so
    the LAPACK routine is used here for speed.
    """
    n_k = m if n_k is None else n_k
    rng = np.random.default_rng(seed)
    shape = (n_draws, m, n_k)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    a = np.linalg.svd(h)[0][..., :n_k]
    return a * np.exp(2j * np.pi * rng.random((n_draws, 1, n_k)))


def haar_second_moments(m, n_draws=100_000, seed=0):
    """Per-entry Monte Carlo estimate of E|A_ij|^2, shape (M, M)."""
    a = haar_matrices(m, n_draws, seed=seed)
    return np.mean(np.abs(a) ** 2, axis=0)


def haar_entry_samples(m, n_k=2, n_draws=100_000, seed=0):
    """Unit-variance real samples from randomly picked Haar entries.

    One entry per draw; its real and imaginary parts, each scaled by
    sqrt(2M), are pooled.
    """
    a = haar_matrices(m, n_draws, n_k, seed)
    rng = np.random.default_rng(seed + 1)
    i = rng.integers(m, size=n_draws)
    j = rng.integers(n_k, size=n_draws)
    x = haar_normalize(a[np.arange(n_draws), i, j], m) * np.sqrt(2)
    return np.concatenate([x.real, x.imag])


@dataclass(frozen=True)
class UserLayout:
    n_rx: tuple      # N_k per user
    n_streams: tuple  # L_k per user

    def __post_init__(self):
        if len(self.n_rx) != len(self.n_streams):
            raise ValueError("N_k and L_k lists differ in length")
        for nk, lk in zip(self.n_rx, self.n_streams):
            if not 1 <= lk <= nk:
                raise ValueError(f"need 1 <= L_k <= N_k, got L_k={lk}, N_k={nk}")

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.n_rx)]).astype(int)

    @property
    def total_streams(self):
        return int(sum(self.n_streams))

    def user_channels(self, h):
        """Split (..., M, N) into per-user (..., M, N_k) blocks."""
        off = self.offsets
        return [h[..., :, off[k]:off[k + 1]] for k in range(len(self.n_rx))]


def svd_bits_per_sample(m, layout, bits=2, sv_bits=2):
    return bits * 2 * m * layout.total_streams + sv_bits * layout.total_streams


@dataclass
class SingularFeedback:
    indices: np.ndarray       # (n_samples, n_codec_components + n_singular_values)
    f: np.ndarray             # true effective channel (n, M, L), aligned phases
    f_hat: np.ndarray         # reconstruction (n, M, L)
    v: list                   # per-user receive combiners (n, N_k, L_k)
    error: np.ndarray
    sigma2_e: np.ndarray
    bits_per_sample: int


class SingularVectorCodec:
    """Both ends of the singular-vector feedback link for all users."""

    def __init__(self, m, layout, config=CodecConfig(), sv_codebook=None, sv_seed=0):
        if layout.total_streams > m:
            raise ValueError("total stream count must not exceed M")
        self.m = m
        self.layout = layout
        self.config = config
        self.n_codec = 2 * m * layout.total_streams
        self.codec = DifferentialCodec(config, self.n_codec)
        if sv_codebook is None:
            # one codebook per user shape; all users share N_k in the reference setups
            sv_codebook = [singular_value_codebook(m, nk, 2, 100_000, sv_seed + k)
                           for k, nk in enumerate(layout.n_rx)]
        elif not isinstance(sv_codebook, (list, tuple)):
            sv_codebook = [sv_codebook] * len(layout.n_rx)
        self.sv_codebook = list(sv_codebook)
        self.prev_a = [np.zeros((m, lk), dtype=complex) for lk in layout.n_streams]

    def _split(self, a_cols):
        return np.concatenate([complex_to_components(haar_normalize(a, self.m)[None])[0] for a in a_cols])

    def _assemble(self, comps, sv_idx):
        a_hat, s_hat, off, soff = [], [], 0, 0
        for k, lk in enumerate(self.layout.n_streams):
            size = 2 * self.m * lk
            a = haar_denormalize(components_to_complex(comps[off:off + size][None], (self.m, lk))[0], self.m)
            a_hat.append(a)
            s_hat.append(self.sv_codebook[k].levels[sv_idx[soff:soff + lk]])
            off += size
            soff += lk
        self.prev_a = a_hat
        f_hat = np.concatenate([a * s[None, :] for a, s in zip(a_hat, s_hat)], axis=1)
        return f_hat

    def encode(self, triples):
        """Encode one sample given per-user :class:`SingularTriple` objects.

        Returns ``(indices, f_true, f_hat, combiners)``.
        """
        a_cols, sv_idx, f_true, combiners = [], [], [], []
        for k, lk in enumerate(self.layout.n_streams):
            t = triples[k]
            a, ph = align_columns(t.A[:, :lk], self.prev_a[k])
            a_cols.append(a)
            sv_idx.append(self.sv_codebook[k].index(t.s[:lk]))
            f_true.append(a * t.s[None, :lk])
            combiners.append(t.B[:, :lk] * ph[None, :])
        idx = self.codec.encode(self._split(a_cols))
        sv_idx = np.concatenate(sv_idx)
        f_hat = self._assemble(self.codec.last_reconstruction, sv_idx)
        return np.concatenate([idx, sv_idx]).astype(np.uint8), np.concatenate(f_true, axis=1), f_hat, combiners

    def decode(self, indices):
        indices = np.asarray(indices)
        sv_idx = indices[self.n_codec:].astype(np.intp)
        if np.any(sv_idx >= 4):
            raise CodecError("singular-value index out of range")
        recon = self.codec.decode(indices[:self.n_codec])
        return self._assemble(recon, sv_idx)

    def same_state(self, other):
        return self.codec.same_state(other.codec) and all(
            np.array_equal(a, b) for a, b in zip(self.prev_a, other.prev_a))


def encode_singular_stream(trajectory, layout, config=CodecConfig(), sv_codebook=None):
    """Run the receiver-side singular-vector feedback over a trajectory."""
    h = trajectory.samples
    m = h.shape[1]
    if sum(layout.n_rx) != h.shape[2]:
        raise ValueError("user layout does not match the trajectory's receive antennas")
    codec = SingularVectorCodec(m, layout, config, sv_codebook)
    per_user = [svd_small(hk) for hk in layout.user_channels(h)]
    n = h.shape[0]
    n_idx = codec.n_codec + layout.total_streams
    indices = np.empty((n, n_idx), dtype=np.uint8)
    f = np.empty((n, m, layout.total_streams), dtype=complex)
    f_hat = np.empty_like(f)
    combiners = [np.empty((n, nk, lk), dtype=complex) for nk, lk in zip(layout.n_rx, layout.n_streams)]
    for i in range(n):
        triples = [SingularTriple(t.A[i], t.s[i], t.B[i]) for t in per_user]
        indices[i], f[i], f_hat[i], comb = codec.encode(triples)
        for k in range(len(comb)):
            combiners[k][i] = comb[k]
    err = np.mean(np.abs(f - f_hat) ** 2, axis=(1, 2))
    return SingularFeedback(indices, f, f_hat, combiners, err, trailing_mean(err, config.error_window),
                            svd_bits_per_sample(m, layout))


def decode_singular_stream(indices, m, layout, config=CodecConfig(), sv_codebook=None):
    """Base-station side: rebuild the effective channel from indices alone."""
    indices = np.asarray(indices)
    codec = SingularVectorCodec(m, layout, config, sv_codebook)
    out = np.empty((indices.shape[0], m, layout.total_streams), dtype=complex)
    for i in range(indices.shape[0]):
        out[i] = codec.decode(indices[i])
    return out


# --- bitstream container ("ADQS") ------------------------------------------

def write_singular_bitstream(path, indices, m, layout, sample_rate):
    """Write indices; the header is followed by ``K`` and (N_k, L_k) byte pairs.

    A-entry indices use 2 bits each; singular-value indices also use 2 bits.
    """
    k = len(layout.n_rx)
    extra = struct.pack(">B", k) + b"".join(struct.pack(">BB", nk, lk)
                                             for nk, lk in zip(layout.n_rx, layout.n_streams))
    write_bitstream(path, indices, 2, (m, sum(layout.n_rx)), sample_rate, magic=b"ADQS", extra=extra)


def read_singular_bitstream(path):
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size + 1)
    if len(head) < HEADER.size + 1:
        raise CodecError("file too short for header")
    k = head[HEADER.size]
    header, extra, payload = read_bitstream(path, b"ADQS", 1 + 2 * k)
    pairs = struct.unpack(">" + "B" * (2 * k), extra[1:])
    layout = UserLayout(tuple(pairs[0::2]), tuple(pairs[1::2]))
    per_sample = 2 * header["M"] * layout.total_streams + layout.total_streams
    idx = unpack_indices(payload, header["bits"], header["n_samples"] * per_sample)
    return header, layout, idx.reshape(header["n_samples"], per_sample)
