"""Backward-adaptive differential codec and its bitstream container.

Encoder (receiver side) and decoder (base-station side) share one update
path: both advance predictor and gain state from the transmitted index only,
so feeding the decoder the encoder's indices reproduces its state exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .gain import GainConfig, GainEstimator
from .predictor import Predictor, PredictorConfig
from .quantizer import gaussian_codebook


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    gain: GainConfig = field(default_factory=GainConfig)
    bits: int = 2
    error_window: int = 500

    def with_mode(self, mode):
        return replace(self, predictor=replace(self.predictor, mode=mode))


class DifferentialCodec:
    """Bank of independent scalar codecs advanced together.

    ``encode`` takes one real sample per stream and returns indices;
    ``decode`` takes indices and returns reconstructions.
    """

    def __init__(self, config=CodecConfig(), n_streams=1):
        self.config = config
        self.n_streams = n_streams
        self.codebook = gaussian_codebook(config.bits)
        self.predictor = Predictor(config.predictor, n_streams)
        self.gain = GainEstimator(config.gain, n_streams)
        self.last_reconstruction = np.zeros(n_streams)

    def _advance(self, prediction, index):
        dq = self.gain.g * self.codebook.levels[index]
        recon = prediction + dq
        self.predictor.update(recon, dq)
        self.gain.update(dq)
        self.last_reconstruction = recon
        return recon

    def encode(self, samples):
        x = np.asarray(samples, dtype=float).reshape(self.n_streams)
        if not np.all(np.isfinite(x)):
            raise CodecError("non-finite input sample")
        pred = self.predictor.predict()
        index = self.codebook.index((x - pred) / self.gain.g)
        self._advance(pred, index)
        return index

    def decode(self, index):
        index = np.asarray(index).reshape(self.n_streams)
        if np.any(index < 0) or np.any(index >= len(self.codebook)):
            raise CodecError(f"index out of range for a {self.config.bits}-bit codebook")
        return self._advance(self.predictor.predict(), index.astype(np.intp))

    def state_arrays(self):
        return self.predictor.state_arrays() + (self.gain.v, self.gain.g, self.last_reconstruction)

    def same_state(self, other):
        """Bit-exact comparison of the full adaptive state."""
        return all(np.array_equal(a, b) for a, b in zip(self.state_arrays(), other.state_arrays()))


def encode_sample(codec, h):
    """Scalar convenience wrapper: returns the index for one sample."""
    return int(codec.encode(h)[0])


def decode_sample(codec, index):
    return float(codec.decode(index)[0])


# A unit-power complex entry has real and imaginary parts of variance 1/2;
# the codec sees them rescaled to unit variance.
COMPONENT_SCALE = np.sqrt(2.0)


def complex_to_components(h):
    """Flatten complex (..., M, N) to unit-variance real components.

    Order is tx-major, rx-minor, real before imaginary.
    """
    h = np.asarray(h)
    lead = h.shape[:-2]
    return COMPONENT_SCALE * np.stack([h.real, h.imag], axis=-1).reshape(lead + (-1,))


def components_to_complex(x, shape):
    x = np.asarray(x).reshape(x.shape[:-1] + tuple(shape) + (2,)) / COMPONENT_SCALE
    return x[..., 0] + 1j * x[..., 1]


def trailing_mean(x, window):
    """Mean over the trailing ``window`` entries (shorter at the start)."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    n = np.arange(1, len(x) + 1)
    lo = np.maximum(0, n - window)
    return (c[n] - c[lo]) / (n - lo)


@dataclass
class ChannelFeedback:
    indices: np.ndarray          # (n_samples, 2*M*N) uint8
    reconstruction: np.ndarray   # (n_samples, M, N) complex
    error: np.ndarray            # (n_samples,) mean |h - h_hat|^2 over entries
    sigma2_e: np.ndarray         # trailing-window running estimate
    bits: int
    gain: np.ndarray = None      # (n_samples,) mean step size used per sample

    @property
    def bits_per_sample(self):
        return self.bits * self.indices.shape[1]


def encode_matrix_stream(trajectory, config=CodecConfig()):
    """Feed back every entry of a channel trajectory through its own codec pair."""
    h = trajectory.samples
    comps = complex_to_components(h)
    n_samples, n_comp = comps.shape
    codec = DifferentialCodec(config, n_comp)
    indices = np.empty((n_samples, n_comp), dtype=np.uint8)
    recon = np.empty((n_samples, n_comp))
    gain = np.empty(n_samples)
    for n in range(n_samples):
        gain[n] = codec.gain.g.mean()
        indices[n] = codec.encode(comps[n])
        recon[n] = codec.last_reconstruction
    h_hat = components_to_complex(recon, h.shape[1:])
    err = np.mean(np.abs(h - h_hat) ** 2, axis=(1, 2))
    return ChannelFeedback(indices, h_hat, err, trailing_mean(err, config.error_window), config.bits, gain)


def decode_matrix_stream(indices, dims, config=CodecConfig()):
    indices = np.asarray(indices)
    codec = DifferentialCodec(config, indices.shape[1])
    recon = np.empty(indices.shape)
    for n in range(indices.shape[0]):
        recon[n] = codec.decode(indices[n])
    return components_to_complex(recon, dims)


# --- bitstream container -------------------------------------------------

HEADER = struct.Struct(">4sBBBBII")
VERSION = 1


def pack_indices(indices, bits):
    """Pack a flat index sequence MSB-first, ``bits`` bits each."""
    indices = np.asarray(indices, dtype=np.uint8).ravel()
    if np.any(indices >> bits):
        raise CodecError("index does not fit in the declared bit width")
    bitarr = np.unpackbits(indices[:, None], axis=1)[:, 8 - bits:]
    return np.packbits(bitarr.ravel()).tobytes()


def unpack_indices(payload, bits, count):
    bitarr = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if bitarr.size < count * bits:
        raise CodecError("truncated payload")
    groups = bitarr[: count * bits].reshape(count, bits)
    weights = 1 << np.arange(bits - 1, -1, -1)
    return (groups * weights).sum(axis=1).astype(np.uint8)


def write_bitstream(path, indices, bits, dims, sample_rate, magic=b"ADQF", extra=b""):
    indices = np.asarray(indices)
    m, n = dims
    head = HEADER.pack(magic, VERSION, bits, m, n, indices.shape[0], int(round(sample_rate)))
    with open(path, "wb") as fh:
        fh.write(head + extra + pack_indices(indices, bits))


def read_bitstream(path, magic=b"ADQF", extra_size=0):
    """Return ``(header dict, extra bytes, indices array)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER.size:
        raise CodecError("file too short for header")
    got, version, bits, m, n, n_samples, fs = HEADER.unpack_from(blob)
    if got != magic:
        raise CodecError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise CodecError(f"unsupported version {version}")
    extra = blob[HEADER.size:HEADER.size + extra_size]
    header = dict(bits=bits, M=m, N=n, n_samples=n_samples, sample_rate=fs)
    return header, extra, blob[HEADER.size + extra_size:]


def read_channel_bitstream(path):
    header, _, payload = read_bitstream(path, b"ADQF")
    per_sample = 2 * header["M"] * header["N"]
    idx = unpack_indices(payload, header["bits"], header["n_samples"] * per_sample)
    return header, idx.reshape(header["n_samples"], per_sample)
