"""Time-correlated flat Rayleigh MIMO channels (sum-of-sinusoids model).

Each transmit/receive antenna pair is an independent process

    h(t) = sqrt(1/Np) * sum_p exp(j * (2*pi*fd*t*cos(alpha_p) + phi_p)),
    alpha_p = (2*pi*p + theta - pi) / (4*Np),

with fresh uniform ``theta`` and ``phi_p`` per pair. The real (and imaginary)
part has normalized autocorrelation J0(2*pi*fd*tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8
N_SINUSOIDS = 16

# default system parameters
CARRIER_FREQ = 2.5e9
SAMPLE_RATE = 200.0
FRAME_DURATION = 5e-3


def doppler_frequency(speed, carrier_freq=CARRIER_FREQ):
    """Maximum Doppler shift in Hz for ``speed`` in km/h."""
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    return (speed / 3.6) * carrier_freq / SPEED_OF_LIGHT


# Hankel asymptotic coefficients for P0 and Q0, truncated where the terms
# stop shrinking at x = 8.
_P0 = []
_Q0 = []


def _asymptotic_coeffs(n_terms=12):
    # a_k(0) = prod_{m=1..k} (-(2m-1)^2) / (k! 8^k)
    a = [1.0]
    for k in range(1, 2 * n_terms + 2):
        a.append(a[-1] * -((2 * k - 1) ** 2) / (k * 8.0))
    for k in range(n_terms):
        _P0.append((-1) ** k * a[2 * k])
        _Q0.append((-1) ** k * a[2 * k + 1])


_asymptotic_coeffs()


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind (scalar or array).

    Power series for |x| < 8, Hankel asymptotic expansion beyond.
    """
    if np.ndim(x):
        return np.vectorize(_j0_scalar, otypes=[float])(x)
    return _j0_scalar(x)


def _j0_scalar(x):
    x = abs(float(x))
    if x < 8.0:
        term = 1.0
        total = 1.0
        q = -(x * x) / 4.0
        k = 0
        while True:
            k += 1
            term *= q / (k * k)
            total += term
            if abs(term) < 1e-17 * max(1.0, abs(total)) and k > 2:
                return total
    z = 1.0 / x
    p = 0.0
    qq = 0.0
    last = math.inf
    for k in range(len(_P0)):
        tp = _P0[k] * z ** (2 * k)
        tq = _Q0[k] * z ** (2 * k + 1)
        size = abs(tp) + abs(tq)
        if size > last:
            break
        p += tp
        qq += tq
        last = size
    chi = x - math.pi / 4.0
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - qq * math.sin(chi))


def theoretical_autocorrelation(doppler, lag):
    """Normalized autocorrelation J0(2*pi*doppler*lag) of one quadrature component."""
    if lag < 0:
        raise ValueError("lag must be non-negative")
    return bessel_j0(2.0 * math.pi * doppler * lag)


@dataclass(frozen=True)
class MobilityProfile:
    speed: float
    carrier_freq: float = CARRIER_FREQ
    sample_rate: float = SAMPLE_RATE
    frame_duration: float = FRAME_DURATION

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.carrier_freq <= 0 or self.sample_rate <= 0:
            raise ValueError("carrier_freq and sample_rate must be positive")

    @property
    def doppler(self):
        return doppler_frequency(self.speed, self.carrier_freq)

    @property
    def normalized_doppler(self):
        return self.doppler / self.sample_rate

    def correlation(self, lag_samples):
        return theoretical_autocorrelation(self.doppler, lag_samples / self.sample_rate)


@dataclass(frozen=True)
class ChannelTrajectory:
    """Sequence of complex M x N channel matrices, shape ``(n_samples, M, N)``."""

    samples: np.ndarray = field(repr=False)
    profile: MobilityProfile
    seed: int

    def __post_init__(self):
        self.samples.setflags(write=False)

    @property
    def dims(self):
        return self.samples.shape[1:]

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[0]

    def __getitem__(self, n):
        return self.samples[n]

    def to_csv(self, path):
        """Dump as ``sample_index,tx,rx,re,im`` rows."""
        n, m, r = self.samples.shape
        idx = np.indices((n, m, r)).reshape(3, -1).T
        flat = self.samples.reshape(-1)
        with open(path, "w") as fh:
            fh.write("sample_index,tx,rx,re,im\n")
            for (i, t, k), v in zip(idx, flat):
                fh.write(f"{i},{t},{k},{float(v.real)!r},{float(v.imag)!r}\n")


def generate_trajectory(seed, dims, profile, n_samples):
    """Generate a :class:`ChannelTrajectory` deterministically from ``seed``."""
    m, n = dims
    if m < 1 or n < 1:
        raise ValueError(f"channel dimensions must be positive, got {dims}")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    pairs = m * n
    theta = rng.uniform(-np.pi, np.pi, size=(pairs, 1))
    phi = rng.uniform(-np.pi, np.pi, size=(pairs, N_SINUSOIDS))
    p = np.arange(1, N_SINUSOIDS + 1)
    alpha = (2 * np.pi * p + theta - np.pi) / (4 * N_SINUSOIDS)
    omega = 2 * np.pi * profile.doppler * np.cos(alpha)  # (pairs, Np)

    t = np.arange(n_samples) / profile.sample_rate
    out = np.empty((n_samples, pairs), dtype=complex)
    scale = math.sqrt(1.0 / N_SINUSOIDS)
    # chunk over time to bound memory
    chunk = max(1, 2_000_000 // (pairs * N_SINUSOIDS))
    for start in range(0, n_samples, chunk):
        tt = t[start:start + chunk, None, None]
        arg = tt * omega[None] + phi[None]
        out[start:start + chunk] = scale * np.exp(1j * arg).sum(axis=2)
    return ChannelTrajectory(out.reshape(n_samples, m, n), profile, seed)
