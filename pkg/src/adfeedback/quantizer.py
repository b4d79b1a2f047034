"""Scalar codebooks: fixed Gaussian Lloyd-Max tables, Lloyd-Max and k-means design."""

from __future__ import annotations

import json

import numpy as np

# Lloyd-Max levels for the unit-variance Gaussian (positive half).
_GAUSSIAN_LEVELS = {
    2: (0.452780034636, 1.510417608499),
    3: (0.245094178944, 0.756005281206, 1.343909278505, 2.151945704537),
}


class Codebook:
    """Sorted quantization levels with midpoint decision thresholds."""

    def __init__(self, levels):
        levels = np.array(levels, dtype=float)
        if levels.ndim != 1 or levels.size < 2:
            raise ValueError("a codebook needs at least two levels")
        size = levels.size
        if size & (size - 1):
            raise ValueError(f"codebook size must be a power of two, got {size}")
        if not np.all(np.isfinite(levels)):
            raise ValueError("codebook levels must be finite")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("codebook levels must be strictly increasing")
        self.levels = levels
        self.thresholds = (levels[:-1] + levels[1:]) / 2
        self.levels.setflags(write=False)
        self.thresholds.setflags(write=False)

    @property
    def bits(self):
        return int(self.levels.size).bit_length() - 1

    def __len__(self):
        return self.levels.size

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.levels, other.levels)

    def __repr__(self):
        return f"Codebook(bits={self.bits}, levels={np.round(self.levels, 4).tolist()})"

    def index(self, x):
        """Index of the nearest level; a value on a threshold goes to the lower index."""
        return np.searchsorted(self.thresholds, x, side="left")

    def quantize(self, x):
        """Return ``(index, level)`` for scalar or array input."""
        idx = self.index(x)
        return idx, self.levels[idx]

    def mse(self, samples):
        samples = np.asarray(samples, dtype=float)
        return float(np.mean((samples - self.levels[self.index(samples)]) ** 2))

    def scaled(self, factor):
        return Codebook(self.levels * factor)

    def to_json(self):
        return json.dumps({"bits": self.bits, "levels": self.levels.tolist()})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        cb = cls(doc["levels"])
        if cb.bits != doc["bits"]:
            raise ValueError(f"bits={doc['bits']} does not match {len(cb)} levels")
        return cb


def quantize(cb, x):
    return cb.quantize(x)


def gaussian_codebook(bits):
    """Lloyd-Max codebook for the standard normal density (2 or 3 bits)."""
    if bits not in _GAUSSIAN_LEVELS:
        raise ValueError(f"no fixed Gaussian codebook for {bits} bits")
    half = np.array(_GAUSSIAN_LEVELS[bits])
    return Codebook(np.concatenate([-half[::-1], half]))


def _check_design_input(samples, n_levels):
    samples = np.asarray(samples, dtype=float).ravel()
    if n_levels < 2 or n_levels & (n_levels - 1):
        raise ValueError(f"number of levels must be a power of two >= 2, got {n_levels}")
    if samples.size < n_levels:
        raise ValueError(f"need at least {n_levels} samples, got {samples.size}")
    if np.unique(samples).size < n_levels:
        raise ValueError("degenerate sample set: fewer distinct values than levels")
    return samples


def lloyd_max_design(samples, bits, tol=1e-6, max_iter=500, history=None):
    """Lloyd-Max design on an empirical distribution.

    Alternates midpoint thresholds and conditional-mean levels until no
    level moves by ``tol`` or ``max_iter`` is reached. If ``history`` is a
    list, the empirical MSE of every iterate is appended to it.
    """
    n_levels = 2 ** bits
    samples = np.sort(_check_design_input(samples, n_levels))
    # start from equiprobable cells
    edges = np.linspace(0, samples.size, n_levels + 1).astype(int)
    levels = np.array([samples[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
    csum = np.concatenate([[0.0], np.cumsum(samples)])
    for _ in range(max_iter):
        thresholds = (levels[:-1] + levels[1:]) / 2
        cut = np.concatenate([[0], np.searchsorted(samples, thresholds, side="right"), [samples.size]])
        counts = np.diff(cut)
        sums = csum[cut[1:]] - csum[cut[:-1]]
        new = np.where(counts > 0, sums / np.maximum(counts, 1), levels)
        if history is not None:
            history.append(float(np.mean((samples - np.repeat(levels, counts)) ** 2)))
        moved = np.max(np.abs(new - levels))
        levels = new
        if moved < tol:
            break
    if history is not None:
        cb_tmp = np.searchsorted((levels[:-1] + levels[1:]) / 2, samples, side="left")
        history.append(float(np.mean((samples - levels[cb_tmp]) ** 2)))
    return Codebook(levels)


def kmeans_codebook(samples, k, seed=0, tol=1e-9, max_iter=300):
    """Scalar k-means with farthest-point (k-means++ style) seeding."""
    samples = _check_design_input(samples, k)
    rng = np.random.default_rng(seed)
    centers = [samples[rng.integers(samples.size)]]
    dist = (samples - centers[0]) ** 2
    for _ in range(1, k):
        # k-means++: sample proportional to squared distance
        nxt = samples[rng.choice(samples.size, p=dist / dist.sum())]
        centers.append(nxt)
        dist = np.minimum(dist, (samples - nxt) ** 2)
    centers = np.sort(np.array(centers))
    for _ in range(max_iter):
        labels = np.searchsorted((centers[:-1] + centers[1:]) / 2, samples, side="left")
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=samples, minlength=k)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled]
        for j in np.flatnonzero(~filled):
            # re-seed an empty cluster at the worst-represented sample
            err = np.abs(samples - new[labels])
            new[j] = samples[np.argmax(err)]
            labels[np.argmax(err)] = j
        new = np.sort(new)
        moved = np.max(np.abs(new - centers))
        centers = new
        if moved < tol:
            break
    return Codebook(centers)


def singular_value_codebook(m, n_k, bits=2, n_mc=100_000, seed=0):
    """Lloyd-Max codebook for the singular values of i.i.d. CN(0,1) M x N_k matrices."""
    if not m >= n_k >= 1:
        raise ValueError(f"need M >= N_k >= 1, got M={m}, N_k={n_k}")
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((n_mc, m, n_k)) + 1j * rng.standard_normal((n_mc, m, n_k))) / np.sqrt(2)
    sv = np.linalg.svd(h, compute_uv=False)
    return lloyd_max_design(sv.ravel(), bits)
