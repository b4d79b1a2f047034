import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from adfeedback.quantizer import (
    Codebook, gaussian_codebook, kmeans_codebook, lloyd_max_design, quantize, singular_value_codebook,
)


def _gaussian_mse(levels):
    # exact MSE of a nearest-level quantizer on N(0, 1) by quadrature
    levels = np.asarray(levels)
    edges = np.concatenate([[-np.inf], (levels[:-1] + levels[1:]) / 2, [np.inf]])
    return sum(integrate.quad(lambda x, l=l: (x - l) ** 2 * stats.norm.pdf(x), a, b)[0]
               for l, a, b in zip(levels, edges[:-1], edges[1:]))


def test_gaussian_levels():
    np.testing.assert_allclose(gaussian_codebook(2).levels, [-1.5104, -0.4528, 0.4528, 1.5104], atol=1e-4)
    cb3 = gaussian_codebook(3)
    assert len(cb3) == 8 and cb3.bits == 3
    np.testing.assert_allclose(cb3.levels, -cb3.levels[::-1])


def test_gaussian_levels_are_lloyd_fixed_points():
    # centroid condition: each level is the conditional mean of its cell
    for bits in (2, 3):
        lv = gaussian_codebook(bits).levels
        edges = np.concatenate([[-np.inf], (lv[:-1] + lv[1:]) / 2, [np.inf]])
        a, b = edges[:-1], edges[1:]
        centroid = (stats.norm.pdf(a) - stats.norm.pdf(b)) / (stats.norm.cdf(b) - stats.norm.cdf(a))
        np.testing.assert_allclose(centroid, lv, atol=1e-9)


def test_gaussian_mse_closed_form():
    assert _gaussian_mse(gaussian_codebook(2).levels) == pytest.approx(0.1175, rel=1e-3)
    assert _gaussian_mse(gaussian_codebook(3).levels) == pytest.approx(0.0345, rel=2e-3)


def test_gaussian_mse_monte_carlo():
    x = np.random.default_rng(0).standard_normal(1_000_000)
    assert gaussian_codebook(2).mse(x) == pytest.approx(0.1175, rel=0.01)
    assert gaussian_codebook(3).mse(x) == pytest.approx(0.0345, rel=0.02)


def test_unsupported_bits():
    with pytest.raises(ValueError):
        gaussian_codebook(4)


def test_quantize_examples():
    cb = gaussian_codebook(2)
    lv = cb.levels
    assert quantize(cb, lv[2])[1] == lv[2]
    assert quantize(cb, -50.0) == (0, lv[0])
    assert quantize(cb, 0.0) == (1, lv[1])
    assert quantize(cb, 1e-300)[0] == 2


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook([0, 1, 2])
    with pytest.raises(ValueError):
        Codebook([1, 0])
    with pytest.raises(ValueError):
        Codebook([0, 0])
    with pytest.raises(ValueError):
        Codebook([0, np.inf])
    cb = Codebook([-1, 0, 1, 3])
    np.testing.assert_array_equal(cb.thresholds, [-0.5, 0.5, 2])


def test_json_round_trip():
    cb = gaussian_codebook(3)
    doc = json.loads(cb.to_json())
    assert doc["bits"] == 3 and len(doc["levels"]) == 8
    assert Codebook.from_json(cb.to_json()) == cb
    with pytest.raises(ValueError):
        Codebook.from_json(json.dumps({"bits": 3, "levels": [0, 1]}))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_nearest_and_idempotent(x):
    cb = gaussian_codebook(2)
    i, level = quantize(cb, x)
    assert np.all(np.abs(x - level) <= np.abs(x - cb.levels) + 1e-12)
    assert quantize(cb, level)[1] == level


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=8, unique=True))
def test_nearest_on_random_codebooks(raw):
    levels = np.sort(raw)[: 2 ** int(np.log2(len(raw)))]
    if np.any(np.diff(levels) <= 0):
        return
    cb = Codebook(levels)
    x = np.linspace(-120, 120, 501)
    _, q = cb.quantize(x)
    best = np.min(np.abs(x[:, None] - levels[None]), axis=1)
    np.testing.assert_allclose(np.abs(x - q), best, rtol=1e-12, atol=1e-12)


def test_lloyd_max_recovers_gaussian():
    x = np.random.default_rng(1).standard_normal(1_000_000)
    cb2 = lloyd_max_design(x, 2)
    np.testing.assert_allclose(cb2.levels, gaussian_codebook(2).levels, atol=0.02)
    cb3 = lloyd_max_design(x, 3)
    assert cb3.mse(x) == pytest.approx(0.0345, rel=0.02)


def test_lloyd_max_monotone_and_symmetric():
    x = np.random.default_rng(2).standard_normal(200_000)
    x = np.concatenate([x, -x])
    hist = []
    cb = lloyd_max_design(x, 2, history=hist)
    assert np.all(np.diff(hist) <= 1e-12)
    np.testing.assert_allclose(cb.levels, -cb.levels[::-1], atol=2e-6)


def test_lloyd_max_degenerate():
    with pytest.raises(ValueError):
        lloyd_max_design(np.full(1000, 5.0), 1)
    with pytest.raises(ValueError):
        lloyd_max_design([1.0], 2)


def test_kmeans_point_masses():
    np.testing.assert_array_equal(kmeans_codebook([-1, -1, 1, 1], 2).levels, [-1, 1])


def test_kmeans_matches_lloyd():
    x = np.random.default_rng(3).standard_normal(1_000_000)
    np.testing.assert_allclose(kmeans_codebook(x, 4).levels, lloyd_max_design(x, 2).levels, atol=0.03)


def test_kmeans_rejects_bad_k():
    with pytest.raises(ValueError):
        kmeans_codebook(np.arange(1000.0), 3)


def test_kmeans_deterministic():
    x = np.random.default_rng(4).standard_normal(5000)
    assert kmeans_codebook(x, 4, seed=9) == kmeans_codebook(x, 4, seed=9)


def test_singular_value_codebook():
    cb = singular_value_codebook(4, 2, 2, 100_000, seed=0)
    assert len(cb) == 4 and np.all(cb.levels > 0) and np.all(np.diff(cb.levels) > 0)
    assert cb == singular_value_codebook(4, 2, 2, 100_000, seed=0)


def test_singular_value_codebook_rayleigh():
    # 1x1 case: |h| is Rayleigh with E|h|^2 = 1; Lloyd-Max on the closed-form law
    cb = singular_value_codebook(1, 1, 2, 100_000, seed=0)
    ray = stats.rayleigh(scale=np.sqrt(0.5))
    edges = np.concatenate([[0], cb.thresholds, [np.inf]])
    centroid = [integrate.quad(lambda r: r * ray.pdf(r), a, b)[0] / (ray.cdf(b) - ray.cdf(a))
                for a, b in zip(edges[:-1], edges[1:])]
    np.testing.assert_allclose(cb.levels, centroid, atol=0.01)
    assert 0 < cb.levels[0] < ray.mean() < cb.levels[-1]


def test_singular_value_codebook_bad_shape():
    with pytest.raises(ValueError):
        singular_value_codebook(2, 3)
