import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adfeedback.channel import MobilityProfile, generate_trajectory
from adfeedback.codec import (
    HEADER, CodecConfig, CodecError, DifferentialCodec, complex_to_components, components_to_complex,
    decode_matrix_stream, decode_sample, encode_matrix_stream, encode_sample, pack_indices,
    read_channel_bitstream, trailing_mean, unpack_indices, write_bitstream,
)
from adfeedback.quantizer import gaussian_codebook

LV = gaussian_codebook(2).levels


def test_fresh_encode_examples():
    c = DifferentialCodec(CodecConfig(), 1)
    assert encode_sample(c, 0.3) == 2
    assert c.last_reconstruction[0] == LV[2]
    c = DifferentialCodec(CodecConfig(), 1)
    assert encode_sample(c, 0.0) == 1
    assert c.last_reconstruction[0] == LV[1]


def test_fresh_decode_examples():
    assert decode_sample(DifferentialCodec(CodecConfig(), 1), 2) == LV[2]
    assert decode_sample(DifferentialCodec(CodecConfig(), 1), 0) == LV[0]
    assert LV[0] == pytest.approx(-1.5104, abs=1e-4)


def test_input_validation():
    c = DifferentialCodec(CodecConfig(), 2)
    with pytest.raises(CodecError):
        c.encode([0.0, np.nan])
    with pytest.raises(CodecError):
        c.decode([0, 4])
    with pytest.raises(CodecError):
        c.decode([-1, 0])


@pytest.mark.parametrize("mode", ["rls", "lls"])
def test_random_walk_symmetry(mode):
    x = np.cumsum(np.random.default_rng(0).normal(scale=0.1, size=(10_000, 1)), axis=0)
    cfg = CodecConfig().with_mode(mode)
    enc, dec = DifferentialCodec(cfg, 1), DifferentialCodec(cfg, 1)
    for v in x:
        i = enc.encode(v)
        assert np.array_equal(dec.decode(i), enc.last_reconstruction)
    assert enc.same_state(dec)


@pytest.mark.parametrize("mode", ["rls", "lls"])
def test_reconstruction_identity(mode):
    x = np.random.default_rng(1).standard_normal((500, 3))
    c = DifferentialCodec(CodecConfig().with_mode(mode), 3)
    for v in x:
        g = c.gain.g.copy()
        d = v - c.predictor.predict()
        idx = c.encode(v)
        np.testing.assert_allclose(c.last_reconstruction - v, g * (LV[idx] - d / g), atol=1e-12)


def test_adaptation_ignores_unquantized_input():
    # two inputs that quantize to the same indices leave identical state
    rng = np.random.default_rng(2)
    a, b = DifferentialCodec(CodecConfig(), 1), DifferentialCodec(CodecConfig(), 1)
    for _ in range(300):
        x = rng.standard_normal(1)
        idx = a.encode(x)
        pred, g = b.predictor.predict(), b.gain.g
        cell = np.concatenate([[-10.0], gaussian_codebook(2).thresholds, [10.0]])
        # another input in the same quantizer cell, never on a boundary
        lo, hi = cell[idx[0]], cell[idx[0] + 1]
        y = pred + g * (lo + hi) / 2 if idx[0] not in (0, 3) else pred + g * LV[idx[0]]
        assert np.array_equal(b.encode(y), idx)
        assert a.same_state(b)


@pytest.mark.parametrize("c", [0.7, -2.0, 1e-3])
def test_constant_stream_converges(c):
    codec = DifferentialCodec(CodecConfig(), 1)
    for _ in range(2000):
        codec.encode([c])
    assert abs(codec.last_reconstruction[0] - c) < 0.05 * abs(c)


def test_component_order_and_scale():
    h = np.array([[1 + 2j, 3 + 4j], [5 + 6j, 7 + 8j]])[None]
    comps = complex_to_components(h)[0] / np.sqrt(2)
    np.testing.assert_allclose(comps, [1, 2, 3, 4, 5, 6, 7, 8], rtol=1e-15)
    np.testing.assert_allclose(components_to_complex(complex_to_components(h), (2, 2)), h)


def test_trailing_mean():
    x = np.arange(1.0, 7.0)
    np.testing.assert_allclose(trailing_mean(x, 3), [1, 1.5, 2, 3, 4, 5])


def test_zero_doppler_converges():
    t = generate_trajectory(3, (4, 8), MobilityProfile(0), 400)
    fb = encode_matrix_stream(t)
    assert fb.sigma2_e[-1] < 1e-2
    assert fb.error[200:].max() < 1e-3


def test_low_speed_beats_fixed_two_bit():
    t = generate_trajectory(4, (2, 4), MobilityProfile(10), 3000)
    fb = encode_matrix_stream(t)
    assert fb.error[1000:].mean() < 0.1175


def test_bit_rate():
    t = generate_trajectory(4, (4, 8), MobilityProfile(10), 3)
    fb = encode_matrix_stream(t)
    assert fb.bits_per_sample == 128
    assert fb.bits_per_sample * 200 == 25_600
    assert fb.indices.dtype == np.uint8 and fb.indices.max() < 4


@pytest.mark.parametrize("mode", ["rls", "lls"])
def test_matrix_stream_decode(mode):
    t = generate_trajectory(5, (2, 2), MobilityProfile(20), 300)
    cfg = CodecConfig().with_mode(mode)
    fb = encode_matrix_stream(t, cfg)
    assert np.array_equal(decode_matrix_stream(fb.indices, (2, 2), cfg), fb.reconstruction)


def test_pack_msb_first():
    assert pack_indices([3, 0, 1, 2], 2) == bytes([0b11000110])
    assert pack_indices([1, 2, 3], 2) == bytes([0b01101100])
    with pytest.raises(CodecError):
        pack_indices([4], 2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=200), st.sampled_from([2, 3]))
def test_pack_round_trip(idx, bits):
    idx = [i % (1 << bits) for i in idx]
    np.testing.assert_array_equal(unpack_indices(pack_indices(idx, bits), bits, len(idx)), idx)


def test_bitstream_file(tmp_path):
    t = generate_trajectory(6, (2, 3), MobilityProfile(15), 50)
    fb = encode_matrix_stream(t)
    path = tmp_path / "f.adqf"
    write_bitstream(path, fb.indices, 2, (2, 3), 200)
    blob = path.read_bytes()
    assert HEADER.size == 16 and blob[:4] == b"ADQF"
    assert len(blob) == 16 + (50 * 12 * 2 + 7) // 8
    header, idx = read_channel_bitstream(path)
    assert header == dict(bits=2, M=2, N=3, n_samples=50, sample_rate=200)
    np.testing.assert_array_equal(idx, fb.indices)
    assert np.array_equal(decode_matrix_stream(idx, (2, 3)), fb.reconstruction)


def test_bitstream_errors(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(CodecError):
        read_channel_bitstream(bad)
    short = tmp_path / "short"
    short.write_bytes(b"ADQF")
    with pytest.raises(CodecError):
        read_channel_bitstream(short)
    trunc = tmp_path / "trunc"
    trunc.write_bytes(HEADER.pack(b"ADQF", 1, 2, 4, 8, 10, 200))
    with pytest.raises(CodecError):
        read_channel_bitstream(trunc)
    ver = tmp_path / "ver"
    ver.write_bytes(HEADER.pack(b"ADQF", 9, 2, 1, 1, 0, 200))
    with pytest.raises(CodecError):
        read_channel_bitstream(ver)
