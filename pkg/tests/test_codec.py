import math
import struct

import numpy as np
import pytest

from flcop import codec


def test_sparsify_keeps_top_magnitude():
    assert list(codec.sparsify(np.array([5.0, -9.0, 1.0, 2.0]), 50)) == [0, 1]


def test_sparsify_zero_drop_keeps_everything():
    assert list(codec.sparsify(np.array([0.0, -1.0, 2.0]), 0)) == [0, 1, 2]


def test_sparsify_tie_breaks_to_lower_index():
    assert list(codec.sparsify(np.array([3.0, 3.0, 3.0]), 34)) == [0, 1]


def test_sparsify_rejects_empty_and_bad_percent():
    with pytest.raises(ValueError):
        codec.sparsify(np.array([]), 10)
    with pytest.raises(ValueError):
        codec.sparsify(np.array([1.0]), 60)


def test_kept_count_is_ceiling():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 5000))
        mu = int(rng.integers(0, 51))
        assert codec.kept_count(n, mu) == math.ceil(n * (100 - mu) / 100)


def test_quantize_four_levels():
    p = codec.quantize(np.array([0.0, 1.0, 2.0, 3.0]), np.arange(4), 2)
    assert list(p.codes) == [0, 1, 2, 3]
    assert p.w_min == 0.0 and p.w_max == 3.0


def test_quantize_single_bit_maps_endpoints():
    p = codec.quantize(np.array([-0.5, 0.7]), np.arange(2), 1)
    assert list(p.codes) == [0, 1]


def test_quantize_constant_layer():
    p = codec.quantize(np.array([5.0, 5.0, 5.0]), np.arange(3), 4)
    assert p.w_min == p.w_max == 5.0
    assert not p.codes.any()
    assert np.array_equal(codec.dequantize(p, 3), [5.0, 5.0, 5.0])


def test_quantize_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        codec.quantize(np.array([1.0, np.nan]), np.arange(2), 4)


def test_dequantize_exact_on_grid_values():
    p = codec.quantize(np.array([0.0, 1.0, 2.0, 3.0]), np.arange(4), 2)
    assert np.array_equal(codec.dequantize(p, 4), [0.0, 1.0, 2.0, 3.0])


def test_dequantize_fill_scalar_and_array():
    layer = np.array([10.0, -20.0, 0.5, 0.25], np.float32)
    kept = codec.sparsify(layer, 50)
    p = codec.quantize(layer, kept, 8)
    scalar = codec.dequantize(p, 4, fill=-1.0)
    assert scalar[2] == -1.0 and scalar[3] == -1.0
    stash = np.array([7.0, 7.0, 7.0, 7.0])
    filled = codec.dequantize(p, 4, fill=stash)
    assert filled[2] == 7.0 and filled[3] == 7.0
    assert (stash == 7.0).all()


def test_dequantize_rejects_out_of_range_index():
    p = codec.LayerPayload(np.array([5]), np.array([0], np.uint32), 0.0, 1.0, 1)
    with pytest.raises(codec.PayloadCorruptionError):
        codec.dequantize(p, 4)


def test_round_trip_error_bound_random_layers():
    rng = np.random.default_rng(1)
    for _ in range(400):
        n = int(rng.integers(1, 512))
        mu = int(rng.integers(0, 51))
        bits = int(rng.integers(1, 33))
        layer = (rng.standard_normal(n) * rng.uniform(0.01, 100)).astype(np.float32)
        kept = codec.sparsify(layer, mu)
        assert kept.size == codec.kept_count(n, mu)
        p = codec.quantize(layer, kept, bits)
        assert int(p.codes.max(initial=0)) < (1 << bits)
        rec = codec.dequantize(p, n)
        bound = (p.w_max - p.w_min) / (2 * ((1 << bits) - 1))
        err = np.abs(rec[kept] - layer[kept].astype(np.float64)).max()
        assert err <= bound


def test_fidelity_monotone_in_bits():
    rng = np.random.default_rng(2)
    layer = (rng.standard_normal(300) * 4).astype(np.float32)
    kept = codec.sparsify(layer, 25)
    last = np.inf
    for bits in range(1, 33):
        p = codec.quantize(layer, kept, bits)
        rec = codec.dequantize(p, layer.size)
        err = np.abs(rec[kept] - layer[kept].astype(np.float64)).max()
        assert err <= last + 1e-15
        last = err


def test_codes_are_permutation_equivariant():
    rng = np.random.default_rng(3)
    layer = rng.standard_normal(200).astype(np.float32)
    perm = rng.permutation(layer.size)
    shuffled = np.empty_like(layer)
    shuffled[perm] = layer
    for mu, bits in ((0, 6), (30, 12), (50, 1)):
        kept = codec.sparsify(layer, mu)
        kept_s = codec.sparsify(shuffled, mu)
        assert np.array_equal(np.sort(perm[kept]), kept_s)
        p = codec.quantize(layer, kept, bits)
        p_s = codec.quantize(shuffled, kept_s, bits)
        by_position = dict(zip(perm[kept], p.codes))
        assert all(by_position[i] == c for i, c in zip(p_s.kept_indices, p_s.codes))


def test_payload_bits_examples():
    spec = codec.LayerCompressionSpec
    assert codec.payload_bits([spec(8, 0)], [100]) == 864
    assert codec.payload_bits([spec(32, 0)], [100]) == 100 * 32 + 64
    assert codec.payload_bits([spec(1, 50), spec(1, 50)], [10, 10]) == 138
    with pytest.raises(ValueError):
        codec.payload_bits([spec(8, 0)], [100, 200])


def test_compression_spec_bounds():
    with pytest.raises(ValueError):
        codec.LayerCompressionSpec(0, 10)
    with pytest.raises(ValueError):
        codec.LayerCompressionSpec(33, 10)
    with pytest.raises(ValueError):
        codec.LayerCompressionSpec(8, 51)


def test_wire_golden_bytes():
    payload = codec.LayerPayload(
        kept_indices=np.array([1, 4, 6]),
        codes=np.array([5, 2, 7], np.uint32),
        w_min=0.0,
        w_max=7.0,
        bits=3,
    )
    buf = codec.encode_payload(payload)
    # header: u8 bits, u32 count, two f32 extrema
    assert buf[:13] == struct.pack("<BIff", 3, 3, 0.0, 7.0)
    # bit stream (LSB first): 101 010 111 -> bytes 0b11010101, 0b00000001
    assert buf[13:15] == bytes([0b11010101, 0b00000001])
    # u32 little-endian deltas of the index list: 1, 3, 2
    assert buf[15:] == struct.pack("<3I", 1, 3, 2)
    assert len(buf) * 8 == 8 * (13 + (3 * 3 + 7) // 8 + 4 * 3)


def test_wire_round_trip_random():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 800))
        mu = int(rng.integers(0, 51))
        bits = int(rng.integers(1, 33))
        layer = rng.standard_normal(n).astype(np.float32)
        p = codec.quantize(layer, codec.sparsify(layer, mu), bits)
        q = codec.decode_payload(codec.encode_payload(p))
        assert q.bits == p.bits
        assert q.w_min == p.w_min and q.w_max == p.w_max
        assert np.array_equal(q.kept_indices, p.kept_indices)
        assert np.array_equal(q.codes, p.codes)


def test_wire_rejects_corrupt_buffers():
    layer = np.arange(16, dtype=np.float32)
    p = codec.quantize(layer, codec.sparsify(layer, 0), 5)
    buf = codec.encode_payload(p)
    with pytest.raises(codec.PayloadCorruptionError):
        codec.decode_payload(buf[:10])
    with pytest.raises(codec.PayloadCorruptionError):
        codec.decode_payload(buf + b"\x00")
