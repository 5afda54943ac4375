"""Quantizer rules, range handling, payload packing, bit accounting."""
import struct

import numpy as np
import pytest

from dfedsim.quantization import (
    QuantizationRangeError,
    QuantizerSpec,
    decode_payload,
    dequantize,
    encode_payload,
    payload_bits,
    quantize_scalar,
    quantize_vector,
    unquantized_bits,
)

DET = QuantizerSpec(s=1.0, b=8, rule="deterministic")


def test_floor_rule_scalars():
    assert quantize_scalar(2.7, DET) == 2
    assert quantize_scalar(-0.3, DET) == -1
    assert quantize_scalar(0.0, DET) == 0
    assert quantize_scalar(DET.hi, DET) == DET.code_max
    assert quantize_scalar(DET.lo, DET) == DET.code_min


def test_floor_rule_matches_numpy_floor():
    spec = QuantizerSpec(s=0.37, b=10, rule="deterministic")
    rng = np.random.default_rng(0)
    x = rng.uniform(spec.lo, spec.hi, size=2000)
    qv = quantize_vector(x, spec)
    assert np.array_equal(qv.codes, np.floor(x / spec.s).astype(np.int64))


def test_scalar_out_of_range_raises():
    with pytest.raises(QuantizationRangeError) as err:
        quantize_scalar(1000.0, DET)
    assert err.value.value == 1000.0


def test_vector_out_of_range_names_coordinate():
    x = np.array([0.0, 1.0, 1e9])
    with pytest.raises(QuantizationRangeError) as err:
        quantize_vector(x, DET)
    assert err.value.coordinate == 2
    assert err.value.value == 1e9


def test_zero_vector_zero_codes():
    for rule in ("deterministic", "stochastic"):
        spec = QuantizerSpec(s=0.5, b=6, rule=rule, seed=4)
        qv = quantize_vector(np.zeros(12), spec)
        assert np.array_equal(qv.codes, np.zeros(12, dtype=np.int64))


def test_vector_matches_scalar_coordinatewise():
    spec = QuantizerSpec(s=0.25, b=8, rule="stochastic", seed=9)
    x = np.array([0.1, -0.4, 1.9, 0.26])
    qv = quantize_vector(x, spec, round_index=3, client=2)
    for i, a in enumerate(x):
        assert qv.codes[i] == quantize_scalar(
            a, spec, round_index=3, client=2, coordinate=i
        )


def test_stochastic_unbiased_quarter():
    # E q(0.25) = 0.25; Monte-Carlo mean of 1e6 draws within 3 * 0.5/1e3
    spec = QuantizerSpec(s=1.0, b=4, rule="stochastic", seed=11)
    n = 10**6
    qv = quantize_vector(np.full(n, 0.25), spec)
    assert abs(qv.decode().mean() - 0.25) <= 3.0 * 0.5 / 10**3


def test_stochastic_mean_square_error_bound():
    # E||Q(x) - x||^2 <= d s^2 / 4 for the randomized rule (uniform inputs
    # actually give d s^2 / 6)
    d, s = 1000, 0.1
    spec = QuantizerSpec(s=s, b=8, rule="stochastic", seed=21)
    rng = np.random.default_rng(2)
    total = 0.0
    trials = 1000
    for t in range(trials):
        x = rng.uniform(spec.lo, spec.hi, size=d)
        err = quantize_vector(x, spec, round_index=t).decode() - x
        total += float(err @ err)
    assert total / trials <= d * s**2 / 4.0


def test_deterministic_error_below_step_per_coordinate():
    spec = QuantizerSpec(s=0.05, b=12, rule="deterministic")
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.uniform(spec.lo, spec.hi, size=64)
        dec = quantize_vector(x, spec).decode()
        assert np.all(dec <= x)
        assert np.all(x < dec + spec.s)


def test_dequantize_examples():
    qv = quantize_vector(np.array([2.7, -0.3]), DET)
    assert np.array_equal(dequantize(qv), np.array([2.0, -1.0]))
    qz = quantize_vector(np.zeros(5), DET)
    assert np.array_equal(dequantize(qz), np.zeros(5))


def test_requantizing_decoded_values_is_identity():
    spec = QuantizerSpec(s=0.125, b=8, rule="deterministic")
    rng = np.random.default_rng(4)
    x = rng.uniform(spec.lo, spec.hi, size=200)
    first = quantize_vector(x, spec)
    second = quantize_vector(first.decode(), spec)
    assert np.array_equal(first.codes, second.codes)


def test_stochastic_reproducible_and_seed_sensitive():
    x = np.linspace(-3.0, 3.0, 50)
    a = quantize_vector(x, QuantizerSpec(s=0.3, b=8, rule="stochastic", seed=5),
                        round_index=2, client=1)
    b = quantize_vector(x, QuantizerSpec(s=0.3, b=8, rule="stochastic", seed=5),
                        round_index=2, client=1)
    c = quantize_vector(x, QuantizerSpec(s=0.3, b=8, rule="stochastic", seed=6),
                        round_index=2, client=1)
    assert np.array_equal(a.codes, b.codes)
    assert not np.array_equal(a.codes, c.codes)


def test_payload_bit_counts():
    assert payload_bits(10, 8, 2) == 224
    assert unquantized_bits(10, 2) == 640
    assert payload_bits(1, 32, 1) == 64
    assert unquantized_bits(1, 1) == 32
    assert payload_bits(10, 8, 0) == 0


def test_bit_length_exact():
    for d, b in ((1, 1), (3, 5), (100, 8), (17, 32)):
        spec = QuantizerSpec(s=1.0, b=b, rule="deterministic")
        qv = quantize_vector(np.zeros(d), spec)
        assert qv.bit_length == 32 + d * b
        payload = encode_payload(qv)
        assert len(payload) == (qv.bit_length + 7) // 8


def test_payload_round_trip():
    # s exactly representable in float32 so the wire round-trip is lossless
    spec = QuantizerSpec(s=0.125, b=7, rule="stochastic", seed=8)
    rng = np.random.default_rng(5)
    x = rng.uniform(spec.lo, spec.hi, size=33)
    qv = quantize_vector(x, spec)
    back = decode_payload(encode_payload(qv), d=33, b=7)
    assert back.s == qv.s
    assert np.array_equal(back.codes, qv.codes)


def test_payload_layout_hand_example():
    # s = 0.5f -> LE bytes 00 00 00 3F; one 2-bit code +1 -> bits 01 packed
    # MSB-first into 0b01000000
    qv = quantize_vector(np.array([0.5]), QuantizerSpec(s=0.5, b=2))
    assert qv.codes.tolist() == [1]
    payload = encode_payload(qv)
    assert payload[:4] == struct.pack("<f", 0.5)
    assert payload[4] == 0b01000000
    assert len(payload) == 5


def test_payload_negative_codes_two_complement():
    qv = quantize_vector(np.array([-1.0]), QuantizerSpec(s=1.0, b=3))
    assert qv.codes.tolist() == [-1]  # two's complement 111
    payload = encode_payload(qv)
    assert payload[4] == 0b11100000
    back = decode_payload(payload, d=1, b=3)
    assert back.codes.tolist() == [-1]


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantizerSpec(s=0.0, b=8)
    with pytest.raises(ValueError):
        QuantizerSpec(s=1.0, b=0)
    with pytest.raises(ValueError):
        QuantizerSpec(s=1.0, b=33)
    with pytest.raises(ValueError):
        QuantizerSpec(s=1.0, b=8, rule="nearest")


def test_b32_extreme_codes():
    spec = QuantizerSpec(s=1e-12, b=32, rule="deterministic")
    x = np.array([2e-3, -2e-3])
    qv = quantize_vector(x, spec)
    assert np.array_equal(qv.codes, np.array([2_000_000_000, -2_000_000_000]))
    assert np.allclose(qv.decode(), x, atol=1e-12)
