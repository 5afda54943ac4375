"""Fixed-step uniform quantization of parameter vectors, with exact bit
accounting for the wire payload.

A quantizer with step s > 0 and bit width b maps reals onto the 2^b-level
grid {-2^(b-1) s, ..., -s, 0, s, ..., (2^(b-1)-1) s}.  The deterministic rule
takes the floor code floor(a/s); the stochastic rule rounds to one of the two
neighboring grid points with probabilities proportional to proximity, which
makes it unbiased: E q(a) = a.

Wire format (little-endian float32 step, then packed codes):

    byte 0..3   step size s as IEEE-754 binary32, little-endian
    bit  32..   d codes, b bits each, two's complement, MSB first
    tail        zero padding to the next byte boundary

The padding is excluded from the bit count: a payload carrying d codes is
exactly 32 + d*b bits (ceil((32 + d*b)/8) bytes on the wire).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import stream

RULES = ("deterministic", "stochastic")


class QuantizationRangeError(ValueError):
    """Input outside the representable range (overflow is an error, not
    saturation: silently clamping would invalidate every downstream bound)."""

    def __init__(self, value: float, coordinate: int, lo: float, hi: float,
                 context: str = ""):
        where = f" ({context})" if context else ""
        super().__init__(
            f"coordinate {coordinate} value {value!r} outside representable "
            f"range [{lo!r}, {hi!r}]{where}"
        )
        self.value = value
        self.coordinate = coordinate
        self.context = context


@dataclass(frozen=True)
class QuantizerSpec:
    """Step size, bit width, rounding rule, and the stochastic-rule seed."""

    s: float
    b: int
    rule: str = "deterministic"
    seed: int = 0

    def __post_init__(self):
        if not (self.s > 0.0 and np.isfinite(self.s)):
            raise ValueError(f"step size s must be positive and finite, got {self.s}")
        if not (1 <= int(self.b) <= 32):
            raise ValueError(f"bit width b must be in [1, 32], got {self.b}")
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}, got {self.rule!r}")

    @property
    def code_min(self) -> int:
        return -(1 << (self.b - 1))

    @property
    def code_max(self) -> int:
        return (1 << (self.b - 1)) - 1

    @property
    def lo(self) -> float:
        return self.code_min * self.s

    @property
    def hi(self) -> float:
        return self.code_max * self.s


@dataclass(frozen=True, eq=False)
class QuantizedVector:
    """Codes plus the step needed to decode them; code i decodes to codes[i]*s."""

    s: float
    b: int
    codes: np.ndarray  # int64, each in [-2^(b-1), 2^(b-1)-1]

    def __post_init__(self):
        self.codes.setflags(write=False)

    @property
    def d(self) -> int:
        return int(self.codes.shape[0])

    @property
    def bit_length(self) -> int:
        return 32 + self.d * self.b

    def decode(self) -> np.ndarray:
        return self.codes.astype(float) * self.s


def _check_range(x: np.ndarray, spec: QuantizerSpec) -> None:
    bad = ~((x >= spec.lo) & (x <= spec.hi))  # also catches NaN
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise QuantizationRangeError(float(x[idx]), idx, spec.lo, spec.hi)


def quantize_vector(
    x: np.ndarray,
    spec: QuantizerSpec,
    *,
    round_index: int = 0,
    client: int = 0,
) -> QuantizedVector:
    """Quantize coordinate-wise.

    Stochastic draws come from the stream keyed by (spec.seed, round_index,
    client); coordinate i consumes the i-th uniform of that stream, so codes
    are reproducible regardless of execution order.
    """
    x = np.asarray(x, dtype=float)
    _check_range(x, spec)
    codes = np.floor(x / spec.s).astype(np.int64)
    if spec.rule == "stochastic":
        frac = x / spec.s - np.floor(x / spec.s)
        u = stream(spec.seed, round_index, client).random(x.shape[0])
        codes = codes + (u < frac).astype(np.int64)
    # absorb float rounding at the interval endpoints (range was checked)
    np.clip(codes, spec.code_min, spec.code_max, out=codes)
    return QuantizedVector(s=spec.s, b=spec.b, codes=codes)


def quantize_scalar(
    a: float,
    spec: QuantizerSpec,
    *,
    round_index: int = 0,
    client: int = 0,
    coordinate: int = 0,
) -> int:
    """Quantize one value; equals coordinate ``coordinate`` of a vector call."""
    a = float(a)
    if not (spec.lo <= a <= spec.hi):
        raise QuantizationRangeError(a, coordinate, spec.lo, spec.hi)
    code = int(np.floor(a / spec.s))
    if spec.rule == "stochastic":
        frac = a / spec.s - np.floor(a / spec.s)
        # coordinate k uses the k-th uniform of the keyed stream
        u = stream(spec.seed, round_index, client).random(coordinate + 1)[coordinate]
        code += int(u < frac)
    return max(spec.code_min, min(spec.code_max, code))


def dequantize(qv: QuantizedVector) -> np.ndarray:
    """Map codes back to grid values codes[i]*s."""
    return qv.decode()


def payload_bits(d: int, b: int, degree: int) -> int:
    """Bits sent per round by a node of the given degree: (32 + d*b) per edge."""
    if d < 1 or b < 1 or degree < 0:
        raise ValueError(f"need d >= 1, b >= 1, degree >= 0; got {d}, {b}, {degree}")
    return (32 + d * b) * degree


def unquantized_bits(d: int, degree: int) -> int:
    """Bits per round without quantization: 32 bits per coordinate per edge."""
    if d < 1 or degree < 0:
        raise ValueError(f"need d >= 1, degree >= 0; got {d}, {degree}")
    return 32 * d * degree


def encode_payload(qv: QuantizedVector) -> bytes:
    """Pack a quantized vector into its wire format (see module docstring)."""
    head = np.unpackbits(np.frombuffer(struct.pack("<f", qv.s), dtype=np.uint8))
    mask = np.uint64((1 << qv.b) - 1)
    u = qv.codes.astype(np.uint64) & mask
    shifts = np.arange(qv.b - 1, -1, -1, dtype=np.uint64)
    bits = ((u[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()
    return np.packbits(np.concatenate([head, bits])).tobytes()


def decode_payload(data: bytes, d: int, b: int) -> QuantizedVector:
    """Inverse of :func:`encode_payload` for a payload of d codes of b bits."""
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    need = 32 + d * b
    if bits.shape[0] < need:
        raise ValueError(f"payload too short: {bits.shape[0]} bits < {need}")
    s = struct.unpack("<f", np.packbits(bits[:32]).tobytes())[0]
    body = bits[32:need].reshape(d, b).astype(np.int64)
    weights = 1 << np.arange(b - 1, -1, -1, dtype=np.int64)
    u = body @ weights
    codes = np.where(u >= (1 << (b - 1)), u - (1 << b), u)
    return QuantizedVector(s=float(s), b=b, codes=codes.astype(np.int64))
