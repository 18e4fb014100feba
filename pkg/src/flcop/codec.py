"""Per-layer lossy compression: top-magnitude sparsification plus b-bit
min/max quantisation, with exact bit accounting and a binary wire layout."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class PayloadCorruptionError(ValueError):
    """Decoded payload is internally inconsistent with its layer."""


@dataclass(frozen=True)
class LayerCompressionSpec:
    """Bit width and drop percentage for one parameter array."""

    bits: int
    drop_percent: int

    def __post_init__(self):
        if not 1 <= self.bits <= 32:
            raise ValueError(f"bits must lie in [1, 32], got {self.bits}")
        if not 0 <= self.drop_percent <= 50:
            raise ValueError(f"drop_percent must lie in [0, 50], got {self.drop_percent}")


@dataclass
class LayerPayload:
    """Compressed wire form of one parameter array.

    kept_indices are sorted positions into the original flat array; codes are
    integers below 2**bits, one per kept position; w_min and w_max span the
    kept values and anchor the reconstruction grid.
    """

    kept_indices: np.ndarray
    codes: np.ndarray
    w_min: float
    w_max: float
    bits: int


def kept_count(n: int, drop_percent: int) -> int:
    """Entries surviving sparsification: ceil(n * (100 - drop_percent) / 100)."""
    return -((n * (100 - drop_percent)) // -100)


def sparsify(layer: np.ndarray, drop_percent: int) -> np.ndarray:
    """Indices of the largest-magnitude entries, ties broken by lower index.

    Keeps ceil(n * (100 - drop_percent) / 100) entries; returned sorted
    ascending.
    """
    layer = np.asarray(layer)
    if layer.size == 0:
        raise ValueError("cannot sparsify an empty layer")
    if not 0 <= drop_percent <= 50:
        raise ValueError(f"drop_percent must lie in [0, 50], got {drop_percent}")
    k = kept_count(layer.size, drop_percent)
    order = np.argsort(-np.abs(layer.astype(np.float64)), kind="stable")
    return np.sort(order[:k])


def quantize(layer: np.ndarray, kept: np.ndarray, bits: int) -> LayerPayload:
    """Encode the kept entries on a 2**bits level grid spanning [min, max].

    Code 0 decodes to the minimum, code 2**bits - 1 to the maximum, interior
    codes to equally spaced levels between them; normalized values round half
    away from zero. A constant layer yields all-zero codes.
    """
    layer = np.asarray(layer)
    if not 1 <= bits <= 32:
        raise ValueError(f"bits must lie in [1, 32], got {bits}")
    kept = np.asarray(kept, np.int64)
    if kept.size == 0:
        raise ValueError("kept index set must be non-empty")
    vals = layer[kept].astype(np.float64)
    if not np.isfinite(vals).all():
        raise FloatingPointError("layer holds non-finite values")
    # extrema travel as float32 on the wire; quantize against the stored values
    lo = np.float64(np.float32(vals.min()))
    hi = np.float64(np.float32(vals.max()))
    levels = (1 << bits) - 1
    if hi == lo:
        codes = np.zeros(kept.size, np.uint32)
    else:
        step = (hi - lo) / levels
        codes = np.floor((vals - lo) * (levels / (hi - lo)) + 0.5)
        np.clip(codes, 0, levels, out=codes)
        # snap to a neighbouring level only when it is strictly closer,
        # so the half-step error bound survives float rounding
        err = np.abs(vals - (lo + codes * step))
        for cand in (codes - 1, codes + 1):
            np.clip(cand, 0, levels, out=cand)
            cand_err = np.abs(vals - (lo + cand * step))
            better = cand_err < err
            codes = np.where(better, cand, codes)
            err = np.where(better, cand_err, err)
        codes = codes.astype(np.uint32)
    return LayerPayload(kept, codes, float(lo), float(hi), bits)


def dequantize(payload: LayerPayload, n: int, fill=0.0) -> np.ndarray:
    """Reconstruct a flat float64 array of length n from a payload.

    Kept positions decode to w_min + code * step; every other position takes
    `fill` (a scalar, or an array of length n read positionally).
    """
    idx = payload.kept_indices
    if idx.size and int(idx.max()) >= n:
        raise PayloadCorruptionError(f"kept index {int(idx.max())} out of range for layer of {n}")
    if np.ndim(fill) == 0:
        out = np.full(n, fill, np.float64)
    else:
        out = np.asarray(fill, np.float64).copy()
        if out.shape != (n,):
            raise ValueError("fill array must match the layer length")
    levels = (1 << payload.bits) - 1
    step = (payload.w_max - payload.w_min) / levels if payload.w_max > payload.w_min else 0.0
    out[idx] = payload.w_min + payload.codes.astype(np.float64) * step
    return out


def payload_bits(specs, layer_sizes) -> int:
    """Total uplink bits for one model: sum of kept * bits plus 64 per layer
    for the two 32-bit extrema. Index overhead is deliberately not counted."""
    if len(specs) != len(layer_sizes):
        raise ValueError("one compression spec per layer required")
    return sum(kept_count(n, s.drop_percent) * s.bits + 64 for s, n in zip(specs, layer_sizes))


def encode_payload(payload: LayerPayload) -> bytes:
    """Serialize: [u8 bits][u32 n_kept][f32 min][f32 max][codes, bits each,
    little-endian bit order][u32 delta-encoded indices], all little-endian."""
    k = payload.codes.size
    header = struct.pack("<BIff", payload.bits, k, payload.w_min, payload.w_max)
    code_bits = np.unpackbits(
        payload.codes.astype("<u4").view(np.uint8).reshape(k, 4), axis=1, bitorder="little"
    )[:, : payload.bits]
    packed = np.packbits(code_bits.reshape(-1), bitorder="little").tobytes()
    idx = payload.kept_indices.astype(np.int64)
    deltas = np.diff(idx, prepend=0).astype("<u4")
    return header + packed + deltas.tobytes()


def decode_payload(buf: bytes) -> LayerPayload:
    """Inverse of encode_payload; raises PayloadCorruptionError on bad sizes."""
    if len(buf) < 13:
        raise PayloadCorruptionError("payload shorter than its 13-byte header")
    bits, k, w_min, w_max = struct.unpack("<BIff", buf[:13])
    code_bytes = (k * bits + 7) // 8
    if len(buf) != 13 + code_bytes + 4 * k:
        raise PayloadCorruptionError(f"payload length {len(buf)} does not match header (k={k}, bits={bits})")
    stream = np.unpackbits(np.frombuffer(buf, np.uint8, code_bytes, offset=13), bitorder="little")
    padded = np.zeros((k, 32), np.uint8)
    padded[:, :bits] = stream[: k * bits].reshape(k, bits)
    codes = np.packbits(padded, axis=1, bitorder="little").view("<u4").reshape(k)
    deltas = np.frombuffer(buf, "<u4", k, offset=13 + code_bytes)
    indices = np.cumsum(deltas.astype(np.int64))
    return LayerPayload(indices, codes.astype(np.uint32), w_min, w_max, bits)
