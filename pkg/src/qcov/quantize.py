"""Sign quantization into bit-packed blocks and popcount Gram matrices.

Layout is coordinate-major: row ``i`` of ``bits`` holds the signs of
coordinate ``i`` across all samples, 64 samples per ``uint64`` word, sample
``k`` at bit ``k % 64`` of word ``k // 64``. Unused tail bits are zero, which
is what lets ``n - 2 * popcount(row_i ^ row_j)`` count disagreements over
exactly ``n`` samples.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matrixcore import as_sym
from .sampling import RngStream, sample_dither

__all__ = [
    "BitSampleBlock",
    "DitheredPairBlock",
    "sign_pack",
    "dithered_pack",
    "dithered_pack_with",
    "decode",
    "sign_gram",
    "cross_gram",
    "write_block",
    "read_block",
]

MAGIC = b"QBLK"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
# Above this many words the pairwise XOR is done row by row.
_BROADCAST_LIMIT = 1 << 20


def _words(n: int) -> int:
    return (n + 63) // 64


def _tail_mask(n: int) -> np.uint64:
    r = n % 64
    return np.uint64(0xFFFFFFFFFFFFFFFF) if r == 0 else np.uint64((1 << r) - 1)


@dataclass(frozen=True)
class BitSampleBlock:
    dim: int
    count: int
    bits: np.ndarray  # (dim, ceil(count/64)) uint64

    def __post_init__(self):
        if self.dim < 1 or self.count < 1:
            raise ValueError("block needs dim >= 1 and count >= 1")
        bits = np.array(self.bits, dtype=np.uint64, order="C")
        if bits.shape != (self.dim, _words(self.count)):
            raise ValueError(
                f"bits has shape {bits.shape}, expected {(self.dim, _words(self.count))}"
            )
        if np.any(bits[:, -1] & ~_tail_mask(self.count)):
            raise ValueError("tail padding bits must be zero")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, BitSampleBlock):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.count == other.count
            and np.array_equal(self.bits, other.bits)
        )


@dataclass(frozen=True)
class DitheredPairBlock:
    y: BitSampleBlock
    ybar: BitSampleBlock
    lam: float

    def __post_init__(self):
        if (self.y.dim, self.y.count) != (self.ybar.dim, self.ybar.count):
            raise ValueError("y and ybar must have the same shape")
        if not self.lam > 0:
            raise ValueError("dither level must be positive")


def sign_pack(batch) -> BitSampleBlock:
    """Pack ``sign(batch)`` with the convention ``sign(0) = +1`` (bit 1).

    ``batch`` is an ``(n, p)`` array of samples.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2:
        raise ValueError("batch must be a 2-D (n, p) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch has non-finite entries")
    n, p = x.shape
    w = _words(n)
    packed = np.packbits((x >= 0.0).T, axis=1, bitorder="little")
    buf = np.zeros((p, 8 * w), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    return BitSampleBlock(p, n, buf.view("<u8").astype(np.uint64))


def decode(block: BitSampleBlock) -> np.ndarray:
    """Unpack to a ``(p, n)`` array of +/-1 values."""
    raw = block.bits.astype("<u8").view(np.uint8)
    b = np.unpackbits(raw, axis=1, count=block.count, bitorder="little")
    return 2.0 * b - 1.0


def dithered_pack_with(batch, tau, taubar, lam: float) -> DitheredPairBlock:
    """Quantize with caller-supplied dithers. Meant for tests."""
    x = np.asarray(batch, dtype=float)
    return DitheredPairBlock(sign_pack(x + tau), sign_pack(x + taubar), float(lam))


def dithered_pack(batch, lam: float, rng: RngStream) -> DitheredPairBlock:
    """Two-bit quantization with two fresh independent Uniform[-lam, lam] dithers."""
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2:
        raise ValueError("batch must be a 2-D (n, p) array")
    n, p = x.shape
    tau = sample_dither(lam, p, n, rng)
    taubar = sample_dither(lam, p, n, rng)
    return dithered_pack_with(x, tau, taubar, lam)


def _xor_popcount(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    pa, pb, w = a.shape[0], b.shape[0], a.shape[1]
    if pa * pb * w <= _BROADCAST_LIMIT:
        return np.bitwise_count(a[:, None, :] ^ b[None, :, :]).sum(axis=2, dtype=np.int64)
    out = np.empty((pa, pb), dtype=np.int64)
    for i in range(pa):
        out[i] = np.bitwise_count(a[i] ^ b).sum(axis=1, dtype=np.int64)
    return out


def sign_gram(block: BitSampleBlock) -> np.ndarray:
    """``sum_k y^k (y^k)^T`` with integer-exact entries; diagonal is ``n``."""
    g = block.count - 2 * _xor_popcount(block.bits, block.bits)
    return as_sym(g.astype(float), rtol=None)


def cross_gram(pair: DitheredPairBlock) -> np.ndarray:
    """``sum_k y^k (ybar^k)^T``; not symmetric in general."""
    g = pair.y.count - 2 * _xor_popcount(pair.y.bits, pair.ybar.bits)
    return g.astype(float)


def write_block(path, block: BitSampleBlock) -> None:
    """Binary dump: ``QBLK``, u32 version, u64 p, u64 n, then little-endian words."""
    with open(Path(path), "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, block.dim, block.count))
        fh.write(block.bits.astype("<u8").tobytes())


def read_block(path) -> BitSampleBlock:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated block header")
    magic, version, p, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported block version {version}")
    w = _words(n)
    body = data[_HEADER.size :]
    if len(body) != 8 * p * w:
        raise ValueError("block body has the wrong length")
    bits = np.frombuffer(body, dtype="<u8").reshape(p, w).astype(np.uint64)
    return BitSampleBlock(int(p), int(n), bits)
