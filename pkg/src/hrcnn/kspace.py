"""JPEG k-space codec: 8x8 block DCT, quality-scaled quantization, baseline decoding.

A k-space code keeps the quantized DCT coefficients in place: coefficient
``(i, j)`` of block ``(bx, by)`` sits at pixel position ``(8*by + i, 8*bx + j)``.
No entropy coding is involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BLOCK = 8

# ITU-T T.81 Annex K, Table K.1 (luminance)
ANNEX_K_LUMINANCE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)


class FormatError(ValueError):
    """Raised for malformed or unsupported files."""


def _dct_matrix():
    k = np.arange(BLOCK)
    c = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / (2 * BLOCK))
    c[0] *= np.sqrt(1.0 / BLOCK)
    c[1:] *= np.sqrt(2.0 / BLOCK)
    return c


# row u holds the u-th orthonormal DCT-II basis vector
DCT_MATRIX = _dct_matrix()


def dct8x8(block):
    """Orthonormal 2-D DCT-II of an 8x8 block."""
    block = np.asarray(block, dtype=np.float64)
    if block.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an 8x8 block, got {block.shape}")
    return DCT_MATRIX @ block @ DCT_MATRIX.T


def idct8x8(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an 8x8 block, got {coeffs.shape}")
    return DCT_MATRIX.T @ coeffs @ DCT_MATRIX


def dct_basis(u, v):
    """Pixel-space 8x8 image of DCT coefficient ``(u, v)`` with unit amplitude."""
    return np.outer(DCT_MATRIX[u], DCT_MATRIX[v])


def _blocks(a):
    h, w = a.shape
    return a.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _unblocks(b):
    nby, nbx = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(nby * BLOCK, nbx * BLOCK)


def blockwise_dct(plane):
    """DCT of every 8x8 block of a plane, laid out in place."""
    b = _blocks(np.asarray(plane, dtype=np.float64))
    return _unblocks(DCT_MATRIX @ b @ DCT_MATRIX.T)


def blockwise_idct(plane):
    b = _blocks(np.asarray(plane, dtype=np.float64))
    return _unblocks(DCT_MATRIX.T @ b @ DCT_MATRIX)


@dataclass(frozen=True)
class QuantTable:
    q: np.ndarray

    def __post_init__(self):
        if self.q.shape != (BLOCK, BLOCK):
            raise ValueError("quantization table must be 8x8")
        if self.q.min() < 1 or self.q.max() > 255:
            raise ValueError("quantization table entries must lie in [1, 255]")

    def tiled(self, height, width):
        return np.tile(self.q, (height // BLOCK, width // BLOCK))


def quant_table_for_quality(quality):
    """IJG quality scaling of the Annex K luminance table."""
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    q = (scale * ANNEX_K_LUMINANCE + 50) // 100
    return QuantTable(np.clip(q, 1, 255))


@dataclass
class GrayImage:
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError("gray image must be 2-D")
        if self.pixels.dtype != np.uint8:
            p = np.asarray(self.pixels)
            if p.size and (p.min() < 0 or p.max() > 255 or not np.all(p == np.round(p))):
                raise ValueError("pixels must be integers in [0, 255]")
            self.pixels = p.astype(np.uint8)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class KSpaceImage:
    coeffs: np.ndarray  # (height, width) int16, blocks in place
    quality: int

    def __post_init__(self):
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] % BLOCK or self.coeffs.shape[1] % BLOCK:
            raise ValueError(f"k-space extents must be multiples of 8, got {self.coeffs.shape}")
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must be in [1, 100], got {self.quality}")
        if self.coeffs.dtype != np.int16:
            c = np.asarray(self.coeffs)
            if c.size and (c.min() < -32768 or c.max() > 32767):
                raise OverflowError("coefficient does not fit in 16 bits")
            self.coeffs = c.astype(np.int16)

    @property
    def height(self):
        return self.coeffs.shape[0]

    @property
    def width(self):
        return self.coeffs.shape[1]


def pad_to_blocks(image: GrayImage) -> GrayImage:
    """Edge-replicate an image up to the next multiple of 8 in both extents."""
    h, w = image.pixels.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    if ph == 0 and pw == 0:
        return image
    return GrayImage(np.pad(image.pixels, ((0, ph), (0, pw)), mode="edge"))


def crop(image: GrayImage, height, width) -> GrayImage:
    return GrayImage(np.ascontiguousarray(image.pixels[:height, :width]))


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_uint8(x):
    """Clamp to [0, 255] and round to the nearest integer (halves go up)."""
    return np.floor(np.clip(x, 0.0, 255.0) + 0.5).astype(np.uint8)


def encode(image: GrayImage, quality) -> KSpaceImage:
    """Level shift, blockwise DCT, divide by the quality table, round half away from zero."""
    if image.height % BLOCK or image.width % BLOCK:
        raise ValueError(f"image extents {image.pixels.shape} are not multiples of 8")
    table = quant_table_for_quality(quality)
    spectrum = blockwise_dct(image.pixels.astype(np.float64) - 128.0)
    levels = round_half_away(spectrum / table.tiled(image.height, image.width))
    if levels.size and (levels.min() < -32768 or levels.max() > 32767):
        raise OverflowError("quantized coefficient does not fit in 16 bits")
    return KSpaceImage(levels.astype(np.int16), int(quality))


def dequantize(code: KSpaceImage):
    table = quant_table_for_quality(code.quality)
    return code.coeffs.astype(np.float64) * table.tiled(code.height, code.width)


def decode_baseline_float(code: KSpaceImage):
    """Dequantize and inverse-transform without the final clamp and rounding."""
    return blockwise_idct(dequantize(code)) + 128.0


def decode_baseline(code: KSpaceImage) -> GrayImage:
    """Standard JPEG decode path: dequantize, IDCT, +128, clamp, round."""
    return GrayImage(to_uint8(decode_baseline_float(code)))


# -- KSP1 container -------------------------------------------------------

KSP_MAGIC = b"KSP1"
_KSP_HEADER = struct.Struct("<4sIII")


def kspace_to_bytes(code: KSpaceImage) -> bytes:
    header = _KSP_HEADER.pack(KSP_MAGIC, code.width, code.height, code.quality)
    return header + code.coeffs.astype("<i2").tobytes()


def kspace_from_bytes(data: bytes) -> KSpaceImage:
    if len(data) < _KSP_HEADER.size:
        raise FormatError(f"k-space file truncated: {len(data)} bytes, header needs {_KSP_HEADER.size}")
    magic, width, height, quality = _KSP_HEADER.unpack_from(data)
    if magic != KSP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {KSP_MAGIC!r}")
    if width % BLOCK or height % BLOCK:
        raise FormatError(f"dimensions {width}x{height} are not multiples of 8")
    if not 1 <= quality <= 100:
        raise FormatError(f"quality {quality} out of range")
    expected = _KSP_HEADER.size + 2 * width * height
    if len(data) != expected:
        raise FormatError(f"k-space payload has {len(data)} bytes, expected {expected}")
    coeffs = np.frombuffer(data, dtype="<i2", offset=_KSP_HEADER.size).reshape(height, width)
    return KSpaceImage(coeffs.astype(np.int16), int(quality))


def write_kspace(code: KSpaceImage, path):
    Path(path).write_bytes(kspace_to_bytes(code))


def read_kspace(path) -> KSpaceImage:
    return kspace_from_bytes(Path(path).read_bytes())
