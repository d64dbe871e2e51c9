"""Grayscale image files: binary PGM (P5, maxval 255) and PNG.

RGB inputs are reduced to their green channel.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .kspace import FormatError, GrayImage


def _pgm_header(data):
    """Return the four header fields and the offset of the raster."""
    fields = []
    pos = 0
    n = len(data)
    while len(fields) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return fields, pos + 1


def pgm_to_bytes(image: GrayImage) -> bytes:
    header = b"P5\n%d %d\n255\n" % (image.width, image.height)
    return header + np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()


def pgm_from_bytes(data: bytes) -> GrayImage:
    fields, pos = _pgm_header(data)
    magic, w, h, maxval = fields
    if magic != b"P5":
        raise FormatError(f"unsupported PGM magic {magic!r}, only binary P5 is read")
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}") from None
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}, expected 255 (8-bit)")
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise FormatError(f"PGM raster truncated: {len(payload)} of {width * height} bytes")
    return GrayImage(np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy())


def _read_png(path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
            raise FormatError(f"{path}: unsupported bit depth (PIL mode {mode})")
        if mode == "L":
            arr = np.asarray(im)
        elif mode in ("RGB", "RGBA"):
            arr = np.asarray(im)[:, :, 1]
        elif mode in ("P", "PA", "LA", "1"):
            conv = im.convert("RGB" if mode in ("P", "PA") else "L")
            arr = np.asarray(conv)
            if arr.ndim == 3:
                arr = arr[:, :, 1]
        else:
            raise FormatError(f"{path}: unsupported PNG mode {mode}")
    return GrayImage(np.ascontiguousarray(arr, dtype=np.uint8))


def read_image(path) -> GrayImage:
    """Read a PGM or PNG file as an 8-bit grayscale image (green channel for RGB)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    if data[:2] == b"P5":
        return pgm_from_bytes(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise FormatError(f"{path}: not a binary PGM or PNG file")


def write_image(image: GrayImage, path):
    """Write PNG when the suffix asks for it, binary PGM otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(image.pixels).save(path, format="PNG")
    else:
        path.write_bytes(pgm_to_bytes(image))
