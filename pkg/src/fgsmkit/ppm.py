"""Binary PPM (P6) reading and writing.

Only the P6 flavour is handled: 8-bit (maxval < 256) or 16-bit big-endian
samples, with ``#`` comments allowed in the header.
"""

import os

import numpy as np


class PPMError(ValueError):
    pass


def _header_tokens(data: bytes, count: int):
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PPMError("truncated header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise PPMError("truncated header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def decode_ppm(data: bytes):
    """Return ``(pixels, maxval)`` with pixels shaped (H, W, 3)."""
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P6":
        raise PPMError(f"not a binary PPM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PPMError("malformed header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PPMError(f"bad header values {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    nbytes = width * height * 3 * dtype.itemsize
    raster = data[offset : offset + nbytes]
    if len(raster) != nbytes:
        raise PPMError(f"truncated raster: expected {nbytes} bytes, got {len(raster)}")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width, 3)
    return pixels, maxval


def encode_ppm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise PPMError(f"expected (H, W, 3) pixels, got {pixels.shape}")
    if not 0 < maxval < 65536:
        raise PPMError(f"maxval out of range: {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    h, w, _ = pixels.shape
    header = f"P6\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + pixels.astype(dtype).tobytes()


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def read_image(path) -> np.ndarray:
    """Read a PPM as a float32 (3, H, W) array scaled to [0, 1]."""
    pixels, maxval = read_ppm(path)
    return (pixels.astype(np.float32) / np.float32(maxval)).transpose(2, 0, 1).copy()


def write_image(path, image: np.ndarray, maxval: int = 255):
    """Write a (C, H, W) image with values in [0, 1]; 1-channel images are
    replicated to RGB."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise PPMError(f"expected (C, H, W) image, got {image.shape}")
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    if image.shape[0] != 3:
        raise PPMError(f"expected 1 or 3 channels, got {image.shape[0]}")
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval).transpose(1, 2, 0)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_ppm(q, maxval))
    os.replace(tmp, path)
