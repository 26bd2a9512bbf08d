"""8-bit RGB image I/O: binary PPM (P6) natively, PNG through Pillow.

Images are (3, H, W) uint8 arrays.  Grayscale inputs are expanded to
three identical channels; 16-bit inputs are rejected.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IOFormatError


def _ppm_token(stream: io.BufferedReader) -> bytes:
    tok = b""
    while True:
        ch = stream.read(1)
        if not ch:
            raise IOFormatError("truncated PPM header")
        if ch in b" \t\r\n":
            if tok:
                return tok
            continue
        if ch == b"#":
            while ch and ch != b"\n":
                ch = stream.read(1)
            continue
        tok += ch


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(2) != b"P6":
            raise IOFormatError(f"{path}: not a binary PPM (P6)")
        w = int(_ppm_token(f))
        h = int(_ppm_token(f))
        maxval = int(_ppm_token(f))
        if maxval != 255:
            raise IOFormatError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
        raw = f.read(3 * w * h)
    if len(raw) != 3 * w * h:
        raise IOFormatError(f"{path}: truncated PPM pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def write_ppm(path, img: np.ndarray) -> None:
    img = _check_image(img)
    _c, h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[0] != 3:
        raise IOFormatError(f"expected (3, H, W) uint8 image, got "
                            f"{img.dtype} {img.shape}")
    return img


def read_image(path) -> np.ndarray:
    """Load a PNG or binary PPM as (3, H, W) uint8."""
    path = Path(path)
    try:
        head = open(path, "rb").read(2)
    except OSError as e:
        raise IOFormatError(f"cannot read {path}: {e}") from e
    if head == b"P6":
        return read_ppm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise IOFormatError(f"{path}: 16-bit/float images unsupported")
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                return np.ascontiguousarray(
                    np.broadcast_to(arr, (3,) + arr.shape)).copy()
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as e:
        raise IOFormatError(f"{path}: unsupported image format") from e
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    img = _check_image(img)
    if path.suffix.lower() == ".ppm":
        write_ppm(path, img)
        return
    Image.fromarray(img.transpose(1, 2, 0), mode="RGB").save(path)
