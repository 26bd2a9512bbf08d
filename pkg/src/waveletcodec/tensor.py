"""Dense tensor storage, deterministic randomness, channel slicing.

A ``Tensor3`` is a C-contiguous ``float64`` numpy array of shape
``(C, H, W)``: channel-major, row-major within each channel.  Every public
operation in the package keeps that layout, which pins the element order the
bitstream and checkpoint formats rely on.  The reference path is double
precision throughout; no single-precision shortcut is taken anywhere that
feeds the codec, the gradient checks, or the entropy coder.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, RangeError, ShapeError

Tensor3 = np.ndarray


def as_tensor3(data, channels: int | None = None) -> Tensor3:
    """Validate and normalize an array to (C, H, W) float64, C-contiguous."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected 3 dims (C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all dims must be >= 1, got {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise ShapeError(f"expected {channels} channels, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("tensor contains non-finite elements")
    return arr


def slice_channels(t: Tensor3, start: int, stop: int) -> Tensor3:
    """Copy of channels [start, stop); same spatial dims."""
    c = t.shape[0]
    if not (0 <= start < stop <= c):
        raise RangeError(f"channel range [{start}, {stop}) invalid for C={c}")
    return np.ascontiguousarray(t[start:stop])


def concat_channels(parts: list[Tensor3]) -> Tensor3:
    """Concatenate along the channel axis; all parts must share H and W."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    hw = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != hw:
            raise ShapeError(f"spatial dims differ: {p.shape[1:]} vs {hw}")
    return np.ascontiguousarray(np.concatenate(parts, axis=0))


class SeededRng:
    """Deterministic random stream: numpy PCG64 behind a fixed draw order.

    The algorithm identifier is part of the package contract; the same seed
    yields the identical stream on every platform.  Instances are
    single-owner: never draw from one instance concurrently.
    """

    ALGORITHM = "numpy-pcg64"

    def __init__(self, seed: int):
        if not (0 <= int(seed) < 2**64):
            raise ArgumentError(f"seed must be a 64-bit unsigned int, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """float64 samples in [lo, hi), reproducible from the seed."""
        if not (lo < hi):
            raise ArgumentError(f"need lo < hi, got [{lo}, {hi})")
        u = self._gen.random(size=shape, dtype=np.float64)
        return lo + (hi - lo) * u

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * std

    def integers(self, lo: int, hi: int, shape=None) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)

    def spawn(self, key: int) -> "SeededRng":
        """Independent child stream; key folds into the parent seed."""
        return SeededRng((self.seed * 0x9E3779B97F4A7C15 + key + 1) % 2**64)


def seeded_uniform(rng: SeededRng, shape, lo: float, hi: float) -> Tensor3:
    """Uniform tensor in [lo, hi) drawn from an owned SeededRng."""
    return rng.uniform(shape, lo, hi)
