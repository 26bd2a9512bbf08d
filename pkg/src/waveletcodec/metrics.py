"""Image quality metrics: PSNR and 5-scale MS-SSIM.

MS-SSIM runs through the autodiff ops so the same code serves both
evaluation (tape=None) and the MS-SSIM training objective.  Windows are
11x11 Gaussian (sigma 1.5), valid-mode, per channel, averaged over
channels; scales are linked by 2x2 mean pooling after cropping to even
dims.  The luminance term enters at the coarsest scale only.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ArgumentError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_DIM = 176
_K1, _K2 = 0.01, 0.03
_C1 = (_K1) ** 2
_C2 = (_K2) ** 2
_CS_FLOOR = 1e-6


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1]; +inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.exp(-0.5 * (np.arange(size) - half) ** 2 / sigma**2)
    g /= g.sum()
    return np.outer(g, g).reshape(1, 1, size, size)


_WINDOW = _gaussian_window()
_WIN_W = Var(_WINDOW, const=True)
_WIN_B = Var(np.zeros(1), const=True)


def _blur(tape, x: Var) -> Var:
    return ad.conv2d(tape, x, _WIN_W, _WIN_B, stride=1, pad=0)


def _ssim_maps(tape, x: Var, y: Var) -> tuple[Var, Var]:
    """(luminance map, contrast-structure map) for one channel."""
    mu1 = _blur(tape, x)
    mu2 = _blur(tape, y)
    mu1_sq = ad.mul(tape, mu1, mu1)
    mu2_sq = ad.mul(tape, mu2, mu2)
    mu12 = ad.mul(tape, mu1, mu2)
    s11 = ad.sub(tape, _blur(tape, ad.mul(tape, x, x)), mu1_sq)
    s22 = ad.sub(tape, _blur(tape, ad.mul(tape, y, y)), mu2_sq)
    s12 = ad.sub(tape, _blur(tape, ad.mul(tape, x, y)), mu12)
    lum = ad.div(tape,
                 ad.add_const(tape, ad.scale(tape, mu12, 2.0), _C1),
                 ad.add_const(tape, ad.add(tape, mu1_sq, mu2_sq), _C1))
    cs = ad.div(tape,
                ad.add_const(tape, ad.scale(tape, s12, 2.0), _C2),
                ad.add_const(tape, ad.add(tape, s11, s22), _C2))
    return lum, cs


def _downsample(tape, x: Var) -> Var:
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        x = ad.crop2d(tape, x, 0, h - h % 2, 0, w - w % 2)
    return ad.avg_pool2(tape, x, 2)


def _pow_const(tape, x: Var, e: float) -> Var:
    clipped = ad.clip(tape, x, _CS_FLOOR, None)
    return ad.exp(tape, ad.scale(tape, ad.log(tape, clipped), e))


def ms_ssim_var(tape: Tape | None, a: Var, b: Var) -> Var:
    """Scalar MS-SSIM of two (C, H, W) tensors in [0, 1]."""
    c, h, w = a.data.shape
    if a.data.shape != b.data.shape:
        raise ShapeError(f"ms_ssim shapes differ: {a.data.shape} vs {b.data.shape}")
    if min(h, w) < MS_SSIM_MIN_DIM:
        raise ArgumentError(
            f"ms_ssim needs min(H, W) >= {MS_SSIM_MIN_DIM}, got {h}x{w}")
    per_channel = []
    for ch in range(c):
        x = ad.narrow(tape, a, 0, ch, 1)
        y = ad.narrow(tape, b, 0, ch, 1)
        factors = []
        for scale_i, weight in enumerate(MS_SSIM_WEIGHTS):
            lum, cs = _ssim_maps(tape, x, y)
            if scale_i == len(MS_SSIM_WEIGHTS) - 1:
                term = ad.mean_all(tape, ad.mul(tape, lum, cs))
            else:
                term = ad.mean_all(tape, cs)
                x = _downsample(tape, x)
                y = _downsample(tape, y)
            factors.append(_pow_const(tape, term, weight))
        value = factors[0]
        for f in factors[1:]:
            value = ad.mul(tape, value, f)
        per_channel.append(value)
    total = per_channel[0]
    for v in per_channel[1:]:
        total = ad.add(tape, total, v)
    return ad.scale(tape, total, 1.0 / c)


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    return float(ms_ssim_var(None, Var(np.asarray(a, dtype=np.float64)),
                             Var(np.asarray(b, dtype=np.float64))).data)


def ms_ssim_db(value: float) -> float:
    """-10*log10(1 - v), the conventional dB form."""
    if value >= 1.0:
        return math.inf
    return -10.0 * math.log10(1.0 - value)
