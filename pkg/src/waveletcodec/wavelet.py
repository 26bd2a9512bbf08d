"""Lifting-based 1D/2D/3D discrete wavelet transforms.

Three filter families are provided: an orthonormal Haar, the reversible
integer LeGall 5/3, and the irreversible CDF 9/7 with the standard lifting
constants.  Spatial transforms use whole-sample symmetric boundary
extension; the channel transform requires an even channel count instead of
extending.  All transforms are critically sampled and operate along one
axis of an arbitrary-rank float64 array, vectorized over the other axes.

The 5/3 family rounds with floors (and therefore maps integers to integers
exactly) whenever the input is integer-valued; on non-integral input the
same lifting runs without rounding, which keeps the transform linear.  The
``rounded`` argument overrides the automatic choice.

``*_adjoint`` functions implement the exact transpose of the corresponding
linear transform (Haar and 9/7 only); they are what reverse-mode autodiff
needs, and they are validated against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, ShapeError
from .tensor import Tensor3


class WaveletKind(Enum):
    HAAR_ORTHONORMAL = "haar"
    LEGALL_5_3_REVERSIBLE = "5/3"
    CDF_9_7 = "9/7"


# Lifting constants for the 9/7 transform (ISO/IEC 15444-1 irreversible
# path).  These are configuration data validated by the convolution oracle
# in the test suite, not tunable parameters.
ALPHA = -1.586134342059924
BETA = -0.052980118572961
GAMMA = 0.882911075530934
DELTA = 0.443506852043971
K_SCALE = 1.230174104914001

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_KLO = 1.0 / K_SCALE  # analysis lowpass gain (DC gain 1)
_KHI = K_SCALE


def _sum_right(a: np.ndarray) -> np.ndarray:
    """a[n] + a[n+1] along the last axis, mirroring a[m] = a[m-1]."""
    out = a.copy()
    out[..., :-1] += a[..., 1:]
    out[..., -1] += a[..., -1]
    return out


def _sum_left(a: np.ndarray) -> np.ndarray:
    """a[n-1] + a[n] along the last axis, mirroring a[-1] = a[0]."""
    out = a.copy()
    out[..., 1:] += a[..., :-1]
    out[..., 0] += a[..., 0]
    return out


def _sum_right_adj(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    out[..., 1:] += v[..., :-1]
    out[..., -1] += v[..., -1]
    return out


def _sum_left_adj(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    out[..., :-1] += v[..., 1:]
    out[..., 0] += v[..., 0]
    return out


def _is_integral(a: np.ndarray) -> bool:
    return bool(np.all(a == np.floor(a)))


def _check_even(n: int) -> None:
    if n < 2 or n % 2 != 0:
        raise ShapeError(f"transform length must be even and >= 2, got {n}")


def _analyze_last(x: np.ndarray, kind: WaveletKind, rounded: bool | None):
    """Forward lifting along the last axis -> (low, high), half length each."""
    _check_even(x.shape[-1])
    # np.array (not ascontiguousarray): the strided halves must be real
    # copies even when they are single elements, or the in-place lifting
    # below would write through to the caller's array.
    even = np.array(x[..., 0::2], dtype=np.float64)
    odd = np.array(x[..., 1::2], dtype=np.float64)
    if kind is WaveletKind.HAAR_ORTHONORMAL:
        return (even + odd) * _INV_SQRT2, (even - odd) * _INV_SQRT2
    if kind is WaveletKind.LEGALL_5_3_REVERSIBLE:
        if rounded is None:
            rounded = _is_integral(x)
        if rounded:
            d = odd - np.floor(_sum_right(even) / 2.0)
            s = even + np.floor((_sum_left(d) + 2.0) / 4.0)
        else:
            d = odd - _sum_right(even) / 2.0
            s = even + _sum_left(d) / 4.0
        return s, d
    if kind is WaveletKind.CDF_9_7:
        s, d = even, odd
        d += ALPHA * _sum_right(s)
        s += BETA * _sum_left(d)
        d += GAMMA * _sum_right(s)
        s += DELTA * _sum_left(d)
        return s * _KLO, d * _KHI
    raise ArgumentError(f"unknown wavelet kind {kind!r}")


def _synthesize_last(low: np.ndarray, high: np.ndarray, kind: WaveletKind,
                     rounded: bool | None):
    """Inverse lifting along the last axis; exact inverse of _analyze_last."""
    if low.shape != high.shape:
        raise ShapeError(f"low/high shapes differ: {low.shape} vs {high.shape}")
    if kind is WaveletKind.HAAR_ORTHONORMAL:
        even = (low + high) * _INV_SQRT2
        odd = (low - high) * _INV_SQRT2
    elif kind is WaveletKind.LEGALL_5_3_REVERSIBLE:
        if rounded is None:
            rounded = _is_integral(low) and _is_integral(high)
        d = np.array(high, dtype=np.float64)
        if rounded:
            even = low - np.floor((_sum_left(d) + 2.0) / 4.0)
            odd = d + np.floor(_sum_right(even) / 2.0)
        else:
            even = low - _sum_left(d) / 4.0
            odd = d + _sum_right(even) / 2.0
    elif kind is WaveletKind.CDF_9_7:
        s = low / _KLO
        d = high / _KHI
        s -= DELTA * _sum_left(d)
        d -= GAMMA * _sum_right(s)
        s -= BETA * _sum_left(d)
        d -= ALPHA * _sum_right(s)
        even, odd = s, d
    else:
        raise ArgumentError(f"unknown wavelet kind {kind!r}")
    out = np.empty(low.shape[:-1] + (2 * low.shape[-1],), dtype=np.float64)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def _analyze_last_adjoint(glow: np.ndarray, ghigh: np.ndarray, kind: WaveletKind):
    """Transpose of the forward lifting map (differentiable kinds only)."""
    if kind is WaveletKind.HAAR_ORTHONORMAL:
        ge = (glow + ghigh) * _INV_SQRT2
        go = (glow - ghigh) * _INV_SQRT2
    elif kind is WaveletKind.CDF_9_7:
        gs = glow * _KLO
        gd = ghigh * _KHI
        gd = gd + DELTA * _sum_left_adj(gs)
        gs = gs + GAMMA * _sum_right_adj(gd)
        gd = gd + BETA * _sum_left_adj(gs)
        gs = gs + ALPHA * _sum_right_adj(gd)
        ge, go = gs, gd
    else:
        raise ArgumentError(f"no adjoint for wavelet kind {kind!r}")
    gx = np.empty(glow.shape[:-1] + (2 * glow.shape[-1],), dtype=np.float64)
    gx[..., 0::2] = ge
    gx[..., 1::2] = go
    return gx


def _synthesize_last_adjoint(gx: np.ndarray, kind: WaveletKind):
    """Transpose of the inverse lifting map -> (glow, ghigh)."""
    ge = np.array(gx[..., 0::2], dtype=np.float64)
    go = np.array(gx[..., 1::2], dtype=np.float64)
    if kind is WaveletKind.HAAR_ORTHONORMAL:
        return (ge + go) * _INV_SQRT2, (ge - go) * _INV_SQRT2
    if kind is WaveletKind.CDF_9_7:
        gs, gd = ge, go
        gs = gs + (-ALPHA) * _sum_right_adj(gd)
        gd = gd + (-BETA) * _sum_left_adj(gs)
        gs = gs + (-GAMMA) * _sum_right_adj(gd)
        gd = gd + (-DELTA) * _sum_left_adj(gs)
        return gs / _KLO, gd / _KHI
    raise ArgumentError(f"no adjoint for wavelet kind {kind!r}")


def _along_axis(fn, axis: int, *arrays):
    moved = [np.moveaxis(a, axis, -1) for a in arrays]
    res = fn(*moved)
    if isinstance(res, tuple):
        return tuple(np.ascontiguousarray(np.moveaxis(r, -1, axis)) for r in res)
    return np.ascontiguousarray(np.moveaxis(res, -1, axis))


# ---------------------------------------------------------------------------
# Axis-packed forms: [low | high] concatenated along the transformed axis.
# These keep array shapes stable, which is what the autodiff layer wants.

def analyze_axis(x: np.ndarray, axis: int, kind: WaveletKind,
                 rounded: bool | None = None) -> np.ndarray:
    def fn(a):
        lo, hi = _analyze_last(a, kind, rounded)
        return np.concatenate([lo, hi], axis=-1)
    return _along_axis(fn, axis, x)


def synthesize_axis(packed: np.ndarray, axis: int, kind: WaveletKind,
                    rounded: bool | None = None) -> np.ndarray:
    def fn(a):
        _check_even(a.shape[-1])
        h = a.shape[-1] // 2
        return _synthesize_last(a[..., :h], a[..., h:], kind, rounded)
    return _along_axis(fn, axis, packed)


def analyze_axis_adjoint(gpacked: np.ndarray, axis: int, kind: WaveletKind) -> np.ndarray:
    def fn(g):
        h = g.shape[-1] // 2
        return _analyze_last_adjoint(g[..., :h], g[..., h:], kind)
    return _along_axis(fn, axis, gpacked)


def synthesize_axis_adjoint(gx: np.ndarray, axis: int, kind: WaveletKind) -> np.ndarray:
    def fn(g):
        glo, ghi = _synthesize_last_adjoint(g, kind)
        return np.concatenate([glo, ghi], axis=-1)
    return _along_axis(fn, axis, gx)


# ---------------------------------------------------------------------------
# Public 1D API

def lift1d(signal, kind: WaveletKind, rounded: bool | None = None):
    """Forward 1D lifting -> (low, high); length must be even and >= 2."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"lift1d expects a 1D signal, got shape {x.shape}")
    return _analyze_last(x, kind, rounded)


def ilift1d(low, high, kind: WaveletKind, rounded: bool | None = None):
    """Inverse of lift1d; (low, high) must have equal length."""
    lo = np.asarray(low, dtype=np.float64)
    hi = np.asarray(high, dtype=np.float64)
    if lo.ndim != 1 or hi.ndim != 1:
        raise ShapeError("ilift1d expects 1D halves")
    return _synthesize_last(lo, hi, kind, rounded)


# ---------------------------------------------------------------------------
# 2D multi-level pyramid

@dataclass
class Pyramid2D:
    """Multi-level 2D decomposition of one plane (or a channel batch).

    ``details[i]`` holds the (LH, HL, HH) triple of level ``i + 1``; the
    first spatial letter is the height-axis band, the second the width-axis
    band.  ``ll`` is the deepest low-low band.
    """

    ll: np.ndarray
    details: list[tuple[np.ndarray, np.ndarray, np.ndarray]]

    @property
    def levels(self) -> int:
        return len(self.details)

    def total_elements(self) -> int:
        n = self.ll.size
        for lh, hl, hh in self.details:
            n += lh.size + hl.size + hh.size
        return n


def dwt2_multi(plane: np.ndarray, kind: WaveletKind, levels: int,
               rounded: bool | None = None) -> Pyramid2D:
    """Multi-level 2D DWT over the last two axes; level l+1 recurses on LL."""
    if levels < 1:
        raise ArgumentError(f"levels must be >= 1, got {levels}")
    h, w = plane.shape[-2:]
    if h % (1 << levels) or w % (1 << levels):
        raise ShapeError(f"dims {h}x{w} not divisible by 2^{levels}")
    cur = np.asarray(plane, dtype=np.float64)
    details = []
    for _ in range(levels):
        rows = analyze_axis(cur, -2, kind, rounded)
        both = analyze_axis(rows, -1, kind, rounded)
        h2, w2 = both.shape[-2] // 2, both.shape[-1] // 2
        ll = np.ascontiguousarray(both[..., :h2, :w2])
        lh = np.ascontiguousarray(both[..., :h2, w2:])
        hl = np.ascontiguousarray(both[..., h2:, :w2])
        hh = np.ascontiguousarray(both[..., h2:, w2:])
        details.append((lh, hl, hh))
        cur = ll
    return Pyramid2D(ll=cur, details=details)


def idwt2_multi(pyr: Pyramid2D, kind: WaveletKind,
                rounded: bool | None = None) -> np.ndarray:
    """Inverse of dwt2_multi."""
    cur = pyr.ll
    for lh, hl, hh in reversed(pyr.details):
        top = np.concatenate([cur, lh], axis=-1)
        bot = np.concatenate([hl, hh], axis=-1)
        both = np.concatenate([top, bot], axis=-2)
        rows = synthesize_axis(both, -1, kind, rounded)
        cur = synthesize_axis(rows, -2, kind, rounded)
    return cur


# ---------------------------------------------------------------------------
# Channel-axis and 3D transforms

def dwt_channel(t: Tensor3, kind: WaveletKind,
                rounded: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """1D DWT along the channel axis -> (low group, high group), C/2 each."""
    c = t.shape[0]
    if c % 2 != 0:
        raise ShapeError(f"channel DWT needs even C, got {c}")
    packed = analyze_axis(np.asarray(t, dtype=np.float64), 0, kind, rounded)
    return np.ascontiguousarray(packed[: c // 2]), np.ascontiguousarray(packed[c // 2:])


def idwt_channel(low: np.ndarray, high: np.ndarray, kind: WaveletKind,
                 rounded: bool | None = None) -> Tensor3:
    packed = np.concatenate([low, high], axis=0)
    return synthesize_axis(packed, 0, kind, rounded)


_SPATIAL_LABELS = {"LL": None, "LH": 0, "HL": 1, "HH": 2}


@dataclass
class SubbandTensor:
    """3D DWT decomposition: channel low/high groups, each a spatial pyramid.

    Labels are three letters: channel band first, then the two spatial
    bands, e.g. ``HLL`` is the channel-high group's spatial LL band (only
    defined like this for one spatial level; deeper pyramids are addressed
    through the group pyramids directly).
    """

    channel_kind: WaveletKind
    spatial_kind: WaveletKind
    levels: int
    low: Pyramid2D
    high: Pyramid2D

    def group(self, name: str) -> Pyramid2D:
        if name == "L":
            return self.low
        if name == "H":
            return self.high
        raise ArgumentError(f"unknown channel group {name!r}")

    def subband(self, label: str) -> np.ndarray:
        if len(label) != 3 or self.levels != 1:
            raise ArgumentError(
                f"label access needs a 3-letter label and one spatial level, got "
                f"{label!r} at levels={self.levels}")
        pyr = self.group(label[0])
        sp = label[1:]
        if sp not in _SPATIAL_LABELS:
            raise ArgumentError(f"unknown spatial band {sp!r}")
        idx = _SPATIAL_LABELS[sp]
        return pyr.ll if idx is None else pyr.details[0][idx]

    def total_elements(self) -> int:
        return self.low.total_elements() + self.high.total_elements()


#: Subband labels at one spatial level, in coding order (LF first).
SUBBAND_ORDER = ("LLL", "HLL", "LLH", "LHL", "LHH", "HLH", "HHL", "HHH")


def dwt3(t: Tensor3, channel_kind: WaveletKind, spatial_kind: WaveletKind,
         spatial_levels: int, rounded: bool | None = None) -> SubbandTensor:
    """Channel DWT then per-group multi-level spatial DWT."""
    low, high = dwt_channel(t, channel_kind, rounded)
    return SubbandTensor(
        channel_kind=channel_kind,
        spatial_kind=spatial_kind,
        levels=spatial_levels,
        low=dwt2_multi(low, spatial_kind, spatial_levels, rounded),
        high=dwt2_multi(high, spatial_kind, spatial_levels, rounded),
    )


def idwt3(sb: SubbandTensor, rounded: bool | None = None) -> Tensor3:
    low = idwt2_multi(sb.low, sb.spatial_kind, rounded)
    high = idwt2_multi(sb.high, sb.spatial_kind, rounded)
    return idwt_channel(low, high, sb.channel_kind, rounded)
