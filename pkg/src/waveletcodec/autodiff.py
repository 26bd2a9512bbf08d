"""Reverse-mode autodiff on an explicit operation tape.

A ``Var`` wraps one float64 ndarray.  Recording ops onto a ``Tape`` builds
the graph in evaluation order; ``Tape.backward`` replays the nodes in exact
reverse creation order, so gradient accumulation is deterministic.  Every
op's backward rule is hand-written here and oracle-checked against central
finite differences in the test suite.

With ``tape=None`` (or a non-recording tape) the same op functions compute
forward values only; inference and finite-difference probes run through
that path with no graph bookkeeping.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from . import wavelet
from .errors import ArgumentError, NumericError, ShapeError
from .wavelet import WaveletKind

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN2 = np.log(2.0)
_PROB_FLOOR = 1e-12


class Var:
    """One node: an ndarray value plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "const", "_backward")

    def __init__(self, data, const: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.const = const
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)


class Tape:
    """Operation tape; nodes are appended in forward evaluation order."""

    def __init__(self, recording: bool = True):
        self.nodes: list[Var] = []
        self.recording = recording

    def backward(self, root: Var) -> None:
        if root.data.shape != ():
            raise ShapeError("backward root must be a scalar")
        if not np.isfinite(root.data):
            raise NumericError("loss is not finite")
        root.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _rec(tape: Tape | None, data: np.ndarray, backward) -> Var:
    out = Var(data)
    if tape is not None and tape.recording:
        out._backward = backward
        tape.nodes.append(out)
    return out


def _acc(p: Var, g: np.ndarray) -> None:
    if p.const:
        return
    if p.grad is None:
        p.grad = np.zeros_like(p.data)
    p.grad += g


def constant(data) -> Var:
    return Var(data, const=True)


# ---------------------------------------------------------------------------
# Elementwise / reduction ops

def add(tape, a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        _acc(a, g)
        _acc(b, g)
    return _rec(tape, a.data + b.data, backward)


def sub(tape, a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        _acc(a, g)
        _acc(b, -g)
    return _rec(tape, a.data - b.data, backward)


def add_const(tape, a: Var, c) -> Var:
    c = np.asarray(c, dtype=np.float64)

    def backward(g):
        _acc(a, g)
    return _rec(tape, a.data + c, backward)


def scale(tape, a: Var, c: float) -> Var:
    c = float(c)

    def backward(g):
        _acc(a, c * g)
    return _rec(tape, a.data * c, backward)


def mul(tape, a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        _acc(a, g * bd)
        _acc(b, g * ad)
    return _rec(tape, ad * bd, backward)


def div(tape, a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"div shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        _acc(a, g / bd)
        _acc(b, -g * ad / (bd * bd))
    return _rec(tape, out, backward)


def exp(tape, a: Var) -> Var:
    out = np.exp(a.data)

    def backward(g):
        _acc(a, g * out)
    return _rec(tape, out, backward)


def log(tape, a: Var) -> Var:
    ad = a.data

    def backward(g):
        _acc(a, g / ad)
    return _rec(tape, np.log(ad), backward)


def tanh(tape, a: Var) -> Var:
    out = np.tanh(a.data)

    def backward(g):
        _acc(a, g * (1.0 - out * out))
    return _rec(tape, out, backward)


def sigmoid(tape, a: Var) -> Var:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _acc(a, g * out * (1.0 - out))
    return _rec(tape, out, backward)


def leaky_relu(tape, a: Var, slope: float = 0.2) -> Var:
    if not (0.0 < slope < 1.0):
        raise ArgumentError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = np.where(a.data >= 0.0, 1.0, slope)

    def backward(g):
        _acc(a, g * mask)
    return _rec(tape, a.data * mask, backward)


def clip(tape, a: Var, lo: float | None, hi: float | None) -> Var:
    ad = a.data
    out = np.clip(ad, lo, hi)
    mask = np.ones_like(ad)
    if lo is not None:
        mask = mask * (ad >= lo)
    if hi is not None:
        mask = mask * (ad <= hi)

    def backward(g):
        _acc(a, g * mask)
    return _rec(tape, out, backward)


def sum_all(tape, a: Var) -> Var:
    shp = a.data.shape

    def backward(g):
        _acc(a, np.broadcast_to(g, shp).copy())
    return _rec(tape, np.asarray(a.data.sum()), backward)


def mean_all(tape, a: Var) -> Var:
    n = a.data.size
    shp = a.data.shape

    def backward(g):
        _acc(a, np.broadcast_to(g / n, shp).copy())
    return _rec(tape, np.asarray(a.data.mean()), backward)


# ---------------------------------------------------------------------------
# Shape ops

def concat(tape, parts: list[Var], axis: int) -> Var:
    datas = [p.data for p in parts]
    sizes = [d.shape[axis] for d in datas]
    out = np.concatenate(datas, axis=axis)

    def backward(g):
        off = 0
        for p, n in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + n)
            _acc(p, g[tuple(idx)])
            off += n
    return _rec(tape, out, backward)


def narrow(tape, a: Var, axis: int, start: int, length: int) -> Var:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(a.data[idx])

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _acc(a, full)
    return _rec(tape, out, backward)


def crop2d(tape, a: Var, r0: int, r1: int, c0: int, c1: int) -> Var:
    """Spatial crop of a (C, H, W) tensor."""
    out = np.ascontiguousarray(a.data[:, r0:r1, c0:c1])

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, r0:r1, c0:c1] = g
        _acc(a, full)
    return _rec(tape, out, backward)


def spatial_mean(tape, a: Var) -> Var:
    """(C, H, W) -> (C, 1, 1) mean over the spatial axes."""
    c, h, w = a.data.shape
    out = a.data.mean(axis=(1, 2), keepdims=True)

    def backward(g):
        _acc(a, np.broadcast_to(g / (h * w), (c, h, w)).copy())
    return _rec(tape, out, backward)


def broadcast_spatial(tape, a: Var, h: int, w: int) -> Var:
    """(C, 1, 1) -> (C, H, W)."""
    c = a.data.shape[0]
    if a.data.shape[1:] != (1, 1):
        raise ShapeError(f"broadcast_spatial expects (C,1,1), got {a.shape}")
    out = np.broadcast_to(a.data, (c, h, w)).copy()

    def backward(g):
        _acc(a, g.sum(axis=(1, 2), keepdims=True))
    return _rec(tape, out, backward)


def avg_pool2(tape, a: Var, f: int = 2) -> Var:
    c, h, w = a.data.shape
    if h % f or w % f:
        raise ShapeError(f"avg_pool2 dims {h}x{w} not divisible by {f}")
    out = a.data.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))

    def backward(g):
        gx = np.repeat(np.repeat(g, f, axis=1), f, axis=2) / (f * f)
        _acc(a, gx)
    return _rec(tape, out, backward)


# ---------------------------------------------------------------------------
# Convolutions

def _conv_fwd(x, w, b, stride, pad):
    ci, h, wd = x.shape
    co, ci2, k, _ = w.shape
    if ci != ci2:
        raise ShapeError(f"conv: input has {ci} channels, kernel expects {ci2}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be empty for input {h}x{wd}, k={k}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    y = np.broadcast_to(b[:, None, None], (co, ho, wo)).copy()
    for di in range(k):
        for dj in range(k):
            xs = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
            y += np.tensordot(w[:, :, di, dj], xs, axes=(1, 0))
    return y, xp


def conv2d(tape, x: Var, w: Var, b: Var, stride: int = 1,
           pad: int | None = None) -> Var:
    """2D convolution, zero padding, same-size output at stride 1.

    Pass ``pad=0`` for valid-mode windows (used by the quality metrics).
    """
    k = w.data.shape[2]
    if pad is None:
        pad = k // 2
    xd, wd_, bd = x.data, w.data, b.data
    if pad == k // 2 and (xd.shape[1] % stride or xd.shape[2] % stride):
        raise ShapeError(
            f"spatial dims {xd.shape[1:]} not divisible by stride {stride}")
    y, xp = _conv_fwd(xd, wd_, bd, stride, pad)
    co, ho, wo = y.shape
    h, wdt = xd.shape[1], xd.shape[2]

    def backward(g):
        _acc(b, g.sum(axis=(1, 2)))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd_)
        for di in range(k):
            for dj in range(k):
                xs = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
                gw[:, :, di, dj] = np.tensordot(g, xs, axes=((1, 2), (1, 2)))
                gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += \
                    np.tensordot(wd_[:, :, di, dj].T, g, axes=(1, 0))
        _acc(w, gw)
        _acc(x, gxp[:, pad:pad + h, pad:pad + wdt] if pad else gxp)
    return _rec(tape, y, backward)


def tconv2d(tape, x: Var, w: Var, b: Var, stride: int = 1) -> Var:
    """Transposed convolution: output spatial dims are exactly stride x input."""
    xd, wd_, bd = x.data, w.data, b.data
    co, ci, k, _ = wd_.shape
    if xd.shape[0] != ci:
        raise ShapeError(f"tconv: input has {xd.shape[0]} channels, kernel expects {ci}")
    pad = k // 2
    h, wdt = xd.shape[1], xd.shape[2]
    ho, wo = h * stride, wdt * stride
    buf = np.zeros((co, ho + k, wo + k))
    for di in range(k):
        for dj in range(k):
            buf[:, di:di + stride * h:stride, dj:dj + stride * wdt:stride] += \
                np.tensordot(wd_[:, :, di, dj], xd, axes=(1, 0))
    y = buf[:, pad:pad + ho, pad:pad + wo] + bd[:, None, None]

    def backward(g):
        _acc(b, g.sum(axis=(1, 2)))
        gbuf = np.zeros_like(buf)
        gbuf[:, pad:pad + ho, pad:pad + wo] = g
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd_)
        for di in range(k):
            for dj in range(k):
                gs = gbuf[:, di:di + stride * h:stride, dj:dj + stride * wdt:stride]
                gx += np.tensordot(wd_[:, :, di, dj].T, gs, axes=(1, 0))
                gw[:, :, di, dj] = np.tensordot(gs, xd, axes=((1, 2), (1, 2)))
        _acc(x, gx)
        _acc(w, gw)
    return _rec(tape, np.ascontiguousarray(y), backward)


# ---------------------------------------------------------------------------
# Wavelet ops (linear; backward = exact adjoint)

def dwt_axis(tape, x: Var, axis: int, kind: WaveletKind) -> Var:
    out = wavelet.analyze_axis(x.data, axis, kind)

    def backward(g):
        _acc(x, wavelet.analyze_axis_adjoint(g, axis, kind))
    return _rec(tape, out, backward)


def idwt_axis(tape, x: Var, axis: int, kind: WaveletKind) -> Var:
    out = wavelet.synthesize_axis(x.data, axis, kind)

    def backward(g):
        _acc(x, wavelet.synthesize_axis_adjoint(g, axis, kind))
    return _rec(tape, out, backward)


# ---------------------------------------------------------------------------
# Conditional-Gaussian rate (continuous relaxation)

def gaussian_bits(tape, v: Var, mu: Var, sigma: Var) -> Var:
    """Elementwise -log2 P(v) under round-to-integer Gaussian mass.

    P = Phi((v - mu + 0.5)/sigma) - Phi((v - mu - 0.5)/sigma), floored at
    1e-12 (clamped entries get zero gradient).  This is the single rate
    model shared by training and the quantized coder tables.
    """
    if not (v.data.shape == mu.data.shape == sigma.data.shape):
        raise ShapeError("gaussian_bits: v, mu, sigma shapes must match")
    sd = sigma.data
    delta = v.data - mu.data
    t1 = (delta + 0.5) / sd
    t0 = (delta - 0.5) / sd
    p = ndtr(t1) - ndtr(t0)
    clamped = p < _PROB_FLOOR
    pc = np.maximum(p, _PROB_FLOOR)
    bits = -np.log2(pc)

    def backward(g):
        phi1 = _INV_SQRT_2PI * np.exp(-0.5 * t1 * t1)
        phi0 = _INV_SQRT_2PI * np.exp(-0.5 * t0 * t0)
        coef = np.where(clamped, 0.0, -g / (pc * _LN2))
        dp_dd = (phi1 - phi0) / sd
        dp_ds = -(phi1 * t1 - phi0 * t0) / sd
        _acc(v, coef * dp_dd)
        _acc(mu, -coef * dp_dd)
        _acc(sigma, coef * dp_ds)
    return _rec(tape, bits, backward)
