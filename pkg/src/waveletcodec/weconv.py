"""3D multi-level wavelet-domain convolution layer and its inverse variant.

Pipeline: leading 3x3 convolution (strided; transposed in the inverse
variant) -> one-level channel DWT splitting the channels into two groups ->
per-group multi-level spatial DWT -> per-subband convolutions, where only
the deepest low-low band gets a 3x3 kernel and every other subband a 1x1
(or 3x3 under the ablation switch) -> inverse spatial and channel DWTs ->
residual shortcut.  The layer's input and output both live in the spatial
domain; only the middle manipulates wavelet coefficients.

Each (group, subband) pair owns independent weights, and subband
convolutions preserve the group's channel count so the inverse DWT stays
well defined.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ArgumentError, ShapeError
from .nn import Conv2d, ConvSpec, ParamStore, param_count
from .tensor import SeededRng
from .wavelet import WaveletKind

_DIFFERENTIABLE = (WaveletKind.HAAR_ORTHONORMAL, WaveletKind.CDF_9_7)


@dataclass(frozen=True)
class WeConvConfig:
    c_in: int
    c_out: int
    stride: int = 1
    channel_kind: WaveletKind = WaveletKind.HAAR_ORTHONORMAL
    spatial_kind: WaveletKind = WaveletKind.CDF_9_7
    levels: int = 2
    hf_kernel: int = 1
    transposed: bool = False

    def __post_init__(self):
        if self.c_out % 2 != 0:
            raise ArgumentError(f"c_out must be even, got {self.c_out}")
        if self.stride not in (1, 2):
            raise ArgumentError(f"stride must be 1 or 2, got {self.stride}")
        if self.levels < 1:
            raise ArgumentError(f"levels must be >= 1, got {self.levels}")
        if self.hf_kernel not in (1, 3):
            raise ArgumentError(f"hf_kernel must be 1 or 3, got {self.hf_kernel}")
        if self.channel_kind not in _DIFFERENTIABLE or \
                self.spatial_kind not in _DIFFERENTIABLE:
            raise ArgumentError(
                "layer wavelets must be Haar or 9/7; the integer-rounded 5/3 "
                "has no gradient")

    @property
    def group_channels(self) -> int:
        return self.c_out // 2


def subband_conv_plan(cfg: WeConvConfig) -> list[tuple[str, str, int, ConvSpec]]:
    """Ordered (group, subband label, kernel, spec) entries for one layer."""
    gch = cfg.group_channels
    plan = []
    for group in ("low", "high"):
        labels = [(f"LL{cfg.levels}", 3)]
        for lvl in range(cfg.levels, 0, -1):
            labels += [(f"LH{lvl}", cfg.hf_kernel), (f"HL{lvl}", cfg.hf_kernel),
                       (f"HH{lvl}", cfg.hf_kernel)]
        for label, k in labels:
            plan.append((group, label, k, ConvSpec(k, 1, gch, gch)))
    return plan


class WeConvLayer:
    """Forward (downsampling) or inverse (upsampling) wavelet-domain conv."""

    def __init__(self, store: ParamStore, name: str, cfg: WeConvConfig,
                 rng: SeededRng):
        self.cfg = cfg
        self.name = name
        self.lead = Conv2d(store, f"{name}.lead", cfg.c_in, cfg.c_out, 3,
                           stride=cfg.stride, transposed=cfg.transposed, rng=rng)
        # subband convs start at zero: the layer opens as its shortcut and
        # the wavelet branch fades in during training
        self.subs: dict[tuple[str, str], Conv2d] = {}
        for group, label, k, _spec in subband_conv_plan(cfg):
            self.subs[(group, label)] = Conv2d(
                store, f"{name}.{group}.{label}", cfg.group_channels,
                cfg.group_channels, k, zero_init=True)
        if cfg.c_in == cfg.c_out and cfg.stride == 1:
            self.shortcut = None
        else:
            self.shortcut = Conv2d(store, f"{name}.shortcut", cfg.c_in,
                                   cfg.c_out, 1, stride=cfg.stride,
                                   transposed=cfg.transposed, rng=rng)

    def n_params(self) -> int:
        n = self.lead.n_params()
        n += sum(param_count(spec) for *_x, spec in subband_conv_plan(self.cfg))
        if self.shortcut is not None:
            n += self.shortcut.n_params()
        return n

    def _check_dims(self, h: int, w: int) -> None:
        cfg = self.cfg
        if cfg.transposed:
            inner_h, inner_w = h * cfg.stride, w * cfg.stride
        else:
            if h % cfg.stride or w % cfg.stride:
                raise ShapeError(f"dims {h}x{w} not divisible by stride {cfg.stride}")
            inner_h, inner_w = h // cfg.stride, w // cfg.stride
        div = 1 << cfg.levels
        if inner_h % div or inner_w % div:
            raise ShapeError(
                f"post-conv dims {inner_h}x{inner_w} not divisible by 2^{cfg.levels}")

    def _spatial(self, tape: Tape | None, u: Var, group: str, level: int) -> Var:
        cfg = self.cfg
        a = ad.dwt_axis(tape, u, 1, cfg.spatial_kind)
        b = ad.dwt_axis(tape, a, 2, cfg.spatial_kind)
        h2, w2 = b.data.shape[1] // 2, b.data.shape[2] // 2
        ll = ad.crop2d(tape, b, 0, h2, 0, w2)
        lh = ad.crop2d(tape, b, 0, h2, w2, 2 * w2)
        hl = ad.crop2d(tape, b, h2, 2 * h2, 0, w2)
        hh = ad.crop2d(tape, b, h2, 2 * h2, w2, 2 * w2)
        if level < cfg.levels:
            ll_out = self._spatial(tape, ll, group, level + 1)
        else:
            ll_out = self.subs[(group, f"LL{cfg.levels}")](tape, ll)
        lh_out = self.subs[(group, f"LH{level}")](tape, lh)
        hl_out = self.subs[(group, f"HL{level}")](tape, hl)
        hh_out = self.subs[(group, f"HH{level}")](tape, hh)
        top = ad.concat(tape, [ll_out, lh_out], axis=2)
        bot = ad.concat(tape, [hl_out, hh_out], axis=2)
        full = ad.concat(tape, [top, bot], axis=1)
        rows = ad.idwt_axis(tape, full, 2, cfg.spatial_kind)
        return ad.idwt_axis(tape, rows, 1, cfg.spatial_kind)

    def __call__(self, tape: Tape | None, x: Var) -> Var:
        cfg = self.cfg
        if x.data.shape[0] != cfg.c_in:
            raise ShapeError(f"expected {cfg.c_in} channels, got {x.data.shape[0]}")
        self._check_dims(x.data.shape[1], x.data.shape[2])
        t = self.lead(tape, x)
        packed = ad.dwt_axis(tape, t, 0, cfg.channel_kind)
        gch = cfg.group_channels
        low = ad.narrow(tape, packed, 0, 0, gch)
        high = ad.narrow(tape, packed, 0, gch, gch)
        low_out = self._spatial(tape, low, "low", 1)
        high_out = self._spatial(tape, high, "high", 1)
        merged = ad.concat(tape, [low_out, high_out], axis=0)
        y = ad.idwt_axis(tape, merged, 0, cfg.channel_kind)
        sc = x if self.shortcut is None else self.shortcut(tape, x)
        return ad.add(tape, y, sc)
