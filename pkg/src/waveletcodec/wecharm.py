"""Slice-sequential entropy model over the 3D wavelet domain.

The latent is transformed by a one-level channel DWT plus a one-level
spatial DWT, giving eight subbands.  The two spatial-LL subbands split
into two slices each and every other subband is one slice, yielding ten
slices coded sequentially from low to high frequency; each slice's
Gaussian parameters are predicted from the hyper features and all
previously coded slices (a per-channel attention gate, then 1x1
convolution stages with two heads), and a latent-residual-prediction net
refines the dequantized slice by a bounded correction.

A degraded fallback without the channel DWT (four spatial subbands, five
slices) is provided for ablation runs; it reuses the same machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .entropy import (SIGMA_MAX, SIGMA_MIN, GaussianParams, TableCache,
                      decode_gaussian, encode_gaussian, quantize)
from .errors import ContractError, ShapeError, StateError
from .nn import Conv2d, ParamStore
from .tensor import SeededRng, Tensor3
from .wavelet import SubbandTensor, WaveletKind, idwt3

_LOG_SIGMA_MIN = math.log(SIGMA_MIN)
_LOG_SIGMA_MAX = math.log(SIGMA_MAX)

#: slice coding order for the 3D (channel DWT) plan
SLICE_ORDER_3D = ("LLL:0", "LLL:1", "HLL:0", "HLL:1",
                  "LLH", "LHL", "LHH", "HLH", "HHL", "HHH")
#: coding order for the no-channel-DWT fallback
SLICE_ORDER_2D = ("LL:0", "LL:1", "LH", "HL", "HH")


@dataclass(frozen=True)
class SliceSpec:
    index: int
    subband: str
    channel_start: int
    channel_stop: int

    @property
    def channels(self) -> int:
        return self.channel_stop - self.channel_start


@dataclass(frozen=True)
class SlicePlan:
    latent_channels: int
    use_channel_dwt: bool
    slices: tuple[SliceSpec, ...]

    @property
    def subband_channels(self) -> int:
        return self.latent_channels // (2 if self.use_channel_dwt else 1)

    def slices_of_subband(self, subband: str) -> list[SliceSpec]:
        return [s for s in self.slices if s.subband == subband]

    @property
    def subband_order(self) -> tuple[str, ...]:
        seen: list[str] = []
        for s in self.slices:
            if s.subband not in seen:
                seen.append(s.subband)
        return tuple(seen)


def build_slice_plan(m: int, use_channel_dwt: bool = True) -> SlicePlan:
    """The ordered slice partition for a latent with ``m`` channels."""
    if use_channel_dwt:
        if m % 4 != 0:
            raise ShapeError(f"latent channels must be divisible by 4, got {m}")
        sub = m // 2
        order = SLICE_ORDER_3D
    else:
        if m % 2 != 0:
            raise ShapeError(f"latent channels must be even, got {m}")
        sub = m
        order = SLICE_ORDER_2D
    specs = []
    for i, token in enumerate(order):
        if ":" in token:
            band, part = token.split(":")
            half = sub // 2
            start = int(part) * half
            specs.append(SliceSpec(i, band, start, start + half))
        else:
            specs.append(SliceSpec(i, token, 0, sub))
    return SlicePlan(m, use_channel_dwt, tuple(specs))


def partition_slices(sb: SubbandTensor, m: int) -> tuple[SlicePlan, list[np.ndarray]]:
    """Split a one-level 3D decomposition into the ordered slice tensors."""
    if sb.levels != 1:
        raise ShapeError("slice partition expects one spatial level")
    plan = build_slice_plan(m, use_channel_dwt=True)
    if sb.low.ll.shape[0] * 2 != m:
        raise ShapeError(
            f"subband channel count {sb.low.ll.shape[0]} does not match M={m}")
    out = [np.ascontiguousarray(
        sb.subband(s.subband)[s.channel_start:s.channel_stop])
        for s in plan.slices]
    return plan, out


def assemble_subbands(plan: SlicePlan, slices: list[np.ndarray],
                      channel_kind: WaveletKind, spatial_kind: WaveletKind
                      ) -> SubbandTensor:
    """Inverse of partition_slices (3D plan only)."""
    if len(slices) != len(plan.slices):
        raise StateError(f"need {len(plan.slices)} slices, got {len(slices)}")
    bands: dict[str, np.ndarray] = {}
    for band in plan.subband_order:
        parts = [slices[s.index] for s in plan.slices_of_subband(band)]
        bands[band] = np.concatenate(parts, axis=0)
    groups = {}
    for g in ("L", "H"):
        from .wavelet import Pyramid2D
        groups[g] = Pyramid2D(
            ll=bands[g + "LL"],
            details=[(bands[g + "LH"], bands[g + "HL"], bands[g + "HH"])])
    return SubbandTensor(channel_kind=channel_kind, spatial_kind=spatial_kind,
                         levels=1, low=groups["L"], high=groups["H"])


def reconstruct_latent(slices: list[np.ndarray], plan: SlicePlan, m: int,
                       channel_kind: WaveletKind,
                       spatial_kind: WaveletKind) -> Tensor3:
    """Reassemble refined slices and invert the 3D DWT back to the latent."""
    if plan.latent_channels != m:
        raise StateError("plan/latent channel mismatch")
    sb = assemble_subbands(plan, slices, channel_kind, spatial_kind)
    return idwt3(sb)


# ---------------------------------------------------------------------------
# slice networks

class SliceCoder:
    """Parameter prediction (attention gate + 1x1 stages + two heads) and
    latent-residual refinement for one slice."""

    def __init__(self, store: ParamStore, name: str, ctx_ch: int,
                 slice_ch: int, rng: SeededRng, attention: bool = True):
        hidden = 2 * slice_ch
        self.ctx_ch = ctx_ch
        self.slice_ch = slice_ch
        self.attention = attention
        if attention:
            self.att = Conv2d(store, f"{name}.att", ctx_ch, ctx_ch, 1,
                              zero_init=True)
        self.pn1 = Conv2d(store, f"{name}.pn1", ctx_ch, hidden, 1, rng=rng)
        self.pn2 = Conv2d(store, f"{name}.pn2", hidden, hidden, 1, rng=rng)
        self.head_mu = Conv2d(store, f"{name}.mu", hidden, slice_ch, 1,
                              zero_init=True)
        self.head_sig = Conv2d(store, f"{name}.sig", hidden, slice_ch, 1,
                               zero_init=True)
        self.lrp1 = Conv2d(store, f"{name}.lrp1", ctx_ch + slice_ch, hidden, 1,
                           rng=rng)
        self.lrp2 = Conv2d(store, f"{name}.lrp2", hidden, slice_ch, 1,
                           zero_init=True)

    def _gate(self, tape, ctx: Var) -> Var:
        if not self.attention:
            return ctx
        pooled = ad.spatial_mean(tape, ctx)
        gate = ad.sigmoid(tape, self.att(tape, pooled))
        h, w = ctx.data.shape[1], ctx.data.shape[2]
        return ad.mul(tape, ctx, ad.broadcast_spatial(tape, gate, h, w))

    def predict(self, tape: Tape | None, ctx: Var) -> tuple[Var, Var]:
        if ctx.data.shape[0] != self.ctx_ch:
            raise ContractError(
                f"context has {ctx.data.shape[0]} channels, expected {self.ctx_ch}"
                " (non-causal or mis-ordered context)")
        h = self._gate(tape, ctx)
        h = ad.leaky_relu(tape, self.pn1(tape, h))
        h = ad.leaky_relu(tape, self.pn2(tape, h))
        mu = self.head_mu(tape, h)
        sigma = ad.exp(tape, ad.clip(tape, self.head_sig(tape, h),
                                     _LOG_SIGMA_MIN, _LOG_SIGMA_MAX))
        return mu, sigma

    def refine(self, tape: Tape | None, ctx: Var, dequant: Var) -> Var:
        if dequant.data.shape[0] != self.slice_ch:
            raise ShapeError(
                f"slice has {dequant.data.shape[0]} channels, expected {self.slice_ch}")
        h = ad.concat(tape, [self._gate(tape, ctx), dequant], axis=0)
        h = ad.leaky_relu(tape, self.lrp1(tape, h))
        r = self.lrp2(tape, h)
        return ad.add(tape, dequant, ad.scale(tape, ad.tanh(tape, r), 0.5))


class WeChARM:
    """All ten (or five, in the fallback) slice coders plus the sequential
    encode/decode and training-rate paths."""

    def __init__(self, store: ParamStore, name: str, plan: SlicePlan,
                 hyper_ch: int, rng: SeededRng, attention: bool = True):
        self.plan = plan
        self.hyper_ch = hyper_ch
        self.coders: list[SliceCoder] = []
        ctx_ch = hyper_ch
        for spec in plan.slices:
            self.coders.append(SliceCoder(
                store, f"{name}.slice{spec.index}", ctx_ch, spec.channels,
                rng.spawn(spec.index), attention=attention))
            ctx_ch += spec.channels

    def _context(self, tape, hyper: Var, prev: list[Var], k: int) -> Var:
        if len(prev) != k:
            raise ContractError(
                f"slice {k} context must contain exactly {k} prior slices, "
                f"got {len(prev)}")
        return ad.concat(tape, [hyper] + prev, axis=0) if prev else hyper

    def predict_slice_params(self, tape, hyper: Var, prev: list[Var],
                             k: int) -> tuple[Var, Var]:
        ctx = self._context(tape, hyper, prev, k)
        return self.coders[k].predict(tape, ctx)

    def lrp_refine(self, tape, hyper: Var, prev: list[Var], k: int,
                   dequant: Var) -> Var:
        ctx = self._context(tape, hyper, prev, k)
        return self.coders[k].refine(tape, ctx, dequant)

    # -- inference ---------------------------------------------------------

    def sequential_encode(self, slices: list[np.ndarray], hyper: np.ndarray,
                          cache: TableCache) -> tuple[list[bytes], list[np.ndarray]]:
        """Encode all slices; returns chunks and the refined slices the
        decoder will reproduce bit-exactly."""
        hyper_v = Var(hyper)
        refined: list[Var] = []
        chunks: list[bytes] = []
        for k, spec in enumerate(self.plan.slices):
            raw = slices[k]
            if raw.shape[0] != spec.channels:
                raise ShapeError(f"slice {k} has {raw.shape[0]} channels, "
                                 f"expected {spec.channels}")
            mu, sigma = self.predict_slice_params(None, hyper_v, refined, k)
            sym, deq = quantize(raw, mu.data, "inference")
            params = GaussianParams(mu.data, sigma.data)
            chunks.append(encode_gaussian(sym.reshape(-1), params, cache))
            refined.append(self.lrp_refine(None, hyper_v, refined, k, Var(deq)))
        return chunks, [r.data for r in refined]

    def sequential_decode(self, chunks: list[bytes], hyper: np.ndarray,
                          slice_shapes: list[tuple[int, int, int]],
                          cache: TableCache,
                          partial: bool = False) -> list[np.ndarray]:
        """Decode slices in order; with ``partial`` stop quietly at the
        first broken chunk and return the causally valid prefix."""
        hyper_v = Var(hyper)
        refined: list[Var] = []
        for k, _spec in enumerate(self.plan.slices):
            try:
                mu, sigma = self.predict_slice_params(None, hyper_v, refined, k)
                shape = slice_shapes[k]
                params = GaussianParams(mu.data, sigma.data)
                sym = decode_gaussian(chunks[k], params, cache,
                                      int(np.prod(shape))).reshape(shape)
                deq = sym + mu.data
                refined.append(self.lrp_refine(None, hyper_v, refined, k, Var(deq)))
            except Exception:
                if partial:
                    return [r.data for r in refined]
                raise
        return [r.data for r in refined]

    # -- training ----------------------------------------------------------

    def training_pass(self, tape: Tape, slices: list[Var], hyper: Var,
                      rng: SeededRng) -> tuple[list[Var], list[Var]]:
        """Noise-surrogate pass: returns refined slices and per-slice bits."""
        refined: list[Var] = []
        bits: list[Var] = []
        for k, spec in enumerate(self.plan.slices):
            mu, sigma = self.predict_slice_params(tape, hyper, refined, k)
            noise = rng.uniform(slices[k].data.shape, -0.5, 0.5)
            noisy = ad.add_const(tape, slices[k], noise)
            bits.append(ad.sum_all(tape, ad.gaussian_bits(tape, noisy, mu, sigma)))
            refined.append(self.lrp_refine(tape, hyper, refined, k, noisy))
        return refined, bits


# ---------------------------------------------------------------------------
# Var-graph forms of the 3D DWT partition, used by the end-to-end model so
# gradients flow from the rate terms back into the analysis network.

def _spatial_bands_var(tape, group: Var, kind: WaveletKind) -> dict[str, Var]:
    s1 = ad.dwt_axis(tape, group, 1, kind)
    s2 = ad.dwt_axis(tape, s1, 2, kind)
    h2, w2 = s2.data.shape[1] // 2, s2.data.shape[2] // 2
    return {
        "LL": ad.crop2d(tape, s2, 0, h2, 0, w2),
        "LH": ad.crop2d(tape, s2, 0, h2, w2, 2 * w2),
        "HL": ad.crop2d(tape, s2, h2, 2 * h2, 0, w2),
        "HH": ad.crop2d(tape, s2, h2, 2 * h2, w2, 2 * w2),
    }


def extract_slices_var(tape, y: Var, plan: SlicePlan,
                       channel_kind: WaveletKind,
                       spatial_kind: WaveletKind) -> list[Var]:
    """3D (or spatial-only) DWT of the latent followed by the slice split."""
    m = y.data.shape[0]
    if m != plan.latent_channels:
        raise ShapeError(f"latent has {m} channels, plan expects {plan.latent_channels}")
    bands: dict[str, Var] = {}
    if plan.use_channel_dwt:
        packed = ad.dwt_axis(tape, y, 0, channel_kind)
        sub = m // 2
        for g, off in (("L", 0), ("H", sub)):
            gv = ad.narrow(tape, packed, 0, off, sub)
            for sp, band in _spatial_bands_var(tape, gv, spatial_kind).items():
                bands[g + sp] = band
    else:
        bands = _spatial_bands_var(tape, y, spatial_kind)
    return [ad.narrow(tape, bands[s.subband], 0, s.channel_start, s.channels)
            for s in plan.slices]


def _assemble_group_var(tape, bands: dict[str, Var], prefix: str,
                        kind: WaveletKind) -> Var:
    top = ad.concat(tape, [bands[prefix + "LL"], bands[prefix + "LH"]], axis=2)
    bot = ad.concat(tape, [bands[prefix + "HL"], bands[prefix + "HH"]], axis=2)
    full = ad.concat(tape, [top, bot], axis=1)
    rows = ad.idwt_axis(tape, full, 2, kind)
    return ad.idwt_axis(tape, rows, 1, kind)


def assemble_latent_var(tape, slices: list[Var], plan: SlicePlan,
                        channel_kind: WaveletKind,
                        spatial_kind: WaveletKind) -> Var:
    """Inverse of extract_slices_var back to the spatial-domain latent."""
    if len(slices) != len(plan.slices):
        raise StateError(f"need {len(plan.slices)} slices, got {len(slices)}")
    bands: dict[str, Var] = {}
    for band in plan.subband_order:
        parts = [slices[s.index] for s in plan.slices_of_subband(band)]
        bands[band] = parts[0] if len(parts) == 1 else ad.concat(tape, parts, axis=0)
    if plan.use_channel_dwt:
        low = _assemble_group_var(tape, bands, "L", spatial_kind)
        high = _assemble_group_var(tape, bands, "H", spatial_kind)
        merged = ad.concat(tape, [low, high], axis=0)
        return ad.idwt_axis(tape, merged, 0, channel_kind)
    return _assemble_group_var(tape, bands, "", spatial_kind)
