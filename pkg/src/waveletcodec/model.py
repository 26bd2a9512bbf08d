"""End-to-end codec model: analysis/synthesis transforms and entropy nets.

The analysis transform downsamples 16x over four stride-2 stages, each a
downsampling layer followed by a residual group; wavelet-domain conv
layers replace the plain downsampling at the configured stages (2 and 3
by default), mirrored in the synthesis transform.  The hyper pair is a
small conv stack.  The hyper-latent is modeled by a per-channel learned
Gaussian prior.

A model file is a parameter checkpoint whose ``meta.config`` record pins
the architecture; loading rebuilds the model from that record and a
64-bit digest of the serialized checkpoint acts as the model checksum
carried in every bitstream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .entropy import TableCache
from .errors import ArgumentError, ConfigError, ParseError
from .nn import Conv2d, ParamStore, ResGroup
from .tensor import SeededRng
from .wavelet import WaveletKind
from .wecharm import WeChARM, build_slice_plan
from .weconv import WeConvConfig, WeConvLayer

DOWNSCALE = 16
PAD_MULTIPLE = 64

PROFILE_IDS = {"toy": 0, "paper": 1, "custom": 255}
WAVELET_IDS = {WaveletKind.HAAR_ORTHONORMAL: 0,
               WaveletKind.LEGALL_5_3_REVERSIBLE: 1,
               WaveletKind.CDF_9_7: 2}
_ID_WAVELETS = {v: k for k, v in WAVELET_IDS.items()}

MSE_LAMBDA_GRID = (0.0025, 0.0035, 0.0067, 0.013, 0.025, 0.05)
MSSSIM_LAMBDA_GRID = (5.0, 8.0, 16.0, 32.0, 64.0)


def lambda_index(lam: float, metric: str) -> int:
    grid = MSE_LAMBDA_GRID if metric == "mse" else MSSSIM_LAMBDA_GRID
    offset = 0 if metric == "mse" else 16
    for i, v in enumerate(grid):
        if abs(lam - v) < 1e-12:
            return offset + i
    return 255


@dataclass(frozen=True)
class ModelConfig:
    profile: str = "toy"
    n: int = 32
    m: int = 64
    hyper_ch: int = 128
    resgroup_blocks: int = 2
    weconv_stages: tuple[int, ...] = (2, 3)
    weconv_levels: int = 2
    hf_kernel: int = 1
    channel_kind: WaveletKind = WaveletKind.HAAR_ORTHONORMAL
    spatial_kind: WaveletKind = WaveletKind.CDF_9_7
    use_channel_dwt: bool = True
    attention: bool = True
    lambda_value: float = 0.013
    metric: str = "mse"
    init_seed: int = 1

    def __post_init__(self):
        if self.m % 4 != 0:
            raise ArgumentError(f"latent channels must be divisible by 4, got {self.m}")
        if self.metric not in ("mse", "msssim"):
            raise ArgumentError(f"unknown metric {self.metric!r}")
        if any(s not in (1, 2, 3, 4) for s in self.weconv_stages):
            raise ArgumentError("weconv stages must be within 1..4")

    def to_vector(self) -> np.ndarray:
        stage_mask = sum(1 << (s - 1) for s in self.weconv_stages)
        return np.array([
            1.0,  # meta format version
            PROFILE_IDS.get(self.profile, 255), self.n, self.m, self.hyper_ch,
            self.resgroup_blocks, stage_mask, self.weconv_levels,
            self.hf_kernel, WAVELET_IDS[self.channel_kind],
            WAVELET_IDS[self.spatial_kind], float(self.use_channel_dwt),
            float(self.attention), self.lambda_value,
            0.0 if self.metric == "mse" else 1.0, self.init_seed,
        ], dtype=np.float64)

    @staticmethod
    def from_vector(vec: np.ndarray) -> "ModelConfig":
        if vec.size != 16 or vec[0] != 1.0:
            raise ParseError("unsupported meta.config record")
        stage_mask = int(vec[6])
        profiles = {v: k for k, v in PROFILE_IDS.items()}
        return ModelConfig(
            profile=profiles.get(int(vec[1]), "custom"),
            n=int(vec[2]), m=int(vec[3]), hyper_ch=int(vec[4]),
            resgroup_blocks=int(vec[5]),
            weconv_stages=tuple(i + 1 for i in range(4) if stage_mask >> i & 1),
            weconv_levels=int(vec[7]), hf_kernel=int(vec[8]),
            channel_kind=_ID_WAVELETS[int(vec[9])],
            spatial_kind=_ID_WAVELETS[int(vec[10])],
            use_channel_dwt=bool(vec[11]), attention=bool(vec[12]),
            lambda_value=float(vec[13]),
            metric="mse" if vec[14] == 0.0 else "msssim",
            init_seed=int(vec[15]),
        )


def toy_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides)


def paper_config(**overrides) -> ModelConfig:
    base = ModelConfig(profile="paper", n=128, m=320, hyper_ch=640,
                       resgroup_blocks=3)
    return replace(base, **overrides)


class CodecModel:
    """Parameter container plus the forward graphs of g_a, g_s, h_a, h_s."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.store = ParamStore()
        rng = SeededRng(cfg.init_seed)
        n, m = cfg.n, cfg.m

        weconv_counter = [0]

        def weconv_name() -> str:
            weconv_counter[0] += 1
            return f"weconv{weconv_counter[0]}"

        def down(idx: int, c_in: int, c_out: int, **conv_kw):
            if idx in cfg.weconv_stages:
                wc = WeConvConfig(c_in, c_out, stride=2,
                                  channel_kind=cfg.channel_kind,
                                  spatial_kind=cfg.spatial_kind,
                                  levels=cfg.weconv_levels,
                                  hf_kernel=cfg.hf_kernel)
                return WeConvLayer(self.store, weconv_name(), wc, rng.spawn(idx))
            return Conv2d(self.store, f"ga.d{idx}", c_in, c_out, 3, stride=2,
                          rng=rng.spawn(idx), **conv_kw)

        def up(idx: int, c_in: int, c_out: int, **conv_kw):
            mirror = 5 - idx
            if mirror in cfg.weconv_stages:
                wc = WeConvConfig(c_in, c_out, stride=2,
                                  channel_kind=cfg.channel_kind,
                                  spatial_kind=cfg.spatial_kind,
                                  levels=cfg.weconv_levels,
                                  hf_kernel=cfg.hf_kernel, transposed=True)
                return WeConvLayer(self.store, weconv_name(), wc, rng.spawn(10 + idx))
            return Conv2d(self.store, f"gs.u{idx}", c_in, c_out, 3, stride=2,
                          transposed=True, rng=rng.spawn(10 + idx), **conv_kw)

        # the final analysis conv opens with a wider fan so the latent sits
        # above the quantization noise from the first iterations; the final
        # synthesis conv opens at mid-gray
        self.ga_layers = [
            down(1, 3, n), ResGroup(self.store, "ga.r1", n, cfg.resgroup_blocks, rng.spawn(21)),
            down(2, n, n), ResGroup(self.store, "ga.r2", n, cfg.resgroup_blocks, rng.spawn(22)),
            down(3, n, n), ResGroup(self.store, "ga.r3", n, cfg.resgroup_blocks, rng.spawn(23)),
            down(4, n, m, init_gain=4.0),
        ]
        self.gs_layers = [
            up(1, m, n), ResGroup(self.store, "gs.r1", n, cfg.resgroup_blocks, rng.spawn(24)),
            up(2, n, n), ResGroup(self.store, "gs.r2", n, cfg.resgroup_blocks, rng.spawn(25)),
            up(3, n, n), ResGroup(self.store, "gs.r3", n, cfg.resgroup_blocks, rng.spawn(26)),
            up(4, n, 3, bias_init=0.5),
        ]
        self.ha1 = Conv2d(self.store, "ha.c1", m, n, 3, rng=rng.spawn(31))
        self.ha2 = Conv2d(self.store, "ha.c2", n, n, 3, stride=2, rng=rng.spawn(32))
        self.ha3 = Conv2d(self.store, "ha.c3", n, n, 3, stride=2, rng=rng.spawn(33))
        self.hs1 = Conv2d(self.store, "hs.t1", n, n, 3, stride=2,
                          transposed=True, rng=rng.spawn(34))
        self.hs2 = Conv2d(self.store, "hs.t2", n, cfg.hyper_ch, 3, stride=2,
                          transposed=True, rng=rng.spawn(35))
        self.prior_mu = self.store.register("prior.mu", np.zeros((n, 1, 1)))
        self.prior_logsig = self.store.register("prior.logsig", np.zeros((n, 1, 1)))

        self.plan = build_slice_plan(m, cfg.use_channel_dwt)
        self.ec = WeChARM(self.store, "ec", self.plan, cfg.hyper_ch,
                          rng.spawn(40), attention=cfg.attention)
        self.store.register("meta.config", cfg.to_vector(), trainable=False)
        self.cache = TableCache()

    # -- forward graphs ------------------------------------------------------

    def g_a(self, tape: Tape | None, x: Var) -> Var:
        h = x
        for layer in self.ga_layers:
            h = layer(tape, h)
        return h

    def g_s(self, tape: Tape | None, y: Var) -> Var:
        h = y
        for layer in self.gs_layers:
            h = layer(tape, h)
        return h

    def h_a(self, tape: Tape | None, y: Var) -> Var:
        h = ad.leaky_relu(tape, self.ha1(tape, y))
        h = ad.leaky_relu(tape, self.ha2(tape, h))
        return self.ha3(tape, h)

    def h_s(self, tape: Tape | None, z: Var) -> Var:
        h = ad.leaky_relu(tape, self.hs1(tape, z))
        return ad.leaky_relu(tape, self.hs2(tape, h))

    def hyper_pooled(self, tape: Tape | None, z: Var) -> Var:
        return ad.avg_pool2(tape, self.h_s(tape, z), 2)

    def z_prior(self, tape: Tape | None, hz: int, wz: int) -> tuple[Var, Var]:
        """Hyper-latent prior (mu, sigma) broadcast to the z spatial dims."""
        from .entropy import SIGMA_MAX, SIGMA_MIN
        import math
        mu = ad.broadcast_spatial(tape, self.prior_mu, hz, wz)
        logsig = ad.clip(tape, self.prior_logsig, math.log(SIGMA_MIN),
                         math.log(SIGMA_MAX))
        sigma = ad.broadcast_spatial(tape, ad.exp(tape, logsig), hz, wz)
        return mu, sigma

    # -- bookkeeping -----------------------------------------------------------

    def param_total(self) -> int:
        return self.store.total_count() - self.store.params["meta.config"].data.size

    def checksum(self) -> int:
        digest = hashlib.blake2b(self.store.serialize(), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def save(self, path) -> None:
        self.store.save(path)

    @classmethod
    def load(cls, path) -> "CodecModel":
        with open(path, "rb") as f:
            values = ParamStore.parse(f.read())
        if "meta.config" not in values:
            raise ConfigError("model file lacks the meta.config record")
        cfg = ModelConfig.from_vector(values["meta.config"])
        model = cls(cfg)
        model.store.load_values(values)
        return model
