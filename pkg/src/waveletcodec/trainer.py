"""Two-stage rate-distortion training and the subband bit-allocation report.

Stage 1 minimizes lambda * D + sum of subband rates + hyper rate; stage 2
reweights the two spatial-LF subband rates by w1 and the six HF subband
rates by w2 (w1 > w2 > 0), with rates in bits per pixel.  MSE distortion
is measured in 8-bit pixel units (255^2 times the mean squared error of
the [0,1]-normalized tensors), which is the scale the lambda grid
expects; the MS-SSIM objective uses 1 - MS-SSIM directly.

Quantization is approximated by additive uniform noise during training,
and the rate terms evaluate the same conditional-Gaussian mass the coder
tables are built from, so the training rate and the coded rate share one
model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .bitstream import HEADER_LEN, parse_header, read_chunks
from .errors import ArgumentError, ContractError, NumericError
from .metrics import MS_SSIM_MIN_DIM, ms_ssim, ms_ssim_db, psnr, ms_ssim_var
from .model import CodecModel
from .nn import adam_step
from .pipeline import encode_image_details, decode_image_details, _normalize
from .tensor import SeededRng
from .wecharm import extract_slices_var, assemble_latent_var

MSE_PIXEL_SCALE = 255.0 ** 2

LF_SUBBANDS_3D = ("LLL", "HLL")
LF_SUBBANDS_2D = ("LL",)


@dataclass
class TrainConfig:
    lam: float = 0.013
    metric: str = "mse"
    stage: int = 1
    w1: float = 1.2
    w2: float = 0.8
    iterations: int = 2000
    batch_size: int = 1
    lr: float = 1e-4
    seed: int = 42
    crop_size: int = 64

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ArgumentError(f"stage must be 1 or 2, got {self.stage}")
        if self.stage == 2 and not (self.w1 > self.w2 > 0.0):
            raise ArgumentError(
                f"stage 2 requires w1 > w2 > 0, got w1={self.w1}, w2={self.w2}")
        if self.metric not in ("mse", "msssim"):
            raise ArgumentError(f"unknown metric {self.metric!r}")
        if self.crop_size % 64 != 0:
            raise ArgumentError(f"crop size must be a multiple of 64, got {self.crop_size}")


def rd_loss_terms(tape, d: Var, subband_bpp: dict[str, Var], z_bpp: Var,
                  cfg: TrainConfig, lf_subbands=LF_SUBBANDS_3D) -> Var:
    """Assemble the scalar loss from precomputed distortion and bpp terms."""
    for name, r in list(subband_bpp.items()) + [("z", z_bpp)]:
        if float(r.data) < 0.0:
            raise ContractError(f"negative rate for {name}: {float(r.data)}")
    loss = ad.scale(tape, d, cfg.lam)
    loss = ad.add(tape, loss, z_bpp)
    for band, r in subband_bpp.items():
        if cfg.stage == 2:
            w = cfg.w1 if band in lf_subbands else cfg.w2
            r = ad.scale(tape, r, w)
        loss = ad.add(tape, loss, r)
    return loss


def rd_loss(x: np.ndarray, xhat: np.ndarray, subband_bpp: dict[str, float],
            z_bpp: float, cfg: TrainConfig) -> float:
    """Loss value for plain arrays; same term math as the training graph."""
    d = distortion(None, Var(np.asarray(x, dtype=np.float64)),
                   Var(np.asarray(xhat, dtype=np.float64)), cfg.metric)
    bands = {k: Var(np.asarray(v, dtype=np.float64))
             for k, v in subband_bpp.items()}
    lf = LF_SUBBANDS_3D if any(len(k) == 3 for k in subband_bpp) else LF_SUBBANDS_2D
    return float(rd_loss_terms(None, d, bands,
                               Var(np.asarray(z_bpp, dtype=np.float64)),
                               cfg, lf).data)


def distortion(tape, x: Var, xhat: Var, metric: str) -> Var:
    if metric == "mse":
        diff = ad.sub(tape, x, xhat)
        return ad.scale(tape, ad.mean_all(tape, ad.mul(tape, diff, diff)),
                        MSE_PIXEL_SCALE)
    if metric == "msssim":
        one = Var(np.asarray(1.0), const=True)
        return ad.sub(tape, one, ms_ssim_var(tape, x, xhat))
    raise ArgumentError(f"unknown metric {metric!r}")


@dataclass
class TraceRow:
    iteration: int
    loss: float
    distortion: float
    bpp_latent: float
    bpp_z: float


@dataclass
class TrainResult:
    trace: list[TraceRow] = field(default_factory=list)

    def moving_average(self, window: int = 100):
        vals = np.array([r.loss for r in self.trace])
        if vals.size < window:
            raise ArgumentError(f"trace shorter than window {window}")
        kernel = np.ones(window) / window
        return np.convolve(vals, kernel, mode="valid")


def _training_graph(model: CodecModel, crop: np.ndarray, cfg: TrainConfig,
                    rng: SeededRng, tape: Tape):
    """One crop's forward pass; returns (loss terms dict, loss Var)."""
    x = Var(_normalize(crop))
    npix = crop.shape[1] * crop.shape[2]
    y = model.g_a(tape, x)
    z = model.h_a(tape, y)
    z_noisy = ad.add_const(tape, z, rng.uniform(z.data.shape, -0.5, 0.5))
    mu_z, sigma_z = model.z_prior(tape, z.data.shape[1], z.data.shape[2])
    z_bits = ad.sum_all(tape, ad.gaussian_bits(tape, z_noisy, mu_z, sigma_z))
    hyper = model.hyper_pooled(tape, z_noisy)
    slices = extract_slices_var(tape, y, model.plan, model.cfg.channel_kind,
                                model.cfg.spatial_kind)
    refined, slice_bits = model.ec.training_pass(tape, slices, hyper, rng)
    yhat = assemble_latent_var(tape, refined, model.plan,
                               model.cfg.channel_kind, model.cfg.spatial_kind)
    xhat = model.g_s(tape, yhat)
    d = distortion(tape, x, xhat, cfg.metric)

    subband_bpp: dict[str, Var] = {}
    for band in model.plan.subband_order:
        total = None
        for spec in model.plan.slices_of_subband(band):
            b = slice_bits[spec.index]
            total = b if total is None else ad.add(tape, total, b)
        subband_bpp[band] = ad.scale(tape, total, 1.0 / npix)
    z_bpp = ad.scale(tape, z_bits, 1.0 / npix)
    lf = LF_SUBBANDS_3D if model.plan.use_channel_dwt else LF_SUBBANDS_2D
    loss = rd_loss_terms(tape, d, subband_bpp, z_bpp, cfg, lf)
    return loss, d, subband_bpp, z_bpp


def train_loop(model: CodecModel, crops: list[np.ndarray], cfg: TrainConfig,
               log_every: int = 0) -> TrainResult:
    """Adam-driven training over a fixed crop set, deterministic in the seed."""
    if not crops:
        raise ArgumentError("empty training set")
    for c in crops:
        if c.shape[1] % 64 or c.shape[2] % 64:
            raise ArgumentError(f"crop dims {c.shape} must be multiples of 64")
    rng = SeededRng(cfg.seed)
    result = TrainResult()
    t0 = time.time()
    for it in range(1, cfg.iterations + 1):
        model.store.zero_grads()
        tape = Tape()
        losses, ds, lat_bpps, z_bpps = [], [], [], []
        for b in range(cfg.batch_size):
            crop = crops[((it - 1) * cfg.batch_size + b) % len(crops)]
            loss_b, d_b, bands_b, z_bpp_b = _training_graph(
                model, crop, cfg, rng, tape)
            losses.append(loss_b)
            ds.append(float(d_b.data))
            lat_bpps.append(sum(float(v.data) for v in bands_b.values()))
            z_bpps.append(float(z_bpp_b.data))
        loss = losses[0]
        for l in losses[1:]:
            loss = ad.add(tape, loss, l)
        if cfg.batch_size > 1:
            loss = ad.scale(tape, loss, 1.0 / cfg.batch_size)
        if not np.isfinite(loss.data):
            raise NumericError(
                f"iteration {it}: loss non-finite "
                f"(D={ds}, bpp_latent={lat_bpps}, bpp_z={z_bpps})")
        tape.backward(loss)
        if not model.store.grads_finite():
            raise NumericError(f"iteration {it}: non-finite gradient")
        adam_step(model.store, lr=cfg.lr, t=it)
        result.trace.append(TraceRow(it, float(loss.data), float(np.mean(ds)),
                                     float(np.mean(lat_bpps)),
                                     float(np.mean(z_bpps))))
        if log_every and it % log_every == 0:
            r = result.trace[-1]
            print(f"iter {it:5d}  loss {r.loss:9.4f}  D {r.distortion:9.5f}  "
                  f"bpp {r.bpp_latent:7.4f}+{r.bpp_z:6.4f}  "
                  f"[{time.time() - t0:6.1f}s]", flush=True)
    return result


# ---------------------------------------------------------------------------
# subband bit-allocation report

@dataclass
class RDReport:
    rows: list[tuple[str, float, float]]   # (label, bpp, percent)
    total_bpp: float
    container_bpp: float
    psnr_db: float | None = None
    msssim: float | None = None
    msssim_db: float | None = None

    def to_tsv(self) -> str:
        lines = ["component\tbpp\tpercent"]
        for label, bpp, pct in self.rows:
            lines.append(f"{label}\t{bpp:.6f}\t{pct:.1f}%")
        lines.append(f"total\t{self.total_bpp:.6f}\t100.0%")
        lines.append(f"container_bpp\t{self.container_bpp:.6f}\t")
        if self.psnr_db is not None:
            lines.append(f"psnr_db\t{self.psnr_db:.4f}\t")
        if self.msssim_db is not None:
            lines.append(f"msssim_db\t{self.msssim_db:.4f}\t")
        return "\n".join(lines) + "\n"


def report_subbands(model: CodecModel, image: np.ndarray | None = None,
                    bitstream: bytes | None = None,
                    reference: np.ndarray | None = None) -> RDReport:
    """Per-subband bpp/percent rows from actual chunk lengths, plus quality
    metrics against the reference when one is available."""
    if bitstream is None:
        if image is None:
            raise ArgumentError("need an image or a bitstream")
        res = encode_image_details(image, model)
        bitstream = res.bitstream
        recon = res.reconstruction
        if reference is None:
            reference = image
    else:
        _h, _y, recon = decode_image_details(bitstream, model)
    header = parse_header(bitstream)
    npix = header.width * header.height
    chunks = read_chunks(bitstream, HEADER_LEN, 1 + len(model.plan.slices))
    z_bits = len(chunks[0]) * 8
    slice_bits = [len(c) * 8 for c in chunks[1:]]
    rows = []
    total_bits = z_bits + sum(slice_bits)
    for band in model.plan.subband_order:
        bits = sum(slice_bits[s.index] for s in model.plan.slices_of_subband(band))
        rows.append((band, bits / npix, 100.0 * bits / total_bits))
    rows.append(("zhat", z_bits / npix, 100.0 * z_bits / total_bits))
    report = RDReport(rows=rows, total_bpp=total_bits / npix,
                      container_bpp=len(bitstream) * 8 / npix)
    if reference is not None:
        ref = _normalize(reference)
        dec = _normalize(recon)
        report.psnr_db = psnr(ref, dec)
        if min(ref.shape[1], ref.shape[2]) >= MS_SSIM_MIN_DIM:
            report.msssim = ms_ssim(ref, dec)
            report.msssim_db = ms_ssim_db(report.msssim)
    return report


def lf_bit_share(report: RDReport, lf_subbands=LF_SUBBANDS_3D) -> float:
    """Fraction of latent bits spent on the LF subbands (hyper excluded)."""
    lf = sum(bpp for label, bpp, _p in report.rows if label in lf_subbands)
    latent = sum(bpp for label, bpp, _p in report.rows if label != "zhat")
    return lf / latent if latent > 0 else 0.0


def make_synthetic_crops(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Smooth, compressible RGB crops for desk-scale training runs."""
    rng = SeededRng(seed)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    crops = []
    for _ in range(count):
        img = np.zeros((3, size, size))
        for ch in range(3):
            plane = np.zeros((size, size))
            for _k in range(4):
                fx, fy = rng.uniform((2,), 0.3, 2.5)
                phase = rng.uniform((2,), 0, 2 * np.pi)
                amp = rng.uniform((1,), 0.1, 0.5)[0]
                plane += amp * np.cos(2 * np.pi * (fx * ii / size + fy * jj / size)
                                      + phase[0])
            cx, cy = rng.uniform((2,), 0.2 * size, 0.8 * size)
            r = rng.uniform((1,), 0.1 * size, 0.4 * size)[0]
            blob = np.exp(-((ii - cx) ** 2 + (jj - cy) ** 2) / (2 * r * r))
            plane += rng.uniform((1,), 0.3, 0.9)[0] * blob
            lo, hi = plane.min(), plane.max()
            img[ch] = 0.08 + 0.84 * (plane - lo) / max(hi - lo, 1e-9)
        crops.append(np.rint(img * 255.0).astype(np.uint8))
    return crops
