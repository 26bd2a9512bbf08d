"""Image encode/decode: padding, forward passes, entropy coding, container.

The encoder runs the decoder's slice path internally, so the refined
latent it hands to the synthesis transform is bit-identical to what the
decoder reconstructs; fixed model plus fixed input therefore yields a
byte-identical bitstream and pixel-identical reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var
from .bitstream import (HEADER_LEN, BitstreamHeader, parse_header,
                        read_chunks, serialize_header, write_chunks)
from .entropy import GaussianParams, decode_gaussian, encode_gaussian, quantize
from .errors import ConfigError, ShapeError
from .model import (DOWNSCALE, PAD_MULTIPLE, PROFILE_IDS, WAVELET_IDS,
                    CodecModel, lambda_index)
from .wecharm import assemble_latent_var, extract_slices_var


def pad_image(x: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Replicate-pad (3, H, W) to the next multiple on both spatial axes."""
    _c, h, w = x.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")


def _normalize(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) uint8 image, got {img.dtype} {img.shape}")
    return img.astype(np.float64) / 255.0


def _denormalize(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def latent_dims(model: CodecModel, width: int, height: int):
    """Padded, latent, hyper-latent, and slice dims implied by the header."""
    wp = width + (PAD_MULTIPLE - width % PAD_MULTIPLE) % PAD_MULTIPLE
    hp = height + (PAD_MULTIPLE - height % PAD_MULTIPLE) % PAD_MULTIPLE
    hl, wl = hp // DOWNSCALE, wp // DOWNSCALE
    hz, wz = hl // 4, wl // 4
    shapes = [(s.channels, hl // 2, wl // 2) for s in model.plan.slices]
    return (hp, wp), (hl, wl), (hz, wz), shapes


@dataclass
class EncodeResult:
    bitstream: bytes
    header: BitstreamHeader
    z_chunk: bytes
    slice_chunks: list[bytes]
    refined_latent: np.ndarray      # what the decoder will reconstruct
    reconstruction: np.ndarray      # decoded uint8 image (cropped)


def _header_for(model: CodecModel, width: int, height: int) -> BitstreamHeader:
    cfg = model.cfg
    return BitstreamHeader(
        wavelet_id=WAVELET_IDS[cfg.spatial_kind],
        spatial_levels=1,
        profile_id=PROFILE_IDS.get(cfg.profile, 255),
        width=width, height=height,
        lambda_index=lambda_index(cfg.lambda_value, cfg.metric),
        model_checksum=model.checksum(),
    )


def encode_image_details(img: np.ndarray, model: CodecModel) -> EncodeResult:
    """Full encode that also returns the decoder-identical internals."""
    x = _normalize(img)
    _c, height, width = img.shape
    xp = pad_image(x)
    y = model.g_a(None, Var(xp))
    z = model.h_a(None, y)
    hz, wz = z.data.shape[1], z.data.shape[2]
    mu_z, sigma_z = model.z_prior(None, hz, wz)
    z_sym, z_hat = quantize(z.data, mu_z.data, "inference")
    z_chunk = encode_gaussian(z_sym.reshape(-1),
                              GaussianParams(mu_z.data, sigma_z.data),
                              model.cache)
    hyper = model.hyper_pooled(None, Var(z_hat))
    slices = [s.data for s in extract_slices_var(
        None, y, model.plan, model.cfg.channel_kind, model.cfg.spatial_kind)]
    chunks, refined = model.ec.sequential_encode(slices, hyper.data, model.cache)
    yhat = assemble_latent_var(None, [Var(r) for r in refined], model.plan,
                               model.cfg.channel_kind, model.cfg.spatial_kind)
    xhat = model.g_s(None, yhat)
    recon = _denormalize(xhat.data)[:, :height, :width]
    header = _header_for(model, width, height)
    bitstream = serialize_header(header) + write_chunks([z_chunk] + chunks)
    return EncodeResult(bitstream, header, z_chunk, chunks, yhat.data, recon)


def encode_image(img: np.ndarray, model: CodecModel) -> bytes:
    return encode_image_details(img, model).bitstream


def check_header(header: BitstreamHeader, model: CodecModel) -> None:
    if header.model_checksum != model.checksum():
        raise ConfigError("bitstream was produced by a different model "
                          "(checksum mismatch)")
    if header.profile_id != PROFILE_IDS.get(model.cfg.profile, 255):
        raise ConfigError("bitstream profile does not match the loaded model")


def decode_image_details(bitstream: bytes, model: CodecModel):
    header = parse_header(bitstream)
    check_header(header, model)
    (_hp, _wp), (hl, wl), (hz, wz), shapes = latent_dims(
        model, header.width, header.height)
    chunks = read_chunks(bitstream, HEADER_LEN, 1 + len(model.plan.slices))
    z_chunk, slice_chunks = chunks[0], chunks[1:]
    mu_z, sigma_z = model.z_prior(None, hz, wz)
    n = model.cfg.n
    z_sym = decode_gaussian(z_chunk, GaussianParams(mu_z.data, sigma_z.data),
                            model.cache, n * hz * wz).reshape(n, hz, wz)
    z_hat = z_sym + mu_z.data
    hyper = model.hyper_pooled(None, Var(z_hat))
    refined = model.ec.sequential_decode(slice_chunks, hyper.data, shapes,
                                         model.cache)
    yhat = assemble_latent_var(None, [Var(r) for r in refined], model.plan,
                               model.cfg.channel_kind, model.cfg.spatial_kind)
    xhat = model.g_s(None, yhat)
    img = _denormalize(xhat.data)[:, :header.height, :header.width]
    return header, yhat.data, img


def decode_image(bitstream: bytes, model: CodecModel) -> np.ndarray:
    _header, _yhat, img = decode_image_details(bitstream, model)
    return img
