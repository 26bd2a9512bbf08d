import numpy as np
import pytest

from waveletcodec.bitstream import (HEADER_LEN, BitstreamHeader, parse_header,
                                    read_chunks, serialize_header, write_chunks)
from waveletcodec.errors import ConfigError, IOFormatError, ParseError
from waveletcodec.imageio import read_image, read_ppm, write_image, write_ppm
from waveletcodec.model import CodecModel, paper_config, toy_config
from waveletcodec.pipeline import (decode_image, decode_image_details,
                                   encode_image, encode_image_details,
                                   latent_dims, pad_image)
from waveletcodec.tensor import SeededRng
from waveletcodec.trainer import make_synthetic_crops


@pytest.fixture(scope="module")
def toy_model():
    return CodecModel(toy_config())


@pytest.fixture(scope="module")
def crop():
    return make_synthetic_crops(1, 64, seed=77)[0]


# ---------------------------------------------------------------------------
# header and container

def test_header_roundtrip_and_length():
    h = BitstreamHeader(wavelet_id=2, spatial_levels=1, profile_id=0,
                        width=68, height=61, lambda_index=3,
                        model_checksum=0x0123456789ABCDEF)
    blob = serialize_header(h)
    assert len(blob) == HEADER_LEN == 25
    assert parse_header(blob) == h


def test_header_rejects_bad_magic_and_version():
    h = BitstreamHeader(2, 1, 0, 8, 8, 0, 1)
    blob = bytearray(serialize_header(h))
    blob[0] = ord("X")
    with pytest.raises(ParseError):
        parse_header(bytes(blob))
    blob = bytearray(serialize_header(h))
    blob[4] = 99
    with pytest.raises(ParseError):
        parse_header(bytes(blob))
    with pytest.raises(ParseError):
        parse_header(b"3DWC\x01")


def test_chunk_framing_roundtrip():
    chunks = [b"", b"abc", b"\x00" * 100]
    blob = write_chunks(chunks)
    assert read_chunks(blob, 0, 3) == chunks
    with pytest.raises(ParseError):
        read_chunks(blob[:-1], 0, 3)
    with pytest.raises(ParseError):
        read_chunks(blob + b"x", 0, 3)


# ---------------------------------------------------------------------------
# image I/O

def test_ppm_roundtrip_bit_exact(tmp_path):
    img = make_synthetic_crops(1, 64, seed=5)[0]
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img)
    assert np.array_equal(read_image(path), img)


def test_png_roundtrip(tmp_path):
    img = make_synthetic_crops(1, 64, seed=6)[0]
    path = tmp_path / "x.png"
    write_image(path, img)
    assert np.array_equal(read_image(path), img)


def test_grayscale_png_expands_to_three_channels(tmp_path):
    from PIL import Image
    gray = (SeededRng(7).uniform((16, 16)) * 255).astype(np.uint8)
    path = tmp_path / "g.png"
    Image.fromarray(gray, mode="L").save(path)
    img = read_image(path)
    assert img.shape == (3, 16, 16)
    assert np.array_equal(img[0], img[1]) and np.array_equal(img[1], img[2])


def test_sixteen_bit_png_rejected(tmp_path):
    from PIL import Image
    arr = (SeededRng(8).uniform((8, 8)) * 60000).astype(np.uint16)
    path = tmp_path / "deep.png"
    Image.fromarray(arr).save(path)
    with pytest.raises(IOFormatError):
        read_image(path)


def test_non_image_rejected(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"this is not an image")
    with pytest.raises(IOFormatError):
        read_image(path)


def test_bad_ppm_maxval(tmp_path):
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n2 2\n65535\n" + b"\x00" * 24)
    with pytest.raises(IOFormatError):
        read_image(path)


# ---------------------------------------------------------------------------
# padding

def test_pad_image_to_multiple_of_64():
    x = SeededRng(9).uniform((3, 61, 68))
    padded = pad_image(x)
    assert padded.shape == (3, 64, 128)
    assert np.array_equal(padded[:, :61, :68], x)
    assert np.array_equal(padded[:, 61:, :68], np.repeat(x[:, 60:61, :], 3, axis=1))
    assert pad_image(np.zeros((3, 64, 64))).shape == (3, 64, 64)


def test_latent_dims(toy_model):
    (hp, wp), (hl, wl), (hz, wz), shapes = latent_dims(toy_model, 68, 61)
    assert (hp, wp) == (64, 128)
    assert (hl, wl) == (4, 8)
    assert (hz, wz) == (1, 2)
    assert shapes[0] == (16, 2, 4) and shapes[4] == (32, 2, 4)


# ---------------------------------------------------------------------------
# encode/decode

def test_encode_decode_identity_dims_and_symmetry(toy_model, crop):
    res = encode_image_details(crop, toy_model)
    header, yhat, img = decode_image_details(res.bitstream, toy_model)
    assert img.shape == crop.shape
    assert np.array_equal(yhat, res.refined_latent)
    assert np.array_equal(img, res.reconstruction)


def test_encode_is_deterministic(toy_model, crop):
    assert encode_image(crop, toy_model) == encode_image(crop, toy_model)


def test_bitstream_self_consistency(toy_model, crop):
    res = encode_image_details(crop, toy_model)
    total = HEADER_LEN + sum(4 + len(c) for c in [res.z_chunk] + res.slice_chunks)
    assert total == len(res.bitstream)
    assert len(res.slice_chunks) == 10


def test_non_multiple_dims_roundtrip(toy_model):
    img = make_synthetic_crops(1, 128, seed=11)[0][:, :68, :61]
    res = encode_image_details(img, toy_model)
    assert res.header.width == 61 and res.header.height == 68
    out = decode_image(res.bitstream, toy_model)
    assert out.shape == (3, 68, 61)


def test_padding_content_does_not_leak(toy_model):
    # same visible content, different (replicated vs natural) border source
    img = make_synthetic_crops(1, 128, seed=12)[0]
    sub = img[:, :61, :58]
    res_sub = encode_image_details(sub, toy_model)
    dec = decode_image(res_sub.bitstream, toy_model)
    assert dec.shape == sub.shape


def test_checksum_mismatch_rejected(toy_model, crop):
    stream = encode_image(crop, toy_model)
    other = CodecModel(toy_config(init_seed=999))
    with pytest.raises(ConfigError):
        decode_image(stream, other)


def test_truncated_bitstream_rejected(toy_model, crop):
    stream = encode_image(crop, toy_model)
    with pytest.raises(ParseError):
        decode_image(stream[: len(stream) - 6], toy_model)
    with pytest.raises(ParseError):
        decode_image(stream[:10], toy_model)


def test_model_save_load_roundtrip(tmp_path, toy_model, crop):
    path = tmp_path / "m.3dwp"
    toy_model.save(path)
    loaded = CodecModel.load(path)
    assert loaded.checksum() == toy_model.checksum()
    assert loaded.cfg == toy_model.cfg
    assert encode_image(crop, loaded) == encode_image(crop, toy_model)


def test_cli_printed_param_total_matches_spec_sums(toy_model):
    from waveletcodec.nn import param_count
    from waveletcodec.weconv import WeConvLayer, subband_conv_plan

    total = 0
    for layer in toy_model.ga_layers + toy_model.gs_layers:
        if isinstance(layer, WeConvLayer):
            total += layer.n_params()
        elif hasattr(layer, "blocks"):
            total += layer.n_params()
        else:
            total += layer.n_params()
    for conv in (toy_model.ha1, toy_model.ha2, toy_model.ha3,
                 toy_model.hs1, toy_model.hs2):
        total += conv.n_params()
    for coder in toy_model.ec.coders:
        for conv in (coder.att, coder.pn1, coder.pn2, coder.head_mu,
                     coder.head_sig, coder.lrp1, coder.lrp2):
            total += param_count(conv.spec)
    total += toy_model.prior_mu.data.size + toy_model.prior_logsig.data.size
    assert total == toy_model.param_total()


@pytest.mark.slow
def test_paper_profile_builds_and_backprops():
    import waveletcodec.autodiff as ad
    from waveletcodec.autodiff import Tape, Var

    model = CodecModel(paper_config())
    assert model.cfg.m == 320 and model.cfg.n == 128
    assert [s.channels for s in model.plan.slices] == [80] * 4 + [160] * 6
    x = Var(SeededRng(13).uniform((3, 64, 64), 0.0, 1.0))
    tape = Tape()
    y = model.g_a(tape, x)
    assert y.data.shape == (320, 4, 4)
    xhat = model.g_s(tape, y)
    assert xhat.data.shape == (3, 64, 64)
    diff = ad.sub(tape, xhat, x)
    loss = ad.mean_all(tape, ad.mul(tape, diff, diff))
    tape.backward(loss)
    assert model.store.grads_finite()
