import numpy as np
import pytest

from waveletcodec.autodiff import Var
from waveletcodec.errors import ArgumentError, ContractError
from waveletcodec.model import CodecModel, toy_config
from waveletcodec.trainer import (MSE_PIXEL_SCALE, TrainConfig, distortion,
                                  lf_bit_share, make_synthetic_crops, rd_loss,
                                  rd_loss_terms, report_subbands, train_loop)

BANDS = ("LLL", "HLL", "LLH", "LHL", "LHH", "HLH", "HHL", "HHH")


def _band_vars(values):
    return {b: Var(np.asarray(v, dtype=np.float64)) for b, v in zip(BANDS, values)}


# ---------------------------------------------------------------------------
# rd_loss arithmetic

def test_rd_loss_zero_everything_is_zero():
    cfg = TrainConfig(lam=0.013)
    loss = rd_loss_terms(None, Var(np.asarray(0.0)), _band_vars([0.0] * 8),
                         Var(np.asarray(0.0)), cfg)
    assert float(loss.data) == 0.0


def test_rd_loss_stage1_example():
    # lambda*D + total latent rate + z rate = 0.013*0.001 + 0.5 + 0.02
    cfg = TrainConfig(lam=0.013, stage=1)
    bands = _band_vars([0.5 / 8] * 8)
    loss = rd_loss_terms(None, Var(np.asarray(0.001)), bands,
                         Var(np.asarray(0.02)), cfg)
    assert float(loss.data) == pytest.approx(0.520013, abs=1e-12)


def test_rd_loss_stage2_degenerates_to_stage1_at_unit_weights():
    rng = np.random.default_rng(0)
    rates = rng.uniform(0.01, 0.4, 8)
    d = Var(np.asarray(1.234))
    z = Var(np.asarray(0.05))
    s1 = rd_loss_terms(None, d, _band_vars(rates), z,
                       TrainConfig(lam=0.025, stage=1))
    s2 = rd_loss_terms(None, d, _band_vars(rates), z,
                       TrainConfig(lam=0.025, stage=2, w1=1.0 + 1e-15, w2=1.0))
    assert float(s2.data) == pytest.approx(float(s1.data), abs=1e-12)


def test_rd_loss_stage2_weights_lf_and_hf_differently():
    d = Var(np.asarray(0.0))
    z = Var(np.asarray(0.0))
    bands = _band_vars([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    cfg = TrainConfig(lam=0.013, stage=2, w1=1.2, w2=0.8)
    assert float(rd_loss_terms(None, d, bands, z, cfg).data) == pytest.approx(2.4)
    bands_hf = _band_vars([0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    assert float(rd_loss_terms(None, d, bands_hf, z, cfg).data) == pytest.approx(4.8)


def test_rd_loss_rejects_negative_rate():
    cfg = TrainConfig()
    with pytest.raises(ContractError):
        rd_loss_terms(None, Var(np.asarray(0.0)), _band_vars([-0.1] + [0.0] * 7),
                      Var(np.asarray(0.0)), cfg)


def test_stage2_weight_invariant():
    with pytest.raises(ArgumentError):
        TrainConfig(stage=2, w1=0.8, w2=1.2)
    with pytest.raises(ArgumentError):
        TrainConfig(stage=2, w1=1.0, w2=0.0)


def test_distortion_mse_pixel_scale():
    x = Var(np.full((3, 8, 8), 0.5))
    y = Var(np.full((3, 8, 8), 0.4))
    d = distortion(None, x, y, "mse")
    assert float(d.data) == pytest.approx(MSE_PIXEL_SCALE * 0.01, rel=1e-12)


def test_rd_loss_array_wrapper_matches_terms():
    x = np.full((3, 4, 4), 0.5)
    xhat = np.full((3, 4, 4), 0.48)
    bands = {b: 0.03 for b in BANDS}
    cfg = TrainConfig(lam=0.013, stage=1)
    expected = 0.013 * (MSE_PIXEL_SCALE * 0.02 ** 2) + 8 * 0.03 + 0.01
    assert rd_loss(x, xhat, bands, 0.01, cfg) == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------------------
# training loop

def test_synthetic_crops_deterministic():
    a = make_synthetic_crops(3, 64, seed=4)
    b = make_synthetic_crops(3, 64, seed=4)
    for x, y in zip(a, b):
        assert x.dtype == np.uint8 and x.shape == (3, 64, 64)
        assert np.array_equal(x, y)


def test_train_loop_reproducible_and_descending():
    crops = make_synthetic_crops(2, 64, seed=5)

    def run():
        model = CodecModel(toy_config())
        result = train_loop(model, crops, TrainConfig(iterations=6, seed=9))
        return result, model.store.serialize()

    res_a, blob_a = run()
    res_b, blob_b = run()
    assert [r.loss for r in res_a.trace] == [r.loss for r in res_b.trace]
    assert blob_a == blob_b
    assert all(np.isfinite(r.loss) for r in res_a.trace)


def test_train_loop_rejects_bad_inputs():
    model = CodecModel(toy_config())
    with pytest.raises(ArgumentError):
        train_loop(model, [], TrainConfig(iterations=1))
    with pytest.raises(ArgumentError):
        train_loop(model, [np.zeros((3, 60, 64), dtype=np.uint8)],
                   TrainConfig(iterations=1))


def test_moving_average():
    from waveletcodec.trainer import TrainResult, TraceRow
    res = TrainResult(trace=[TraceRow(i, float(i), 0, 0, 0) for i in range(10)])
    ma = res.moving_average(4)
    assert len(ma) == 7
    assert ma[0] == pytest.approx(1.5)
    with pytest.raises(ArgumentError):
        res.moving_average(100)


# ---------------------------------------------------------------------------
# subband report

@pytest.fixture(scope="module")
def toy_report():
    model = CodecModel(toy_config())
    crop = make_synthetic_crops(1, 64, seed=6)[0]
    from waveletcodec.pipeline import encode_image
    return model, crop, encode_image(crop, model)


def test_report_row_order_and_percentages(toy_report):
    model, crop, stream = toy_report
    rep = report_subbands(model, image=crop)
    labels = [r[0] for r in rep.rows]
    assert labels == ["LLL", "HLL", "LLH", "LHL", "LHH", "HLH", "HHL", "HHH", "zhat"]
    assert sum(p for _l, _b, p in rep.rows) == pytest.approx(100.0, abs=0.2)
    assert sum(b for _l, b, _p in rep.rows) == pytest.approx(rep.total_bpp, abs=1e-6)
    assert rep.psnr_db is not None
    assert rep.msssim is None  # 64x64 is below the MS-SSIM minimum size


def test_report_from_bitstream_matches_image_mode(toy_report):
    model, crop, stream = toy_report
    a = report_subbands(model, image=crop)
    b = report_subbands(model, bitstream=stream)
    assert a.rows == b.rows
    assert a.total_bpp == b.total_bpp
    assert a.container_bpp == b.container_bpp


def test_report_tsv_shape(toy_report):
    model, crop, _stream = toy_report
    text = report_subbands(model, image=crop).to_tsv()
    lines = text.strip().split("\n")
    assert lines[0] == "component\tbpp\tpercent"
    assert lines[1].startswith("LLL\t")
    assert any(l.startswith("total\t") for l in lines)


def test_lf_bit_share_bounds(toy_report):
    model, crop, _stream = toy_report
    share = lf_bit_share(report_subbands(model, image=crop))
    assert 0.0 <= share <= 1.0
