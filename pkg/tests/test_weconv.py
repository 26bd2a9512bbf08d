import numpy as np
import pytest

import waveletcodec.autodiff as ad
from waveletcodec.autodiff import Var
from waveletcodec.errors import ArgumentError, ShapeError
from waveletcodec.nn import ParamStore, grad_check, param_count
from waveletcodec.tensor import SeededRng
from waveletcodec.wavelet import WaveletKind
from waveletcodec.weconv import WeConvConfig, WeConvLayer, subband_conv_plan

HAAR = WaveletKind.HAAR_ORTHONORMAL
CDF97 = WaveletKind.CDF_9_7


def make_layer(cfg, seed=0):
    store = ParamStore()
    layer = WeConvLayer(store, "weconv0", cfg, SeededRng(seed))
    return store, layer


def test_subband_plan_counts():
    cfg2 = WeConvConfig(8, 8, levels=2, hf_kernel=1)
    plan2 = subband_conv_plan(cfg2)
    assert len(plan2) == 14
    low_labels = [label for g, label, _k, _s in plan2 if g == "low"]
    assert low_labels == ["LL2", "LH2", "HL2", "HH2", "LH1", "HL1", "HH1"]
    kernels = {label: k for _g, label, k, _s in plan2 if _g == "low"}
    assert kernels["LL2"] == 3
    assert all(kernels[l] == 1 for l in kernels if l != "LL2")

    cfg1 = WeConvConfig(8, 8, levels=1)
    assert len(subband_conv_plan(cfg1)) == 8


def test_plan_param_ordering_hf1_below_hf3():
    n1 = sum(param_count(s) for *_x, s in
             subband_conv_plan(WeConvConfig(16, 16, hf_kernel=1)))
    n3 = sum(param_count(s) for *_x, s in
             subband_conv_plan(WeConvConfig(16, 16, hf_kernel=3)))
    assert n1 < n3


def test_config_validation():
    with pytest.raises(ArgumentError):
        WeConvConfig(8, 7)
    with pytest.raises(ArgumentError):
        WeConvConfig(8, 8, stride=3)
    with pytest.raises(ArgumentError):
        WeConvConfig(8, 8, hf_kernel=2)
    with pytest.raises(ArgumentError):
        WeConvConfig(8, 8, spatial_kind=WaveletKind.LEGALL_5_3_REVERSIBLE)


def test_zero_parameter_identity():
    cfg = WeConvConfig(6, 6, stride=1, levels=1)
    store, layer = make_layer(cfg)
    for p in store.params.values():
        p.data[:] = 0.0
    x = SeededRng(1).uniform((6, 8, 8), -2, 2)
    out = layer(None, Var(x))
    assert np.abs(out.data - x).max() <= 1e-9


def test_zero_parameter_identity_inverse():
    cfg = WeConvConfig(6, 6, stride=1, levels=1, transposed=True)
    store, layer = make_layer(cfg)
    for p in store.params.values():
        p.data[:] = 0.0
    x = SeededRng(2).uniform((6, 8, 8), -2, 2)
    out = layer(None, Var(x))
    assert np.abs(out.data - x).max() <= 1e-9


def test_forward_shape_contract():
    cfg = WeConvConfig(16, 12, stride=2, levels=2)
    _store, layer = make_layer(cfg, seed=3)
    out = layer(None, Var(SeededRng(4).uniform((16, 32, 32), -1, 1)))
    assert out.data.shape == (12, 16, 16)


def test_inverse_shape_contract():
    cfg = WeConvConfig(16, 12, stride=2, levels=1, transposed=True)
    _store, layer = make_layer(cfg, seed=5)
    out = layer(None, Var(SeededRng(6).uniform((16, 16, 16), -1, 1)))
    assert out.data.shape == (12, 32, 32)


def test_divisibility_errors():
    cfg = WeConvConfig(4, 4, stride=2, levels=2)
    _store, layer = make_layer(cfg, seed=7)
    with pytest.raises(ShapeError):
        layer(None, Var(np.zeros((4, 12, 12))))  # 12/2=6 not divisible by 4
    with pytest.raises(ShapeError):
        layer(None, Var(np.zeros((3, 16, 16))))


def test_layer_param_accounting():
    cfg = WeConvConfig(10, 8, stride=2, levels=2, hf_kernel=3)
    store, layer = make_layer(cfg, seed=8)
    # lead + plan + shortcut sums must equal the allocated storage
    assert layer.n_params() == store.total_count()


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("levels", [1, 2])
@pytest.mark.parametrize("hf_kernel", [1, 3])
@pytest.mark.parametrize("kind", [HAAR, CDF97])
def test_gradients_all_configs(stride, levels, hf_kernel, kind):
    cfg = WeConvConfig(4, 4, stride=stride, channel_kind=HAAR, spatial_kind=kind,
                       levels=levels, hf_kernel=hf_kernel)
    store, layer = make_layer(cfg, seed=10 + stride + levels + hf_kernel)
    rng = SeededRng(20)
    for p in store.params.values():  # zero-initialized branches get real values
        p.data[:] = rng.uniform(p.data.shape, -0.4, 0.4)
    x = Var(rng.uniform((4, 8, 8), -1, 1))
    w = rng.uniform((4, 8 // stride, 8 // stride), -1, 1)

    def build(tape):
        return ad.sum_all(tape, ad.mul(tape, layer(tape, x), ad.constant(w)))
    wrt = {"x": x, **store.params}
    err = grad_check(build, wrt, samples_per_tensor=4, rng=SeededRng(21))
    assert err < 1e-4


@pytest.mark.parametrize("stride", [1, 2])
def test_gradients_inverse_variant(stride):
    cfg = WeConvConfig(4, 4, stride=stride, levels=1, transposed=True)
    store, layer = make_layer(cfg, seed=30 + stride)
    rng = SeededRng(31)
    for p in store.params.values():
        p.data[:] = rng.uniform(p.data.shape, -0.4, 0.4)
    x = Var(rng.uniform((4, 8, 8), -1, 1))
    w = rng.uniform((4, 8 * stride, 8 * stride), -1, 1)

    def build(tape):
        return ad.sum_all(tape, ad.mul(tape, layer(tape, x), ad.constant(w)))
    err = grad_check(build, {"x": x, **store.params},
                     samples_per_tensor=4, rng=SeededRng(32))
    assert err < 1e-4
