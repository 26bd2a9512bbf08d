import numpy as np
import pytest

import waveletcodec.autodiff as ad
from waveletcodec.autodiff import Tape, Var
from waveletcodec.errors import ParseError, ShapeError, StateError
from waveletcodec.nn import (ConvSpec, Conv2d, ParamStore, ResBlock, ResGroup,
                             adam_step, grad_check, param_count)
from waveletcodec.tensor import SeededRng
from waveletcodec.wavelet import WaveletKind


def weighted_sum(tape, out: Var, weights: np.ndarray) -> Var:
    """Scalar probe so FD checks see every output coordinate."""
    return ad.sum_all(tape, ad.mul(tape, out, ad.constant(weights)))


def check_op(build, wrt, eps=1e-5, tol=1e-4):
    err = grad_check(build, wrt, eps=eps)
    assert err < tol, f"grad error {err}"


# ---------------------------------------------------------------------------
# param accounting

def test_param_count_examples():
    assert param_count(ConvSpec(1, 1, 1, 1)) == 2
    assert param_count(ConvSpec(3, 1, 128, 128)) == 147_584
    assert param_count(ConvSpec(1, 1, 160, 160)) == 25_760


def test_layer_storage_matches_spec():
    store = ParamStore()
    rng = SeededRng(0)
    conv = Conv2d(store, "c", 8, 16, 3, stride=2, rng=rng)
    assert store.total_count() == param_count(conv.spec)
    tc = Conv2d(store, "t", 16, 8, 3, stride=2, transposed=True, rng=rng)
    assert store.total_count() == param_count(conv.spec) + param_count(tc.spec)


# ---------------------------------------------------------------------------
# conv forward contracts

def test_conv_identity_kernel():
    store = ParamStore()
    conv = Conv2d(store, "c", 3, 3, 1, zero_init=True)
    conv.w.data[:] = np.eye(3).reshape(3, 3, 1, 1)
    x = SeededRng(1).uniform((3, 5, 7), -1, 1)
    out = conv(None, Var(x))
    assert np.array_equal(out.data, x)


def test_conv_constant_field_interior():
    store = ParamStore()
    conv = Conv2d(store, "c", 1, 1, 3, zero_init=True)
    conv.w.data[:] = 1.0
    c = 0.7
    out = conv(None, Var(np.full((1, 6, 6), c)))
    assert np.allclose(out.data[0, 1:-1, 1:-1], 9.0 * c, atol=1e-12)


def test_conv_shapes_and_errors():
    store = ParamStore()
    rng = SeededRng(2)
    conv = Conv2d(store, "c", 4, 6, 3, stride=2, rng=rng)
    out = conv(None, Var(rng.uniform((4, 8, 10))))
    assert out.data.shape == (6, 4, 5)
    with pytest.raises(ShapeError):
        conv(None, Var(rng.uniform((3, 8, 8))))
    with pytest.raises(ShapeError):
        conv(None, Var(rng.uniform((4, 7, 8))))


def test_tconv_shape_contract():
    store = ParamStore()
    rng = SeededRng(3)
    tc = Conv2d(store, "t", 4, 6, 3, stride=2, transposed=True, rng=rng)
    out = tc(None, Var(rng.uniform((4, 5, 7))))
    assert out.data.shape == (6, 10, 14)


def test_conv_gradients_vs_fd():
    store = ParamStore()
    rng = SeededRng(4)
    conv = Conv2d(store, "c", 4, 3, 3, stride=1, rng=rng)
    x = Var(rng.uniform((4, 8, 8), -1, 1))
    w = rng.uniform((3, 8, 8), -1, 1)

    def build(tape):
        return weighted_sum(tape, conv(tape, x), w)
    check_op(build, {"x": x, "w": conv.w, "b": conv.b})


def test_conv_stride2_gradients_vs_fd():
    store = ParamStore()
    rng = SeededRng(5)
    conv = Conv2d(store, "c", 2, 3, 3, stride=2, rng=rng)
    x = Var(rng.uniform((2, 6, 6), -1, 1))
    w = rng.uniform((3, 3, 3), -1, 1)

    def build(tape):
        return weighted_sum(tape, conv(tape, x), w)
    check_op(build, {"x": x, "w": conv.w, "b": conv.b})


@pytest.mark.parametrize("stride", [1, 2])
def test_tconv_gradients_vs_fd(stride):
    store = ParamStore()
    rng = SeededRng(6 + stride)
    tc = Conv2d(store, "t", 3, 2, 3, stride=stride, transposed=True, rng=rng)
    x = Var(rng.uniform((3, 4, 5), -1, 1))
    w = rng.uniform((2, 4 * stride, 5 * stride), -1, 1)

    def build(tape):
        return weighted_sum(tape, tc(tape, x), w)
    check_op(build, {"x": x, "w": tc.w, "b": tc.b})


# ---------------------------------------------------------------------------
# elementwise / shape op gradients

def test_leaky_relu_values_and_gradient():
    x = Var(np.array([1.5, -1.0, 0.25]))
    out = ad.leaky_relu(None, x, 0.2)
    assert np.allclose(out.data, [1.5, -0.2, 0.25])
    xs = Var(SeededRng(7).uniform((4, 4), 0.2, 2.0))  # away from the kink

    def build(tape):
        return ad.sum_all(tape, ad.leaky_relu(tape, xs, 0.2))
    assert grad_check(build, {"x": xs}) < 1e-6


def test_elementwise_op_gradients():
    rng = SeededRng(8)
    a = Var(rng.uniform((3, 4), 0.3, 2.0))
    b = Var(rng.uniform((3, 4), 0.5, 1.5))
    w = rng.uniform((3, 4), -1, 1)

    ops = {
        "add": lambda t: ad.add(t, a, b),
        "sub": lambda t: ad.sub(t, a, b),
        "mul": lambda t: ad.mul(t, a, b),
        "div": lambda t: ad.div(t, a, b),
        "exp": lambda t: ad.exp(t, a),
        "log": lambda t: ad.log(t, a),
        "tanh": lambda t: ad.tanh(t, a),
        "sigmoid": lambda t: ad.sigmoid(t, a),
        "scale": lambda t: ad.scale(t, a, -1.7),
    }
    for name, fn in ops.items():
        err = grad_check(lambda t, fn=fn: weighted_sum(t, fn(t), w), {"a": a, "b": b})
        assert err < 1e-5, name


def test_shape_op_gradients():
    rng = SeededRng(9)
    a = Var(rng.uniform((4, 6, 8), -1, 1))
    b = Var(rng.uniform((2, 6, 8), -1, 1))

    def build_concat(tape):
        cat = ad.concat(tape, [a, b], axis=0)
        return weighted_sum(tape, cat, rng0)
    rng0 = SeededRng(10).uniform((6, 6, 8), -1, 1)
    check_op(build_concat, {"a": a, "b": b})

    wn = SeededRng(11).uniform((2, 6, 8), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.narrow(t, a, 0, 1, 2), wn), {"a": a})

    wc = SeededRng(12).uniform((4, 3, 4), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.crop2d(t, a, 1, 4, 2, 6), wc), {"a": a})

    wp = SeededRng(13).uniform((4, 3, 4), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.avg_pool2(t, a, 2), wp), {"a": a})

    wm = SeededRng(14).uniform((4, 1, 1), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.spatial_mean(t, a), wm), {"a": a})

    c11 = Var(SeededRng(15).uniform((4, 1, 1), -1, 1))
    wb = SeededRng(16).uniform((4, 5, 5), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.broadcast_spatial(t, c11, 5, 5), wb),
             {"c": c11})


@pytest.mark.parametrize("kind", [WaveletKind.HAAR_ORTHONORMAL, WaveletKind.CDF_9_7])
@pytest.mark.parametrize("axis", [0, 1, 2])
def test_dwt_op_gradients(kind, axis):
    rng = SeededRng(20 + axis)
    x = Var(rng.uniform((4, 6, 8), -1, 1))
    w = rng.uniform((4, 6, 8), -1, 1)
    check_op(lambda t: weighted_sum(t, ad.dwt_axis(t, x, axis, kind), w), {"x": x})
    check_op(lambda t: weighted_sum(t, ad.idwt_axis(t, x, axis, kind), w), {"x": x})


def test_gaussian_bits_gradients():
    rng = SeededRng(25)
    v = Var(rng.uniform((3, 4), -2, 2))
    mu = Var(rng.uniform((3, 4), -1, 1))
    sigma = Var(rng.uniform((3, 4), 0.5, 3.0))

    def build(tape):
        return ad.sum_all(tape, ad.gaussian_bits(tape, v, mu, sigma))
    check_op(build, {"v": v, "mu": mu, "sigma": sigma})


def test_gaussian_bits_is_nonnegative_and_finite():
    v = Var(np.array([0.0, 100.0, -50.0]))
    mu = Var(np.zeros(3))
    sigma = Var(np.full(3, 0.11))
    bits = ad.gaussian_bits(None, v, mu, sigma)
    assert np.all(bits.data >= 0.0) and np.all(np.isfinite(bits.data))


# ---------------------------------------------------------------------------
# residual blocks

def test_res_block_identity_when_zeroed():
    store = ParamStore()
    rng = SeededRng(30)
    blk = ResBlock(store, "r", 4, rng)
    for p in store.params.values():
        p.data[:] = 0.0
    x = rng.uniform((4, 6, 6), -1, 1)
    out = blk(None, Var(x))
    assert np.array_equal(out.data, x)


def test_res_block_shape_and_gradient():
    store = ParamStore()
    rng = SeededRng(31)
    blk = ResBlock(store, "r", 3, rng)
    x = Var(rng.uniform((3, 6, 6), -1, 1))
    out = blk(None, x)
    assert out.data.shape == x.data.shape
    with pytest.raises(ShapeError):
        blk(None, Var(rng.uniform((2, 6, 6))))
    w = rng.uniform((3, 6, 6), -1, 1)
    wrt = {"x": x, **{n: p for n, p in store.params.items()}}
    check_op(lambda t: weighted_sum(t, blk(t, x), w), wrt)


def test_res_group_runs():
    store = ParamStore()
    rng = SeededRng(32)
    grp = ResGroup(store, "g", 4, 2, rng)
    out = grp(None, Var(rng.uniform((4, 8, 8))))
    assert out.data.shape == (4, 8, 8)
    assert grp.n_params() == 4 * param_count(ConvSpec(3, 1, 4, 4))


# ---------------------------------------------------------------------------
# grad_check harness itself

def test_grad_check_linear_map_is_exact():
    rng = SeededRng(33)
    x = Var(rng.uniform((5,), -1, 1))
    c = rng.uniform((5,), -2, 2)
    err = grad_check(lambda t: ad.sum_all(t, ad.mul(t, x, ad.constant(c))), {"x": x})
    assert err < 1e-8


def test_grad_check_detects_corrupted_backward():
    rng = SeededRng(34)
    x = Var(rng.uniform((4,), 0.5, 1.5))

    def build(tape):
        # scale by 2 forward, but report a wrong backward on purpose
        out = ad._rec(tape, x.data * 2.0,
                      lambda g: ad._acc(x, 1.5 * g))
        return ad.sum_all(tape, out)
    assert grad_check(build, {"x": x}) > 1e-2


def test_diamond_graph_accumulates_both_paths():
    x = Var(np.array(3.0))

    def build(tape):
        return ad.add(tape, ad.scale(tape, x, 2.0), ad.scale(tape, x, 5.0))
    tape = Tape()
    loss = build(tape)
    tape.backward(loss)
    assert x.grad == pytest.approx(7.0)


def test_sampled_grad_check():
    store = ParamStore()
    rng = SeededRng(35)
    conv = Conv2d(store, "c", 2, 2, 3, rng=rng)
    x = Var(rng.uniform((2, 6, 6), -1, 1))
    w = rng.uniform((2, 6, 6), -1, 1)
    err = grad_check(lambda t: weighted_sum(t, conv(t, x), w),
                     {"x": x, "w": conv.w}, samples_per_tensor=5,
                     rng=SeededRng(36))
    assert err < 1e-4


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_gradient_keeps_params():
    store = ParamStore()
    p = store.register("p", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adam_step(store, lr=1e-2, t=1)
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_descends_against_gradient_sign():
    store = ParamStore()
    p = store.register("p", np.array([0.0]))
    for t in range(1, 100):
        p.grad = np.array([2.5])
        adam_step(store, lr=1e-3, t=t)
    assert p.data[0] < -0.05


def test_adam_first_step_magnitude():
    store = ParamStore()
    p = store.register("p", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(store, lr=1e-4, t=1)
    # bias-corrected m^/sqrt(v^) = 1 at t=1, so the step is lr/(1 + eps)
    assert p.data[0] == pytest.approx(1.0 - 1e-4, abs=1e-9)


def test_adam_missing_gradient_is_state_error():
    store = ParamStore()
    store.register("p", np.array([1.0]))
    with pytest.raises(StateError):
        adam_step(store, lr=1e-3, t=1)


def test_training_step_bit_reproducible():
    def run():
        store = ParamStore()
        rng = SeededRng(40)
        conv = Conv2d(store, "c", 2, 2, 3, rng=rng)
        x = Var(rng.uniform((2, 4, 4), -1, 1))
        for t in range(1, 4):
            store.zero_grads()
            tape = Tape()
            loss = ad.mean_all(tape, ad.mul(tape, conv(tape, x), conv(tape, x)))
            tape.backward(loss)
            adam_step(store, lr=1e-3, t=t)
        return store.serialize()
    assert run() == run()


# ---------------------------------------------------------------------------
# checkpoint format

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    store = ParamStore()
    rng = SeededRng(41)
    Conv2d(store, "a", 3, 5, 3, rng=rng)
    Conv2d(store, "z.deep.name", 5, 2, 1, rng=rng)
    path = tmp_path / "m.3dwp"
    store.save(path)

    store2 = ParamStore()
    Conv2d(store2, "a", 3, 5, 3, rng=SeededRng(99))
    Conv2d(store2, "z.deep.name", 5, 2, 1, rng=SeededRng(99))
    store2.load(path)
    for name in store.names():
        assert np.array_equal(store.params[name].data, store2.params[name].data)
    assert store.serialize() == store2.serialize()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.3dwp"
    path.write_bytes(b"NOPE\x01")
    store = ParamStore()
    store.register("p", np.zeros(2))
    with pytest.raises(ParseError):
        store.load(path)


def test_checkpoint_rejects_shape_mismatch():
    store = ParamStore()
    store.register("p", np.zeros((2, 2)))
    blob = ParamStore()
    blob.register("p", np.zeros((3, 2)))
    with pytest.raises(ParseError):
        store.load_values(ParamStore.parse(blob.serialize()))
