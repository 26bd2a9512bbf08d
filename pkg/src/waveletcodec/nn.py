"""Network building blocks: conv layers, residual blocks, Adam, grad checks.

Parameters live in a ``ParamStore`` keyed by hierarchical names; the Adam
step and the checkpoint writer iterate names in sorted order so training
and serialization are deterministic.  Layer constructors assert that the
storage they allocate matches the closed-form parameter count
``K^2 * C_in * C_out + C_out`` (weights plus biases).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ArgumentError, NumericError, ParseError, ShapeError, StateError
from .tensor import SeededRng

CHECKPOINT_MAGIC = b"3DWP"
CHECKPOINT_VERSION = 1

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    stride: int
    c_in: int
    c_out: int
    transposed: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ArgumentError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ArgumentError(f"stride must be >= 1, got {self.stride}")


def param_count(spec: ConvSpec) -> int:
    """Parameters of one convolution, biases included."""
    return spec.kernel ** 2 * spec.c_in * spec.c_out + spec.c_out


class ParamStore:
    """Named parameter tensors plus their Adam moment state."""

    def __init__(self):
        self.params: dict[str, Var] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._frozen: set[str] = set()

    def register(self, name: str, init: np.ndarray,
                 trainable: bool = True) -> Var:
        if name in self.params:
            raise StateError(f"parameter {name!r} already registered")
        var = Var(np.ascontiguousarray(init, dtype=np.float64))
        self.params[name] = var
        if not trainable:
            self._frozen.add(name)
        return var

    def names(self) -> list[str]:
        return sorted(self.params)

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if n not in self._frozen]

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def total_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def grads_finite(self) -> bool:
        return all(p.grad is None or np.all(np.isfinite(p.grad))
                   for p in self.params.values())

    # -- checkpoint format: magic "3DWP", version byte, then per-parameter
    # records (u32 name length, UTF-8 name, u32 rank, u32 dims, f64 LE data),
    # records sorted by name.

    def serialize(self) -> bytes:
        out = bytearray()
        out += CHECKPOINT_MAGIC
        out.append(CHECKPOINT_VERSION)
        for name in self.names():
            data = self.params[name].data
            nb = name.encode("utf-8")
            out += struct.pack("<I", len(nb))
            out += nb
            out += struct.pack("<I", data.ndim)
            for d in data.shape:
                out += struct.pack("<I", d)
            out += np.ascontiguousarray(data, dtype="<f8").tobytes()
        return bytes(out)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.serialize())

    @staticmethod
    def parse(blob: bytes) -> dict[str, np.ndarray]:
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ParseError(f"bad checkpoint magic {blob[:4]!r}")
        if blob[4] != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {blob[4]}")
        pos = 5
        out: dict[str, np.ndarray] = {}
        try:
            while pos < len(blob):
                (nlen,) = struct.unpack_from("<I", blob, pos)
                pos += 4
                name = blob[pos:pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<I", blob, pos)
                pos += 4
                dims = struct.unpack_from(f"<{rank}I", blob, pos)
                pos += 4 * rank
                n = int(np.prod(dims)) if rank else 1
                arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
                pos += 8 * n
                out[name] = arr.reshape(dims).astype(np.float64)
        except (struct.error, ValueError) as e:
            raise ParseError(f"truncated checkpoint: {e}") from e
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(values)
        extra = set(values) - set(self.params)
        if missing or extra:
            raise ParseError(
                f"checkpoint/model mismatch: missing={sorted(missing)[:4]} "
                f"extra={sorted(extra)[:4]}")
        for name, arr in values.items():
            p = self.params[name]
            if p.data.shape != arr.shape:
                raise ParseError(
                    f"shape mismatch for {name}: {p.data.shape} vs {arr.shape}")
            p.data = np.ascontiguousarray(arr, dtype=np.float64)

    def load(self, path) -> None:
        with open(path, "rb") as f:
            self.load_values(self.parse(f.read()))


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int = 1) -> None:
    """Bias-corrected Adam update over parameters in sorted-name order."""
    if t < 1:
        raise ArgumentError(f"adam step index must be >= 1, got {t}")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in store.trainable_names():
        p = store.params[name]
        if p.grad is None:
            raise StateError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store._m[name] = m
        store._v[name] = v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# Layers

class Conv2d:
    """Conv or transposed-conv layer owning its weight and bias parameters."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1, transposed: bool = False,
                 rng: SeededRng | None = None, zero_init: bool = False,
                 init_gain: float = 1.0, bias_init: float = 0.0):
        self.spec = ConvSpec(kernel, stride, c_in, c_out, transposed)
        if zero_init or rng is None:
            w0 = np.zeros((c_out, c_in, kernel, kernel))
        else:
            bound = init_gain / np.sqrt(c_in * kernel * kernel)
            w0 = rng.uniform((c_out, c_in, kernel, kernel), -bound, bound)
        self.w = store.register(f"{name}.w", w0)
        self.b = store.register(f"{name}.b", np.full(c_out, float(bias_init)))
        assert self.w.data.size + self.b.data.size == param_count(self.spec)

    def __call__(self, tape: Tape | None, x: Var) -> Var:
        if self.spec.transposed:
            return ad.tconv2d(tape, x, self.w, self.b, self.spec.stride)
        return ad.conv2d(tape, x, self.w, self.b, self.spec.stride)

    def n_params(self) -> int:
        return param_count(self.spec)


class ResBlock:
    """x + conv3(lrelu(conv3(x))); channel count preserved.

    The second conv starts at zero so every block begins as the identity,
    which keeps deep stacks well conditioned at the start of training.
    """

    def __init__(self, store: ParamStore, name: str, ch: int, rng: SeededRng):
        self.c1 = Conv2d(store, f"{name}.c1", ch, ch, 3, rng=rng)
        self.c2 = Conv2d(store, f"{name}.c2", ch, ch, 3, zero_init=True)
        self.ch = ch

    def __call__(self, tape, x: Var) -> Var:
        if x.data.shape[0] != self.ch:
            raise ShapeError(f"res_block expects {self.ch} channels, got {x.data.shape[0]}")
        h = ad.leaky_relu(tape, self.c1(tape, x), LEAKY_SLOPE)
        return ad.add(tape, x, self.c2(tape, h))

    def n_params(self) -> int:
        return self.c1.n_params() + self.c2.n_params()


class ResGroup:
    def __init__(self, store: ParamStore, name: str, ch: int, blocks: int,
                 rng: SeededRng):
        self.blocks = [ResBlock(store, f"{name}.b{i}", ch, rng)
                       for i in range(blocks)]

    def __call__(self, tape, x: Var) -> Var:
        for blk in self.blocks:
            x = blk(tape, x)
        return x

    def n_params(self) -> int:
        return sum(b.n_params() for b in self.blocks)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking

def grad_check(loss_fn, wrt: dict[str, Var], eps: float = 1e-5,
               samples_per_tensor: int | None = None,
               rng: SeededRng | None = None,
               retry_eps: tuple[float, ...] = (1e-4,)) -> float:
    """Worst relative error between tape gradients and central differences.

    ``loss_fn(tape)`` must rebuild the forward graph and return a scalar
    Var.  When ``samples_per_tensor`` is given, only that many coordinates
    per tensor are probed (drawn from ``rng``); otherwise every coordinate
    is checked.

    Central differences carry roundoff of order eps_machine * |loss| / eps,
    so components smaller than that are unresolvable at the probe step; the
    relative-error denominator is floored accordingly, and coordinates that
    still disagree are re-probed at the ``retry_eps`` steps (keeping the
    smallest error) before they count as failures.  A wrong backward rule
    disagrees at every step size and still surfaces.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    tape = Tape()
    for v in wrt.values():
        v.grad = None
    loss = loss_fn(tape)
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    tape.backward(loss)
    analytic = {k: (np.zeros_like(v.data) if v.grad is None else v.grad.copy())
                for k, v in wrt.items()}
    loss_scale = max(1.0, abs(float(loss.data)))

    def eval_loss() -> float:
        out = loss_fn(Tape(recording=False))
        val = float(out.data)
        if not np.isfinite(val):
            raise NumericError("loss is not finite during FD probe")
        return val

    def fd_error(flat, i, ana, step) -> float:
        orig = flat[i]
        flat[i] = orig + step
        lp = eval_loss()
        flat[i] = orig - step
        lm = eval_loss()
        flat[i] = orig
        num = (lp - lm) / (2.0 * step)
        floor = 4096.0 * np.finfo(np.float64).eps * loss_scale / (2.0 * step)
        return abs(ana - num) / max(abs(ana), abs(num), floor, 1e-8)

    worst = 0.0
    for name, v in wrt.items():
        flat = v.data.reshape(-1)
        n = flat.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            idxs = range(n)
        else:
            if rng is None:
                raise ArgumentError("sampled grad_check needs an rng")
            idxs = sorted(set(int(i) for i in rng.integers(0, n, samples_per_tensor)))
        ana_flat = analytic[name].reshape(-1)
        for i in idxs:
            rel = fd_error(flat, i, ana_flat[i], eps)
            for retry in retry_eps:
                if rel < 1e-4:
                    break
                rel = min(rel, fd_error(flat, i, ana_flat[i], retry))
            worst = max(worst, rel)
    return worst
