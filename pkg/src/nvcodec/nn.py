"""Layers, parameter management, the Adam optimizer and checkpoint I/O.

Modules discover their parameters by attribute walk, so checkpoint names are
dotted attribute paths (``encoder.blocks.0.conv1.weight``). Creation order is
deterministic, which keeps checkpoints byte-stable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BitstreamError
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Minimal container: parameters are attributes, submodules recurse."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise BitstreamError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise BitstreamError(
                    f"checkpoint tensor {name} has shape {arr.shape}, model expects {p.data.shape}"
                )
            p.data = arr.copy()


# ---------------------------------------------------------------------------
# layers


def _conv_init(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0) -> np.ndarray:
    std = scale * np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=None, zero_init=False):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        if zero_init:
            w = np.zeros((out_ch, in_ch, k, k))
        else:
            w = _conv_init(rng, (out_ch, in_ch, k, k), in_ch * k * k)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=None):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(_conv_init(rng, (in_ch, out_ch, k, k), in_ch * k * k))
        self.bias = Parameter(np.zeros(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.pad)


def softplus_inverse(y: float) -> float:
    return float(np.log(np.expm1(y)))


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """Divisive normalization: x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).

    ``inverse`` multiplies instead (decoder-side IGDN). ``beta`` and ``gamma``
    are the effective (positive) coefficients.
    """
    channels = x.shape[1]
    if beta.shape != (channels,):
        raise T.ShapeMismatchError(f"gdn beta must be ({channels},), got {beta.shape}")
    if gamma.shape != (channels, channels):
        raise T.ShapeMismatchError(f"gdn gamma must be ({channels},{channels}), got {gamma.shape}")
    if np.any(beta.data <= 0):
        raise ValueError("gdn beta must stay positive after reparametrization")
    pool = T.conv2d(T.square(x), T.reshape(gamma, (channels, channels, 1, 1)), beta)
    root = T.sqrt(pool)
    return T.mul(x, root) if inverse else T.div(x, root)


class GDN(Module):
    """Learned GDN/IGDN; raw parameters pass through softplus(.)+1e-6 so the
    effective coefficients stay positive without projection."""

    FLOOR = 1e-6

    def __init__(self, channels, inverse=False):
        self.inverse = inverse
        self.raw_beta = Parameter(np.full(channels, softplus_inverse(1.0)))
        gamma0 = np.full((channels, channels), -9.0)
        np.fill_diagonal(gamma0, softplus_inverse(0.1))
        self.raw_gamma = Parameter(gamma0)

    def __call__(self, x: Tensor) -> Tensor:
        beta = T.softplus(self.raw_beta) + self.FLOOR
        gamma = T.softplus(self.raw_gamma) + self.FLOOR
        return gdn(x, beta, gamma, inverse=self.inverse)


class PReLU(Module):
    def __init__(self, channels, init=0.1):
        self.slope = Parameter(np.full(channels, init))

    def __call__(self, x: Tensor) -> Tensor:
        return T.prelu(x, self.slope)


class MaskedConv2d(Module):
    """Strictly causal conv: the kernel sees rows above and the columns left
    of center; the center tap and everything after are masked out."""

    def __init__(self, in_ch, out_ch, k, rng):
        if k % 2 == 0:
            raise ValueError("masked conv kernel must be odd")
        self.pad = k // 2
        self.weight = Parameter(_conv_init(rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self.bias = Parameter(np.zeros(out_ch))
        mask = np.ones((1, 1, k, k))
        mask[:, :, k // 2, k // 2:] = 0.0
        mask[:, :, k // 2 + 1:, :] = 0.0
        self._mask = mask

    def mask(self) -> np.ndarray:
        return self._mask

    def __call__(self, x: Tensor) -> Tensor:
        masked = T.mul(self.weight, Tensor(self._mask.astype(self.weight.data.dtype)))
        return T.conv2d(x, masked, self.bias, 1, self.pad)


@dataclass
class RecurrentState:
    """ConvLSTM cell/hidden pair."""

    c: Tensor
    h: Tensor

    @staticmethod
    def zeros(batch: int, channels: int, h: int, w: int) -> "RecurrentState":
        return RecurrentState(
            c=Tensor(np.zeros((batch, channels, h, w))),
            h=Tensor(np.zeros((batch, channels, h, w))),
        )

    def detached(self) -> "RecurrentState":
        return RecurrentState(self.c.detach(), self.h.detach())


def convlstm_step(x: Tensor, state: RecurrentState, weight: Tensor, bias: Tensor,
                  pad: int) -> tuple[Tensor, RecurrentState]:
    """One ConvLSTM update: gates convolve the concatenated [input, h]."""
    if x.shape[2:] != state.h.shape[2:] or x.shape[2:] != state.c.shape[2:]:
        raise T.ShapeMismatchError(
            f"convlstm state extent {state.h.shape[2:]} does not match input {x.shape[2:]}"
        )
    gates = T.conv2d(T.concat([x, state.h], axis=1), weight, bias, 1, pad)
    gate_i, gate_f, gate_o, gate_g = T.chunk(gates, 4, axis=1)
    c_new = T.add(
        T.mul(T.sigmoid(gate_f), state.c),
        T.mul(T.sigmoid(gate_i), T.tanh(gate_g)),
    )
    h_new = T.mul(T.sigmoid(gate_o), T.tanh(c_new))
    return h_new, RecurrentState(c=c_new, h=h_new)


class ConvLSTMCell(Module):
    def __init__(self, in_ch, hidden_ch, k, rng):
        self.hidden_ch = hidden_ch
        self.pad = k // 2
        self.weight = Parameter(_conv_init(rng, (4 * hidden_ch, in_ch + hidden_ch, k, k),
                                           (in_ch + hidden_ch) * k * k))
        self.bias = Parameter(np.zeros(4 * hidden_ch))

    def initial_state(self, batch: int, h: int, w: int) -> RecurrentState:
        return RecurrentState.zeros(batch, self.hidden_ch, h, w)

    def __call__(self, x: Tensor, state: RecurrentState) -> tuple[Tensor, RecurrentState]:
        return convlstm_step(x, state, self.weight, self.bias, self.pad)


class ResBlock(Module):
    """conv3x3 -> nonlinearity -> conv3x3 with identity skip."""

    def __init__(self, channels, rng, activation="gdn"):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        if activation == "gdn":
            self.act = GDN(channels)
        elif activation == "prelu":
            self.act = PReLU(channels)
        else:
            raise ValueError(f"unknown activation {activation!r}")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.conv2(self.act(self.conv1(x))))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self._v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i} has no gradient; run backward first")
            g = p.grad.astype(np.float64)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / bias1
            v_hat = self._v[i] / bias2
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"NVCW"
CHECKPOINT_VERSION = 1


def serialize_state(state: dict[str, np.ndarray]) -> bytes:
    """Checkpoint wire format: magic, u16 version, then per-tensor records of
    (u16 name length, UTF-8 name, u8 rank, u32 extents, little-endian f32
    payload). Round-trips byte-exactly."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    for name, arr in state.items():
        encoded = name.encode("utf-8")
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr32.ndim))
        chunks.append(struct.pack(f"<{arr32.ndim}I", *arr32.shape))
        chunks.append(arr32.tobytes())
    return b"".join(chunks)


def deserialize_state(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BitstreamError(f"bad checkpoint magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise BitstreamError(f"unsupported checkpoint version {version}")
    pos = 6
    state: dict[str, np.ndarray] = {}
    while pos < len(blob):
        try:
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            payload = blob[pos:pos + 4 * count]
            if len(payload) != 4 * count:
                raise struct.error("short payload")
            pos += 4 * count
        except struct.error as exc:
            raise BitstreamError(f"truncated checkpoint record at byte {pos}") from exc
        state[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return state


def save_checkpoint(path, model: Module) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_state(model.state_dict()))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return deserialize_state(fh.read())


def checkpoint_hash(path) -> bytes:
    """First 8 bytes of the SHA-256 of the checkpoint file; stamped into
    bitstream headers so decode can refuse foreign models."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).digest()[:8]


def state_hash(state: dict[str, np.ndarray]) -> bytes:
    return hashlib.sha256(serialize_state(state)).digest()[:8]
