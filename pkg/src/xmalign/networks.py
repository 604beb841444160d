"""Small perceptrons with hand-written backprop, an AdamW optimizer, and the
binary checkpoint format.

A network is a stack of affine layers; every layer but the last is followed
by the activation. Temporal networks apply the hidden layers to each
timestep independently, mean-pool over time, then apply the last (head)
layer to the pooled vector.

Checkpoint layout (little-endian)::

    b"XMAP"  u16 version  u16 n_networks
    per network: u16 name_len, name utf-8, u8 activation, u8 input_kind,
                 u8 frozen, u16 n_widths, u32 widths[n_widths]
    then per network, per layer: f64 W[in, out] row-major, f64 b[out]
"""

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ContractError, FormatError, TruncatedFileError, VersionMismatchError
from .ioutil import atomic_write_bytes

CHECKPOINT_MAGIC = b"XMAP"
CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    RELU = "RELU"
    TANH = "TANH"


class InputKind(str, Enum):
    FLAT_VECTOR = "FLAT_VECTOR"
    TEMPORAL_SEQUENCE = "TEMPORAL_SEQUENCE"


_ACT_CODES = {Activation.RELU: 0, Activation.TANH: 1}
_KIND_CODES = {InputKind.FLAT_VECTOR: 0, InputKind.TEMPORAL_SEQUENCE: 1}


@dataclass(frozen=True)
class NetworkSpec:
    widths: tuple
    activation: Activation = Activation.RELU
    input_kind: InputKind = InputKind.FLAT_VECTOR

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "input_kind", InputKind(self.input_kind))
        if len(self.widths) < 3:
            raise ContractError("a network needs at least one hidden layer")
        if any(w < 1 for w in self.widths):
            raise ContractError(f"layer widths must be positive: {self.widths}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def _act(kind, x):
    return np.maximum(x, 0.0) if kind == Activation.RELU else np.tanh(x)


def _act_grad(kind, pre, post):
    return (pre > 0).astype(np.float64) if kind == Activation.RELU else 1.0 - post * post


class Network:
    def __init__(self, spec: NetworkSpec, weights, biases, frozen: bool = False):
        if len(weights) != len(spec.widths) - 1 or len(biases) != len(weights):
            raise ContractError("parameter count does not match the network spec")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (spec.widths[i], spec.widths[i + 1]) or b.shape != (spec.widths[i + 1],):
                raise ContractError(f"layer {i} parameter shapes {w.shape}, {b.shape} disagree with spec")
        self.spec = spec
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.frozen = False
        if frozen:
            self.freeze()

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator) -> "Network":
        gain = 2.0 if spec.activation == Activation.RELU else 1.0
        weights, biases = [], []
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "Network":
        ws = [np.zeros((i, o)) for i, o in zip(spec.widths[:-1], spec.widths[1:])]
        return cls(spec, ws, [np.zeros(o) for o in spec.widths[1:]])

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self, frozen=None) -> "Network":
        return Network(self.spec, self.weights, self.biases, self.frozen if frozen is None else frozen)

    def freeze(self) -> "Network":
        for p in self.params:
            p.flags.writeable = False
        self.frozen = True
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        temporal = self.spec.input_kind == InputKind.TEMPORAL_SEQUENCE
        want = 3 if temporal else 2
        single = x.ndim == want - 1
        if single:
            x = x[None]
        if x.ndim != want or x.shape[-1] != self.spec.in_dim:
            raise ContractError(f"input shape {np.shape(x)} does not fit widths {self.spec.widths}")
        if temporal and x.shape[1] < 1:
            raise ContractError("empty sequence")
        return x, single

    def forward_cached(self, x):
        x, single = self._check_input(x)
        act = self.spec.activation
        cache = {"inputs": [], "pre": [], "post": [], "single": single}
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            cache["inputs"].append(h)
            pre = h @ w + b
            h = _act(act, pre)
            cache["pre"].append(pre)
            cache["post"].append(h)
        if self.spec.input_kind == InputKind.TEMPORAL_SEQUENCE:
            cache["steps"] = h.shape[1]
            h = h.mean(axis=1)
        cache["inputs"].append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return (out[0] if single else out), cache

    def forward(self, x):
        return self.forward_cached(x)[0]

    def hidden_states(self, x):
        """Per-timestep activations entering the pooling stage, shape (N, T, w)."""
        _, cache = self.forward_cached(x)
        return cache["post"][-1]

    def backward(self, cache, grad_out):
        """Return (parameter gradients in ``params`` order, gradient wrt input)."""
        g = np.asarray(grad_out, dtype=np.float64)
        if cache["single"]:
            g = g[None]
        act = self.spec.activation
        n_layers = len(self.weights)
        grads = [None] * (2 * n_layers)
        pooled = cache["inputs"][-1]
        grads[-2] = pooled.T @ g
        grads[-1] = g.sum(axis=0)
        g = g @ self.weights[-1].T
        if self.spec.input_kind == InputKind.TEMPORAL_SEQUENCE:
            steps = cache["steps"]
            g = np.repeat(g[:, None, :] / steps, steps, axis=1)
        for i in range(n_layers - 2, -1, -1):
            g = g * _act_grad(act, cache["pre"][i], cache["post"][i])
            x_in = cache["inputs"][i]
            grads[2 * i] = x_in.reshape(-1, x_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * i + 1] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if cache["single"] else g)


def forward_visual(params: Network, frame):
    return params.forward(frame)


def forward_audio(params: Network, clip_audio):
    if params.spec.input_kind != InputKind.TEMPORAL_SEQUENCE:
        raise ContractError("audio encoder must be a temporal network")
    return params.forward(clip_audio)


def generate(params_g: Network, z_noise, z_cond):
    """G(z_noise, z_cond): the generator reads the concatenation [noise, condition]."""
    z_noise = np.asarray(z_noise, dtype=np.float64)
    z_cond = np.asarray(z_cond, dtype=np.float64)
    if z_noise.ndim != z_cond.ndim or z_noise.shape[:-1] != z_cond.shape[:-1]:
        raise ContractError("noise and condition batches disagree")
    if z_noise.shape[-1] + z_cond.shape[-1] != params_g.spec.in_dim:
        raise ContractError("latent sizes do not match the generator input width")
    return params_g.forward(np.concatenate([z_noise, z_cond], axis=-1))


@dataclass
class AdamConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with decoupled weight decay, updating parameter arrays in place."""

    def __init__(self, params, config: AdamConfig = AdamConfig()):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params, grads):
        c = self.config
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - c.beta1**t
        corr2 = 1.0 - c.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / corr1) / (np.sqrt(v / corr2) + c.eps)
            p -= c.lr * c.weight_decay * p
            p -= c.lr * update


def checkpoint_to_bytes(networks: dict) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<HH", CHECKPOINT_VERSION, len(networks))]
    for name, net in networks.items():
        raw = name.encode("utf-8")
        s = net.spec
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BBBH", _ACT_CODES[s.activation], _KIND_CODES[s.input_kind],
                                 int(net.frozen), len(s.widths)))
        parts.append(struct.pack(f"<{len(s.widths)}I", *s.widths))
    for net in networks.values():
        for p in net.params:
            parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.off = buf, 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise TruncatedFileError(f"checkpoint truncated while reading {what}")
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def checkpoint_from_bytes(buf: bytes) -> dict:
    if len(buf) < 4 or buf[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint file (magic {bytes(buf[:4])!r})")
    r = _Reader(buf)
    r.take(4, "magic")
    (version,) = r.unpack("<H", "version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (count,) = r.unpack("<H", "network count")
    acts = {v: k for k, v in _ACT_CODES.items()}
    kinds = {v: k for k, v in _KIND_CODES.items()}
    headers = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "network name").decode("utf-8")
        act, kind, frozen, n_w = r.unpack("<BBBH", f"spec of {name}")
        if act not in acts or kind not in kinds:
            raise FormatError(f"unknown activation/input kind code in {name}")
        widths = r.unpack(f"<{n_w}I", f"widths of {name}")
        try:
            spec = NetworkSpec(widths, acts[act], kinds[kind])
        except ContractError as exc:
            raise FormatError(f"bad spec for {name}: {exc}") from None
        headers.append((name, spec, bool(frozen)))
    out = {}
    for name, spec, frozen in headers:
        ws, bs = [], []
        for i, o in zip(spec.widths[:-1], spec.widths[1:]):
            ws.append(np.frombuffer(r.take(8 * i * o, f"weights of {name}"), "<f8").reshape(i, o))
            bs.append(np.frombuffer(r.take(8 * o, f"biases of {name}"), "<f8"))
        out[name] = Network(spec, ws, bs, frozen)
    if r.off != len(buf):
        raise FormatError(f"{len(buf) - r.off} trailing bytes in checkpoint")
    return out


def save_checkpoint(networks: dict, path) -> None:
    atomic_write_bytes(Path(path), checkpoint_to_bytes(networks))


def load_checkpoint(path) -> dict:
    return checkpoint_from_bytes(Path(path).read_bytes())
