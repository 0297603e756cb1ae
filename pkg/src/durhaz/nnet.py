"""A small numpy neural-network engine.

Networks are a stack of dense layers, optionally followed by one
unidirectional LSTM layer, topped by a single-unit output layer. The loss
is a summed squared error over a sequence, and gradients come from full
backpropagation through time.

Binary model format (all integers uint32, all reals float64, little-endian)::

    magic      8 bytes   b"DHZNET\\x00\\x01"
    version    uint32    currently 1
    input      uint32    input width
    n_layers   uint32
    layers     n_layers x (kind uint32, width uint32)
    params     float64[] layer by layer; dense: W (out x in, row-major), b;
                         recurrent: Wx (4n x in), Wh (4n x n), b (4n),
                         gate blocks ordered input, forget, output, candidate
"""
from __future__ import annotations

import copy
import enum
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    InvalidArchitectureError,
    InvalidGradientError,
    InvalidInputError,
)

MAGIC = b"DHZNET\x00\x01"
FORMAT_VERSION = 1
MAX_CHECK_PARAMS = 10_000


class LayerKind(enum.IntEnum):
    DENSE_TANH = 0
    DENSE_LINEAR = 1
    DENSE_SIGMOID = 2
    RECURRENT = 3


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    width: int

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if int(self.width) < 1:
            raise InvalidArchitectureError(f"layer width must be >= 1, got {self.width}")
        object.__setattr__(self, "width", int(self.width))


def DenseTanh(width):  # noqa: N802 - reads like a layer constructor
    return LayerSpec(LayerKind.DENSE_TANH, width)


def DenseLinear(width):  # noqa: N802
    return LayerSpec(LayerKind.DENSE_LINEAR, width)


def DenseSigmoid(width):  # noqa: N802
    return LayerSpec(LayerKind.DENSE_SIGMOID, width)


def Recurrent(width):  # noqa: N802
    return LayerSpec(LayerKind.RECURRENT, width)


def _sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(kind, z):
    if kind is LayerKind.DENSE_TANH:
        return np.tanh(z)
    if kind is LayerKind.DENSE_SIGMOID:
        return _sigmoid(z)
    return z


def _activation_grad(kind, a):
    """Derivative of the activation expressed through its output ``a``."""
    if kind is LayerKind.DENSE_TANH:
        return 1.0 - a * a
    if kind is LayerKind.DENSE_SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(a)


def check_architecture(specs: Sequence[LayerSpec], input_width: int) -> None:
    if not specs:
        raise InvalidArchitectureError("network needs at least one layer")
    if int(input_width) < 1:
        raise InvalidArchitectureError(f"input width must be >= 1, got {input_width}")
    kinds = [s.kind for s in specs]
    n_rec = kinds.count(LayerKind.RECURRENT)
    if n_rec > 1:
        raise InvalidArchitectureError("at most one recurrent layer is supported")
    if n_rec == 1 and kinds.index(LayerKind.RECURRENT) != len(specs) - 2:
        raise InvalidArchitectureError("the recurrent layer must be the last hidden layer")
    if specs[-1].kind is LayerKind.RECURRENT:
        raise InvalidArchitectureError("the output layer must be dense")
    if specs[-1].width != 1:
        raise InvalidArchitectureError(f"output layer width must be 1, got {specs[-1].width}")


class Network:
    """Layered predictor with optional recurrent state.

    ``params`` holds one dict of arrays per layer. ``state`` is ``(h, c)``
    for the recurrent layer, or ``None`` for purely feedforward nets.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_width: int, params: list[dict]):
        self.specs = tuple(specs)
        self.input_width = int(input_width)
        check_architecture(self.specs, self.input_width)
        self.params = params
        self._check_shapes()
        self.state = None
        self.reset_state()

    def _check_shapes(self):
        width = self.input_width
        for spec, p in zip(self.specs, self.params):
            n = spec.width
            if spec.kind is LayerKind.RECURRENT:
                expect = {"Wx": (4 * n, width), "Wh": (4 * n, n), "b": (4 * n,)}
            else:
                expect = {"W": (n, width), "b": (n,)}
            if set(p) != set(expect) or any(p[k].shape != s for k, s in expect.items()):
                raise InvalidArchitectureError(
                    f"parameter shapes {({k: v.shape for k, v in p.items()})} do not match {expect}")
            width = n

    @property
    def recurrent_index(self) -> int | None:
        for i, s in enumerate(self.specs):
            if s.kind is LayerKind.RECURRENT:
                return i
        return None

    @property
    def is_recurrent(self) -> bool:
        return self.recurrent_index is not None

    def reset_state(self) -> None:
        i = self.recurrent_index
        if i is None:
            self.state = None
        else:
            n = self.specs[i].width
            self.state = (np.zeros(n), np.zeros(n))

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def param_arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical (serialisation) order."""
        out = []
        for spec, p in zip(self.specs, self.params):
            keys = ("Wx", "Wh", "b") if spec.kind is LayerKind.RECURRENT else ("W", "b")
            out.extend(p[k] for k in keys)
        return out

    def param_names(self) -> list[str]:
        names = []
        for i, spec in enumerate(self.specs):
            keys = ("Wx", "Wh", "b") if spec.kind is LayerKind.RECURRENT else ("W", "b")
            names.extend(f"layer{i}.{k}" for k in keys)
        return names

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def step(self, x) -> float:
        """Advance one frame, updating recurrent state; returns the output."""
        a = np.asarray(x, dtype=float)
        if a.shape != (self.input_width,):
            raise InvalidInputError(f"expected a row of width {self.input_width}, got shape {a.shape}")
        for spec, p in zip(self.specs, self.params):
            if spec.kind is LayerKind.RECURRENT:
                h, c = self.state
                n = spec.width
                z = p["Wx"] @ a + p["Wh"] @ h + p["b"]
                ifo = _sigmoid(z[:3 * n])
                g = np.tanh(z[3 * n:])
                c = ifo[n:2 * n] * c + ifo[:n] * g
                h = ifo[2 * n:] * np.tanh(c)
                self.state = (h, c)
                a = h
            else:
                a = _activate(spec.kind, p["W"] @ a + p["b"])
        return float(a[0])

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, self.input_width, len(self.specs))]
        for s in self.specs:
            parts.append(struct.pack("<II", int(s.kind), s.width))
        for arr in self.param_arrays():
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Network":
        net, end = cls._read(blob, 0)
        if end != len(blob):
            raise InvalidInputError(f"{len(blob) - end} trailing bytes after network")
        return net

    @classmethod
    def _read(cls, blob: bytes, offset: int) -> tuple["Network", int]:
        if blob[offset:offset + 8] != MAGIC:
            raise InvalidInputError("not a durhaz network file (bad magic)")
        offset += 8
        version, input_width, n_layers = struct.unpack_from("<III", blob, offset)
        offset += 12
        if version != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported network format version {version}")
        specs = []
        for _ in range(n_layers):
            kind, width = struct.unpack_from("<II", blob, offset)
            offset += 8
            specs.append(LayerSpec(LayerKind(kind), width))
        params = _empty_params(specs, input_width)
        for arr in _flat_param_views(specs, params):
            nbytes = arr.size * 8
            chunk = blob[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise InvalidInputError("network file truncated")
            arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
            offset += nbytes
        return cls(specs, input_width, params), offset


def _empty_params(specs, input_width) -> list[dict]:
    params = []
    width = input_width
    for s in specs:
        n = s.width
        if s.kind is LayerKind.RECURRENT:
            params.append({"Wx": np.zeros((4 * n, width)), "Wh": np.zeros((4 * n, n)),
                           "b": np.zeros(4 * n)})
        else:
            params.append({"W": np.zeros((n, width)), "b": np.zeros(n)})
        width = n
    return params


def _flat_param_views(specs, params):
    for s, p in zip(specs, params):
        keys = ("Wx", "Wh", "b") if s.kind is LayerKind.RECURRENT else ("W", "b")
        for k in keys:
            yield p[k]


def init_network(specs: Sequence[LayerSpec], input_width: int, seed: int = 0,
                 init_scale: float = 0.1) -> Network:
    """Network with weights drawn uniformly from ``[-init_scale, init_scale]``."""
    specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
    check_architecture(specs, input_width)
    if not init_scale > 0:
        raise InvalidArchitectureError(f"init_scale must be positive, got {init_scale}")
    rng = np.random.default_rng(seed)
    params = _empty_params(specs, input_width)
    for arr in _flat_param_views(specs, params):
        arr[...] = rng.uniform(-init_scale, init_scale, size=arr.shape)
    return Network(specs, input_width, params)


def parameter_count(specs: Sequence[LayerSpec], input_width: int) -> int:
    total, width = 0, input_width
    for s in specs:
        n = s.width
        total += 4 * n * (width + n) + 4 * n if s.kind is LayerKind.RECURRENT else n * width + n
        width = n
    return total


def _check_inputs(net: Network, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_width:
        raise InvalidInputError(
            f"expected inputs of shape (T, {net.input_width}), got {x.shape}")
    return x


def _forward(net: Network, x: np.ndarray, reset: bool):
    """Forward pass returning outputs and the cache needed for BPTT."""
    if reset:
        net.reset_state()
    acts = [x]
    rec_cache = None
    a = x
    for spec, p in zip(net.specs, net.params):
        if spec.kind is LayerKind.RECURRENT:
            n = spec.width
            T = len(a)
            zx = a @ p["Wx"].T + p["b"]
            Wh = p["Wh"]
            h, c = net.state
            h0, c0 = h, c
            dt = zx.dtype
            H = np.empty((T, n), dtype=dt)
            C = np.empty((T, n), dtype=dt)
            G = np.empty((T, 4 * n), dtype=dt)   # activated gates i, f, o, g
            TC = np.empty((T, n), dtype=dt)      # tanh(c_t)
            for t in range(T):
                z = zx[t] + Wh @ h
                ifo = _sigmoid(z[:3 * n])
                g = np.tanh(z[3 * n:])
                c = ifo[n:2 * n] * c + ifo[:n] * g
                tc = np.tanh(c)
                h = ifo[2 * n:] * tc
                G[t, :3 * n] = ifo
                G[t, 3 * n:] = g
                C[t] = c
                TC[t] = tc
                H[t] = h
            net.state = (h, c)
            rec_cache = (h0, c0, H, C, G, TC)
            a = H
        else:
            a = _activate(spec.kind, a @ p["W"].T + p["b"])
        acts.append(a)
    return acts[-1][:, 0], (acts, rec_cache)


def forward_sequence(net: Network, inputs, reset: bool = True) -> np.ndarray:
    """Run the network over ``inputs`` (T rows) and return T outputs.

    With ``reset=False`` the recurrent state left by the previous call is
    carried in. Either way ``net.state`` afterwards reflects the whole
    sequence.
    """
    x = _check_inputs(net, inputs)
    out, _ = _forward(net, x, reset)
    return out


def backward_sequence(net: Network, inputs, targets, reset: bool = True):
    """Summed squared error over the sequence and its gradients.

    Returns ``(grads, loss)`` where ``grads`` parallels
    ``net.param_arrays()``.
    """
    x = _check_inputs(net, inputs)
    y = np.asarray(targets, dtype=float).ravel()
    if len(y) != len(x):
        raise InvalidInputError(f"{len(x)} input rows but {len(y)} targets")
    out, (acts, rec_cache) = _forward(net, x, reset)
    err = out - y
    loss = float(np.dot(err, err))

    grads_per_layer = [None] * len(net.specs)
    delta = (2.0 * err)[:, None]   # dL/d(layer output)
    for i in range(len(net.specs) - 1, -1, -1):
        spec, p = net.specs[i], net.params[i]
        a_in = acts[i]
        if spec.kind is LayerKind.RECURRENT:
            dWx, dWh, db, delta = _lstm_backward(p, spec.width, a_in, rec_cache, delta)
            grads_per_layer[i] = (dWx, dWh, db)
        else:
            dz = delta * _activation_grad(spec.kind, acts[i + 1])
            grads_per_layer[i] = (dz.T @ a_in, dz.sum(axis=0))
            delta = dz @ p["W"]
    grads = [g for layer in grads_per_layer for g in layer]
    return grads, loss


def _lstm_backward(p, n, x, cache, dH):
    h0, c0, H, C, G, TC = cache
    T = len(x)
    Wh = p["Wh"]
    dZ = np.empty((T, 4 * n))
    dh_next = np.zeros(n)
    dc_next = np.zeros(n)
    for t in range(T - 1, -1, -1):
        i, f, o, g = G[t, :n], G[t, n:2 * n], G[t, 2 * n:3 * n], G[t, 3 * n:]
        tc = TC[t]
        c_prev = C[t - 1] if t > 0 else c0
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:n] = dc * g * i * (1.0 - i)
        dz[n:2 * n] = dc * c_prev * f * (1.0 - f)
        dz[2 * n:3 * n] = dh * tc * o * (1.0 - o)
        dz[3 * n:] = dc * i * (1.0 - g * g)
        dh_next = Wh.T @ dz
        dc_next = dc * f
    H_prev = np.vstack([h0[None, :], H[:-1]])
    dWx = dZ.T @ x
    dWh = dZ.T @ H_prev
    db = dZ.sum(axis=0)
    return dWx, dWh, db, dZ @ p["Wx"]


def grad_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))


def sgd_step(net: Network, grads, learning_rate: float, clip_norm: float | None = None) -> Network:
    """In-place update ``w <- w - lr * g``; returns ``net``.

    With ``clip_norm`` set, the gradient is rescaled so its global L2 norm
    does not exceed it.
    """
    arrays = net.param_arrays()
    if len(grads) != len(arrays) or any(np.shape(g) != a.shape for g, a in zip(grads, arrays)):
        raise InvalidGradientError("gradient shapes do not match network parameters")
    scale = 1.0
    if clip_norm is not None:
        norm = grad_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm
    lr = learning_rate * scale
    for a, g in zip(arrays, grads):
        a -= lr * np.asarray(g)
    return net


class GradientCheckReport(NamedTuple):
    max_rel_error: float
    worst_index: int
    worst_name: str
    passed: bool


def sequence_loss(net: Network, inputs, targets) -> float:
    out = forward_sequence(net, inputs)
    err = out - np.asarray(targets, dtype=float).ravel()
    return float(np.dot(err, err))


def _extended_copy(net: Network) -> Network:
    ext = net.copy()
    ext.params = [{k: v.astype(np.longdouble) for k, v in p.items()} for p in ext.params]
    return ext


def gradient_check(net: Network, inputs, targets, step: float = 1e-5, tolerance: float = 1e-4,
                   grads=None, floor: float = 1e-7) -> GradientCheckReport:
    """Compare analytic gradients against central finite differences.

    The relative error of each entry is ``|a - n| / max(|a|, |n|, floor)``.
    The perturbed losses are evaluated in extended precision
    (``np.longdouble``): in float64 the cancellation in ``L(w+h) - L(w-h)``
    alone produces relative errors above 1e-4 for gradient entries near
    1e-7 at ``h = 1e-5``. ``grads`` may be supplied to test a gradient other
    than the network's own backward pass. ``net`` is left unchanged.
    """
    if net.n_params > MAX_CHECK_PARAMS:
        raise InvalidArchitectureError(
            f"gradient check limited to {MAX_CHECK_PARAMS} parameters, net has {net.n_params}")
    if grads is None:
        grads, _ = backward_sequence(net.copy(), inputs, targets)
    ext = _extended_copy(net)
    x = _check_inputs(net, inputs).astype(np.longdouble)
    y = np.asarray(targets, dtype=float).ravel().astype(np.longdouble)

    def loss():
        out, _ = _forward(ext, x, reset=True)
        err = out - y
        return np.sum(err * err)

    h = np.longdouble(step)
    worst, worst_idx, worst_name = 0.0, -1, ""
    flat = 0
    for name, arr, g in zip(ext.param_names(), ext.param_arrays(), grads):
        g = np.asarray(g).ravel()
        view = arr.reshape(-1)
        for j in range(view.size):
            orig = view[j]
            view[j] = orig + h
            lp = loss()
            view[j] = orig - h
            lm = loss()
            view[j] = orig
            numeric = float((lp - lm) / (2 * h))
            rel = abs(g[j] - numeric) / max(abs(g[j]), abs(numeric), floor)
            if rel > worst or worst_idx < 0:
                worst, worst_idx, worst_name = rel, flat, f"{name}[{j}]"
            flat += 1
    return GradientCheckReport(float(worst), worst_idx, worst_name, bool(worst < tolerance))


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(net.to_bytes())


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        return Network.from_bytes(fh.read())
