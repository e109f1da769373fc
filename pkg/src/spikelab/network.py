"""Spiking network graph: encoding, time-unrolled forward pass and BPTT.

The network is evaluated layer by layer over the whole time axis.  Because
there are no recurrent synapses, this is equivalent to stepping all layers
once per time step, and lets every conv/dense layer run as one batched
product over ``T*B`` frames.  Activations are arrays of shape
``(T, B, *features)``; an activation that is identical for every time step
(constant-current input passed through linear layers) is stored with a
leading axis of length 1 and broadcast where needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import numerics as nx
from .errors import FormatError, ParameterError, ShapeError, UsageError
from .neuron import NeuronSpec, SurrogateSpec, surrogate_grad, surrogate_value


@dataclass(frozen=True)
class Conv:
    cin: int
    cout: int
    k: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class Pool:
    kind: str = "max"
    size: int = 2


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Spike:
    neuron: NeuronSpec = field(default_factory=NeuronSpec)
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Union[Conv, Pool, Dense, Spike, Flatten]
ENCODERS = ("constant_current", "poisson_rate")
MODES = ("spiking", "relaxed")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    T: int = 4
    encoder: str = "constant_current"
    decoder: str = "firing_rate"
    input_shape: tuple = (1, 28, 28)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.T < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if self.encoder not in ENCODERS:
            raise ParameterError(f"unknown encoder {self.encoder!r}; expected one of {ENCODERS}")
        if self.decoder != "firing_rate":
            raise ParameterError(f"unknown decoder {self.decoder!r}; only 'firing_rate' is supported")
        if not any(isinstance(l, Spike) for l in self.layers):
            raise ParameterError("a network needs at least one Spike layer")
        if not isinstance(self.layers[-1], Spike):
            raise ParameterError("the last layer must be a Spike layer (firing-rate decoding)")
        shapes = layer_shapes(self)
        if len(shapes[-1]) != 1:
            raise ShapeError(f"network output must be flat (classes,), got {shapes[-1]}")

    @property
    def n_classes(self) -> int:
        return layer_shapes(self)[-1][0]


def layer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-sample output shape of every layer (input shape excluded)."""
    shape = tuple(spec.input_shape)
    out = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            if len(shape) != 3 or shape[0] != layer.cin:
                raise ShapeError(f"layer {i} Conv expects (C={layer.cin},H,W), got {shape}")
            if layer.k > shape[1] + 2 * layer.pad or layer.k > shape[2] + 2 * layer.pad:
                raise ShapeError(f"layer {i} Conv kernel {layer.k} exceeds padded input {shape}")
            shape = (layer.cout,
                     nx.conv_output_size(shape[1], layer.k, layer.stride, layer.pad),
                     nx.conv_output_size(shape[2], layer.k, layer.stride, layer.pad))
        elif isinstance(layer, Pool):
            if len(shape) != 3 or shape[1] % layer.size or shape[2] % layer.size:
                raise ShapeError(f"layer {i} Pool size {layer.size} does not divide input {shape}")
            shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
        elif isinstance(layer, Dense):
            if shape != (layer.n_in,):
                raise ShapeError(f"layer {i} Dense expects ({layer.n_in},), got {shape}")
            shape = (layer.n_out,)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Spike):
            pass
        else:
            raise ParameterError(f"layer {i}: unknown layer type {type(layer).__name__}")
        out.append(shape)
    return out


def default_spec(T: int = 4, neuron: NeuronSpec | None = None,
                 surrogate: SurrogateSpec | None = None,
                 encoder: str = "constant_current") -> NetworkSpec:
    """Two conv blocks (conv, spike, max-pool) and a spiking dense read-out."""
    spk = Spike(neuron or NeuronSpec(), surrogate or SurrogateSpec())
    return NetworkSpec(
        layers=(Conv(1, 8, 3, 1, 1), spk, Pool("max", 2),
                Conv(8, 16, 3, 1, 1), spk, Pool("max", 2),
                Flatten(), Dense(16 * 7 * 7, 10), spk),
        T=T, encoder=encoder, input_shape=(1, 28, 28))


class Network:
    """A :class:`NetworkSpec` plus its parameters and per-layer thresholds.

    ``params[i]`` is ``{"weight": ..., "bias": ...}`` for conv/dense layers
    and ``None`` otherwise.  ``thresholds[i]`` holds the firing threshold of
    Spike layer ``i`` (initialised from its NeuronSpec, changed by
    calibration).
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.params: list[dict | None] = []
        self.thresholds: list[float | None] = []
        for layer in spec.layers:
            if isinstance(layer, Conv):
                self.params.append({"weight": np.zeros((layer.cout, layer.cin, layer.k, layer.k)),
                                    "bias": np.zeros(layer.cout)})
            elif isinstance(layer, Dense):
                self.params.append({"weight": np.zeros((layer.n_out, layer.n_in)),
                                    "bias": np.zeros(layer.n_out)})
            else:
                self.params.append(None)
            self.thresholds.append(float(layer.neuron.v_threshold) if isinstance(layer, Spike) else None)
        self.version = 0

    def touch(self) -> None:
        """Mark parameters as modified; outstanding tapes become stale."""
        self.version += 1

    def parametric_layers(self) -> list[int]:
        return [i for i, p in enumerate(self.params) if p is not None]

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for p in self.params:
            if p is not None:
                out.extend((p["weight"], p["bias"]))
        return out

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.param_arrays()])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.param_count,):
            raise ShapeError(f"flat parameter vector has shape {theta.shape}, expected ({self.param_count},)")
        pos = 0
        for a in self.param_arrays():
            a[...] = theta[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        self.touch()

    def copy(self) -> "Network":
        other = Network(self.spec)
        for dst, src in zip(other.param_arrays(), self.param_arrays()):
            dst[...] = src
        other.thresholds = list(self.thresholds)
        return other

    def spike_neuron(self, i: int) -> NeuronSpec:
        layer = self.spec.layers[i]
        return replace(layer.neuron, v_threshold=self.thresholds[i])


def flatten_grads(grads: list[dict | None]) -> np.ndarray:
    return np.concatenate([np.concatenate((g["weight"].ravel(), g["bias"].ravel()))
                           for g in grads if g is not None])


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------

def encode_input(images: np.ndarray, T: int, mode: str = "constant_current",
                 rng: nx.RngStream | None = None) -> np.ndarray:
    """Turn intensities in [0, 1] into a ``(T, B, ...)`` frame sequence."""
    images = np.asarray(images, dtype=np.float64)
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ParameterError(f"pixel values must lie in [0, 1], got range [{images.min()}, {images.max()}]")
    if mode == "constant_current":
        return np.broadcast_to(images, (T,) + images.shape)
    if mode == "poisson_rate":
        if rng is None:
            raise ParameterError("poisson_rate encoding needs an RngStream")
        u = rng.generator.random((T,) + images.shape)
        return (u < images).astype(np.float64)
    raise ParameterError(f"unknown encoder {mode!r}; expected one of {ENCODERS}")


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

@dataclass
class Tape:
    network: Network
    version: int
    mode: str
    batch: int
    T: int
    caches: list = field(default_factory=list)


def _merge(a: np.ndarray) -> np.ndarray:
    return a.reshape((a.shape[0] * a.shape[1],) + a.shape[2:])


def _split(a: np.ndarray, t: int) -> np.ndarray:
    return a.reshape((t, a.shape[0] // t) + a.shape[1:])


def _spike_forward(neuron: NeuronSpec, surrogate: SurrogateSpec, x: np.ndarray, T: int, mode: str):
    thr = neuron.v_threshold
    lam, gain = neuron.leak, neuron.input_gain
    shape = (T,) + x.shape[1:]
    h_all = np.empty(shape)
    s_all = np.empty(shape)
    v = np.zeros(x.shape[1:])
    hard = neuron.reset_mode == "hard"
    for t in range(T):
        xt = x[0] if x.shape[0] == 1 else x[t]
        h = h_all[t]
        if lam == 1.0 and gain == 1.0:
            np.add(v, xt, out=h)
        else:
            np.multiply(v, lam, out=h)
            h += xt if gain == 1.0 else gain * xt
        st = s_all[t]
        if mode == "spiking":
            fired = h >= thr
            st[...] = fired
            v = np.where(fired, neuron.v_reset, h) if hard else h - thr * st
        else:
            st[...] = surrogate_value(surrogate, h - thr)
            v = h * (1.0 - st) + neuron.v_reset * st if hard else h - thr * st
    return s_all, h_all


def _spike_backward(neuron: NeuronSpec, surrogate: SurrogateSpec, h_all, s_all, ds, mode: str):
    thr = neuron.v_threshold
    lam, gain = neuron.leak, neuron.input_gain
    sg = surrogate_grad(surrogate, h_all - thr)
    hard = neuron.reset_mode == "hard"
    if mode == "spiking":
        # reset is detached: the spike in the reset branch is a constant
        dvdh = (1.0 - s_all) if hard else None
    else:
        dvdh = (1.0 - s_all) + (neuron.v_reset - h_all) * sg if hard else 1.0 - thr * sg
    dx = sg
    np.multiply(sg, ds, out=dx)  # dx[t] now holds ds[t] * f'(h[t] - thr)
    dv = None
    tmp = np.empty(h_all.shape[1:])
    for t in range(h_all.shape[0] - 1, -1, -1):
        dh = dx[t]
        if dv is not None:
            if dvdh is None:
                dh += dv
            else:
                dh += np.multiply(dv, dvdh[t], out=tmp)
        if gain != 1.0:
            dv = lam * dh if lam != 1.0 else dh.copy()
            dh *= gain
        else:
            # dx[t] is final here, so dv may alias it
            dv = lam * dh if lam != 1.0 else dh
    return dx


def forward(net: Network, images: np.ndarray, mode: str = "spiking",
            rng: nx.RngStream | None = None):
    """Encode ``images`` and run the network; returns ``(rates, tape)``."""
    spec = net.spec
    images = np.asarray(images, dtype=np.float64)
    if images.shape[1:] != spec.input_shape:
        raise ShapeError(f"input shape {images.shape[1:]} does not match network input {spec.input_shape}")
    frames = encode_input(images, spec.T, spec.encoder, rng)
    if spec.encoder == "constant_current":
        frames = images[None]
    return forward_frames(net, frames, mode)


def forward_frames(net: Network, frames: np.ndarray, mode: str = "spiking"):
    """Run pre-encoded frames ``(T or 1, B, ...)`` through the network.

    A leading axis of length 1 means the same frame at every time step.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    spec = net.spec
    T = spec.T
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2 or frames.shape[2:] != spec.input_shape or frames.shape[0] not in (1, T):
        raise ShapeError(f"frames of shape {frames.shape} do not match (T={T}, B, {spec.input_shape})")
    tape = Tape(net, net.version, mode, frames.shape[1], T)
    act = frames
    for i, layer in enumerate(spec.layers):
        tn = act.shape[0]
        if isinstance(layer, Conv):
            p = net.params[i]
            out, cols = nx.conv2d_forward(_merge(act), p["weight"], p["bias"], layer.stride, layer.pad)
            tape.caches.append((act, cols))
            act = _split(out, tn)
        elif isinstance(layer, Dense):
            p = net.params[i]
            tape.caches.append(act)
            act = _split(nx.dense(_merge(act), p["weight"], p["bias"]), tn)
        elif isinstance(layer, Pool):
            pooled = _split(nx.pool2d(_merge(act), layer.kind, layer.size), tn)
            tape.caches.append((act, pooled))
            act = pooled
        elif isinstance(layer, Flatten):
            tape.caches.append(act.shape)
            act = act.reshape(act.shape[:2] + (-1,))
        else:
            neuron = net.spike_neuron(i)
            s, h = _spike_forward(neuron, layer.surrogate, act, T, mode)
            tape.caches.append((h, s, act.shape[0]))
            act = s
    rates = act.mean(axis=0)
    return rates, tape


def backward(net: Network, tape: Tape, d_rates: np.ndarray, return_input_grads: bool = False):
    """BPTT from ``d_rates = dL/d(rates)`` to every parameter.

    Returns a list aligned with ``net.params`` of ``{"weight", "bias"}``
    gradient dicts (``None`` for parameter-free layers).  With
    ``return_input_grads`` the gradient arriving at each layer's input is
    also returned, as a list of arrays.
    """
    if tape.network is not net or tape.version != net.version:
        raise UsageError("tape does not belong to this network state; re-run forward")
    spec = net.spec
    d_rates = np.asarray(d_rates, dtype=np.float64)
    if d_rates.shape != (tape.batch, spec.n_classes):
        raise ShapeError(f"d_rates shape {d_rates.shape} does not match ({tape.batch}, {spec.n_classes})")
    grads: list[dict | None] = [None] * len(spec.layers)
    input_grads: list[np.ndarray | None] = [None] * len(spec.layers)
    g = np.broadcast_to(d_rates / tape.T, (tape.T,) + d_rates.shape)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = tape.caches[i]
        need_input = i > 0 or return_input_grads
        if isinstance(layer, Spike):
            h, s, tin = cache
            g = _spike_backward(net.spike_neuron(i), layer.surrogate, h, s, g, tape.mode)
            if tin == 1:
                g = g.sum(axis=0, keepdims=True)
        elif isinstance(layer, Conv):
            act, cols = cache
            p = net.params[i]
            tn = act.shape[0]
            dx, dw, db = nx.conv2d_backward(_merge(np.ascontiguousarray(g)), _merge(act), p["weight"],
                                            layer.stride, layer.pad, cols=cols, need_input=need_input)
            grads[i] = {"weight": dw, "bias": db}
            g = None if dx is None else _split(dx, tn)
        elif isinstance(layer, Dense):
            act = cache
            p = net.params[i]
            tn = act.shape[0]
            dx, dw, db = nx.dense_backward(_merge(np.ascontiguousarray(g)), _merge(act), p["weight"])
            grads[i] = {"weight": dw, "bias": db}
            g = _split(dx, tn)
        elif isinstance(layer, Pool):
            act, pooled = cache
            g = _split(nx.pool2d_backward(_merge(np.ascontiguousarray(g)), _merge(act),
                                          layer.kind, layer.size, _merge(pooled)), act.shape[0])
        else:
            g = g.reshape(cache)
        input_grads[i] = g
    if return_input_grads:
        return grads, input_grads
    return grads


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

CKPT_MAGIC = b"SPKL"
CKPT_VERSION = 1


def _layer_arrays(net: Network, i: int) -> list[np.ndarray]:
    if net.params[i] is not None:
        return [net.params[i]["weight"], net.params[i]["bias"]]
    if net.thresholds[i] is not None:
        return [np.array([net.thresholds[i]])]
    return []


def save_checkpoint(net: Network, path) -> None:
    """Write parameters and spike thresholds as little-endian float64 blocks.

    Layout: ``b"SPKL"``, u32 version, u32 layer count, then per layer a u32
    array count and, per array, u32 ndim, ndim u32 dims and the raw data.
    """
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(net.spec.layers))]
    for i in range(len(net.spec.layers)):
        arrays = _layer_arrays(net, i)
        chunks.append(struct.pack("<I", len(arrays)))
        for a in arrays:
            chunks.append(struct.pack("<I", a.ndim))
            chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
            chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> list[list[np.ndarray]]:
    """Parse a checkpoint file into per-layer lists of arrays."""
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}, expected {CKPT_MAGIC!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError(f"checkpoint truncated at byte {pos}: need {size} more bytes, have {len(buf) - pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, n_layers = take("<II")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        (n_arrays,) = take("<I")
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape))
            if pos + 8 * count > len(buf):
                raise FormatError(f"checkpoint truncated: expected {8 * count} data bytes, have {len(buf) - pos}")
            arrays.append(np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape))
            pos += 8 * count
        layers.append(arrays)
    return layers


def load_checkpoint(path, spec: NetworkSpec) -> Network:
    """Rebuild a :class:`Network` for ``spec`` from a checkpoint file."""
    layers = read_checkpoint(path)
    net = Network(spec)
    expected = [[a.shape for a in _layer_arrays(net, i)] for i in range(len(spec.layers))]
    found = [[a.shape for a in arrays] for arrays in layers]
    if expected != found:
        raise ShapeError(f"checkpoint shapes {found} do not match network shapes {expected}")
    for i, arrays in enumerate(layers):
        if net.params[i] is not None:
            net.params[i]["weight"][...] = arrays[0]
            net.params[i]["bias"][...] = arrays[1]
        elif net.thresholds[i] is not None:
            net.thresholds[i] = float(arrays[0][0])
    return net
