"""Weight initialisers, the surrogate second-moment estimate and calibration.

``compute_sigma_w`` maps a scheme and a layer's fan sizes to the weight
standard deviation.  The ``ikun_v1``/``ikun_v2`` kinds additionally divide
by the input variance and by ``E[f'(H)^2]``, the second moment of the
surrogate derivative under the membrane-potential distribution.

``initialize_network`` has two modes for the ikun kinds:

* analytic: input variance 1 and ``H ~ N(0, 1)``; thresholds untouched.
* calibrated: a data batch is pushed through the already initialised
  prefix of the network and the statistics are measured layer by layer;
  the firing threshold of each layer is moved to the measured mean
  membrane potential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ParameterError
from .network import Conv, Dense, Network, Pool, Spike, _spike_forward
from .neuron import SurrogateSpec, surrogate_grad

INIT_KINDS = ("lecun", "xavier", "kaiming", "normal", "ikun_v1", "ikun_v2")
IKUN_KINDS = ("ikun_v1", "ikun_v2")

DEFAULT_EF2_SAMPLES = 200_000
CALIBRATION_PASSES = 2


@dataclass(frozen=True)
class InitScheme:
    kind: str = "kaiming"
    alpha: float = 2.0
    fixed_std: float = 0.05

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ParameterError(f"unknown init kind {self.kind!r}; expected one of {INIT_KINDS}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"init alpha must be finite and > 0, got {self.alpha}")
        if not (math.isfinite(self.fixed_std) and self.fixed_std >= 0):
            raise ParameterError(f"fixed_std must be finite and >= 0, got {self.fixed_std}")

    @property
    def is_ikun(self) -> bool:
        return self.kind in IKUN_KINDS


@dataclass
class CalibrationStats:
    """Statistics that fed one layer's weight scale."""

    layer: int
    fan_in: int
    fan_out: int
    sigma_w: float
    sigma_x2: float
    mu_h: float
    sigma_h: float
    ef2: float
    v_threshold: float | None


def estimate_ef2(s: SurrogateSpec, mu_h: float, sigma_h: float,
                 n_samples: int = DEFAULT_EF2_SAMPLES, rng: nx.RngStream | None = None) -> float:
    """Monte-Carlo estimate of ``E[f'(H)^2]`` for ``H ~ N(mu_h, sigma_h^2)``."""
    if not (math.isfinite(sigma_h) and sigma_h > 0):
        raise ParameterError(f"sigma_h must be > 0, got {sigma_h}")
    if n_samples < 1000:
        raise ParameterError(f"n_samples must be >= 1000, got {n_samples}")
    if rng is None:
        rng = nx.RngStream(0, 0)
    h = nx.sample_gaussian(rng, (int(n_samples),), mu_h, sigma_h)
    return float(np.mean(surrogate_grad(s, h) ** 2))


def compute_sigma_w(scheme: InitScheme, fan_in: int, fan_out: int,
                    sigma_x2: float = 1.0, ef2: float = 1.0) -> float:
    if fan_in <= 0 or fan_out <= 0:
        raise ParameterError(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")
    k = scheme.kind
    if k == "lecun":
        return math.sqrt(1.0 / fan_in)
    if k == "xavier":
        return math.sqrt(2.0 / (fan_in + fan_out))
    if k == "kaiming":
        return math.sqrt(2.0 / fan_in)
    if k == "normal":
        return scheme.fixed_std
    if not (sigma_x2 > 0 and ef2 > 0):
        raise ParameterError(f"ikun scaling needs sigma_x2 > 0 and ef2 > 0, got {sigma_x2}, {ef2}")
    fan = fan_in if k == "ikun_v1" else fan_in + fan_out
    return math.sqrt(scheme.alpha / (fan * sigma_x2 * ef2))


def fan_dims(layer) -> tuple[int, int]:
    """``(fan_in, fan_out)``; conv fans count channels times kernel area."""
    if isinstance(layer, Dense):
        return layer.n_in, layer.n_out
    if isinstance(layer, Conv):
        area = layer.k * layer.k
        return layer.cin * area, layer.cout * area
    raise ParameterError(f"{type(layer).__name__} layer has no parameters")


def _next_spike(net: Network, i: int) -> int | None:
    for j in range(i + 1, len(net.spec.layers)):
        if isinstance(net.spec.layers[j], Spike):
            return j
        if net.params[j] is not None:
            return None
    return None


def _prefix_activation(net: Network, frames: np.ndarray, stop: int) -> np.ndarray:
    """Spiking-mode activation entering layer ``stop``."""
    act = frames
    for i in range(stop):
        act = _layer_forward(net, i, act, net.spec.T)
    return act


def _layer_forward(net: Network, i: int, act: np.ndarray, T: int) -> np.ndarray:
    layer = net.spec.layers[i]
    tn = act.shape[0]
    merged = act.reshape((tn * act.shape[1],) + act.shape[2:])
    if isinstance(layer, Conv):
        p = net.params[i]
        out = nx.conv2d(merged, p["weight"], p["bias"], layer.stride, layer.pad)
    elif isinstance(layer, Dense):
        p = net.params[i]
        out = nx.dense(merged, p["weight"], p["bias"])
    elif isinstance(layer, Spike):
        s, _ = _spike_forward(net.spike_neuron(i), layer.surrogate, act, T, "spiking")
        return s
    elif isinstance(layer, Pool):
        out = nx.pool2d(merged, layer.kind, layer.size)
    else:
        return act.reshape(act.shape[:2] + (-1,))
    return out.reshape((tn, act.shape[1]) + out.shape[1:])


def _membrane(net: Network, i: int, j: int, x: np.ndarray) -> np.ndarray:
    """Membrane potentials of spike layer ``j`` driven through layers ``i..j-1``."""
    act = x
    for l in range(i, j):
        act = _layer_forward(net, l, act, net.spec.T)
    layer = net.spec.layers[j]
    _, h = _spike_forward(net.spike_neuron(j), layer.surrogate, act, net.spec.T, "spiking")
    return h


def _calibration_frames(net: Network, calib) -> np.ndarray:
    calib = np.asarray(calib, dtype=np.float64)
    if calib.size == 0 or calib.shape[0] == 0:
        raise ParameterError("calibration batch is empty")
    if calib.shape[1:] == net.spec.input_shape:
        # images: constant-current frames are the same at every step
        return calib[None]
    if calib.ndim >= 2 and calib.shape[2:] == net.spec.input_shape:
        return calib
    raise ParameterError(f"calibration batch shape {calib.shape} does not match input {net.spec.input_shape}")


def initialize_network(net: Network, scheme: InitScheme, surrogate: SurrogateSpec | None = None,
                       calib: np.ndarray | None = None, rng: nx.RngStream | None = None,
                       n_ef2_samples: int = DEFAULT_EF2_SAMPLES):
    """Draw every weight tensor from ``N(0, sigma_w^2)`` and zero the biases.

    ``surrogate`` overrides the surrogate of the spike layer that follows
    each parametric layer when estimating ``E[f'(H)^2]``.  ``calib`` is a
    batch of network inputs (``(B, *input_shape)`` images, or pre-encoded
    ``(T, B, *input_shape)`` frames).  With ikun kinds a calibration batch
    switches on per-layer measurement and the threshold rule; for the other
    kinds the same statistics are measured for reporting only.

    Returns ``(net, stats)`` with one :class:`CalibrationStats` per
    parametric layer.
    """
    if rng is None:
        rng = nx.RngStream(0, 0)
    frames = None if calib is None else _calibration_frames(net, calib)
    stats: list[CalibrationStats] = []
    for i in net.parametric_layers():
        layer = net.spec.layers[i]
        fan_in, fan_out = fan_dims(layer)
        j = _next_spike(net, i)
        surr = surrogate or (net.spec.layers[j].surrogate if j is not None else SurrogateSpec())
        ef2_rng = rng.substream(f"ef2/{i}")
        p = net.params[i]
        p["bias"][...] = 0.0
        z = nx.sample_gaussian(rng.substream(f"weight/{i}"), p["weight"].shape)

        sigma_x2, mu_h, sigma_h = 1.0, 0.0, 1.0
        ef2 = estimate_ef2(surr, mu_h, sigma_h, n_ef2_samples, ef2_rng.substream(0))
        sigma_w = compute_sigma_w(scheme, fan_in, fan_out, sigma_x2, ef2)
        p["weight"][...] = sigma_w * z

        if frames is not None:
            x = _prefix_activation(net, frames, i)
            # second moment: Var(W.X) = fan_in * sigma_w^2 * E[X^2] for zero-mean weights,
            # and spike inputs are far from zero-mean
            sigma_x2 = float(np.mean(x * x))
            if scheme.is_ikun:
                sigma_w = compute_sigma_w(scheme, fan_in, fan_out, sigma_x2, ef2)
                p["weight"][...] = sigma_w * z
            if j is not None and scheme.is_ikun:
                for r in range(1, CALIBRATION_PASSES + 1):
                    h = _membrane(net, i, j, x)
                    mu_h, sigma_h = float(np.mean(h)), float(np.std(h))
                    net.thresholds[j] = mu_h
                    # the surrogate sees h - threshold, which the rule above centres at 0
                    ef2 = estimate_ef2(surr, 0.0, sigma_h, n_ef2_samples, ef2_rng.substream(r))
                    sigma_w = compute_sigma_w(scheme, fan_in, fan_out, sigma_x2, ef2)
                    p["weight"][...] = sigma_w * z
            elif j is not None:
                h = _membrane(net, i, j, x)
                mu_h, sigma_h = float(np.mean(h)), float(np.std(h))
                ef2 = estimate_ef2(surr, mu_h - net.thresholds[j], sigma_h,
                                   n_ef2_samples, ef2_rng.substream(1))
        stats.append(CalibrationStats(i, fan_in, fan_out, sigma_w, sigma_x2, mu_h, sigma_h, ef2,
                                      net.thresholds[j] if j is not None else None))
    net.touch()
    return net, stats
