"""Layerwise forward/backward variance of deep random spiking stacks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ParameterError
from .init import InitScheme, initialize_network
from .network import Dense, Network, NetworkSpec, Spike, backward, forward_frames
from .neuron import NeuronSpec, SurrogateSpec

VARPROP_COLUMNS = ("scheme", "layer", "forward_var", "backward_var", "ratio_forward", "ratio_backward")
MIN_BATCH = 256


@dataclass
class VarianceReport:
    """Per-layer variances; layer ``ℓ`` is the ``ℓ``-th Dense+Spike block (1-based).

    ``forward_var`` is the variance of the membrane potential before the
    threshold test, pooled over batch, units and time.  ``backward_var`` is
    the variance of the loss gradient with respect to the block's input
    current.  Forward ratios are relative to layer 1, backward ratios to the
    last layer, where the gradient is injected.
    """

    scheme: str
    forward_var: list = field(default_factory=list)
    backward_var: list = field(default_factory=list)
    ratio_forward: list = field(default_factory=list)
    ratio_backward: list = field(default_factory=list)
    spike_var: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.forward_var)

    def rows(self) -> list[tuple]:
        return [(self.scheme, l + 1, self.forward_var[l], self.backward_var[l],
                 self.ratio_forward[l], self.ratio_backward[l]) for l in range(self.depth)]


def build_stack(depth: int, width: int, neuron: NeuronSpec, surrogate: SurrogateSpec,
                scheme: InitScheme, rng: nx.RngStream, T: int = 8,
                calib: np.ndarray | None = None, calib_size: int = MIN_BATCH, calibrate: bool = True):
    """``depth`` blocks of Dense(width, width) then Spike, initialized by ``scheme``.

    With ``calibrate``, ikun kinds are calibrated on ``calib`` or, if absent,
    on a standard Gaussian batch of ``calib_size`` rows drawn from ``rng``;
    otherwise they use the analytic unit-variance statistics.  Returns
    ``(net, stats)``.
    """
    if depth < 2 or width < 2:
        raise ParameterError(f"depth and width must be >= 2, got depth={depth}, width={width}")
    layers = []
    for _ in range(depth):
        layers += [Dense(width, width), Spike(neuron, surrogate)]
    net = Network(NetworkSpec(tuple(layers), T=T, input_shape=(width,)))
    use_calib = calibrate and scheme.is_ikun
    if use_calib and calib is None:
        calib = nx.sample_gaussian(rng.substream("calib"), (calib_size, width))
    return initialize_network(net, scheme, calib=calib if use_calib else None, rng=rng.substream("init"))


def _ratios(values: np.ndarray, ref: float) -> list[float]:
    if ref == 0.0:
        return [0.0] * len(values)
    return [float(v / ref) for v in values]


def measure_variances(net: Network, batch: np.ndarray, rng: nx.RngStream | None = None,
                      scheme_name: str = "", mode: str = "spiking") -> VarianceReport:
    """Run ``batch`` (constant current at every step) forward and a Gaussian gradient back.

    The upstream gradient on the output firing rates has unit variance and
    is drawn from ``rng``.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < MIN_BATCH:
        raise ParameterError(f"batch must be (B, width) with B >= {MIN_BATCH}, got shape {batch.shape}")
    rng = rng or nx.RngStream(0)
    T = net.spec.T
    frames = np.broadcast_to(batch, (T,) + batch.shape)
    rates, tape = forward_frames(net, frames, mode)
    spikes = [i for i, l in enumerate(net.spec.layers) if isinstance(l, Spike)]
    fwd = np.array([np.var(tape.caches[j][0]) for j in spikes])
    spk = [float(np.var(tape.caches[j][1])) for j in spikes]
    d_rates = nx.sample_gaussian(rng.substream("upstream"), rates.shape)
    _, input_grads = backward(net, tape, d_rates, return_input_grads=True)
    bwd = np.array([np.var(input_grads[j]) for j in spikes])
    return VarianceReport(scheme_name, fwd.tolist(), bwd.tolist(), _ratios(fwd, fwd[0]),
                          _ratios(bwd, bwd[-1]), spk)


def write_varprop_csv(reports: list[VarianceReport], path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(VARPROP_COLUMNS)
        for r in reports:
            for row in r.rows():
                w.writerow([row[0], row[1]] + [f"{x:.9g}" for x in row[2:]])
