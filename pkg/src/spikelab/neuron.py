"""IF/LIF membrane dynamics and surrogate spike derivatives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

SURROGATE_KINDS = ("sigmoid", "atan", "triangular", "constant")
NEURON_MODELS = ("IF", "LIF")
RESET_MODES = ("hard", "soft")


@dataclass(frozen=True)
class SurrogateSpec:
    """Smooth stand-in for the Heaviside spike function.

    ``alpha`` is the sharpness for sigmoid/atan and the half-width of the
    ramp for the triangular kind.  The ``constant`` kind (derivative 1) only
    exists for tests.
    """

    kind: str = "sigmoid"
    alpha: float = 4.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ParameterError(f"unknown surrogate kind {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"surrogate alpha must be finite and > 0, got {self.alpha}")


@dataclass(frozen=True)
class NeuronSpec:
    model: str = "IF"
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    reset_mode: str = "hard"
    dt: float = 1.0
    capacitance: float = 1.0

    def __post_init__(self):
        if self.model not in NEURON_MODELS:
            raise ParameterError(f"unknown neuron model {self.model!r}; expected one of {NEURON_MODELS}")
        if self.reset_mode not in RESET_MODES:
            raise ParameterError(f"unknown reset mode {self.reset_mode!r}; expected one of {RESET_MODES}")
        if self.model == "LIF" and not self.tau > 1:
            raise ParameterError(f"LIF tau must be > 1, got {self.tau}")
        if not (self.dt > 0 and self.capacitance > 0):
            raise ParameterError("dt and capacitance must be > 0")
        if not math.isfinite(self.v_reset):
            raise ParameterError("v_reset must be finite")

    @property
    def leak(self) -> float:
        """Multiplier applied to the previous membrane potential."""
        return 1.0 - 1.0 / self.tau if self.model == "LIF" else 1.0

    @property
    def input_gain(self) -> float:
        """Multiplier applied to the input current."""
        if self.model == "LIF":
            return 1.0 / self.capacitance
        return self.dt / self.capacitance


def _sigmoid(z):
    # tanh form is overflow-free for any finite z
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(z, dtype=np.float64))


def surrogate_value(s: SurrogateSpec, x):
    """Smooth spike function; scalar in, scalar out (arrays are mapped elementwise)."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    a = s.alpha
    if s.kind == "sigmoid":
        y = _sigmoid(a * x)
    elif s.kind == "atan":
        y = np.arctan(0.5 * math.pi * a * x) / math.pi + 0.5
    elif s.kind == "triangular":
        y = np.clip((x + a) / (2.0 * a), 0.0, 1.0)
    else:
        y = x.copy()
    return float(y) if scalar else y


def surrogate_grad(s: SurrogateSpec, x):
    """Exact derivative of :func:`surrogate_value`."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    a = s.alpha
    if s.kind == "sigmoid":
        # a*sig*(1-sig) == (a/4)*(1 - tanh(a*x/2)^2)
        y = np.tanh((0.5 * a) * x, out=np.empty_like(x))
        y *= y
        np.subtract(1.0, y, out=y)
        y *= 0.25 * a
    elif s.kind == "atan":
        y = (0.5 * a) / (1.0 + (0.5 * math.pi * a * x) ** 2)
    elif s.kind == "triangular":
        y = np.where(np.abs(x) <= a, 1.0 / (2.0 * a), 0.0)
    else:
        y = np.ones_like(x)
    return float(y) if scalar else y


def step_neuron(spec: NeuronSpec, v_prev: np.ndarray, input_current: np.ndarray,
                v_threshold: float | None = None):
    """One discrete step of membrane integration, firing and reset.

    Returns ``(spike, v_new, h_pre)`` where ``h_pre`` is the membrane
    potential before the threshold test.
    """
    v_prev = np.asarray(v_prev, dtype=np.float64)
    input_current = np.asarray(input_current, dtype=np.float64)
    if v_prev.shape != input_current.shape:
        raise ShapeError(f"membrane {v_prev.shape} and input {input_current.shape} shapes differ")
    thr = spec.v_threshold if v_threshold is None else v_threshold
    h = spec.leak * v_prev + spec.input_gain * input_current
    fired = h >= thr
    spike = fired.astype(np.float64)
    if spec.reset_mode == "hard":
        v_new = np.where(fired, spec.v_reset, h)
    else:
        v_new = h - thr * spike
    return spike, v_new, h
