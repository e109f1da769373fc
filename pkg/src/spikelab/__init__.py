"""Spiking neural networks in numpy: IF/LIF neurons, surrogate-gradient
BPTT, variance-preserving initialization and Hessian diagnostics."""

from .errors import ConfigError, FormatError, ParameterError, ShapeError, SpikeLabError, UsageError
from .init import InitScheme, initialize_network
from .network import Network, NetworkSpec, backward, default_spec, forward
from .neuron import NeuronSpec, SurrogateSpec
from .numerics import RngStream

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FormatError", "ParameterError", "ShapeError", "SpikeLabError", "UsageError",
    "InitScheme", "initialize_network", "Network", "NetworkSpec", "backward", "default_spec",
    "forward", "NeuronSpec", "SurrogateSpec", "RngStream",
]
