"""Hamiltonian deep neural networks with closed-form backpropagation."""

from .core_math import ABS, RELU, TANH, Activation, canonical_J
from .layers import Arch, Network, forward_net, init_network, load_network, param_count, save_network

__all__ = [
    "ABS",
    "RELU",
    "TANH",
    "Activation",
    "Arch",
    "Network",
    "canonical_J",
    "forward_net",
    "init_network",
    "load_network",
    "param_count",
    "save_network",
]

__version__ = "0.1.0"
