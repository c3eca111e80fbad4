"""Binary-neuron GAN for multi-track piano-roll generation, at desk scale."""

__version__ = "0.1.0"
