"""Train spiking networks against a simulated mixed-signal neuromorphic core
and compile them into deployable device configurations."""

__version__ = "0.1.0"
