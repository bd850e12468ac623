"""Sequential network descriptions and a layer-by-layer simulator."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .model import DimensionError, NeuronState, simulate
from .params import (
    DEFAULT_CONSTANTS,
    PhysicalConstants,
    SimParams,
    current_for_time_constant,
)
from .raster import SpikeRaster


class NetworkError(ValueError):
    pass


@dataclass(eq=False)
class Linear:
    """Weight layer; rows index sources, columns index destinations."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise NetworkError(f"Linear weights must be 2-D, got shape {self.weights.shape}")

    @property
    def shape(self):
        return self.weights.shape


@dataclass(eq=False)
class DynapSim:
    """Layer of simulated mixed-signal neurons with a recurrent matrix."""

    n: int
    params: SimParams = field(default_factory=SimParams)
    w_rec: np.ndarray | None = None

    def __post_init__(self):
        if self.n < 1:
            raise NetworkError("a neuron layer needs at least one neuron")
        if self.w_rec is None:
            self.w_rec = np.zeros((self.n, self.n))
        self.w_rec = np.array(self.w_rec, dtype=float)
        if self.w_rec.shape != (self.n, self.n):
            raise NetworkError(f"recurrent matrix must be {self.n}x{self.n}, got {self.w_rec.shape}")

    model = "dynapsim"


@dataclass(eq=False)
class LIF:
    """Generic leaky integrate-and-fire layer, convertible to :class:`DynapSim`.

    ``threshold`` is expressed in the same current units as the DynapSim
    spiking threshold.
    """

    n: int
    tau_mem: float = 20e-3
    tau_syn: float = 10e-3
    threshold: float = 1e-9
    dt: float = 1e-3
    w_rec: np.ndarray | None = None

    def __post_init__(self):
        if self.w_rec is None:
            self.w_rec = np.zeros((self.n, self.n))
        self.w_rec = np.array(self.w_rec, dtype=float)

    model = "lif"

    def to_dynapsim(self, base: SimParams | None = None,
                    constants: PhysicalConstants = DEFAULT_CONSTANTS) -> DynapSim:
        base = base or SimParams()
        itau_mem = current_for_time_constant(self.tau_mem, constants.C_mem, constants)
        changes = {
            "Itau_mem": itau_mem,
            "Igain_mem": itau_mem * base.Igain_mem / base.Itau_mem,
            "Ispkthr": self.threshold,
            "dt": self.dt,
        }
        for syn in ("ampa", "gaba"):
            itau = current_for_time_constant(self.tau_syn, constants.C_syn[syn], constants)
            ratio = getattr(base, f"Igain_{syn}") / getattr(base, f"Itau_{syn}")
            changes[f"Itau_{syn}"] = itau
            changes[f"Igain_{syn}"] = itau * ratio
        return DynapSim(self.n, dataclasses.replace(base, **changes), self.w_rec.copy())


NEURON_LAYERS = (DynapSim, LIF)


@dataclass(eq=False)
class Sequential:
    modules: list

    def __init__(self, *modules):
        if len(modules) == 1 and isinstance(modules[0], (list, tuple)):
            modules = tuple(modules[0])
        self.modules = list(modules)

    def __iter__(self):
        return iter(self.modules)

    def __len__(self):
        return len(self.modules)

    def __getitem__(self, i):
        return self.modules[i]

    def layers(self):
        """``(Linear, neuron layer)`` pairs after validation."""
        validate_network(self)
        return [(self.modules[i], self.modules[i + 1]) for i in range(0, len(self.modules), 2)]

    @property
    def n_in(self) -> int:
        return self.modules[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.modules[-1].n


def validate_network(net: Sequential) -> None:
    mods = list(net.modules)
    if not mods:
        raise NetworkError("empty network")
    if len(mods) % 2:
        raise NetworkError("network must alternate Linear and neuron modules, ending on neurons")
    width = None
    for i in range(0, len(mods), 2):
        lin, neu = mods[i], mods[i + 1]
        if not isinstance(lin, Linear):
            raise NetworkError(f"module {i} must be Linear, got {type(lin).__name__}")
        if not isinstance(neu, NEURON_LAYERS):
            raise NetworkError(f"module {i + 1} must be a neuron layer, got {type(neu).__name__}")
        rows, cols = lin.shape
        if width is not None and rows != width:
            raise NetworkError(
                f"shape chain broken between module {i - 1} ({width} outputs) "
                f"and module {i} ({rows} inputs)")
        if cols != neu.n:
            raise NetworkError(
                f"shape chain broken between module {i} ({cols} outputs) "
                f"and module {i + 1} ({neu.n} neurons)")
        width = neu.n


def simulate_network(net: Sequential, raster: SpikeRaster,
                     constants: PhysicalConstants = DEFAULT_CONSTANTS,
                     backend: str | None = None) -> list[SpikeRaster]:
    """Simulate a multi-layer network one layer at a time.

    Layer ``k+1`` sees layer ``k``'s spikes one step late, the same delay a
    spike takes through a recurrent matrix. Returns every layer's output.
    """
    outputs = []
    x = raster.data.astype(float)
    for li, (lin, neu) in enumerate(net.layers()):
        if isinstance(neu, LIF):
            neu = neu.to_dynapsim(constants=constants)
        if li > 0:
            delayed = np.zeros_like(x)
            delayed[1:] = x[:-1]
            x = delayed
        res = simulate(x[None], lin.weights, neu.w_rec, neu.params, constants, backend=backend)
        out = res.spikes[0]
        outputs.append(SpikeRaster(out.astype(np.uint8), raster.dt))
        x = out
    return outputs


def frozen_noise_network(n_in: int = 60, n_out: int = 2, seed: int = 0,
                         params: SimParams | None = None,
                         w_in_mean: float = 1.0, w_in_std: float = 1.0,
                         w_rec_std: float = 0.1) -> Sequential:
    """The two-module classifier: ``Linear(n_in, n_out)`` then recurrent DynapSim."""
    rng = np.random.default_rng(seed)
    w_in = rng.normal(w_in_mean, w_in_std, (n_in, n_out))
    w_rec = rng.normal(0.0, w_rec_std, (n_out, n_out))
    return Sequential(Linear(w_in), DynapSim(n_out, params or SimParams(), w_rec))


def single_layer(net: Sequential):
    """``(w_in, w_rec, params)`` of a one-layer DynapSim network."""
    layers = net.layers()
    if len(layers) != 1:
        raise DimensionError(f"expected a single neuron layer, network has {len(layers)}")
    lin, neu = layers[0]
    if isinstance(neu, LIF):
        neu = neu.to_dynapsim()
    return lin.weights, neu.w_rec, neu.params


def with_weights(net: Sequential, w_in, w_rec) -> Sequential:
    lin, neu = net.layers()[0]
    return Sequential(Linear(np.array(w_in)), DynapSim(neu.n, neu.params, np.array(w_rec)))
