"""Projection of a network graph onto the chip's resources.

All layers are merged into one input matrix (virtual tags x hardware tags)
and one square recurrent matrix over the hardware tags. Feed-forward
matrices between layers land in off-diagonal blocks of the recurrent
matrix, so each hop between layers costs one time step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import LinearWeightsNode, DynapseNeuronsNode, NetGraph, _chain, validate_graph
from .model import simulate
from .params import SimParams, current_names
from .raster import SpikeRaster


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareLimits:
    neurons_per_core: int = 256
    cores_per_chip: int = 4
    synapses_per_neuron: int = 64
    chips_available: int = 1
    weight_bits: int = 4
    n_base_weights: int = 4

    def __post_init__(self):
        for name in ("neurons_per_core", "cores_per_chip", "synapses_per_neuron",
                     "chips_available", "weight_bits", "n_base_weights"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")

    @property
    def total_cores(self) -> int:
        return self.cores_per_chip * self.chips_available

    @property
    def capacity(self) -> int:
        return self.neurons_per_core * self.total_cores


@dataclass(eq=False)
class HardwareSpec:
    w_in: np.ndarray
    w_rec: np.ndarray
    virtual_tags: tuple
    hardware_tags: tuple
    core_assignment: dict             # hardware tag -> (chip, core)
    params_per_core: dict             # (chip, core) -> SimParams
    clusters: tuple = field(default=())  # per cluster: tuple of hardware tags

    @property
    def n_neurons(self) -> int:
        return len(self.hardware_tags)

    def cores(self) -> list:
        return sorted(self.params_per_core)

    def neuron_params(self) -> SimParams:
        """One SimParams for all hardware neurons (per-neuron arrays if cores differ)."""
        per_neuron = [self.params_per_core[self.core_assignment[t]] for t in self.hardware_tags]
        first = per_neuron[0]
        if all(p is first or p.same_values(first) for p in per_neuron):
            return first
        if any(p.dt != first.dt for p in per_neuron):
            raise MappingError("cores disagree on the time step")
        changes = {}
        for name in current_names(first, base=False):
            if any(np.ndim(getattr(p, name)) for p in per_neuron):
                raise MappingError(f"parameter {name} is already per-neuron on some core")
            changes[name] = np.array([float(getattr(p, name)) for p in per_neuron])
        return first.replace(**changes)

    def cluster_columns(self, k: int) -> np.ndarray:
        pos = {t: i for i, t in enumerate(self.hardware_tags)}
        return np.array([pos[t] for t in self.clusters[k]], dtype=int)

    def simulate(self, raster: SpikeRaster, backend: str | None = None) -> SpikeRaster:
        res = simulate(raster.data[None].astype(float), self.w_in, self.w_rec,
                       self.neuron_params(), backend=backend)
        return SpikeRaster(res.spikes[0].astype(np.uint8), raster.dt)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        cores = self.cores()
        return {
            "virtual_tags": list(self.virtual_tags),
            "hardware_tags": list(self.hardware_tags),
            "w_in": self.w_in.tolist(),
            "w_rec": self.w_rec.tolist(),
            "core_assignment": {str(t): list(self.core_assignment[t]) for t in self.hardware_tags},
            "cores": [{"chip": c[0], "core": c[1], "params": self.params_per_core[c].to_dict()}
                      for c in cores],
            "clusters": [list(c) for c in self.clusters],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareSpec":
        nv, nh = len(d["virtual_tags"]), len(d["hardware_tags"])
        return cls(
            w_in=np.array(d["w_in"], dtype=float).reshape(nv, nh),
            w_rec=np.array(d["w_rec"], dtype=float).reshape(nh, nh),
            virtual_tags=tuple(d["virtual_tags"]),
            hardware_tags=tuple(d["hardware_tags"]),
            core_assignment={int(t): tuple(v) for t, v in d["core_assignment"].items()},
            params_per_core={(c["chip"], c["core"]): SimParams.from_dict(c["params"])
                             for c in d["cores"]},
            clusters=tuple(tuple(c) for c in d.get("clusters", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "HardwareSpec":
        return cls.from_dict(json.loads(text))


def map_graph(graph: NetGraph, limits: HardwareLimits | None = None) -> HardwareSpec:
    limits = limits or HardwareLimits()
    validate_graph(graph)
    chain = _chain(graph)

    layer_tags = [neu.tags for _, neu, _ in chain]
    hw_tags = tuple(t for tags in layer_tags for t in tags)
    n = len(hw_tags)
    if n > limits.capacity:
        raise MappingError(
            f"capacity exceeded: {n} neurons, {limits.capacity} available on "
            f"{limits.chips_available} chip(s)")
    first_lin = chain[0][0]
    virtual = first_lin.source_tags if first_lin is not None else layer_tags[0]

    offsets = np.cumsum([0] + [len(t) for t in layer_tags])
    w_in = np.zeros((len(virtual), n))
    w_rec = np.zeros((n, n))
    for k, (lin, neu, rec) in enumerate(chain):
        cols = slice(offsets[k], offsets[k + 1])
        if k == 0:
            w_in[:, cols] = np.eye(len(neu.tags)) if lin is None else lin.weights
        else:
            w_rec[offsets[k - 1]:offsets[k], cols] = lin.weights
        if rec is not None:
            w_rec[cols, cols] = rec.weights

    fan_in = np.count_nonzero(w_in, axis=0) + np.count_nonzero(w_rec, axis=0)
    over = np.flatnonzero(fan_in > limits.synapses_per_neuron)
    if over.size:
        detail = ", ".join(f"tag {hw_tags[j]} ({fan_in[j]})" for j in over[:10])
        raise MappingError(
            f"fan-in exceeded: limit {limits.synapses_per_neuron} synapses per neuron; {detail}")

    # layers with identical parameters share a cluster, first appearance order
    cluster_params, layer_cluster = [], []
    for _, neu, _ in chain:
        for ci, p in enumerate(cluster_params):
            if p.same_values(neu.params):
                layer_cluster.append(ci)
                break
        else:
            cluster_params.append(neu.params)
            layer_cluster.append(len(cluster_params) - 1)

    # first-fit packing in layer order; a core never mixes clusters
    assignment, params_per_core = {}, {}
    open_core = {}       # cluster -> (global core index, free slots)
    next_core = 0
    clusters = [[] for _ in cluster_params]
    for k, tags in enumerate(layer_tags):
        ci = layer_cluster[k]
        for t in tags:
            g, free = open_core.get(ci, (None, 0))
            if free == 0:
                if next_core >= limits.total_cores:
                    raise MappingError(
                        f"cluster count exceeds cores: {len(cluster_params)} parameter clusters "
                        f"need more than {limits.total_cores} cores (tag {t} unplaced)")
                g, free = next_core, limits.neurons_per_core
                next_core += 1
                loc = (g // limits.cores_per_chip, g % limits.cores_per_chip)
                params_per_core[loc] = cluster_params[ci]
            loc = (g // limits.cores_per_chip, g % limits.cores_per_chip)
            assignment[t] = loc
            open_core[ci] = (g, free - 1)
            clusters[ci].append(t)

    return HardwareSpec(w_in, w_rec, tuple(virtual), hw_tags, assignment, params_per_core,
                        tuple(tuple(c) for c in clusters))


def spec_as_graph(spec: HardwareSpec) -> NetGraph:
    """Single-layer graph of a mapped spec (merged matrices, one neuron node).

    Only meaningful when every core shares one parameter set.
    """
    params = spec.neuron_params()
    nodes = (LinearWeightsNode(spec.w_in, spec.virtual_tags, spec.hardware_tags),
             DynapseNeuronsNode(spec.hardware_tags, params),
             LinearWeightsNode(spec.w_rec, spec.hardware_tags, spec.hardware_tags, recurrent=True))
    return NetGraph(nodes, ((0, 1), (1, 2), (2, 1)), 0)
