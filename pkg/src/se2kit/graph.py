"""Computational-graph extraction: the intermediate form the mapper consumes.

A sequential network becomes a chain of nodes::

    LinearWeights(inputs -> L1) -> Neurons(L1) <-> LinearWeights(L1 -> L1, recurrent)
        -> LinearWeights(L1 -> L2) -> Neurons(L2) <-> ...

Tags are dense integers: external inputs first, then each neuron layer in
module order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .network import LIF, DynapSim, Linear, NetworkError, Sequential, validate_network
from .params import SimParams


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LinearWeightsNode:
    weights: np.ndarray
    source_tags: tuple
    dest_tags: tuple
    recurrent: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "source_tags", tuple(int(t) for t in self.source_tags))
        object.__setattr__(self, "dest_tags", tuple(int(t) for t in self.dest_tags))
        if w.shape != (len(self.source_tags), len(self.dest_tags)):
            raise GraphError(
                f"weight matrix {w.shape} does not match {len(self.source_tags)} source "
                f"and {len(self.dest_tags)} destination tags")

    kind = "linear_weights"


@dataclass(frozen=True, eq=False)
class DynapseNeuronsNode:
    """A group of neurons sharing one parameter set.

    ``model`` records where the group came from; a ``"lif"`` node keeps its
    original LIF constants in ``model_params`` so the round trip can restore
    the LIF module, while ``params`` always holds the equivalent currents.
    """

    tags: tuple
    params: SimParams = field(default_factory=SimParams)
    model: str = "dynapsim"
    model_params: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(int(t) for t in self.tags))
        if len(set(self.tags)) != len(self.tags):
            raise GraphError("duplicate neuron tags inside one node")
        if self.model not in ("dynapsim", "lif"):
            raise GraphError(f"unknown neuron model {self.model!r}")

    kind = "dynapse_neurons"


NODE_KINDS = (LinearWeightsNode, DynapseNeuronsNode)


@dataclass(frozen=True, eq=False)
class NetGraph:
    nodes: tuple
    edges: tuple
    input_node: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))

    @property
    def input_tags(self) -> tuple:
        node = self.nodes[self.input_node]
        if isinstance(node, LinearWeightsNode):
            return node.source_tags
        return node.tags

    def neuron_nodes(self) -> list:
        return [n for n in self.nodes if isinstance(n, DynapseNeuronsNode)]

    # serialization (debugging aid, not a stable format) -------------------

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            if isinstance(n, LinearWeightsNode):
                nodes.append({"kind": n.kind, "weights": n.weights.tolist(),
                              "source_tags": list(n.source_tags),
                              "dest_tags": list(n.dest_tags), "recurrent": n.recurrent})
            else:
                nodes.append({"kind": n.kind, "tags": list(n.tags), "model": n.model,
                              "model_params": n.model_params, "params": n.params.to_dict()})
        return {"nodes": nodes, "edges": [list(e) for e in self.edges],
                "input_node": self.input_node}

    @classmethod
    def from_dict(cls, d: dict) -> "NetGraph":
        nodes = []
        for i, nd in enumerate(d["nodes"]):
            kind = nd.get("kind")
            if kind == LinearWeightsNode.kind:
                w = np.array(nd["weights"], dtype=float).reshape(
                    len(nd["source_tags"]), len(nd["dest_tags"]))
                nodes.append(LinearWeightsNode(w, nd["source_tags"], nd["dest_tags"],
                                               bool(nd.get("recurrent", False))))
            elif kind == DynapseNeuronsNode.kind:
                nodes.append(DynapseNeuronsNode(nd["tags"], SimParams.from_dict(nd["params"]),
                                                nd.get("model", "dynapsim"), nd.get("model_params")))
            else:
                raise GraphError(f"node {i}: unknown node kind {kind!r}")
        return cls(tuple(nodes), tuple(tuple(e) for e in d["edges"]), int(d.get("input_node", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "NetGraph":
        return cls.from_dict(json.loads(text))


def as_graph(net: Sequential) -> NetGraph:
    """Extract the node/edge graph of a sequential network."""
    try:
        validate_network(net)
    except NetworkError as exc:
        raise GraphError(str(exc)) from exc
    nodes, edges = [], []
    src = tuple(range(net.n_in))
    next_tag = net.n_in
    prev_neurons = None
    for lin, neu in net.layers():
        tags = tuple(range(next_tag, next_tag + neu.n))
        next_tag += neu.n
        if isinstance(neu, LIF):
            model_params = {"tau_mem": neu.tau_mem, "tau_syn": neu.tau_syn,
                            "threshold": neu.threshold, "dt": neu.dt}
            neuron = DynapseNeuronsNode(tags, neu.to_dynapsim().params, "lif", model_params)
        else:
            neuron = DynapseNeuronsNode(tags, neu.params)
        i_lin = len(nodes)
        nodes.append(LinearWeightsNode(lin.weights, src, tags))
        nodes.append(neuron)
        nodes.append(LinearWeightsNode(neu.w_rec, tags, tags, recurrent=True))
        if prev_neurons is not None:
            edges.append((prev_neurons, i_lin))
        edges += [(i_lin, i_lin + 1), (i_lin + 1, i_lin + 2), (i_lin + 2, i_lin + 1)]
        prev_neurons = i_lin + 1
        src = tags
    return NetGraph(tuple(nodes), tuple(edges), 0)


def _chain(graph: NetGraph) -> list:
    """Walk the graph from its input node; returns ``[(lin|None, neurons, rec|None), ...]``."""
    nodes = graph.nodes
    n = len(nodes)
    for a, b in graph.edges:
        if not (0 <= a < n and 0 <= b < n):
            raise GraphError(f"dangling edge ({a}, {b}) in a graph of {n} nodes")
    if not 0 <= graph.input_node < n:
        raise GraphError(f"input node {graph.input_node} does not exist")
    succ = {i: [] for i in range(n)}
    for a, b in graph.edges:
        succ[a].append(b)

    def recurrent_of(i):
        return [j for j in succ[i] if isinstance(nodes[j], LinearWeightsNode) and nodes[j].recurrent]

    def forward_of(i):
        return [j for j in succ[i] if not (isinstance(nodes[j], LinearWeightsNode) and nodes[j].recurrent)]

    chain, seen = [], set()
    cur = graph.input_node
    while cur is not None:
        if cur in seen:
            raise GraphError(f"cycle through node {cur} outside a recurrent block")
        node = nodes[cur]
        lin = None
        if isinstance(node, LinearWeightsNode):
            if node.recurrent:
                raise GraphError(f"node {cur}: recurrent block where a feed-forward layer is expected")
            seen.add(cur)
            nxt = forward_of(cur)
            if len(nxt) != 1 or not isinstance(nodes[nxt[0]], DynapseNeuronsNode):
                raise GraphError(f"weights node {cur} must feed exactly one neuron node")
            lin, cur = node, nxt[0]
            node = nodes[cur]
        seen.add(cur)
        recs = recurrent_of(cur)
        if len(recs) > 1:
            raise GraphError(f"neuron node {cur} has {len(recs)} recurrent blocks")
        rec = None
        if recs:
            rec = nodes[recs[0]]
            if cur not in succ[recs[0]]:
                raise GraphError(f"recurrent block {recs[0]} does not feed back into node {cur}")
            seen.add(recs[0])
        chain.append((lin, node, rec))
        nxt = forward_of(cur)
        if len(nxt) > 1:
            raise GraphError(f"node {cur} branches to {nxt}; only sequential chains are supported")
        cur = nxt[0] if nxt else None
    unreached = set(range(n)) - seen
    if unreached:
        raise GraphError(f"nodes {sorted(unreached)} are not reachable along the chain")
    return chain


def validate_graph(graph: NetGraph) -> None:
    """Raise :class:`GraphError` unless ``graph`` is a well-formed sequential chain."""
    for i, node in enumerate(graph.nodes):
        if not isinstance(node, NODE_KINDS):
            raise GraphError(f"node {i}: unknown node kind {type(node).__name__}")
    seen = {}
    for i, node in enumerate(graph.nodes):
        if isinstance(node, DynapseNeuronsNode):
            for t in node.tags:
                if t in seen:
                    raise GraphError(f"neuron tag {t} appears in nodes {seen[t]} and {i}")
                seen[t] = i
    chain = _chain(graph)
    width_tags = None
    for k, (lin, neu, rec) in enumerate(chain):
        if lin is not None:
            if width_tags is not None and lin.source_tags != width_tags:
                raise GraphError(f"layer {k}: weights read tags {lin.source_tags[:4]}... "
                                 "which are not the previous layer's neurons")
            if lin.dest_tags != neu.tags:
                raise GraphError(f"layer {k}: weights write to tags that are not the layer's neurons")
            if width_tags is None and set(lin.source_tags) & set(seen):
                raise GraphError("external input tags collide with neuron tags")
        elif k > 0:
            raise GraphError(f"layer {k} has no input weights")
        if rec is not None and (rec.source_tags != neu.tags or rec.dest_tags != neu.tags):
            raise GraphError(f"layer {k}: recurrent block does not match the layer's tags")
        width_tags = neu.tags


def _neuron_module(node: DynapseNeuronsNode, w_rec):
    if node.model == "lif":
        mp = node.model_params or {}
        return LIF(len(node.tags), w_rec=w_rec, **mp)
    return DynapSim(len(node.tags), node.params, w_rec)


def net_from_graph(graph: NetGraph) -> Sequential:
    """Rebuild the sequential network a graph describes.

    A graph that starts directly at a neuron node (no input weights) gets an
    identity input layer, one external channel per neuron.
    """
    validate_graph(graph)
    modules = []
    for lin, neu, rec in _chain(graph):
        n = len(neu.tags)
        w = np.eye(n) if lin is None else np.array(lin.weights)
        w_rec = np.zeros((n, n)) if rec is None else np.array(rec.weights)
        modules += [Linear(w), _neuron_module(neu, w_rec)]
    return Sequential(*modules)


def isomorphic(a: NetGraph, b: NetGraph) -> bool:
    """Same chain shape, tags, weights and parameter values."""
    try:
        ca, cb = _chain(a), _chain(b)
    except GraphError:
        return False
    if len(ca) != len(cb):
        return False
    for (la, na, ra), (lb, nb, rb) in zip(ca, cb):
        for x, y in ((la, lb), (ra, rb)):
            if (x is None) != (y is None):
                return False
            if x is not None and (x.source_tags != y.source_tags or x.dest_tags != y.dest_tags
                                  or not np.array_equal(x.weights, y.weights)):
                return False
        if na.tags != nb.tags or na.model != nb.model or not na.params.same_values(nb.params):
            return False
    return True
