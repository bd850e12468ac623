"""Neuron/synapse dynamics of the simulated mixed-signal core.

:func:`step` advances a group of neurons by one time step directly from the
update equations and serves as the readable reference. :func:`simulate` and
:func:`evolve` run whole rasters through the compiled kernels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .params import (
    DEFAULT_CONSTANTS,
    SYNAPSES,
    Coefficients,
    NumericalError,
    PhysicalConstants,
    SimParams,
    coefficients,
)
from .raster import SpikeRaster


class DimensionError(ValueError):
    pass


@dataclass
class NeuronState:
    """Dynamical state of ``n`` neurons.

    ``Isyn`` has shape ``(4, n)`` in the order ampa, gaba, nmda, shunt.
    """

    Imem: np.ndarray
    Isyn: np.ndarray
    Iahp: np.ndarray
    refractory_remaining: np.ndarray
    spike_out: np.ndarray

    @classmethod
    def initial(cls, n: int, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> "NeuronState":
        floor = constants.I_floor
        return cls(
            Imem=np.full(n, floor),
            Isyn=np.full((4, n), floor),
            Iahp=np.full(n, floor),
            refractory_remaining=np.zeros(n, dtype=np.int64),
            spike_out=np.zeros(n),
        )

    @property
    def n(self) -> int:
        return self.Imem.shape[0]

    def copy(self) -> "NeuronState":
        return NeuronState(*(np.array(getattr(self, f.name)) for f in dataclasses.fields(self)))

    def currents(self) -> np.ndarray:
        """``(6, n)`` array in kernel order: ampa, gaba, nmda, shunt, ahp, mem."""
        return np.concatenate([self.Isyn, self.Iahp[None], self.Imem[None]]).astype(float)

    @classmethod
    def from_arrays(cls, cur, ref, last) -> "NeuronState":
        return cls(Imem=cur[5].copy(), Isyn=cur[:4].copy(), Iahp=cur[4].copy(),
                   refractory_remaining=ref.astype(np.int64).copy(), spike_out=last.copy())

    def validate(self, constants: PhysicalConstants = DEFAULT_CONSTANTS) -> None:
        cur = self.currents()
        if not np.all(np.isfinite(cur)):
            raise NumericalError("non-finite value in neuron state")
        if np.any(cur < constants.I_floor):
            raise ValueError("neuron state current below the leakage floor")
        if np.any(self.refractory_remaining < 0):
            raise ValueError("negative refractory counter")


def step(state: NeuronState, inputs: Mapping[str, object], params: SimParams,
         constants: PhysicalConstants = DEFAULT_CONSTANTS,
         integrator: str = "exp") -> tuple[NeuronState, np.ndarray]:
    """Advance every neuron of ``state`` by one time step.

    ``inputs`` maps a synapse type (ampa, gaba, nmda, shunt) to the weighted
    spike count arriving this step: the number of spikes times the
    connection weight magnitude, in units of ``params.Iw_ref``.
    Returns the new state and the 0/1 spike vector.
    """
    state.validate(constants)
    unknown = set(inputs) - set(SYNAPSES[:4])
    if unknown:
        raise ValueError(f"unknown synapse types {sorted(unknown)}")
    n = state.n
    co = coefficients(params, n, constants, integrator)
    floor = co.floor
    counts = np.zeros((4, n))
    for k, syn in enumerate(SYNAPSES[:4]):
        c = np.broadcast_to(np.asarray(inputs.get(syn, 0.0), dtype=float), (n,))
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError(f"spike count for {syn} must be finite and >= 0")
        counts[k] = c

    isyn = np.maximum(state.Isyn * co.decay[:4] + counts * co.jump[:4], floor)
    iahp = np.maximum(state.Iahp * co.decay[4], floor)
    iin = isyn[0] + isyn[2] + co.Idc - isyn[1] - isyn[3] - iahp
    iin = np.maximum(iin, floor)

    refractory = state.refractory_remaining > 0
    imem = np.maximum(state.Imem * co.mem_decay + co.mem_drive * iin, floor)
    spike = (~refractory) & (imem / co.thr - 1.0 >= 0.0)
    imem = np.where(refractory | spike, co.Ireset, imem)
    iahp = iahp + np.where(spike, co.jump[4], 0.0)
    ref = np.where(refractory, state.refractory_remaining - 1,
                   np.where(spike, co.n_ref, 0))
    new = NeuronState(Imem=imem, Isyn=isyn, Iahp=iahp,
                      refractory_remaining=ref.astype(np.int64),
                      spike_out=spike.astype(float))
    if not (np.all(np.isfinite(new.currents()))):
        raise NumericalError("non-finite current after step (numerical blow-up)")
    return new, spike.astype(np.uint8)


@dataclass
class ForwardResult:
    """Output of :func:`simulate`; also carries what the backward pass needs."""

    spikes: np.ndarray        # (B, T, n)
    vmem: np.ndarray          # (B, T, n) membrane current before reset
    flags: np.ndarray         # (B, T, n) uint8
    final: list               # NeuronState per sample
    last0: np.ndarray         # (B, n) spikes preceding step 0
    traces: np.ndarray | None  # (B, T, 6, n) when recorded
    coeffs: Coefficients


def _check_weights(w_in, w_rec):
    w_in = np.ascontiguousarray(w_in, dtype=float)
    w_rec = np.ascontiguousarray(w_rec, dtype=float)
    if w_in.ndim != 2 or w_rec.ndim != 2:
        raise DimensionError("weight matrices must be 2-D")
    n = w_in.shape[1]
    if w_rec.shape != (n, n):
        raise DimensionError(
            f"recurrent matrix must be {n}x{n} to match {n} neurons, got {w_rec.shape}")
    if not (np.all(np.isfinite(w_in)) and np.all(np.isfinite(w_rec))):
        raise ValueError("weight matrices contain non-finite values")
    return w_in, w_rec


def split_sign(w):
    """Positive (AMPA) and negative (GABA) magnitudes of a signed matrix."""
    return np.ascontiguousarray(np.maximum(w, 0.0)), np.ascontiguousarray(np.maximum(-w, 0.0))


def simulate(x, w_in, w_rec, params: SimParams | Coefficients,
             constants: PhysicalConstants = DEFAULT_CONSTANTS, *,
             state=None, smooth: bool = False, slope: float = 10.0,
             record: bool = False, integrator: str = "exp",
             backend: str | None = None) -> ForwardResult:
    """Run a batch of inputs ``x`` with shape ``(B, T, n_in)`` through one layer.

    Each step, input spikes weighted by ``w_in`` and the previous step's
    output spikes weighted by ``w_rec`` are routed to AMPA (positive
    weights) or GABA (negative weights). ``state`` is a NeuronState shared by
    all samples or a list with one per sample.
    """
    w_in, w_rec = _check_weights(w_in, w_rec)
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 3:
        raise DimensionError(f"input batch must be (B, T, n_in), got shape {x.shape}")
    B, T, n_in = x.shape
    if n_in != w_in.shape[0]:
        raise DimensionError(
            f"input has {n_in} channels but the input matrix has {w_in.shape[0]} rows")
    n = w_in.shape[1]
    co = params if isinstance(params, Coefficients) else coefficients(params, n, constants, integrator)
    if co.thr.shape[0] != n:
        raise DimensionError(f"coefficients for {co.thr.shape[0]} neurons, network has {n}")

    if state is None:
        states = [NeuronState.initial(n, constants)] * B
    elif isinstance(state, NeuronState):
        states = [state] * B
    else:
        states = list(state)
    if len(states) != B:
        raise DimensionError("need one initial state per sample")
    for s in states:
        s.validate(constants)
        if s.n != n:
            raise DimensionError(f"state holds {s.n} neurons, network has {n}")
    cur = np.ascontiguousarray(np.stack([s.currents() for s in states]))
    ref = np.ascontiguousarray(np.stack([s.refractory_remaining for s in states]).astype(np.int64))
    last = np.ascontiguousarray(np.stack([s.spike_out for s in states]).astype(float))
    last0 = last.copy()

    wp, wn = split_sign(w_in)
    rp, rn = split_sign(w_rec)
    spikes = np.zeros((B, T, n))
    vmem = np.zeros((B, T, n))
    flags = np.zeros((B, T, n), dtype=np.uint8)
    traces = np.zeros((B, T, 6, n) if record else (0, 0, 6, n))
    impl = kernels.get(backend) if backend else kernels._impl
    code = impl.forward(x, wp, wn, rp, rn, co.decay, co.jump, co.mem_decay, co.mem_drive,
                        co.Idc, co.thr, co.Ireset, co.n_ref, co.floor, cur, ref, last,
                        bool(smooth), float(slope), spikes, vmem, flags, traces)
    if code:
        b, t = divmod(code - 1, T)
        raise NumericalError(f"numerical blow-up at sample {b}, step {t}")
    final = [NeuronState.from_arrays(cur[b], ref[b], last[b]) for b in range(B)]
    return ForwardResult(spikes, vmem, flags, final, last0, traces if record else None, co)


def evolve(raster: SpikeRaster, w_in, w_rec, params: SimParams,
           constants: PhysicalConstants = DEFAULT_CONSTANTS, *,
           state: NeuronState | None = None, record: bool = False,
           integrator: str = "exp", backend: str | None = None):
    """Evolve one recurrent layer over ``raster``.

    Returns ``(output_raster, record_dict)``; ``record_dict`` contains the
    final state and, with ``record=True``, per-step current traces.
    """
    w_in = np.asarray(w_in, dtype=float)
    if w_in.ndim != 2 or raster.n_channels != w_in.shape[0]:
        raise DimensionError(
            f"raster has {raster.n_channels} channels, input matrix shape {w_in.shape}")
    if params.dt != raster.dt:
        raise ValueError(f"raster dt {raster.dt} differs from parameter dt {params.dt}")
    n = w_in.shape[1]
    if raster.n_steps == 0:
        _check_weights(w_in, w_rec)
        init = state.copy() if state is not None else NeuronState.initial(n, constants)
        return SpikeRaster.empty(0, n, raster.dt), {"state": init}
    res = simulate(raster.data[None].astype(float), w_in, w_rec, params, constants,
                   state=state, record=record, integrator=integrator, backend=backend)
    out = SpikeRaster(res.spikes[0].astype(np.uint8), raster.dt)
    rec = {"state": res.final[0]}
    if record:
        tr = res.traces[0]
        rec.update({
            "Iampa": tr[:, 0], "Igaba": tr[:, 1], "Inmda": tr[:, 2], "Ishunt": tr[:, 3],
            "Iahp": tr[:, 4], "Imem": tr[:, 5], "Vmem": res.vmem[0],
        })
    return out, rec
