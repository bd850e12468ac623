"""Physical constants, analog parameter sets and their kernel coefficients.

All currents are in amperes, capacitances in farads, times in seconds.
A :class:`SimParams` field may hold either a scalar (shared by every neuron
of a core) or a 1-D array with one entry per neuron, which is how device
mismatch is represented.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

SYNAPSES = ("ampa", "gaba", "nmda", "shunt", "ahp")

# Leakage floor: every state and parameter current is clipped here.
I_FLOOR = 1e-15


class ParameterError(ValueError):
    """Invalid parameter value or combination."""


class NumericalError(FloatingPointError):
    """Raised when a simulation produces a non-finite value."""


@dataclass(frozen=True)
class PhysicalConstants:
    U_T: float = 25e-3
    kappa: float = 0.7
    C_mem: float = 3e-12
    C_syn: Mapping[str, float] = field(
        default_factory=lambda: {s: 25e-15 for s in SYNAPSES}
    )
    C_ref: float = 0.5e-12
    C_pulse: float = 0.5e-12
    I_floor: float = I_FLOOR

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ParameterError(f"kappa must lie in (0, 1), got {self.kappa}")
        values = {
            "U_T": self.U_T,
            "C_mem": self.C_mem,
            "C_ref": self.C_ref,
            "C_pulse": self.C_pulse,
            "I_floor": self.I_floor,
        }
        values.update({f"C_syn[{k}]": v for k, v in self.C_syn.items()})
        for name, value in values.items():
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive, got {value}")
        missing = set(SYNAPSES) - set(self.C_syn)
        if missing:
            raise ParameterError(f"C_syn lacks synapse types {sorted(missing)}")


DEFAULT_CONSTANTS = PhysicalConstants()


def derive_time_constant(Itau, C, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Time constant of a DPI/capacitor branch, ``C * U_T / (kappa * Itau)``.

    Works elementwise on arrays.
    """
    Itau = np.asarray(Itau, dtype=float) if np.ndim(Itau) else float(Itau)
    if np.any(np.asarray(Itau) < constants.I_floor):
        raise ParameterError(
            f"Itau={Itau!r} is below the leakage floor {constants.I_floor:g} A"
        )
    return C * constants.U_T / (constants.kappa * Itau)


def current_for_time_constant(tau, C, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Inverse of :func:`derive_time_constant`."""
    if np.any(np.asarray(tau) <= 0):
        raise ParameterError(f"time constant must be positive, got {tau!r}")
    return C * constants.U_T / (constants.kappa * tau)


def _itau(tau, C, constants=DEFAULT_CONSTANTS):
    return current_for_time_constant(tau, C, constants)


# Defaults expressed through the time constants they produce.
_C = DEFAULT_CONSTANTS
_DEFAULT_TAU = {
    "mem": 20e-3,
    "ampa": 10e-3,
    "gaba": 10e-3,
    "nmda": 10e-3,
    "shunt": 10e-3,
    "ahp": 50e-3,
}
_DEFAULT_T_REF = 5e-3
_DEFAULT_T_PULSE = 10e-6


@dataclass(frozen=True)
class SimParams:
    """Analog parameter set of one core (or one neuron group).

    ``Iw_ref`` is the weight unit: a simulated weight ``w`` injects the same
    charge as a connection whose weight current is ``|w| * Iw_ref``.
    ``Iw_base`` holds the four quantized base weight currents once a network
    has been quantized; they are unused by the float simulation.
    """

    Itau_mem: float = _itau(_DEFAULT_TAU["mem"], _C.C_mem)
    Igain_mem: float = 4 * _itau(_DEFAULT_TAU["mem"], _C.C_mem)
    Ispkthr: float = 1e-9
    Ireset: float = I_FLOOR
    Idc: float = I_FLOOR
    Iref: float = _itau(_DEFAULT_T_REF, _C.C_ref)
    Ipulse: float = _itau(_DEFAULT_T_PULSE, _C.C_pulse)
    Itau_ampa: float = _itau(_DEFAULT_TAU["ampa"], _C.C_syn["ampa"])
    Igain_ampa: float = 4 * _itau(_DEFAULT_TAU["ampa"], _C.C_syn["ampa"])
    Itau_gaba: float = _itau(_DEFAULT_TAU["gaba"], _C.C_syn["gaba"])
    Igain_gaba: float = 4 * _itau(_DEFAULT_TAU["gaba"], _C.C_syn["gaba"])
    Itau_nmda: float = _itau(_DEFAULT_TAU["nmda"], _C.C_syn["nmda"])
    Igain_nmda: float = 4 * _itau(_DEFAULT_TAU["nmda"], _C.C_syn["nmda"])
    Itau_shunt: float = _itau(_DEFAULT_TAU["shunt"], _C.C_syn["shunt"])
    Igain_shunt: float = 4 * _itau(_DEFAULT_TAU["shunt"], _C.C_syn["shunt"])
    Itau_ahp: float = _itau(_DEFAULT_TAU["ahp"], _C.C_syn["ahp"])
    Igain_ahp: float = 4 * _itau(_DEFAULT_TAU["ahp"], _C.C_syn["ahp"])
    Iw_ahp: float = I_FLOOR
    Iw_ref: float = 1e-9
    Iw_base: tuple = (1e-10, 2e-10, 4e-10, 8e-10)
    dt: float = 1e-3

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        for name in current_names(self):
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ParameterError(f"{name} is not finite: {value!r}")
            if np.any(value < I_FLOOR * (1 - 1e-12)):
                raise ParameterError(
                    f"{name}={value!r} is below the leakage floor {I_FLOOR:g} A"
                )
        if len(np.atleast_1d(self.Iw_base)) != 4:
            raise ParameterError("Iw_base must hold exactly 4 base weight currents")

    def replace(self, **changes) -> "SimParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.asarray(v).tolist() if np.ndim(v) else float(v)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimParams":
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown SimParams keys {sorted(unknown)}")
        for k, v in d.items():
            if k == "Iw_base":
                kwargs[k] = tuple(float(x) for x in v)
            elif isinstance(v, (list, tuple)):
                kwargs[k] = np.asarray(v, dtype=float)
            else:
                kwargs[k] = float(v)
        return cls(**kwargs)

    def is_shared(self) -> bool:
        """True when every current is a scalar (no per-neuron values)."""
        return all(np.ndim(getattr(self, n)) == 0 for n in current_names(self, base=False))

    def same_values(self, other: "SimParams") -> bool:
        for f in dataclasses.fields(self):
            a, b = np.asarray(getattr(self, f.name)), np.asarray(getattr(other, f.name))
            if a.shape != b.shape or not np.array_equal(a, b):
                return False
        return True


def current_names(params: SimParams | None = None, base: bool = True) -> list[str]:
    """Names of all current-valued SimParams fields (everything but ``dt``)."""
    names = [f.name for f in dataclasses.fields(SimParams) if f.name != "dt"]
    if not base:
        names.remove("Iw_base")
    return names


def pulse_width(params: SimParams, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    return derive_time_constant(params.Ipulse, constants.C_pulse, constants)


def refractory_period(params: SimParams, constants: PhysicalConstants = DEFAULT_CONSTANTS):
    return derive_time_constant(params.Iref, constants.C_ref, constants)


def refractory_steps(t_ref, dt):
    """``t_ref / dt`` rounded to the nearest integer, exact halves upward."""
    ratio = np.asarray(t_ref, dtype=float) / dt
    steps = np.floor(ratio + 0.5)
    return steps.astype(np.int64)


def synapse_jump(weight, params: SimParams, syn: str,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Current jump caused by one spike through a connection of magnitude ``weight``.

    ``weight * Iw_ref * (Igain/Itau) * (1 - exp(-t_pulse/tau))``; for the AHP
    branch the weight current is ``Iw_ahp`` instead.
    """
    Itau = np.asarray(getattr(params, f"Itau_{syn}"), dtype=float)
    Igain = np.asarray(getattr(params, f"Igain_{syn}"), dtype=float)
    tau = derive_time_constant(Itau, constants.C_syn[syn], constants)
    t_pulse = pulse_width(params, constants)
    Iw = params.Iw_ahp if syn == "ahp" else params.Iw_ref
    return weight * np.asarray(Iw) * (Igain / Itau) * (-np.expm1(-t_pulse / tau))


class Coefficients(NamedTuple):
    """Per-neuron update coefficients consumed by the kernels (all shape ``(n,)``)."""

    decay: np.ndarray     # (5, n): ampa, gaba, nmda, shunt, ahp
    jump: np.ndarray      # (5, n): per unit weight; row 4 is the AHP jump per spike
    mem_decay: np.ndarray
    mem_drive: np.ndarray  # (1 - mem_decay) * Igain_mem / Itau_mem
    Idc: np.ndarray
    thr: np.ndarray
    Ireset: np.ndarray
    n_ref: np.ndarray     # int64
    floor: float


def coefficients(params: SimParams, n: int,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 integrator: str = "exp") -> Coefficients:
    """Compile a parameter set into per-neuron kernel coefficients.

    ``integrator="exp"`` uses the exponential-Euler decay ``exp(-dt/tau)``;
    ``"euler"`` uses plain forward Euler ``1 - dt/tau`` (requires dt <= tau).
    """
    if integrator not in ("exp", "euler"):
        raise ParameterError(f"unknown integrator {integrator!r}")
    dt = params.dt

    def bcast(x):
        arr = np.broadcast_to(np.asarray(x, dtype=float), (n,))
        return np.ascontiguousarray(arr)

    def decay_of(tau):
        if integrator == "exp":
            return np.exp(-dt / tau)
        if np.any(dt > tau):
            raise ParameterError(
                f"plain Euler is unstable: dt={dt:g} exceeds a time constant {np.min(tau):g}"
            )
        return 1.0 - dt / tau

    decay = np.empty((5, n))
    jump = np.empty((5, n))
    for k, syn in enumerate(SYNAPSES):
        tau = bcast(derive_time_constant(getattr(params, f"Itau_{syn}"),
                                         constants.C_syn[syn], constants))
        decay[k] = decay_of(tau)
        jump[k] = bcast(synapse_jump(1.0, params, syn, constants))

    tau_mem = bcast(derive_time_constant(params.Itau_mem, constants.C_mem, constants))
    mem_decay = decay_of(tau_mem)
    gain = bcast(params.Igain_mem) / bcast(params.Itau_mem)
    if integrator == "exp":
        mem_drive = -np.expm1(-dt / tau_mem) * gain
    else:
        mem_drive = (dt / tau_mem) * gain
    n_ref = bcast(refractory_steps(refractory_period(params, constants), dt)).astype(np.int64)
    return Coefficients(
        decay=decay,
        jump=jump,
        mem_decay=mem_decay,
        mem_drive=mem_drive,
        Idc=bcast(params.Idc),
        thr=bcast(params.Ispkthr),
        Ireset=bcast(params.Ireset),
        n_ref=np.ascontiguousarray(n_ref),
        floor=float(constants.I_floor),
    )
