"""Fabrication mismatch as a relative Gaussian perturbation of parameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .params import I_FLOOR, ParameterError, SimParams, current_names

WEIGHT_NAMES = ("w_in", "w_rec")


def default_targets() -> frozenset:
    return frozenset(current_names(base=True)) | frozenset(WEIGHT_NAMES)


@dataclass(frozen=True)
class MismatchSpec:
    sigma_rel: float = 0.2
    refresh_period: int = 100
    seed: int = 0
    targets: frozenset = field(default_factory=default_targets)

    def __post_init__(self):
        if not 0.0 <= self.sigma_rel < 1.0:
            raise ParameterError(f"sigma_rel must lie in [0, 1), got {self.sigma_rel}")
        if int(self.refresh_period) != self.refresh_period or self.refresh_period < 1:
            raise ParameterError(f"refresh_period must be an integer >= 1, got {self.refresh_period}")
        unknown = set(self.targets) - default_targets()
        if unknown:
            raise ParameterError(f"unknown mismatch targets {sorted(unknown)}")
        object.__setattr__(self, "targets", frozenset(self.targets))

    def draw_index(self, epoch: int) -> int:
        return epoch // self.refresh_period


def _rng(seed: int, draw_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(draw_index)])


def sample_mismatch(params: SimParams, weights: Mapping[str, np.ndarray],
                    spec: MismatchSpec, draw_index: int, n_neurons: int | None = None):
    """Draw one mismatched copy of ``params`` and ``weights``.

    Targeted currents become per-neuron arrays ``max(p * (1 + sigma * z), I_floor)``;
    weights are scaled entrywise by ``max(1 + sigma * z, 0)`` so that a
    connection never changes sign. The base weight currents ``Iw_base`` are
    perturbed per base weight. Returns ``(params, weights, factors)`` where
    ``factors`` maps each weight name to its multiplicative factor (needed to
    chain gradients back to the nominal weights).
    """
    if n_neurons is None:
        n_neurons = next(iter(weights.values())).shape[1] if weights else 1
    rng = _rng(spec.seed, draw_index)
    sigma = spec.sigma_rel
    changes = {}
    # fixed iteration order keeps draws reproducible regardless of target set
    for name in current_names(base=True):
        shape = (4,) if name == "Iw_base" else (n_neurons,)
        z = rng.standard_normal(shape)
        if name not in spec.targets or sigma == 0.0:
            continue
        nominal = np.asarray(getattr(params, name), dtype=float)
        value = np.maximum(nominal * (1.0 + sigma * z), I_FLOOR)
        changes[name] = tuple(value) if name == "Iw_base" else value
    new_params = dataclasses.replace(params, **changes) if changes else params

    new_weights, factors = {}, {}
    for name in WEIGHT_NAMES:
        if name not in weights:
            continue
        w = np.asarray(weights[name], dtype=float)
        z = rng.standard_normal(w.shape)
        if name in spec.targets and sigma > 0.0:
            f = np.maximum(1.0 + sigma * z, 0.0)
        else:
            f = np.ones_like(w)
        new_weights[name] = w * f
        factors[name] = f
    return new_params, new_weights, factors


def adversarial_perturb(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                        step_size: float, floor: float | None = None) -> dict:
    """Relative ascent step on every entry of ``params``.

    Each entry becomes ``p * (1 + step_size * sign(p * dL/dp))``, which for
    positive values (currents) is ``p * (1 + step_size * sign(dL/dp))`` and
    for negative weights still moves uphill. When
    ``floor`` is given (current-valued parameters) results are clipped there.
    """
    out = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=float)
        if name not in grads:
            out[name] = p.copy()
            continue
        g = np.asarray(grads[name], dtype=float)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        new = p * (1.0 + step_size * np.sign(p * g))
        if floor is not None:
            new = np.maximum(new, floor)
        out[name] = new
    return out
