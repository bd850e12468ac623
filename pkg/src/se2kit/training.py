"""Surrogate-gradient BPTT training of the simulated network."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .mismatch import MismatchSpec, adversarial_perturb, sample_mismatch
from .model import DimensionError, simulate
from .network import Sequential, single_layer, with_weights
from .params import (
    DEFAULT_CONSTANTS,
    Coefficients,
    NumericalError,
    ParameterError,
    PhysicalConstants,
    SimParams,
    coefficients,
)
from .raster import SpikeRaster

log = logging.getLogger(__name__)

TRAINABLE = ("w_in", "w_rec")


class TrainingDiverged(NumericalError):
    pass


def _as_array(r):
    return r.data if isinstance(r, SpikeRaster) else np.asarray(r)


def mse_spike_loss(y_out, y_target) -> float:
    """Mean over all steps and channels of the squared spike difference."""
    a = np.asarray(_as_array(y_out), dtype=float)
    b = np.asarray(_as_array(y_target), dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"raster shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))


def make_target(class_index: int, n_steps: int, n_channels: int = 2,
                dt: float = 1e-3) -> SpikeRaster:
    """Spike on every step of channel ``class_index``, silence elsewhere."""
    if not 0 <= class_index < n_channels:
        raise ValueError(f"class index {class_index} outside 0..{n_channels - 1}")
    data = np.zeros((n_steps, n_channels), dtype=np.uint8)
    data[:, class_index] = 1
    return SpikeRaster(data, dt)


def surrogate_spike(ratio, slope: float = 10.0):
    """Hard threshold forward value and fast-sigmoid backward derivative.

    ``ratio`` is ``Imem / Ispkthr``. The derivative is
    ``slope / (4 * (1 + slope*|ratio - 1|)**2)``.
    """
    if slope <= 0:
        raise ParameterError("surrogate slope must be positive")
    x = np.asarray(ratio, dtype=float) - 1.0
    spike = (x >= 0.0).astype(np.uint8)
    deriv = slope / (4.0 * (1.0 + slope * np.abs(x)) ** 2)
    if np.ndim(ratio) == 0:
        return int(spike), float(deriv)
    return spike, deriv


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """In-place update of every array in ``params`` that has a gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] *= self.beta1
            self.m[k] += (1.0 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * self.m[k] / (np.sqrt(self.v[k] / bc2) + self.eps)


def loss_and_grad(x, y, w_in, w_rec, params: SimParams | Coefficients,
                  constants: PhysicalConstants = DEFAULT_CONSTANTS, *,
                  slope: float = 10.0, smooth: bool = False,
                  backend: str | None = None):
    """MSE spike loss of a batch and its BPTT gradient w.r.t. both weight matrices.

    ``x``: ``(B, T, n_in)`` inputs, ``y``: ``(B, T, n)`` targets. With
    ``smooth=True`` the hard threshold is replaced by the relaxation whose
    derivative is the surrogate (no refractory gating), so the returned
    gradient is exact.
    """
    res = simulate(x, w_in, w_rec, params, constants, smooth=smooth, slope=slope,
                   backend=backend)
    y = np.asarray(y, dtype=float)
    if y.shape != res.spikes.shape:
        raise DimensionError(f"target shape {y.shape} != output shape {res.spikes.shape}")
    diff = res.spikes - y
    loss = float(np.mean(diff * diff))
    dlds = np.ascontiguousarray(2.0 * diff / diff.size)
    co = res.coeffs
    w_in = np.asarray(w_in, dtype=float)
    w_rec = np.asarray(w_rec, dtype=float)
    n_in, n = w_in.shape
    g_wp = np.zeros((n_in, n))
    g_wn = np.zeros((n_in, n))
    g_rp = np.zeros((n, n))
    g_rn = np.zeros((n, n))
    impl = kernels.get(backend) if backend else kernels._impl
    impl.backward(np.ascontiguousarray(x, dtype=float),
                  np.ascontiguousarray(np.maximum(w_in, 0)),
                  np.ascontiguousarray(np.maximum(-w_in, 0)),
                  np.ascontiguousarray(np.maximum(w_rec, 0)),
                  np.ascontiguousarray(np.maximum(-w_rec, 0)),
                  co.decay, co.jump, co.mem_decay, co.mem_drive, co.thr, co.Ireset,
                  float(slope), res.last0, res.spikes, res.vmem, res.flags, dlds,
                  g_wp, g_wn, g_rp, g_rn)
    grads = {"w_in": _signed_grad(w_in, g_wp, g_wn), "w_rec": _signed_grad(w_rec, g_rp, g_rn)}
    return loss, grads, res


def _signed_grad(w, g_pos, g_neg):
    """Gradient w.r.t. a signed weight from the AMPA/GABA magnitude gradients.

    A zero weight sits on a kink: its right derivative is ``g_pos`` and its
    left derivative ``-g_neg``. The steepest-descent one-sided derivative is
    used there (zero if neither side descends), so silent connections can
    still grow.
    """
    right, left = g_pos, -g_neg
    at_zero = np.where(right < 0, right, np.where(left > 0, left, 0.0))
    return np.where(w > 0, right, np.where(w < 0, left, at_zero))


@dataclass
class TrainConfig:
    epochs: int = 20000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    surrogate_slope: float = 10.0
    trainable: frozenset = frozenset(TRAINABLE)
    mismatch: MismatchSpec | None = field(default_factory=MismatchSpec)
    adversarial_step: float = 0.0
    ema_decay: float = 0.0
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ParameterError(f"epochs must be an integer >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ParameterError("learning rate must be non-negative")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {b}")
        if self.surrogate_slope <= 0:
            raise ParameterError("surrogate slope must be positive")
        self.trainable = frozenset(self.trainable)
        unknown = self.trainable - set(TRAINABLE)
        if unknown:
            raise ParameterError(
                f"only {TRAINABLE} can be trained; got {sorted(unknown)}")
        if self.adversarial_step < 0:
            raise ParameterError("adversarial step must be non-negative")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ParameterError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trainable"] = sorted(self.trainable)
        if self.mismatch is not None:
            d["mismatch"] = {
                "sigma_rel": self.mismatch.sigma_rel,
                "refresh_period": self.mismatch.refresh_period,
                "seed": self.mismatch.seed,
                "targets": sorted(self.mismatch.targets),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        mm = d.pop("mismatch", None)
        if mm is not None:
            mm = MismatchSpec(sigma_rel=mm["sigma_rel"], refresh_period=mm["refresh_period"],
                              seed=mm["seed"], targets=frozenset(mm["targets"]))
        d["trainable"] = frozenset(d.get("trainable", TRAINABLE))
        return cls(mismatch=mm, **d)


@dataclass
class LossRecord:
    losses: np.ndarray
    w_in: np.ndarray
    w_rec: np.ndarray

    def network(self, template: Sequential) -> Sequential:
        return with_weights(template, self.w_in, self.w_rec)


def _batch(dataset: Sequence, n_out: int):
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    rasters = [r for r, _ in dataset]
    dt = rasters[0].dt
    shape = rasters[0].data.shape
    if any(r.data.shape != shape or r.dt != dt for r in rasters):
        raise DimensionError("all training rasters must share dt and shape")
    x = np.stack([r.data for r in rasters]).astype(float)
    y = np.stack([make_target(c, shape[0], n_out, dt).data for _, c in dataset]).astype(float)
    return x, y


def train(net: Sequential, dataset: Sequence, cfg: TrainConfig,
          constants: PhysicalConstants = DEFAULT_CONSTANTS,
          backend: str | None = None, callback=None) -> LossRecord:
    """Full-batch training over ``dataset``, a sequence of ``(SpikeRaster, class)``.

    Each epoch: (re)sample mismatch, forward, MSE loss, BPTT through the
    surrogate, Adam update of the trainable weights. The recorded loss of an
    epoch is the loss seen by that epoch's update.

    With ``cfg.ema_decay > 0`` the returned weights, and those handed to
    ``callback``, are an exponential moving average of the optimizer iterates.
    This damps the wander caused by resampling mismatch every few epochs.
    """
    w_in, w_rec, params = single_layer(net)
    n = w_in.shape[1]
    x, y = _batch(dataset, n)
    if params.dt != dataset[0][0].dt:
        raise ValueError("raster dt differs from the network's dt")
    weights = {"w_in": w_in.copy(), "w_rec": w_rec.copy()}
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    mm = cfg.mismatch if cfg.mismatch is not None and cfg.mismatch.sigma_rel > 0 else None
    nominal_co = coefficients(params, n, constants)
    losses = np.empty(cfg.epochs)
    average = {k: v.copy() for k, v in weights.items()}
    model = average if cfg.ema_decay else weights
    draw = None
    co, factors = nominal_co, None
    for epoch in range(cfg.epochs):
        refresh = False
        if mm is not None:
            d = mm.draw_index(epoch)
            if d != draw:
                draw, refresh = d, True
                p_mm, _, factors = sample_mismatch(params, weights, mm, d, n)
                co = coefficients(p_mm, n, constants)
        eff = {k: weights[k] * factors[k] for k in weights} if factors else weights
        if cfg.adversarial_step > 0 and not refresh:
            _, g_adv, _ = loss_and_grad(x, y, eff["w_in"], eff["w_rec"], co, constants,
                                        slope=cfg.surrogate_slope, backend=backend)
            eff = adversarial_perturb(eff, g_adv, cfg.adversarial_step)
            scale = {k: eff[k] / np.where(weights[k] != 0, weights[k], 1.0) for k in weights}
        else:
            scale = factors
        loss, grads, _ = loss_and_grad(x, y, eff["w_in"], eff["w_rec"], co, constants,
                                       slope=cfg.surrogate_slope, backend=backend)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(f"non-finite loss or gradient at epoch {epoch}")
        losses[epoch] = loss
        if scale is not None:
            grads = {k: grads[k] * scale[k] for k in grads}
        grads = {k: g for k, g in grads.items() if k in cfg.trainable}
        if cfg.learning_rate > 0:
            opt.step(weights, grads)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.5f", epoch, loss)
        if cfg.ema_decay:
            a = cfg.ema_decay
            for k in weights:
                average[k] *= a
                average[k] += (1.0 - a) * weights[k]
        if callback is not None:
            callback(epoch, loss, model)
    return LossRecord(losses, model["w_in"].copy(), model["w_rec"].copy())
