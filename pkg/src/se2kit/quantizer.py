"""Base-weight + bit-mask weight quantization.

A quantized connection is ``sign * sum_k bit_k(mask) * base[k]`` with four
positive base weights shared by every connection into one core cluster. The
base weights are learned by a small autoencoder on the weight magnitudes;
the masks are then chosen exactly, entry by entry, because the magnitude
MSE decomposes over entries once the base weights are fixed.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from ._accel import HAVE_NUMBA, njit
from .mapper import HardwareSpec
from .model import DimensionError

N_BASE = 4
N_MASKS = 1 << N_BASE
# BITS[m, k] == 1 iff bit k of mask m is set
BITS = ((np.arange(N_MASKS)[:, None] >> np.arange(N_BASE)) & 1).astype(float)


class QuantizationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class QuantSpec:
    base_weights: np.ndarray   # (4,), positive, ascending
    mask: np.ndarray           # int, 0..15
    sign: np.ndarray           # int, -1/0/+1

    def __post_init__(self):
        base = np.asarray(self.base_weights, dtype=float)
        mask = np.asarray(self.mask, dtype=np.int64)
        sign = np.asarray(self.sign, dtype=np.int64)
        if base.shape != (N_BASE,) or not np.all(base > 0) or not np.all(np.isfinite(base)):
            raise ValueError(f"need {N_BASE} finite positive base weights, got {base}")
        if np.any(np.diff(base) < 0):
            raise ValueError("base weights must be in ascending order")
        if mask.shape != sign.shape:
            raise DimensionError(f"mask {mask.shape} and sign {sign.shape} differ in shape")
        if mask.size and (mask.min() < 0 or mask.max() >= N_MASKS):
            raise ValueError("mask entries must lie in 0..15")
        if not np.isin(sign, (-1, 0, 1)).all():
            raise ValueError("sign entries must be -1, 0 or +1")
        if np.any((sign == 0) & (mask != 0)):
            raise ValueError("a connection without sign must have mask 0")
        for name, v in (("base_weights", base), ("mask", mask), ("sign", sign)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def synapse_type(self) -> np.ndarray:
        """``"ampa"``, ``"gaba"`` or ``""`` per entry."""
        out = np.full(self.shape, "", dtype=object)
        out[self.sign > 0] = "ampa"
        out[self.sign < 0] = "gaba"
        return out

    def to_dict(self, weight_unit: float | None = None) -> dict:
        d = {"mask": self.mask.tolist(), "sign": self.sign.tolist(),
             "base_weights": self.base_weights.tolist()}
        if weight_unit is not None:
            d["weight_unit_A"] = weight_unit
            d["base_weights_A"] = (self.base_weights * weight_unit).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        return cls(np.array(d["base_weights"], dtype=float),
                   np.array(d["mask"], dtype=np.int64), np.array(d["sign"], dtype=np.int64))


def subset_sums(base_weights) -> np.ndarray:
    """``(16,)`` array; entry ``m`` is the sum of the base weights selected by mask ``m``."""
    return BITS @ np.asarray(base_weights, dtype=float)


def reconstruct(q: QuantSpec) -> np.ndarray:
    return q.sign * subset_sums(q.base_weights)[q.mask]


def reconstruction_loss(q: QuantSpec, W) -> float:
    """MSE between reconstructed and original weight magnitudes."""
    W = np.asarray(W, dtype=float)
    if W.shape != q.shape:
        raise DimensionError(f"weight matrix {W.shape} vs quantized {q.shape}")
    if W.size == 0:
        return 0.0
    return float(np.mean((np.abs(reconstruct(q)) - np.abs(W)) ** 2))


def refine_masks(base_weights, W) -> np.ndarray:
    """Entrywise optimal masks for fixed base weights (ties -> smaller mask)."""
    sums = subset_sums(base_weights)
    mag = np.abs(np.asarray(W, dtype=float))
    err = (sums - mag[..., None]) ** 2
    return np.argmin(err, axis=-1).astype(np.int64)  # argmin keeps the first minimum


def _sign_for(mask, W):
    return np.where(mask > 0, np.sign(W), 0).astype(np.int64)


def quantize_with_bases(base_weights, W) -> QuantSpec:
    base = np.sort(np.asarray(base_weights, dtype=float))
    mask = refine_masks(base, W)
    return QuantSpec(base, mask, _sign_for(mask, np.asarray(W, dtype=float)))


def ladder_init(W) -> np.ndarray:
    """Geometric ladder of 4 rungs from the 25th to the 99th percentile of nonzero |W|."""
    mag = np.abs(np.asarray(W, dtype=float)).ravel()
    mag = mag[mag > 0]
    if mag.size == 0:
        return 2.0 ** np.arange(N_BASE)
    lo, hi = np.percentile(mag, 25), np.percentile(mag, 99)
    ratio = (hi / lo) ** (1.0 / (N_BASE - 1))
    return lo * ratio ** np.arange(N_BASE)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _autoencode(mag: np.ndarray, inits: np.ndarray, steps: int, lr: float, seed: int):
    """Learn 4 codes from ``mag`` (normalized to max 1), one run per row of ``inits``.

    Encoder: ``code = softplus(E @ vec(mag) + b)``. Decoder: relaxed masks
    ``sigmoid(L / T)`` with reconstruction ``sigmoid(L / T) @ code``; the
    temperature ``T`` is annealed from 1 to 0.05 so the relaxed masks end up
    close to binary. All runs are optimized together as one batch.
    Returns codes ``(K, 4)`` and hardened masks ``(K, *mag.shape, 4)``.
    """
    rng = np.random.default_rng(seed)
    flat = mag.ravel()
    K = inits.shape[0]
    E = np.zeros((K, N_BASE, flat.size))
    b = _softplus_inv(np.maximum(inits, 1e-6))
    # relaxed masks start near the exact masks of each initial code
    m0 = BITS[np.stack([refine_masks(c, mag) for c in inits])]
    L = np.where(m0 > 0, 1.0, -1.0) + 0.01 * rng.standard_normal(m0.shape)
    params = [E, b, L]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    scale = 1.0 / max(flat.size, 1)
    temps = np.geomspace(1.0, 0.05, max(steps, 1))
    extra = (1,) * mag.ndim
    for t in range(1, steps + 1):
        temp = temps[t - 1]
        pre = E @ flat + b                              # (K, 4)
        code = _softplus(pre)
        s = _sigmoid(L / temp)
        rec = np.einsum("k...j,kj->k...", s, code)
        d_rec = 2.0 * scale * (rec - mag)
        d_code = (s * d_rec[..., None]).reshape(K, -1, N_BASE).sum(axis=1)
        d_L = d_rec[..., None] * code.reshape((K,) + extra + (N_BASE,)) * s * (1.0 - s) / temp
        d_pre = d_code * _sigmoid(pre)
        grads = [d_pre[:, :, None] * flat, d_pre, d_L]
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= b1
            mi += (1 - b1) * g
            vi *= b2
            vi += (1 - b2) * g * g
            p -= lr * (mi / (1 - b1 ** t)) / (np.sqrt(vi / (1 - b2 ** t)) + eps)
    code = _softplus(E @ flat + b)
    hard = (L >= 0.0).astype(float)
    return code, hard


def _polish(base: np.ndarray, mag: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Alternate exact masks and non-negative least-squares base weights.

    Neither half-step can increase the loss, so this converges to a point
    where the masks are optimal for the bases and vice versa.
    """
    floor = 1e-9 * max(mag.max(), 1e-300)
    base = np.sort(np.maximum(base, floor))
    y = mag.ravel()
    prev = None
    for _ in range(max_iter):
        mask = refine_masks(base, mag).ravel()
        if prev is not None and np.array_equal(mask, prev):
            break
        prev = mask
        A = BITS[mask]
        used = A.any(axis=0)
        if used.any():
            sol, _ = nnls(A[:, used], y)
            new = base.copy()
            new[used] = np.maximum(sol, floor)
            if _loss_for(new, mag) <= _loss_for(base, mag):
                base = np.sort(new)
    return base


def _loss_for(base, mag) -> float:
    sums = subset_sums(base)
    return float(np.mean(np.min((sums - mag[..., None]) ** 2, axis=-1))) if mag.size else 0.0


def initial_codes(norm: np.ndarray, restarts: int, seed: int) -> np.ndarray:
    """Starting codes: the percentile ladder, a binary ladder, then seeded draws.

    Random codes are drawn from values that are natural subset-sum
    ingredients of the data: the magnitudes themselves, their halves and
    their pairwise differences.
    """
    rng = np.random.default_rng([seed, 1])
    inits = [ladder_init(norm), 2.0 ** np.arange(N_BASE) / 15.0]
    vals = np.unique(norm[norm > 0])
    if vals.size > 400:
        vals = rng.choice(vals, 400, replace=False)
    diffs = np.abs(vals[:, None] - vals[None, :])
    pool = np.unique(np.concatenate([vals, vals / 2, diffs[diffs > 1e-3]]))
    for _ in range(max(restarts - 2, 0)):
        inits.append(np.sort(rng.choice(pool, N_BASE)))
    return np.array(inits[:max(restarts, 1)])


def autoencoder_quantize(W_in, W_rec=None, steps: int = 1000, lr: float = 1e-2,
                         seed: int = 0, restarts: int = 256, warn_above: float = 0.05):
    """Quantize one core cluster; ``W_in`` and ``W_rec`` share base weights.

    Returns ``(q_in, q_rec, loss)`` where ``loss`` is the magnitude MSE over
    both matrices together (``q_rec`` is None when ``W_rec`` is None). A
    warning is issued when the loss relative to the mean squared magnitude
    exceeds ``warn_above``.
    """
    W_in = np.asarray(W_in, dtype=float)
    parts = [W_in] if W_rec is None else [W_in, np.asarray(W_rec, dtype=float)]
    if W_rec is not None and parts[1].ndim == 2 and parts[1].shape[1] != W_in.shape[1]:
        raise DimensionError("input and recurrent matrices must have the same number of columns")
    if not all(np.all(np.isfinite(p)) for p in parts):
        raise ValueError("weight matrices must be finite")
    W = np.concatenate([p.reshape(-1, W_in.shape[1]) if p.size else p.reshape(0, W_in.shape[1])
                        for p in parts]) if len(parts) > 1 else W_in
    mag = np.abs(W)
    peak = mag.max() if mag.size else 0.0
    if peak == 0.0:
        base = 2.0 ** np.arange(N_BASE)
        q = quantize_with_bases(base, W)
    else:
        norm = mag / peak
        codes, hards = _autoencode(norm, initial_codes(norm, restarts, seed), steps, lr, seed)
        best, best_loss = None, np.inf
        for code, hard in zip(codes, hards):
            # hardened masks are superseded by the exact entrywise choice,
            # which can only lower the loss for the learned code
            base = _polish(np.sort(np.maximum(code, 1e-12)), norm)
            cand = _loss_for(base, norm)
            if cand < best_loss:
                best, best_loss = base, cand
        q = quantize_with_bases(best * peak, W)
    loss = reconstruction_loss(q, W)
    ref = float(np.mean(mag ** 2)) if mag.size else 0.0
    if ref > 0 and loss > warn_above * ref:
        warnings.warn(f"quantization loss {loss:.3g} exceeds {warn_above:g} x mean squared "
                      f"weight ({ref:.3g})", QuantizationWarning, stacklevel=2)
    n_in = W_in.shape[0]
    q_in = QuantSpec(q.base_weights, q.mask[:n_in], q.sign[:n_in])
    q_rec = None if W_rec is None else QuantSpec(q.base_weights, q.mask[n_in:], q.sign[n_in:])
    return q_in, q_rec, loss


@njit(cache=True)
def _grid_search_loop(grid, mag):
    P = grid.shape[0]
    n = mag.shape[0]
    best = np.inf
    best_idx = np.zeros(4, dtype=np.int64)
    sums = np.empty(16)
    for i in range(P):
        for j in range(i, P):
            for k in range(j, P):
                for l in range(k, P):
                    b0, b1, b2, b3 = grid[i], grid[j], grid[k], grid[l]
                    for m in range(16):
                        sums[m] = ((m & 1) * b0 + ((m >> 1) & 1) * b1
                                   + ((m >> 2) & 1) * b2 + ((m >> 3) & 1) * b3)
                    total = 0.0
                    for e in range(n):
                        lo = np.inf
                        for m in range(16):
                            d = sums[m] - mag[e]
                            d = d * d
                            if d < lo:
                                lo = d
                        total += lo
                    if total < best:
                        best = total
                        best_idx[0], best_idx[1], best_idx[2], best_idx[3] = i, j, k, l
    return best_idx, best / n


def _grid_search_numpy(grid, mag):
    points = grid.shape[0]
    combos = np.array(list(itertools.combinations_with_replacement(range(points), N_BASE)))
    best_loss, best_idx = np.inf, None
    for chunk in np.array_split(combos, max(1, len(combos) // 20000)):
        sums = grid[chunk] @ BITS.T                     # (K, 16)
        err = (sums[:, None, :] - mag[None, :, None]) ** 2
        loss = err.min(axis=2).mean(axis=1)
        i = int(np.argmin(loss))
        if loss[i] < best_loss:
            best_loss, best_idx = float(loss[i]), chunk[i]
    return best_idx, best_loss


def brute_force_quantize(W, points: int = 64) -> tuple[np.ndarray, float]:
    """Grid-search oracle: ascending base tuples on a ``points``-point grid over
    ``[min|W|, max|W|]`` (nonzero entries), each scored with exact masks.

    Returns ``(best_base_weights, best_loss)``.
    """
    W = np.asarray(W, dtype=float)
    mag = np.abs(W).ravel()
    nz = mag[mag > 0]
    if nz.size == 0:
        return 2.0 ** np.arange(N_BASE), 0.0
    grid = np.linspace(nz.min(), nz.max(), points)
    search = _grid_search_loop if HAVE_NUMBA else _grid_search_numpy
    idx, loss = search(grid, np.ascontiguousarray(mag))
    return grid[np.asarray(idx)], float(loss)


# ---------------------------------------------------------------------------
# spec-level quantization


@dataclass(frozen=True, eq=False)
class ClusterQuant:
    tags: tuple           # hardware tags (columns) of the cluster
    q_in: QuantSpec
    q_rec: QuantSpec
    loss: float

    @property
    def base_weights(self) -> np.ndarray:
        return self.q_in.base_weights


@dataclass(frozen=True, eq=False)
class QuantizedSpec:
    clusters: tuple       # ClusterQuant per parameter cluster

    def to_dict(self, spec: HardwareSpec | None = None) -> dict:
        out = []
        for cq in self.clusters:
            unit = None
            if spec is not None:
                core = spec.core_assignment[cq.tags[0]]
                unit = float(np.asarray(spec.params_per_core[core].Iw_ref))
            out.append({"tags": list(cq.tags), "loss": cq.loss,
                        "w_in": cq.q_in.to_dict(unit), "w_rec": cq.q_rec.to_dict(unit)})
        return {"clusters": out}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedSpec":
        return cls(tuple(ClusterQuant(tuple(c["tags"]), QuantSpec.from_dict(c["w_in"]),
                                      QuantSpec.from_dict(c["w_rec"]), float(c["loss"]))
                         for c in d["clusters"]))

    def dumps(self, spec: HardwareSpec | None = None) -> str:
        return json.dumps(self.to_dict(spec), indent=1)

    @classmethod
    def loads(cls, text: str) -> "QuantizedSpec":
        return cls.from_dict(json.loads(text))


def quantize_spec(spec: HardwareSpec, steps: int = 1000, lr: float = 1e-2,
                  seed: int = 0, restarts: int = 256) -> QuantizedSpec:
    """Quantize each parameter cluster of a mapped spec (columns of its neurons)."""
    clusters = spec.clusters or (tuple(spec.hardware_tags),)
    pos = {t: i for i, t in enumerate(spec.hardware_tags)}
    out = []
    for tags in clusters:
        cols = [pos[t] for t in tags]
        q_in, q_rec, loss = autoencoder_quantize(spec.w_in[:, cols], spec.w_rec[:, cols],
                                                 steps=steps, lr=lr, seed=seed,
                                                 restarts=restarts)
        out.append(ClusterQuant(tuple(tags), q_in, q_rec, loss))
    return QuantizedSpec(tuple(out))


def apply_quantization(spec: HardwareSpec, quant: QuantizedSpec) -> HardwareSpec:
    """Spec whose matrices are the reconstructed quantized weights.

    Each core's ``Iw_base`` is set to its cluster's base weights expressed as
    currents (base weight times the core's ``Iw_ref``).
    """
    pos = {t: i for i, t in enumerate(spec.hardware_tags)}
    w_in = np.zeros_like(spec.w_in)
    w_rec = np.zeros_like(spec.w_rec)
    params = dict(spec.params_per_core)
    covered = set()
    for cq in quant.clusters:
        cols = [pos[t] for t in cq.tags]
        w_in[:, cols] = reconstruct(cq.q_in)
        w_rec[:, cols] = reconstruct(cq.q_rec)
        covered.update(cq.tags)
        for core in {spec.core_assignment[t] for t in cq.tags}:
            p = params[core]
            params[core] = p.replace(
                Iw_base=tuple(float(b) for b in cq.base_weights * float(np.asarray(p.Iw_ref))))
    if covered != set(spec.hardware_tags):
        raise ValueError("quantization does not cover every hardware neuron")
    return HardwareSpec(w_in, w_rec, spec.virtual_tags, spec.hardware_tags,
                        dict(spec.core_assignment), params, spec.clusters)
