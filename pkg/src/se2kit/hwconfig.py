"""Bias-code translation and deployable device configurations.

Currents are translated to ``(coarse, fine)`` bias-generator codes through a
lookup table by nearest match in the log domain. A :class:`DeviceConfig`
holds, per core, the bias codes of every parameter and, per neuron, its CAM
entries (source tag, synapse type, 4-bit weight mask) and SRAM destinations.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .mapper import HardwareLimits, HardwareSpec
from .network import DynapSim, Linear, Sequential
from .params import I_FLOOR, SimParams, current_names
from .quantizer import BITS, QuantizedSpec

FORMAT = "se2kit-device-config"
VERSION = 1
SYNAPSE_SIGN = {"ampa": 1, "gaba": -1}
# currents translated to bias codes; Iw_ref is the simulator's weight unit,
# not a chip bias, and the base weights are coded separately per core
CODED_PARAMS = tuple(n for n in current_names(base=False) if n != "Iw_ref")
BASE_NAMES = tuple(f"Iw_base{k}" for k in range(4))
_TIE_TOL = 1e-9


class ConfigError(ValueError):
    pass


class BiasRangeError(ConfigError):
    pass


class CamOverflowError(ConfigError):
    pass


@dataclass(frozen=True, eq=False)
class BiasTable:
    """Current produced by each ``(coarse, fine)`` bias-generator setting."""

    coarse: np.ndarray
    fine: np.ndarray
    current: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        c = np.asarray(self.coarse, dtype=np.int64)
        f = np.asarray(self.fine, dtype=np.int64)
        i = np.asarray(self.current, dtype=float)
        if not (c.shape == f.shape == i.shape) or c.ndim != 1 or c.size == 0:
            raise ConfigError("bias table columns must be non-empty 1-D arrays of equal length")
        if not np.all(np.isfinite(i)) or np.any(i <= 0):
            raise ConfigError("bias table currents must be finite and positive")
        order = np.lexsort((f, c))
        c, f, i = c[order], f[order], i[order]
        if np.any((np.diff(c) == 0) & (np.diff(f) == 0)):
            raise ConfigError("duplicate (coarse, fine) entry in bias table")
        lows, highs = [], []
        for band in np.unique(c):
            sel = c == band
            if np.any(np.diff(i[sel]) <= 0):
                raise ConfigError(f"currents not strictly increasing in fine for coarse {band}")
            lows.append(i[sel][0])
            highs.append(i[sel][-1])
        if np.any(np.diff(lows) <= 0) or np.any(np.diff(highs) <= 0):
            raise ConfigError("coarse bands must be ordered by current")
        for name, v in (("coarse", c), ("fine", f), ("current", i)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "_log", np.log(i))
        object.__setattr__(self, "_index", {(int(a), int(b)): k for k, (a, b) in enumerate(zip(c, f))})

    @classmethod
    def synthetic(cls, I0: float = 2.5e-13, n_coarse: int = 6, n_fine: int = 256) -> "BiasTable":
        """``I(c, f) = I0 * 8**c * (f + 1) / 256``; a non-calibrated stand-in."""
        c, f = np.meshgrid(np.arange(n_coarse), np.arange(n_fine), indexing="ij")
        c, f = c.ravel(), f.ravel()
        return cls(c, f, I0 * 8.0 ** c * (f + 1) / 256.0, label="synthetic")

    @classmethod
    def from_csv(cls, path) -> "BiasTable":
        with open(path, newline="") as fh:
            return cls.loads(fh.read(), label=os.fspath(path))

    @classmethod
    def loads(cls, text: str, label: str = "custom") -> "BiasTable":
        reader = csv.DictReader(io.StringIO(text))
        need = {"coarse", "fine", "current_ampere"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(f"bias table CSV needs the header {','.join(sorted(need))}")
        rows = list(reader)
        try:
            c = [int(r["coarse"]) for r in rows]
            f = [int(r["fine"]) for r in rows]
            i = [float(r["current_ampere"]) for r in rows]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed bias table row: {exc}") from exc
        return cls(np.array(c), np.array(f), np.array(i), label=label)

    def dumps(self) -> str:
        lines = ["coarse,fine,current_ampere"]
        lines += [f"{c},{f},{i!r}" for c, f, i in zip(self.coarse, self.fine, self.current.tolist())]
        return "\n".join(lines) + "\n"

    @property
    def i_min(self) -> float:
        return float(self.current.min())

    @property
    def i_max(self) -> float:
        return float(self.current.max())

    def __len__(self):
        return self.current.size

    def lookup(self, coarse: int, fine: int) -> float:
        try:
            return float(self.current[self._index[(int(coarse), int(fine))]])
        except KeyError:
            raise ConfigError(f"bias code ({coarse}, {fine}) is not in the table") from None

    def current_to_code(self, I: float) -> tuple[int, int]:
        """Nearest code in log distance; ties go to lower coarse, then lower fine."""
        I = float(I)
        if not np.isfinite(I) or I <= 0:
            raise BiasRangeError(f"current {I!r} A is not a positive finite value")
        if I < self.i_min or I > self.i_max:
            nearest = self.i_min if I < self.i_min else self.i_max
            raise BiasRangeError(
                f"current {I:.4g} A outside the table range [{self.i_min:.4g}, {self.i_max:.4g}] A; "
                f"nearest achievable {nearest:.4g} A")
        d = np.abs(self._log - np.log(I))
        # entries are sorted by (coarse, fine): the first near-minimum wins ties
        k = int(np.flatnonzero(d <= d.min() + _TIE_TOL)[0])
        return int(self.coarse[k]), int(self.fine[k])

    def quantize_current(self, I: float) -> float:
        return self.lookup(*self.current_to_code(I))


def current_to_code(I: float, table: BiasTable) -> tuple[int, int]:
    return table.current_to_code(I)


# ---------------------------------------------------------------------------
# configuration document


@dataclass(frozen=True)
class CamEntry:
    source: int
    synapse: str
    mask: int

    def __post_init__(self):
        if self.synapse not in SYNAPSE_SIGN:
            raise ConfigError(f"unknown synapse type {self.synapse!r}")
        if not 0 < int(self.mask) < 16:
            raise ConfigError(f"CAM weight mask must lie in 1..15, got {self.mask}")


@dataclass
class NeuronConfig:
    tag: int
    cam: list = field(default_factory=list)
    sram: list = field(default_factory=list)     # [(chip, core), ...]


@dataclass
class CoreConfig:
    chip: int
    core: int
    params: dict                                  # name -> (coarse, fine)
    neurons: list = field(default_factory=list)


@dataclass
class DeviceConfig:
    cores: list
    virtual_tags: list
    inputs: dict                                  # virtual tag -> [hardware tags]
    dt: float = 1e-3
    weight_unit: float = 1e-9
    limits: HardwareLimits = field(default_factory=HardwareLimits)

    def neurons(self):
        for core in self.cores:
            for nc in core.neurons:
                yield core, nc

    @property
    def hardware_tags(self) -> list:
        return sorted(nc.tag for _, nc in self.neurons())

    def validate(self) -> None:
        if not self.cores or not any(c.neurons for c in self.cores):
            raise ConfigError("configuration contains no neurons")
        hw = self.hardware_tags
        if len(set(hw)) != len(hw):
            raise ConfigError("a hardware tag is configured twice")
        known = set(hw) | set(self.virtual_tags)
        if set(hw) & set(self.virtual_tags):
            raise ConfigError("virtual and hardware tags overlap")
        locs = set()
        for core in self.cores:
            loc = (core.chip, core.core)
            if loc in locs:
                raise ConfigError(f"core {loc} configured twice")
            locs.add(loc)
            missing = (set(CODED_PARAMS) | set(BASE_NAMES)) - set(core.params)
            if missing:
                raise ConfigError(f"core {loc} lacks bias codes for {sorted(missing)}")
            for nc in core.neurons:
                if len(nc.cam) > self.limits.synapses_per_neuron:
                    raise CamOverflowError(
                        f"neuron {nc.tag} needs {len(nc.cam)} CAM entries, "
                        f"limit {self.limits.synapses_per_neuron}")
                for e in nc.cam:
                    if e.source not in known:
                        raise ConfigError(f"neuron {nc.tag}: CAM entry from unknown tag {e.source}")
        for loc in (tuple(d) for _, nc in self.neurons() for d in nc.sram):
            if loc not in locs:
                raise ConfigError(f"SRAM destination {loc} is not a configured core")
        for v, targets in self.inputs.items():
            if v not in self.virtual_tags:
                raise ConfigError(f"input interface lists unknown virtual tag {v}")
            if not set(targets) <= set(hw):
                raise ConfigError(f"virtual tag {v} fans out to unknown neurons")

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        chips = {}
        for core in sorted(self.cores, key=lambda c: (c.chip, c.core)):
            chips.setdefault(core.chip, []).append({
                "core": core.core,
                "params": {k: list(core.params[k]) for k in sorted(core.params)},
                "neurons": [{
                    "tag": nc.tag,
                    "cam": [[e.source, e.synapse, e.mask] for e in nc.cam],
                    "sram": [list(d) for d in nc.sram],
                } for nc in sorted(core.neurons, key=lambda n: n.tag)],
            })
        lim = self.limits
        return {
            "format": FORMAT,
            "version": VERSION,
            "dt": self.dt,
            "weight_unit_A": self.weight_unit,
            "limits": {"neurons_per_core": lim.neurons_per_core, "cores_per_chip": lim.cores_per_chip,
                       "synapses_per_neuron": lim.synapses_per_neuron,
                       "chips_available": lim.chips_available},
            "virtual_tags": list(self.virtual_tags),
            "inputs": [{"tag": v, "targets": list(self.inputs.get(v, []))} for v in self.virtual_tags],
            "chips": [{"chip": chip, "cores": cores} for chip, cores in sorted(chips.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceConfig":
        try:
            if d.get("format") != FORMAT:
                raise ConfigError(f"not a device configuration (format {d.get('format')!r})")
            if d.get("version") != VERSION:
                raise ConfigError(f"unsupported configuration version {d.get('version')!r}")
            cores = []
            for chip in d["chips"]:
                for c in chip["cores"]:
                    neurons = [NeuronConfig(int(n["tag"]),
                                            [CamEntry(int(s), str(t), int(m)) for s, t, m in n["cam"]],
                                            [tuple(int(x) for x in loc) for loc in n["sram"]])
                               for n in c["neurons"]]
                    params = {k: (int(v[0]), int(v[1])) for k, v in c["params"].items()}
                    cores.append(CoreConfig(int(chip["chip"]), int(c["core"]), params, neurons))
            lim = HardwareLimits(**d.get("limits", {}))
            cfg = cls(cores=cores, virtual_tags=[int(v) for v in d["virtual_tags"]],
                      inputs={int(e["tag"]): [int(t) for t in e["targets"]] for e in d["inputs"]},
                      dt=float(d["dt"]), weight_unit=float(d["weight_unit_A"]), limits=lim)
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed device configuration: {exc!r}") from exc
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "DeviceConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "DeviceConfig":
        with open(path) as fh:
            return cls.loads(fh.read())


def _code_params(params: SimParams, base_currents, table: BiasTable, where: str) -> dict:
    codes = {}
    for name in CODED_PARAMS:
        value = getattr(params, name)
        if np.ndim(value):
            raise ConfigError(f"{where}: {name} must be shared by the core, got per-neuron values")
        try:
            codes[name] = table.current_to_code(float(value))
        except BiasRangeError as exc:
            raise BiasRangeError(f"{where}, {name}: {exc}") from None
    for name, value in zip(BASE_NAMES, base_currents):
        try:
            codes[name] = table.current_to_code(float(value))
        except BiasRangeError as exc:
            raise BiasRangeError(f"{where}, {name}: {exc}") from None
    return codes


def config_from_specification(spec: HardwareSpec, quant: QuantizedSpec,
                              table: BiasTable | None = None,
                              limits: HardwareLimits | None = None) -> DeviceConfig:
    """Translate a mapped, quantized network into CAM/SRAM contents and bias codes."""
    table = table or BiasTable.synthetic()
    limits = limits or HardwareLimits()
    pos = {t: i for i, t in enumerate(spec.hardware_tags)}
    n = len(spec.hardware_tags)
    mask_in = np.zeros(spec.w_in.shape, dtype=np.int64)
    sign_in = np.zeros(spec.w_in.shape, dtype=np.int64)
    mask_rec = np.zeros(spec.w_rec.shape, dtype=np.int64)
    sign_rec = np.zeros(spec.w_rec.shape, dtype=np.int64)
    base_of = {}
    for cq in quant.clusters:
        cols = [pos[t] for t in cq.tags]
        if cq.q_in.shape != (spec.w_in.shape[0], len(cols)) or cq.q_rec.shape != (n, len(cols)):
            raise ConfigError("quantized matrices do not match the hardware specification")
        mask_in[:, cols], sign_in[:, cols] = cq.q_in.mask, cq.q_in.sign
        mask_rec[:, cols], sign_rec[:, cols] = cq.q_rec.mask, cq.q_rec.sign
        for t in cq.tags:
            base_of[t] = cq.base_weights
    if set(base_of) != set(spec.hardware_tags):
        raise ConfigError("quantization does not cover every hardware neuron")

    cores = {}
    for loc in spec.cores():
        tags = [t for t in spec.hardware_tags if spec.core_assignment[t] == loc]
        if not tags:
            continue
        bases = {tuple(base_of[t]) for t in tags}
        if len(bases) != 1:
            raise ConfigError(f"core {loc} hosts neurons with different base weights")
        p = spec.params_per_core[loc]
        unit = float(np.asarray(p.Iw_ref))
        base_currents = np.array(bases.pop()) * unit
        codes = _code_params(p, base_currents, table, f"core {loc}")
        cores[loc] = CoreConfig(loc[0], loc[1], codes, [])

    units = {float(np.asarray(spec.params_per_core[loc].Iw_ref)) for loc in cores}
    if len(units) != 1:
        raise ConfigError("all cores must share one weight unit Iw_ref")
    dts = {spec.params_per_core[loc].dt for loc in cores}
    if len(dts) != 1:
        raise ConfigError("all cores must share one time step")

    syn = {1: "ampa", -1: "gaba"}
    for j, t in enumerate(spec.hardware_tags):
        cam = [CamEntry(int(spec.virtual_tags[i]), syn[int(sign_in[i, j])], int(mask_in[i, j]))
               for i in np.flatnonzero(mask_in[:, j])]
        cam += [CamEntry(int(spec.hardware_tags[k]), syn[int(sign_rec[k, j])], int(mask_rec[k, j]))
                for k in np.flatnonzero(mask_rec[:, j])]
        if len(cam) > limits.synapses_per_neuron:
            raise CamOverflowError(
                f"CAM overflow at neuron {t}: {len(cam)} nonzero afferents, "
                f"limit {limits.synapses_per_neuron}")
        dests = sorted({spec.core_assignment[spec.hardware_tags[k]]
                        for k in np.flatnonzero(mask_rec[j, :])})
        cores[spec.core_assignment[t]].neurons.append(NeuronConfig(int(t), cam, dests))

    inputs = {int(v): [int(spec.hardware_tags[j]) for j in np.flatnonzero(mask_in[i])]
              for i, v in enumerate(spec.virtual_tags)}
    cfg = DeviceConfig(list(cores.values()), [int(v) for v in spec.virtual_tags], inputs,
                       dt=dts.pop(), weight_unit=units.pop(), limits=limits)
    cfg.validate()
    return cfg


def decode_weight(mask, sign, base_currents, weight_unit):
    """Weight in simulator units from a mask, a sign and decoded base currents."""
    sums = BITS @ np.asarray(base_currents, dtype=float)
    return np.asarray(sign) * (sums[np.asarray(mask)] / weight_unit)


def decode_params(codes: dict, table: BiasTable, weight_unit: float, dt: float) -> SimParams:
    # the lowest table entries may sit under the leakage floor, which bounds
    # every current in the simulator anyway
    values = {name: max(table.lookup(*codes[name]), I_FLOOR) for name in CODED_PARAMS}
    base = tuple(max(table.lookup(*codes[name]), I_FLOOR) for name in BASE_NAMES)
    return SimParams(**values, Iw_ref=weight_unit, Iw_base=base, dt=dt)


def spec_from_config(config: DeviceConfig, table: BiasTable | None = None) -> HardwareSpec:
    """Decode a configuration into merged matrices and per-core parameters."""
    table = table or BiasTable.synthetic()
    config.validate()
    hw = config.hardware_tags
    pos = {t: i for i, t in enumerate(hw)}
    vpos = {v: i for i, v in enumerate(config.virtual_tags)}
    w_in = np.zeros((len(config.virtual_tags), len(hw)))
    w_rec = np.zeros((len(hw), len(hw)))
    params, assignment = {}, {}
    for core in config.cores:
        loc = (core.chip, core.core)
        p = decode_params(core.params, table, config.weight_unit, config.dt)
        params[loc] = p
        for nc in core.neurons:
            assignment[nc.tag] = loc
            j = pos[nc.tag]
            for e in nc.cam:
                w = float(decode_weight(e.mask, SYNAPSE_SIGN[e.synapse], p.Iw_base, config.weight_unit))
                if e.source in vpos:
                    w_in[vpos[e.source], j] = w
                else:
                    w_rec[pos[e.source], j] = w
    clusters = {}
    for t in hw:
        clusters.setdefault(assignment[t], []).append(t)
    return HardwareSpec(w_in, w_rec, tuple(config.virtual_tags), tuple(hw), assignment, params,
                        tuple(tuple(v) for _, v in sorted(clusters.items())))


def net_from_config(config: DeviceConfig, table: BiasTable | None = None) -> Sequential:
    """Runnable single-layer network equivalent to a configuration."""
    spec = spec_from_config(config, table)
    return Sequential(Linear(spec.w_in), DynapSim(spec.n_neurons, spec.neuron_params(), spec.w_rec))


def decoded_quantized_spec(spec: HardwareSpec, quant: QuantizedSpec,
                           table: BiasTable | None = None) -> HardwareSpec:
    """The quantized spec with every current replaced by its table value.

    This is the network a configuration describes, computed directly from
    masks and signs without building CAM contents.
    """
    table = table or BiasTable.synthetic()
    pos = {t: i for i, t in enumerate(spec.hardware_tags)}
    w_in = np.zeros_like(spec.w_in)
    w_rec = np.zeros_like(spec.w_rec)
    params = {}
    for loc, p in spec.params_per_core.items():
        unit = float(np.asarray(p.Iw_ref))
        tags = [t for t in spec.hardware_tags if spec.core_assignment[t] == loc]
        cq = next(c for c in quant.clusters if tags and tags[0] in c.tags)
        codes = _code_params(p, cq.base_weights * unit, table, f"core {loc}")
        params[loc] = decode_params(codes, table, unit, p.dt)
    for cq in quant.clusters:
        cols = [pos[t] for t in cq.tags]
        loc = spec.core_assignment[cq.tags[0]]
        base = params[loc].Iw_base
        unit = params[loc].Iw_ref
        w_in[:, cols] = decode_weight(cq.q_in.mask, cq.q_in.sign, base, unit)
        w_rec[:, cols] = decode_weight(cq.q_rec.mask, cq.q_rec.sign, base, unit)
    return HardwareSpec(w_in, w_rec, spec.virtual_tags, spec.hardware_tags,
                        dict(spec.core_assignment), params, spec.clusters)
