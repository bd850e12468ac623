"""Software stand-in for the chip: AER in, decoded network with frozen mismatch, AER out."""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable, NamedTuple

import numpy as np

from .hwconfig import BiasTable, DeviceConfig, spec_from_config
from .mismatch import MismatchSpec, sample_mismatch
from .model import simulate
from .raster import SpikeRaster


class AERError(ValueError):
    pass


class AEREvent(NamedTuple):
    timestamp: int      # microseconds
    address: int


class AERStream:
    """Sorted event stream held as two integer arrays."""

    __slots__ = ("timestamps", "addresses")

    def __init__(self, timestamps=(), addresses=(), check: bool = True):
        t = np.asarray(timestamps, dtype=np.int64).ravel()
        a = np.asarray(addresses, dtype=np.int64).ravel()
        if t.shape != a.shape:
            raise AERError("timestamps and addresses differ in length")
        if check:
            if t.size and (t.min() < 0 or a.min() < 0):
                raise AERError("timestamps and addresses must be non-negative")
            dt_, da = np.diff(t), np.diff(a)
            if np.any((dt_ < 0) | ((dt_ == 0) & (da < 0))):
                raise AERError("events are not sorted by (timestamp, address)")
        self.timestamps, self.addresses = t, a

    @classmethod
    def from_events(cls, events: Iterable) -> "AERStream":
        if isinstance(events, AERStream):
            return events
        ev = list(events)
        return cls([e[0] for e in ev], [e[1] for e in ev])

    def __len__(self):
        return self.timestamps.size

    def __iter__(self):
        for t, a in zip(self.timestamps.tolist(), self.addresses.tolist()):
            yield AEREvent(t, a)

    def __eq__(self, other):
        if not isinstance(other, AERStream):
            return NotImplemented
        return (np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.addresses, other.addresses))

    def __repr__(self):
        return f"AERStream({len(self)} events)"

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("timestamp_us,address\n")
        for t, a in zip(self.timestamps.tolist(), self.addresses.tolist()):
            buf.write(f"{t},{a}\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "AERStream":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp_us", "address"]:
            raise AERError("AER file must start with the header 'timestamp_us,address'")
        t, a = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts, addr = (int(x) for x in row)
            except ValueError:
                raise AERError(f"line {lineno}: expected two integers, got {row}") from None
            t.append(ts)
            a.append(addr)
        return cls(t, a)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AERStream":
        with open(path) as fh:
            return cls.loads(fh.read())


def _dt_us(dt: float) -> int:
    us = dt * 1e6
    k = int(round(us))
    if k < 1 or abs(us - k) > 1e-6 * us:
        raise AERError(f"dt = {dt!r} s is not a whole number of microseconds")
    return k


def raster_to_aer(raster: SpikeRaster, addresses=None) -> AERStream:
    """One event per spike at ``step * dt``; ``addresses`` relabels channels."""
    steps, chans = np.nonzero(raster.data)     # row-major: sorted by step, then channel
    addr = chans if addresses is None else np.asarray(addresses, dtype=np.int64)[chans]
    order = np.lexsort((addr, steps))
    return AERStream(steps[order] * _dt_us(raster.dt), addr[order], check=False)


def aer_to_raster(events, dt: float, n_steps: int, n_channels: int, addresses=None) -> SpikeRaster:
    """Bin events into a binary raster; the event at ``t`` lands in step ``floor(t/dt)``.

    ``addresses`` lists the address of each channel when they are not
    ``0..n_channels-1``.
    """
    s = AERStream.from_events(events)
    step = s.timestamps // _dt_us(dt)
    if addresses is None:
        col = s.addresses
        if col.size and col.max() >= n_channels:
            raise AERError(f"address {int(col.max())} out of range for {n_channels} channels")
    else:
        lut = {int(a): i for i, a in enumerate(addresses)}
        try:
            col = np.array([lut[int(a)] for a in s.addresses], dtype=np.int64)
        except KeyError as exc:
            raise AERError(f"event address {exc.args[0]} is not a known input tag") from None
    if step.size and step.max() >= n_steps:
        raise AERError(f"event at {int(s.timestamps.max())} us lies beyond the {n_steps}-step window")
    data = np.zeros((n_steps, n_channels), dtype=np.uint8)
    data[step, col] = 1
    return SpikeRaster(data, dt)


class VirtualDevice:
    """A configured chip with one frozen mismatch draw.

    The draw covers every decoded current and every synaptic weight and is
    fixed at construction, like fabrication variability.
    """

    def __init__(self, config: DeviceConfig, mismatch: MismatchSpec | None = None,
                 table: BiasTable | None = None):
        self.config = config
        self.spec = spec_from_config(config, table)
        params = self.spec.neuron_params()
        w = {"w_in": self.spec.w_in, "w_rec": self.spec.w_rec}
        if mismatch is not None and mismatch.sigma_rel > 0:
            params, w, _ = sample_mismatch(params, w, mismatch, 0, self.spec.n_neurons)
        self.params = params
        self.w_in, self.w_rec = w["w_in"], w["w_rec"]

    @property
    def dt(self) -> float:
        return self.config.dt

    @property
    def input_tags(self) -> tuple:
        return tuple(self.config.virtual_tags)

    @property
    def output_tags(self) -> tuple:
        return tuple(self.spec.hardware_tags)

    def run_batch(self, x: np.ndarray) -> np.ndarray:
        """Spikes (n, T, n_neurons) for input rasters (n, T, n_inputs)."""
        return simulate(np.asarray(x, dtype=float), self.w_in, self.w_rec, self.params).spikes

    def run(self, events, duration: float) -> AERStream:
        n_steps = int(round(duration / self.dt))
        if n_steps < 1:
            raise AERError("duration shorter than one time step")
        raster = aer_to_raster(events, self.dt, n_steps, len(self.input_tags), self.input_tags)
        out = self.run_batch(raster.data[None])[0].astype(np.uint8)
        return raster_to_aer(SpikeRaster(out, self.dt), self.output_tags)


def run_device(config: DeviceConfig, events, mismatch: MismatchSpec | None,
               duration: float, table: BiasTable | None = None) -> AERStream:
    return VirtualDevice(config, mismatch, table).run(events, duration)
