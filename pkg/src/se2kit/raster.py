"""Dense binary spike rasters and their event-list text format."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np


class RasterFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpikeRaster:
    """Time x channel binary spike matrix sampled every ``dt`` seconds."""

    data: np.ndarray
    dt: float = 1e-3

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"raster data must be 2-D (time, channel), got shape {data.shape}")
        if data.size and not np.isin(data, (0, 1)).all():
            raise ValueError("raster entries must be 0 or 1")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "data", data.astype(np.uint8, copy=False))

    @classmethod
    def empty(cls, n_steps: int, n_channels: int, dt: float = 1e-3) -> "SpikeRaster":
        return cls(np.zeros((n_steps, n_channels), dtype=np.uint8), dt)

    @property
    def n_steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    def __eq__(self, other):
        if not isinstance(other, SpikeRaster):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.data, other.data) \
            and self.data.shape == other.data.shape

    def __repr__(self):
        return (f"SpikeRaster(n_steps={self.n_steps}, n_channels={self.n_channels}, "
                f"dt={self.dt:g}, spikes={int(self.data.sum())})")

    def events(self) -> np.ndarray:
        """``(k, 2)`` array of ``(step, channel)`` pairs sorted by step then channel."""
        steps, chans = np.nonzero(self.data)
        return np.stack([steps, chans], axis=1).astype(np.int64)

    # text format --------------------------------------------------------

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"# dt_ms={self.dt * 1e3:g} n_steps={self.n_steps} "
                  f"n_channels={self.n_channels}\n")
        for step, chan in self.events():
            buf.write(f"{step},{chan}\n")
        return buf.getvalue()

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "SpikeRaster":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise RasterFormatError("missing '# dt_ms=... n_steps=... n_channels=...' header")
        header = {}
        for tok in lines[0].lstrip("#").split():
            key, _, value = tok.partition("=")
            header[key] = value
        try:
            dt = float(header["dt_ms"]) * 1e-3
            n_steps = int(header["n_steps"])
            n_channels = int(header["n_channels"])
        except (KeyError, ValueError) as exc:
            raise RasterFormatError(f"bad raster header {lines[0]!r}") from exc
        data = np.zeros((n_steps, n_channels), dtype=np.uint8)
        for lineno, line in enumerate(lines[1:], start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                step, chan = (int(v) for v in line.split(","))
            except ValueError as exc:
                raise RasterFormatError(f"line {lineno}: expected 'step,channel', got {line!r}") from exc
            if not (0 <= step < n_steps and 0 <= chan < n_channels):
                raise RasterFormatError(
                    f"line {lineno}: event ({step},{chan}) outside "
                    f"{n_steps} steps x {n_channels} channels")
            data[step, chan] = 1
        return cls(data, dt)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SpikeRaster":
        with open(path) as fh:
            return cls.loads(fh.read())
