"""Uniformly sampled, time-aligned multichannel measurements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MeasurementWindow", "WindowError"]


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementWindow:
    t0: float
    dt: float
    samples: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2:
            raise WindowError("samples must be a 2-D array (n_samples x n_channels)")
        if s.shape[0] < 2:
            raise WindowError("a window needs at least 2 samples")
        names = tuple(self.channel_names)
        if len(names) != s.shape[1]:
            raise WindowError(f"{len(names)} channel names for {s.shape[1]} columns")
        if len(set(names)) != len(names):
            raise WindowError("channel names must be unique")
        if not self.dt > 0:
            raise WindowError("dt must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def fs(self) -> float:
        return 1.0 / self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def has(self, name: str) -> bool:
        return name in self.channel_names

    def column(self, name: str) -> np.ndarray:
        try:
            k = self.channel_names.index(name)
        except ValueError:
            raise WindowError(f"window has no channel {name!r}") from None
        return self.samples[:, k]

    def columns(self, names) -> np.ndarray:
        return np.column_stack([self.column(n) for n in names]) if names else np.zeros((self.n_samples, 0))

    def with_samples(self, samples, channel_names=None) -> "MeasurementWindow":
        return MeasurementWindow(
            self.t0, self.dt, samples, self.channel_names if channel_names is None else channel_names
        )

    def with_channels(self, extra: dict[str, np.ndarray]) -> "MeasurementWindow":
        names = self.channel_names + tuple(extra)
        cols = [self.samples] + [np.asarray(v, dtype=float)[:, None] for v in extra.values()]
        return MeasurementWindow(self.t0, self.dt, np.hstack(cols), names)

    def select(self, start: float, length: float | None = None) -> "MeasurementWindow":
        """Samples with ``start <= t - t0 < start + length`` (times relative to t0)."""
        i0 = int(round(start / self.dt))
        if i0 < 0 or i0 >= self.n_samples:
            raise WindowError(f"window start {start} s is outside the record")
        if length is None:
            i1 = self.n_samples
        else:
            i1 = i0 + int(round(length / self.dt))
            if i1 > self.n_samples:
                raise WindowError(
                    f"window [{start}, {start + length}) s exceeds the record "
                    f"({(self.n_samples - 1) * self.dt:g} s)"
                )
        return MeasurementWindow(self.t0 + i0 * self.dt, self.dt, self.samples[i0:i1], self.channel_names)
