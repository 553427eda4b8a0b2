"""Measurement conditioning and FO frequency detection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .window import MeasurementWindow, WindowError

__all__ = [
    "Spectrum",
    "DetectedFrequencies",
    "ZScoreConfig",
    "remove_mean",
    "forward_difference",
    "running_trapezoid",
    "moving_average",
    "single_sided_spectrum",
    "zscore_peaks",
    "detect_fo_frequencies",
]

MIN_SPECTRUM_SAMPLES = 16
# rescaled amplitudes at or below this are rounding residue, never peaks
PEAK_FLOOR = 1e-9


@dataclass(frozen=True)
class ZScoreConfig:
    lag: int = 50
    threshold: float = 1.0
    influence: float = 0.0


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    source_channel: str = ""
    scale: float = 0.0  # raw magnitude that was mapped to 1

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])


@dataclass(frozen=True)
class DetectedFrequencies:
    values: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()
    bins: tuple[int, ...] = ()
    per_channel_evidence: dict[str, list[int]] = field(default_factory=dict)
    channels: tuple[tuple[str, ...], ...] = ()

    def __len__(self):
        return len(self.values)


def remove_mean(window: MeasurementWindow) -> MeasurementWindow:
    """Subtract each channel's sample mean (steady-state estimate)."""
    if window.n_samples < 2:
        raise WindowError("cannot remove the mean of an empty window")
    s = window.samples
    mu = s.mean(axis=0)
    # second pass absorbs the rounding error of the first
    mu = mu + (s - mu).mean(axis=0)
    return window.with_samples(s - mu)


def _series(series, tau):
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.shape[0] < 2:
        raise ValueError("need a 1-D series with at least 2 samples")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return y


def forward_difference(series, tau: float) -> np.ndarray:
    y = _series(series, tau)
    return (y[1:] - y[:-1]) / tau


def running_trapezoid(series, tau: float) -> np.ndarray:
    """Cumulative trapezoid integral, starting from 0 at the first sample."""
    y = _series(series, tau)
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * tau * (y[1:] + y[:-1]), out=out[1:])
    return out


def moving_average(series, width: int) -> np.ndarray:
    """Centered moving average; edges use the available samples only."""
    y = np.asarray(series, dtype=float)
    if width <= 1:
        return y.copy()
    half = width // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.arange(y.shape[0])
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + (width - 1 - half), y.shape[0] - 1) + 1
    return (c[hi] - c[lo]) / (hi - lo)


def single_sided_spectrum(series, fs: float, channel: str = "", taper: str | None = None) -> Spectrum:
    """Magnitude spectrum over bins 0..n/2, mean removed, peak rescaled to 1."""
    y = np.asarray(series, dtype=float)
    n = y.shape[0]
    if n < MIN_SPECTRUM_SAMPLES:
        raise ValueError(f"spectrum needs at least {MIN_SPECTRUM_SAMPLES} samples, got {n}")
    if not fs > 0:
        raise ValueError("fs must be > 0")
    y = y - y.mean()
    if taper == "hann":
        y = y * np.hanning(n)
    elif taper not in (None, "none", "rect"):
        raise ValueError(f"unknown taper {taper!r}")
    mag = np.abs(np.fft.rfft(y)) / n
    mag[1:] *= 2.0
    if n % 2 == 0:
        mag[-1] /= 2.0
    freqs = np.arange(mag.shape[0]) * fs / n
    top = float(mag.max())
    # numerically zero after mean removal: leave unscaled
    if top > 1e-12 * max(1.0, float(np.abs(series).max())):
        amps = mag / top
    else:
        amps = np.zeros_like(mag)
        top = 0.0
    return Spectrum(freqs, amps, channel, top)


def zscore_peaks(amplitudes, config: ZScoreConfig = ZScoreConfig()) -> list[int]:
    """Bins holding the maximum of each run of positive z-score flags (DC excluded)."""
    y = np.ascontiguousarray(amplitudes, dtype=np.float64)
    if not np.any(y > 0):
        return []
    flags = np.asarray(_backend.zscore_signals(y, int(config.lag), float(config.threshold),
                                               float(config.influence)))
    flags[0] = 0
    peaks = []
    k, n = 1, y.shape[0]
    while k < n:
        if flags[k] == 1:
            j = k
            while j < n and flags[j] == 1:
                j += 1
            best = k + int(np.argmax(y[k:j]))
            if y[best] > PEAK_FLOOR * y.max():
                peaks.append(best)
            k = j
        else:
            k += 1
    return peaks


def detect_fo_frequencies(spectra, config: ZScoreConfig = ZScoreConfig(),
                          max_frequencies: int = 3) -> DetectedFrequencies:
    """Fuse per-channel z-score peaks and keep the strongest candidates.

    Peaks from different channels within one bin of each other are merged.
    Candidates rank by the largest rescaled amplitude across channels; ties
    (every channel's own maximum is 1) fall back to the raw magnitude.
    """
    spectra = list(spectra)
    if not spectra:
        raise ValueError("need at least one spectrum")
    grid = spectra[0].frequencies
    for s in spectra[1:]:
        if s.frequencies.shape != grid.shape or not np.allclose(s.frequencies, grid, rtol=1e-12, atol=0):
            raise ValueError("spectra do not share a frequency grid")
    max_frequencies = min(int(max_frequencies), 3)

    cands = []  # (rescaled amp, raw amp, bin, channel)
    for s in spectra:
        for b in zscore_peaks(s.amplitudes, config):
            cands.append((float(s.amplitudes[b]), float(s.amplitudes[b] * s.scale), b, s.source_channel))
    cands.sort(key=lambda c: (-c[0], -c[1], c[2], c[3]))

    groups = []  # [center bin, amp, raw, channels, bins]
    for amp, raw, b, ch in cands:
        for grp in groups:
            if abs(grp[0] - b) <= 1:
                grp[3].append(ch)
                grp[4].append(b)
                break
        else:
            groups.append([b, amp, raw, [ch], [b]])

    groups = groups[:max_frequencies]
    evidence: dict[str, list[int]] = {}
    for grp in groups:
        for ch, b in zip(grp[3], grp[4]):
            evidence.setdefault(ch, []).append(b)
    return DetectedFrequencies(
        values=tuple(float(grid[g[0]]) for g in groups),
        amplitudes=tuple(g[1] for g in groups),
        bins=tuple(g[0] for g in groups),
        per_channel_evidence=evidence,
        channels=tuple(tuple(dict.fromkeys(g[3])) for g in groups),
    )

