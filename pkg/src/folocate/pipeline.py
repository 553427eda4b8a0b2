"""End-to-end localization: measurements in, ranked FO sources out.

Stages run in order: window selection, v_qI integration, mean removal,
spectra and peak detection, library and derivatives, adaptive STLS, and
scoring.  Any stage failure is raised as :class:`PipelineError` carrying
the stage name and whether it was a validation or a numerical problem.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .model import ModelError, SystemModel, load_model, state_layout
from .signal import (
    DetectedFrequencies,
    Spectrum,
    ZScoreConfig,
    detect_fo_frequencies,
    remove_mean,
    running_trapezoid,
    single_sided_spectrum,
)
from .simulator import Scenario, ScenarioError, SimulationError, load_scenario, simulate
from .sindy import (
    CoefficientMatrix,
    LibraryError,
    Localization,
    SourceScore,
    adaptive_threshold,
    build_derivatives,
    build_library,
    extract_zeta,
    locate_source,
    refine_frequencies,
)
from .window import MeasurementWindow, WindowError

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "PipelineResult",
    "ConfigError",
    "IngestError",
    "config_from_dict",
    "load_config",
    "ingest_csv",
    "condition_window",
    "run_pipeline",
    "export_report",
    "EXIT_OK",
    "EXIT_NO_FO",
    "EXIT_VALIDATION",
    "EXIT_NUMERICAL",
    "OUTPUT_DIR_ENV",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NO_FO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

OUTPUT_DIR_ENV = "FOLOCATE_OUTPUT_DIR"
MIN_WINDOW_SAMPLES = 240
JITTER_TOL = 1e-6
CHANNEL_RE = re.compile(r"^(g\d+\.(delta|omega)|ibr\d+\.(theta|vq|vqI))$")


class ConfigError(ValueError):
    pass


class IngestError(ValueError):
    pass


class PipelineError(RuntimeError):
    """A stage failed; ``kind`` is ``"validation"`` or ``"numerical"``."""

    def __init__(self, stage: str, message: str, kind: str = "validation"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.kind = kind

    @property
    def exit_code(self) -> int:
        return EXIT_NUMERICAL if self.kind == "numerical" else EXIT_VALIDATION


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one localization run needs.

    ``window_start`` is relative to the first sample; ``None`` means the
    earliest injection onset when simulating and 0 when ingesting.
    ``spectrum_channels`` picks the channels searched for FO peaks: the
    IBR q-axis voltages (``"vq"``) or every measured channel (``"all"``).
    """

    model_path: str
    scenario_path: str | None = None
    measurements_path: str | None = None
    window_start: float | None = None
    window_length: float = 40.0
    sampling_rate: float = 60.0
    stls_lambda: float = 0.006
    max_frequencies: int = 3
    zscore: ZScoreConfig = field(default_factory=ZScoreConfig)
    smoothing_width: int = 0
    output_dir: str | None = None
    seed: int | None = None
    spectrum_channels: str = "vq"
    taper: str | None = None
    refine: bool = True
    max_nonzero: int = 3

    def __post_init__(self):
        if (self.scenario_path is None) == (self.measurements_path is None):
            raise ConfigError("give exactly one of scenario_path and measurements_path")
        if not self.sampling_rate > 0:
            raise ConfigError("sampling_rate must be > 0")
        if not self.window_length > 0:
            raise ConfigError("window_length must be > 0")
        if self.window_length * self.sampling_rate < MIN_WINDOW_SAMPLES - 1e-9:
            raise ConfigError(
                f"window_length * sampling_rate must be at least {MIN_WINDOW_SAMPLES} samples"
            )
        if self.window_start is not None and self.window_start < 0:
            raise ConfigError("window_start must be >= 0")
        if not self.stls_lambda > 0:
            raise ConfigError("stls_lambda must be > 0")
        if not 1 <= int(self.max_frequencies) <= 3:
            raise ConfigError("max_frequencies must be 1, 2 or 3")
        if int(self.smoothing_width) < 0:
            raise ConfigError("smoothing_width must be >= 0")
        if self.spectrum_channels not in ("vq", "all"):
            raise ConfigError("spectrum_channels must be 'vq' or 'all'")
        if self.taper not in (None, "hann"):
            raise ConfigError("taper must be null or 'hann'")
        if int(self.max_nonzero) < 1:
            raise ConfigError("max_nonzero must be >= 1")

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_DIR_ENV, "folocate-out"))


_CONFIG_KEYS = {
    "model_path", "scenario_path", "measurements_path", "window_start", "window_length",
    "sampling_rate", "stls_lambda", "max_frequencies", "zscore", "smoothing_width",
    "output_dir", "seed", "spectrum_channels", "taper", "refine", "max_nonzero",
}


def config_from_dict(data: dict, base_dir: str | Path | None = None) -> PipelineConfig:
    """Build a config; relative paths are taken against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "model_path" not in data:
        raise ConfigError("config is missing 'model_path'")
    kw = dict(data)
    for key in ("model_path", "scenario_path", "measurements_path", "output_dir"):
        if kw.get(key) is not None:
            p = Path(str(kw[key]))
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            kw[key] = str(p)
    z = kw.pop("zscore", None) or {}
    try:
        kw["zscore"] = ZScoreConfig(
            lag=int(z.get("lag", 50)),
            threshold=float(z.get("threshold", 1.0)),
            influence=float(z.get("influence", 0.0)),
        )
        for key, cast in (("window_length", float), ("sampling_rate", float), ("stls_lambda", float),
                          ("max_frequencies", int), ("smoothing_width", int), ("max_nonzero", int)):
            if key in kw:
                kw[key] = cast(kw[key])
        if kw.get("window_start") is not None:
            kw["window_start"] = float(kw["window_start"])
        if kw.get("seed") is not None:
            kw["seed"] = int(kw["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    return PipelineConfig(**kw)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)


def ingest_csv(path: str | Path, model: SystemModel | None = None) -> MeasurementWindow:
    """Read a ``time,<channel>...`` measurement file.

    Timestamps must increase with a uniform step up to ``1e-6`` s of
    jitter; the step is the median difference, snapped to ``1/round(fs)``
    when that is within the jitter tolerance.  With ``model`` given, every
    channel the identification needs must be present.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), None)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc.strerror}") from None
    if not header:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in header]
    if header[0] != "time":
        raise IngestError(f"{path}: first column must be 'time', got {header[0]!r}")
    names = header[1:]
    if not names:
        raise IngestError(f"{path}: no measurement columns")
    for name in names:
        if not CHANNEL_RE.match(name):
            raise IngestError(f"{path}: malformed channel name {name!r}")
    if len(set(names)) != len(names):
        raise IngestError(f"{path}: duplicate channel names")
    if model is not None:
        need = [c.name for c in state_layout(model).states] + [c.name for c in state_layout(model).inputs]
        for name in need:
            if name not in names:
                raise IngestError(f"{path}: missing column {name!r} required by the model")

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise IngestError(f"{path}: expected {len(header)} columns, found {data.shape[1]}")
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = bad[0]
        raise IngestError(f"{path}: non-finite value at data row {r + 1}, column {header[c]!r}")
    if data.shape[0] < 2:
        raise IngestError(f"{path}: need at least 2 samples")

    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        k = int(np.argmax(steps <= 0))
        raise IngestError(f"{path}: timestamps not strictly increasing at data row {k + 2}")
    dt = float(np.median(steps))
    fs_int = round(1.0 / dt)
    if fs_int > 0 and abs(dt - 1.0 / fs_int) <= JITTER_TOL:
        dt = 1.0 / fs_int
    dev = np.abs(t - t[0] - dt * np.arange(t.size))
    if np.max(np.abs(steps - dt)) > JITTER_TOL or np.max(dev) > JITTER_TOL * 10:
        k = int(np.argmax(np.abs(steps - dt)))
        raise IngestError(f"{path}: non-uniform sampling near data row {k + 2} (dt={dt:g} s)")
    return MeasurementWindow(float(t[0]), dt, data[:, 1:], tuple(names))


def condition_window(window: MeasurementWindow, model: SystemModel) -> MeasurementWindow:
    """Add each IBR's running v_q integral, then remove every channel's mean.

    The integral is taken from the raw v_q so that a nonzero operating
    point does not turn into a ramp in ``vqI``.
    """
    layout = state_layout(model)
    extra = {}
    for ch in layout.inputs:
        name = ch.name + "I"
        if window.has(name):
            continue
        extra[name] = running_trapezoid(window.column(ch.name), window.dt)
    if extra:
        window = window.with_channels(extra)
    return remove_mean(window)


@dataclass(frozen=True)
class PipelineResult:
    config: PipelineConfig
    model: SystemModel
    window: MeasurementWindow
    spectra: tuple[Spectrum, ...]
    detected: DetectedFrequencies
    frequencies: tuple[float, ...] = ()
    coefficients: CoefficientMatrix | None = None
    score: SourceScore | None = None
    localization: Localization | None = None

    @property
    def fo_detected(self) -> bool:
        return self.localization is not None and self.localization.found

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.fo_detected else EXIT_NO_FO


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except SimulationError as exc:
        where = "" if exc.time is None else f" at t={exc.time:g} s"
        raise PipelineError(name, f"{exc}{where}", "numerical") from exc
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        raise PipelineError(name, str(exc), "numerical") from exc
    except (ModelError, ScenarioError, IngestError, ConfigError, WindowError, LibraryError,
            ValueError, KeyError, OSError) as exc:
        raise PipelineError(name, str(exc), "validation") from exc


def _measurements(config: PipelineConfig, model: SystemModel):
    if config.scenario_path is not None:
        scenario = _stage("scenario", load_scenario, config.scenario_path)
        if config.seed is not None:
            scenario = replace(scenario, seed=config.seed)
        if abs(scenario.dt * config.sampling_rate - 1.0) > 1e-9:
            log.warning("scenario dt %g s differs from sampling_rate %g Hz; using the scenario",
                        scenario.dt, config.sampling_rate)
        window = _stage("simulate", simulate, model, scenario)
        onset = min((i.start_time for i in scenario.injections), default=0.0)
        return window, onset
    window = _stage("ingest", ingest_csv, config.measurements_path, model)
    if abs(window.dt * config.sampling_rate - 1.0) > 1e-6:
        log.warning("measured sampling rate %g Hz differs from configured %g Hz",
                    window.fs, config.sampling_rate)
    return window, 0.0


def _select(window: MeasurementWindow, start: float, length: float) -> MeasurementWindow:
    available = (window.n_samples - 1) * window.dt
    n_req = int(round(length / window.dt))
    i0 = int(round(start / window.dt))
    if i0 + n_req > window.n_samples:
        log.warning("window [%g, %g) s runs past the record (%g s); truncating",
                    start, start + length, available)
        length = (window.n_samples - i0) * window.dt
    sel = window.select(start, length)
    if sel.n_samples < MIN_WINDOW_SAMPLES:
        raise WindowError(
            f"window holds {sel.n_samples} samples; at least {MIN_WINDOW_SAMPLES} are needed"
        )
    return sel


def run_pipeline(config: PipelineConfig, model: SystemModel | None = None,
                 window: MeasurementWindow | None = None) -> PipelineResult:
    """Run every stage and return the full result (no files are written).

    ``model`` and ``window`` skip loading from the configured paths.
    """
    if model is None:
        model = _stage("model", load_model, config.model_path)
    layout = state_layout(model)
    onset = 0.0
    if window is None:
        window, onset = _measurements(config, model)
    start = onset if config.window_start is None else config.window_start
    win = _stage("window", _select, window, start, config.window_length)
    win = _stage("condition", condition_window, win, model)

    if config.spectrum_channels == "vq" and layout.inputs:
        spec_names = [c.name for c in layout.inputs]
    else:
        spec_names = [c.name for c in layout.states] + [c.name for c in layout.inputs]
    spectra = tuple(
        _stage("spectrum", single_sided_spectrum, win.column(n), win.fs, n, config.taper)
        for n in spec_names
    )
    detected = _stage("detect", detect_fo_frequencies, spectra, config.zscore, config.max_frequencies)
    if not detected.values:
        log.info("no FO frequency detected")
        return PipelineResult(config, model, win, spectra, detected)

    derivatives = _stage("derivatives", build_derivatives, win, layout, config.smoothing_width)
    freqs = detected.values
    if config.refine:
        freqs = _stage("refine", refine_frequencies, win, detected, layout, derivatives)
    library = _stage("library", build_library, win, freqs, layout)
    coef = _stage("stls", adaptive_threshold, library, derivatives, config.stls_lambda,
                  rows=layout.states, max_nonzero=config.max_nonzero)
    if not np.all(np.isfinite(coef.xi)):
        raise PipelineError("stls", "non-finite coefficients", "numerical")
    score = _stage("score", extract_zeta, coef)
    loc = _stage("locate", locate_source, score)
    return PipelineResult(config, model, win, spectra, detected, tuple(freqs), coef, score, loc)


def _num(x: float) -> str:
    return repr(float(x))


def _write(path: Path, lines) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _report_lines(result: PipelineResult) -> list[str]:
    cfg, win = result.config, result.window
    loc = result.localization
    out = ["folocate localization report", ""]
    out.append(f"window_start_s: {win.t0:.6f}")
    out.append(f"window_length_s: {win.n_samples * win.dt:.6f}")
    out.append(f"samples: {win.n_samples}")
    out.append(f"sampling_rate_hz: {win.fs:.6f}")
    out.append("")
    out.append("detected frequencies:")
    if not result.detected.values:
        out.append("  none")
    for k, (f, a, chans) in enumerate(zip(result.detected.values, result.detected.amplitudes,
                                          result.detected.channels), 1):
        line = f"  {k}  {f:.6f} Hz  amplitude {a:.6f}  channels {';'.join(chans)}"
        if k - 1 < len(result.frequencies):
            line += f"  refined {result.frequencies[k - 1]:.6f} Hz"
        out.append(line)
    out.append("")
    if result.coefficients is not None:
        coef = result.coefficients
        out.append(f"lambda_initial: {cfg.stls_lambda:.6g}")
        out.append(f"lambda_used: {coef.lambda_used:.6g}")
        out.append(f"threshold_rounds: {coef.rounds}")
        out.append(f"threshold_cap_reached: {'yes' if coef.cap_reached else 'no'}")
        flags = ", ".join(f"{r.name}={'yes' if c else 'no'}" for r, c in zip(coef.rows, coef.converged))
        out.append(f"stls_converged: {flags}")
        out.append("")
    if loc is None or not loc.found:
        out.append("status: no FO detected")
        out.append("no source identified")
        return out
    out.append("status: source identified")
    out.append(f"source: {loc.device}")
    out.append(f"frequency_hz: {loc.frequency:.6f}")
    out.append(f"zeta: {loc.score:.6e}")
    out.append(f"dominance: {'inf' if math.isinf(loc.dominance) else f'{loc.dominance:.6g}'}")
    if len(loc.ties) > 1:
        out.append("ties: " + ", ".join(f"{d}@{f:.6f}" for d, f in loc.ties))
    out.append("")
    out.append("ranking:")
    for k, (d, f, s) in enumerate(loc.ranking, 1):
        if s <= 0:
            break
        out.append(f"  {k}  {d}  {f:.6f} Hz  zeta {s:.6e}")
    return out


def export_report(result: PipelineResult, output_dir: str | Path) -> list[Path]:
    """Write report.txt, zeta.csv, xi.csv, spectrum.csv and frequencies.csv.

    Output depends only on ``result``, so identical results give
    byte-identical files.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PipelineError("export", f"cannot create {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise PipelineError("export", f"{out} is not writable")

    paths = {name: out / name for name in
             ("report.txt", "zeta.csv", "xi.csv", "spectrum.csv", "frequencies.csv")}
    _write(paths["report.txt"], _report_lines(result))

    score = result.score
    devices = list(score.devices) if score is not None else []
    lines = [",".join(["frequency_hz"] + devices)]
    if score is not None:
        for f, row in zip(score.frequencies, score.zeta):
            lines.append(",".join([_num(f)] + [_num(v) for v in row]))
    _write(paths["zeta.csv"], lines)

    coef = result.coefficients
    if coef is not None:
        lines = [",".join(["equation"] + [c.name for c in coef.column_spec])]
        for r, row in zip(coef.rows, coef.xi):
            lines.append(",".join([r.name] + [_num(v) for v in row]))
    else:
        lines = ["equation"]
    _write(paths["xi.csv"], lines)

    lines = ["frequency_hz,amplitude,channel"]
    for s in result.spectra:
        for f, a in zip(s.frequencies, s.amplitudes):
            lines.append(f"{_num(f)},{_num(a)},{s.source_channel}")
    _write(paths["spectrum.csv"], lines)

    lines = ["rank,frequency_hz,amplitude,channels"]
    for k, (f, a, chans) in enumerate(zip(result.detected.values, result.detected.amplitudes,
                                          result.detected.channels), 1):
        lines.append(f"{k},{_num(f)},{_num(a)},{';'.join(chans)}")
    _write(paths["frequencies.csv"], lines)
    return list(paths.values())
