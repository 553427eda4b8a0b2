"""Synthetic measurements from the linearized swing/PLL model.

Generators follow the swing equation driven by white load noise and an
optional sinusoidal mechanical-power forcing.  Each IBR's PLL angle is
driven by its q-axis voltage and the running integral of that voltage;
an FO originating at the IBR enters as a disturbance added to both.
Wind-speed and irradiance oscillations are mapped to an equivalent v_q
disturbance through a first-order expansion of the harvested power.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import _backend
from .model import ModelError, SystemModel, state_layout
from .window import MeasurementWindow

__all__ = [
    "CHANNELS",
    "FoInjection",
    "Scenario",
    "SimulationError",
    "ScenarioError",
    "wind_power",
    "solar_power",
    "equivalent_vq_amplitude",
    "forcing_at",
    "step",
    "integrate",
    "simulate",
    "load_scenario",
    "dump_scenario",
    "scenario_from_dict",
    "write_measurements_csv",
]

log = logging.getLogger(__name__)

CHANNELS = ("gen_mech_power", "ibr_vq", "wind_speed", "solar_irradiance")
GEN_CHANNELS = ("gen_mech_power",)
IBR_CHANNELS = ("ibr_vq", "wind_speed", "solar_irradiance")
BETZ_LIMIT = 16.0 / 27.0


class ScenarioError(ValueError):
    pass


class SimulationError(RuntimeError):
    """Integration produced non-finite values."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class FoInjection:
    """One sinusoidal forcing ``amplitude * sin(2 pi f t + phase)``.

    For ``wind_speed`` the amplitude is in m/s and ``operating_point`` is
    the mean hub-height wind speed; for ``solar_irradiance`` they are in
    W/m^2.  ``power_to_vq`` converts the resulting per-unit power
    oscillation into a v_q disturbance.
    """

    device_id: str
    channel: str
    frequency: float
    amplitude: float
    phase: float = 0.0
    start_time: float = 0.0
    end_time: float = math.inf
    operating_point: float | None = None
    power_to_vq: float = 1.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ScenarioError(f"unknown injection channel {self.channel!r}")
        if not self.frequency > 0:
            raise ScenarioError("injection frequency must be > 0")
        if not self.start_time >= 0:
            raise ScenarioError("injection start_time must be >= 0")
        if not self.end_time > self.start_time:
            raise ScenarioError("injection end_time must exceed start_time")
        if self.channel in ("wind_speed", "solar_irradiance"):
            if self.operating_point is None or not self.operating_point > 0:
                raise ScenarioError(f"{self.channel} injection needs a positive operating_point")

    @property
    def is_generator_channel(self) -> bool:
        return self.channel in GEN_CHANNELS

    def active(self, t: float) -> bool:
        return self.start_time <= t < self.end_time


@dataclass(frozen=True)
class Scenario:
    injections: tuple[FoInjection, ...] = ()
    duration: float = 40.0
    dt: float = 1.0 / 60.0
    seed: int = 0
    process_noise_snr_db: float | None = None
    measurement_noise_snr_db: float | None = None
    substeps: int = 10

    def __post_init__(self):
        object.__setattr__(self, "injections", tuple(self.injections))
        if not self.dt > 0:
            raise ScenarioError("dt must be > 0")
        if not self.duration > 0:
            raise ScenarioError("duration must be > 0")
        ratio = self.duration / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ScenarioError(f"duration/dt = {ratio} is not an integer sample count")
        if int(self.substeps) < 1:
            raise ScenarioError("substeps must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ScenarioError("seed must be a 64-bit unsigned integer")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1


def wind_power(v_eq_ws, rho, a_swept, c_p):
    """Power harvested by a turbine, 0.5 rho A v^3 C_p (W)."""
    for name, val in (("wind speed", v_eq_ws), ("air density", rho), ("swept area", a_swept), ("C_p", c_p)):
        if np.any(np.asarray(val) < 0):
            raise ValueError(f"{name} must be non-negative")
    if np.any(np.asarray(c_p) > BETZ_LIMIT + 1e-12):
        raise ValueError("C_p cannot exceed the Betz limit 0.593")
    return 0.5 * rho * a_swept * np.power(v_eq_ws, 3) * c_p


def solar_power(g_eq_irr, a_panel, c_solar):
    """Power from a panel of area ``a_panel`` and efficiency ``c_solar`` (W)."""
    for name, val in (("irradiance", g_eq_irr), ("panel area", a_panel), ("efficiency", c_solar)):
        if np.any(np.asarray(val) < 0):
            raise ValueError(f"{name} must be non-negative")
    if np.any(np.asarray(c_solar) > 1):
        raise ValueError("solar efficiency cannot exceed 1")
    return a_panel * c_solar * g_eq_irr


def equivalent_vq_amplitude(inj: FoInjection) -> float:
    """Amplitude of the v_q disturbance an injection produces at its device."""
    if inj.channel in ("gen_mech_power", "ibr_vq"):
        return inj.amplitude
    v0 = inj.operating_point
    if inj.channel == "wind_speed":
        # dP = dP/dv * dv with P = 0.5 rho A v^3 Cp; turbine constants cancel in dP/P0
        p0 = wind_power(v0, 1.225, 1.0, 0.4)
        dp = 3.0 * p0 / v0 * inj.amplitude
    else:
        p0 = solar_power(v0, 1.0, 0.2)
        dp = p0 / v0 * inj.amplitude
    return inj.power_to_vq * dp / p0


def _check_device(inj: FoInjection, model: SystemModel) -> tuple[int, int]:
    kind = model.device_kind(inj.device_id)
    if inj.is_generator_channel and kind != "generator":
        raise ScenarioError(f"channel {inj.channel} cannot target IBR {inj.device_id}")
    if not inj.is_generator_channel and kind != "ibr":
        raise ScenarioError(f"channel {inj.channel} cannot target generator {inj.device_id}")
    return (0 if kind == "generator" else 1), model.device_index(inj.device_id)


def forcing_at(t: float, injections: Sequence[FoInjection], model: SystemModel) -> np.ndarray:
    """Forcing vector at time ``t``.

    Layout: one entry per state row ([delta, theta, omega]) followed by one
    entry per IBR for the integral-path disturbance.  Generator forcing sits
    on the omega rows in power units; IBR forcing sits on the theta rows
    (v_q units) and the trailing rows carry its running integral.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    g, r = model.n_gen, model.n_ibr
    u = np.zeros(2 * g + 2 * r)
    u_vq = np.zeros(r)
    for inj in injections:
        kind, dev = _check_device(inj, model)
        if t < inj.start_time:
            continue
        w = 2 * math.pi * inj.frequency
        amp = equivalent_vq_amplitude(inj)
        if kind == 0:
            if inj.active(t):
                u[g + r + dev] += amp * math.sin(w * t + inj.phase)
        else:
            te = t if inj.active(t) else inj.end_time
            if inj.active(t):
                u_vq[dev] += amp * math.sin(w * t + inj.phase)
            u[2 * g + r + dev] += amp / w * (
                math.cos(w * inj.start_time + inj.phase) - math.cos(w * te + inj.phase)
            )
    if r:
        u[g:g + r] += u_vq
        u[g + r:2 * g + r] += model.power_matrix @ u_vq
    return u


def step(state, model: SystemModel, u, dt: float, noise_draw, vq_offset=None) -> np.ndarray:
    """One explicit Euler-Maruyama step.

    ``state`` is [delta, theta, omega, vqI]: the last r entries are the
    PLL integrators, advanced by the trapezoid rule on the network v_q.
    ``u`` is laid out as returned by :func:`forcing_at`; ``vq_offset`` is
    the ambient v_q fluctuation held over the step.
    """
    g, r = model.n_gen, model.n_ibr
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    eta = np.asarray(noise_draw, dtype=float)
    n = 2 * g + 2 * r
    if x.shape != (n,) or u.shape != (n,) or eta.shape != (g,):
        raise ValueError(
            f"expected state/u of length {n} and noise of length {g}, "
            f"got {x.shape}, {u.shape}, {eta.shape}"
        )
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not np.all(np.isfinite(x)):
        raise SimulationError("non-finite state passed to step")
    m = model.inertia
    delta, theta, omega, vqi = x[:g], x[g:g + r], x[g + r:2 * g + r], x[2 * g + r:]
    c = model.vq_matrix
    nu = np.zeros(r) if vq_offset is None else np.asarray(vq_offset, dtype=float)
    vq = c @ x[:g + r] + nu
    d_new = delta + omega * dt
    w_new = (
        omega
        + (-(model.coupling.entries @ delta) - model.damping * omega + u[g + r:2 * g + r]) / m * dt
        - model.noise_sigma / m * eta * math.sqrt(dt)
    )
    th_new = theta + (model.k_pllp * (vq + u[g:g + r]) + model.k_plli * (vqi + u[2 * g + r:])) * dt
    vq_new = c @ np.concatenate([d_new, th_new]) + nu
    vqi_new = vqi + 0.5 * dt * (vq + vq_new)
    return np.concatenate([d_new, th_new, w_new, vqi_new])


def _injection_arrays(injections, model):
    kind, dev, w, amp, ph, t0, t1 = [], [], [], [], [], [], []
    for inj in injections:
        k, d = _check_device(inj, model)
        kind.append(k)
        dev.append(d)
        w.append(2 * math.pi * inj.frequency)
        amp.append(equivalent_vq_amplitude(inj))
        ph.append(inj.phase)
        t0.append(inj.start_time)
        t1.append(inj.end_time)
    ints = lambda v: np.ascontiguousarray(v, dtype=np.int_)  # noqa: E731
    flts = lambda v: np.ascontiguousarray(v, dtype=np.float64)  # noqa: E731
    return ints(kind), ints(dev), flts(w), flts(amp), flts(ph), flts(t0), flts(t1)


def integrate(model: SystemModel, injections, dt: float, substeps: int, n_samples: int,
              noise: np.ndarray | None = None, x0=None, sigma=None,
              vq_noise: np.ndarray | None = None) -> np.ndarray:
    """Run the integrator; returns (n_samples, 2g + 2r) samples [delta, theta, omega, vq].

    ``noise`` holds one standard-normal draw per generator per integration
    step ((n_samples - 1) * substeps rows); ``None`` disables noise.
    ``sigma`` overrides the generators' noise standard deviations.
    ``vq_noise`` (n_samples, r) is the ambient v_q fluctuation, already
    scaled, held constant over each sampling interval.
    """
    g, r = model.n_gen, model.n_ibr
    h = dt / substeps
    n_steps = (n_samples - 1) * substeps
    if noise is None:
        noise = np.zeros((max(n_steps, 1), g))
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if noise.shape[0] < n_steps or noise.shape[1] != g:
        raise ValueError(f"noise must have shape ({n_steps}, {g})")
    if vq_noise is None:
        vq_noise = np.zeros((n_samples, r))
    vq_noise = np.ascontiguousarray(vq_noise, dtype=np.float64)
    if vq_noise.shape != (n_samples, r):
        raise ValueError(f"vq_noise must have shape ({n_samples}, {r})")
    x0 = np.zeros(2 * g + 2 * r) if x0 is None else np.ascontiguousarray(x0, dtype=np.float64)
    m = model.inertia
    sig = model.noise_sigma if sigma is None else np.broadcast_to(np.asarray(sigma, float), (g,))
    c = model.vq_matrix if r else np.zeros((0, g))
    out, bad = _backend.run_em(
        np.ascontiguousarray(model.coupling.entries / m[:, None]),
        np.ascontiguousarray(model.damping / m),
        np.ascontiguousarray(1.0 / m),
        np.ascontiguousarray(sig / m),
        np.ascontiguousarray(c, dtype=np.float64),
        np.ascontiguousarray(model.k_pllp, dtype=np.float64),
        np.ascontiguousarray(model.k_plli, dtype=np.float64),
        np.ascontiguousarray(model.power_matrix, dtype=np.float64),
        *_injection_arrays(injections, model),
        x0, float(h), int(substeps), int(n_samples), noise, vq_noise,
    )
    if bad >= 0:
        raise SimulationError(
            f"simulation became non-finite at t = {bad * dt:.6g} s", time=bad * dt
        )
    return np.asarray(out)


def process_sigma(model: SystemModel, scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Generator power-noise and IBR v_q-noise levels for a scenario.

    With ``process_noise_snr_db`` set, every generator and every IBR gets
    ``A * 10**(-snr/20)`` where ``A`` is the largest injection amplitude
    (in its equivalent forcing units); otherwise the model's sigmas.
    """
    if scenario.process_noise_snr_db is None or not scenario.injections:
        return model.noise_sigma, model.vq_noise_sigma
    ref = max(abs(equivalent_vq_amplitude(i)) for i in scenario.injections)
    level = ref * 10.0 ** (-scenario.process_noise_snr_db / 20.0)
    return np.full(model.n_gen, level), np.full(model.n_ibr, level)


def simulate(model: SystemModel, scenario: Scenario) -> MeasurementWindow:
    """Integrate from equilibrium and return every state and v_q channel."""
    layout = state_layout(model)
    for inj in scenario.injections:
        _check_device(inj, model)
    n = scenario.n_samples
    n_steps = (n - 1) * scenario.substeps
    proc_ss, vq_ss, meas_ss = np.random.SeedSequence(int(scenario.seed)).spawn(3)
    sigma, vq_sigma = process_sigma(model, scenario)
    noise = np.random.default_rng(proc_ss).standard_normal((n_steps, model.n_gen))
    vq_noise = np.random.default_rng(vq_ss).standard_normal((n, model.n_ibr)) * vq_sigma
    samples = integrate(model, scenario.injections, scenario.dt, scenario.substeps, n,
                        noise=noise, sigma=sigma, vq_noise=vq_noise)
    if scenario.measurement_noise_snr_db is not None:
        rms = np.sqrt(np.mean(samples**2, axis=0))
        std = rms * 10.0 ** (-scenario.measurement_noise_snr_db / 20.0)
        samples = samples + np.random.default_rng(meas_ss).standard_normal(samples.shape) * std
    return MeasurementWindow(0.0, scenario.dt, samples, tuple(layout.names))


def scenario_from_dict(data: dict) -> Scenario:
    def _inj(block):
        try:
            return FoInjection(
                device_id=str(block["device"]),
                channel=str(block["channel"]),
                frequency=float(block["frequency_hz"]),
                amplitude=float(block["amplitude"]),
                phase=float(block.get("phase_rad", 0.0)),
                start_time=float(block.get("start_s", 0.0)),
                end_time=float(block.get("end_s", math.inf) if block.get("end_s") is not None else math.inf),
                operating_point=(
                    float(block["operating_point"]) if block.get("operating_point") is not None else None
                ),
                power_to_vq=float(block.get("power_to_vq", 1.0)),
            )
        except KeyError as exc:
            raise ScenarioError(f"injection block is missing {exc.args[0]!r}") from None

    try:
        snr = data.get("process_noise_snr_db")
        msnr = data.get("measurement_noise_snr_db")
        return Scenario(
            injections=[_inj(b) for b in data.get("injection") or data.get("injections") or []],
            duration=float(data["duration"]),
            dt=float(data["dt"]),
            seed=int(data.get("seed", 0)),
            process_noise_snr_db=None if snr is None else float(snr),
            measurement_noise_snr_db=None if msnr is None else float(msnr),
            substeps=int(data.get("substeps", 10)),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing {exc.args[0]!r}") from None


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {
        "duration": scenario.duration,
        "dt": scenario.dt,
        "seed": scenario.seed,
        "process_noise_snr_db": scenario.process_noise_snr_db,
        "measurement_noise_snr_db": scenario.measurement_noise_snr_db,
        "substeps": scenario.substeps,
        "injection": [],
    }
    for inj in scenario.injections:
        block = {
            "device": inj.device_id,
            "channel": inj.channel,
            "frequency_hz": inj.frequency,
            "amplitude": inj.amplitude,
            "phase_rad": inj.phase,
            "start_s": inj.start_time,
            "end_s": None if math.isinf(inj.end_time) else inj.end_time,
        }
        if inj.operating_point is not None:
            block["operating_point"] = inj.operating_point
            block["power_to_vq"] = inj.power_to_vq
        out["injection"].append(block)
    return out


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a mapping at the top level")
    return scenario_from_dict(data)


def dump_scenario(scenario: Scenario, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(scenario), fh, sort_keys=False)


def write_measurements_csv(window: MeasurementWindow, path: str | Path) -> None:
    """``time,<channel>...`` with shortest round-trip float text."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(("time",) + window.channel_names) + "\n")
        for t, row in zip(window.times, window.samples):
            fh.write(repr(float(t)))
            for v in row:
                fh.write("," + repr(float(v)))
            fh.write("\n")
