"""Grid description: generators, grid-following IBRs and linearized coupling.

The state vector used throughout the package stacks the generator rotor
angle deviations, then the IBR PLL angle deviations, then the generator
speed deviations.  The measured q-axis voltages of the IBRs follow as
inputs.  :func:`state_layout` is the single source of that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

__all__ = [
    "ModelError",
    "SynchronousGenerator",
    "IbrDevice",
    "CouplingMatrix",
    "SystemModel",
    "Channel",
    "StateLayout",
    "build_coupling",
    "state_layout",
    "system_matrix",
    "load_model",
    "dump_model",
    "model_from_dict",
    "model_to_dict",
]

ROW_SUM_TOL = 1e-9


class ModelError(ValueError):
    """Raised for an inconsistent or malformed grid description."""


@dataclass(frozen=True)
class SynchronousGenerator:
    id: str
    inertia: float
    damping: float
    noise_sigma: float = 0.0
    emf: float = 1.0

    def __post_init__(self):
        if not self.inertia > 0:
            raise ModelError(f"generator {self.id}: inertia must be > 0")
        if not self.damping >= 0:
            raise ModelError(f"generator {self.id}: damping must be >= 0")
        if not self.noise_sigma >= 0:
            raise ModelError(f"generator {self.id}: noise_sigma must be >= 0")
        if not self.emf > 0:
            raise ModelError(f"generator {self.id}: emf must be > 0")


@dataclass(frozen=True)
class IbrDevice:
    """A grid-following inverter with a PI phase-locked loop.

    ``vq_coupling`` maps the angle states (generator angles then PLL angles)
    to the deviation of the measured q-axis voltage; ``vq_noise_sigma`` is
    the ambient fluctuation added to it, seen by both the PLL and the
    measurement.  ``power_coupling`` optionally spreads an FO disturbance on this device onto the
    generators' electrical power (per-unit power per per-unit v_q
    disturbance); it defaults to no feedback.
    """

    id: str
    k_pllp: float
    k_plli: float
    vq_coupling: tuple[float, ...]
    nominal_freq: float = 2 * np.pi * 60.0
    power_coupling: tuple[float, ...] | None = None
    vq_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.k_pllp > 0 or not self.k_plli > 0:
            raise ModelError(f"ibr {self.id}: PLL gains must be > 0")
        if not self.vq_noise_sigma >= 0:
            raise ModelError(f"ibr {self.id}: vq_noise_sigma must be >= 0")
        if not self.nominal_freq > 0:
            raise ModelError(f"ibr {self.id}: nominal_freq must be > 0")
        object.__setattr__(self, "vq_coupling", tuple(float(v) for v in self.vq_coupling))
        if self.power_coupling is not None:
            object.__setattr__(
                self, "power_coupling", tuple(float(v) for v in self.power_coupling)
            )


@dataclass(frozen=True)
class CouplingMatrix:
    """Synchronizing-power sensitivities dP_e/d(delta) at the equilibrium."""

    entries: np.ndarray

    def __post_init__(self):
        j = np.array(self.entries, dtype=float)
        if j.ndim != 2 or j.shape[0] != j.shape[1]:
            raise ModelError("coupling matrix must be square")
        if not np.all(np.isfinite(j)):
            raise ModelError("coupling matrix has non-finite entries")
        sums = np.abs(j.sum(axis=1))
        if np.any(sums > ROW_SUM_TOL * max(1.0, np.abs(j).max())):
            raise ModelError(
                f"coupling rows must sum to zero (max |row sum| {sums.max():.3g})"
            )
        j.setflags(write=False)
        object.__setattr__(self, "entries", j)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


class Channel(NamedTuple):
    name: str
    device_id: str
    kind: str  # delta | theta | omega | vq


@dataclass(frozen=True)
class StateLayout:
    states: tuple[Channel, ...]
    inputs: tuple[Channel, ...]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def channels(self) -> tuple[Channel, ...]:
        return self.states + self.inputs

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.channels]

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class SystemModel:
    generators: tuple[SynchronousGenerator, ...]
    ibrs: tuple[IbrDevice, ...] = ()
    coupling: CouplingMatrix | None = None
    reference_device: int = 0

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "ibrs", tuple(self.ibrs))
        n_gen = len(self.generators)
        if n_gen < 1:
            raise ModelError("at least one synchronous generator is required")
        ids = [g.id for g in self.generators] + [b.id for b in self.ibrs]
        if len(set(ids)) != len(ids):
            raise ModelError("device ids must be unique")
        if not 0 <= self.reference_device < n_gen:
            raise ModelError("reference_device must index a generator")
        if self.coupling is None:
            object.__setattr__(self, "coupling", CouplingMatrix(np.zeros((n_gen, n_gen))))
        elif not isinstance(self.coupling, CouplingMatrix):
            object.__setattr__(self, "coupling", CouplingMatrix(self.coupling))
        if self.coupling.size != n_gen:
            raise ModelError(
                f"coupling is {self.coupling.size}x{self.coupling.size}, expected {n_gen}"
            )
        n_angle = n_gen + len(self.ibrs)
        for b in self.ibrs:
            if len(b.vq_coupling) != n_angle:
                raise ModelError(
                    f"ibr {b.id}: vq_coupling has length {len(b.vq_coupling)}, expected {n_angle}"
                )
            if b.power_coupling is not None and len(b.power_coupling) != n_gen:
                raise ModelError(
                    f"ibr {b.id}: power_coupling has length {len(b.power_coupling)}, expected {n_gen}"
                )

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_ibr(self) -> int:
        return len(self.ibrs)

    @property
    def n_states(self) -> int:
        return 2 * self.n_gen + self.n_ibr

    @property
    def device_ids(self) -> list[str]:
        return [g.id for g in self.generators] + [b.id for b in self.ibrs]

    # array views used by the integrator and the tests
    @property
    def inertia(self) -> np.ndarray:
        return np.array([g.inertia for g in self.generators])

    @property
    def damping(self) -> np.ndarray:
        return np.array([g.damping for g in self.generators])

    @property
    def noise_sigma(self) -> np.ndarray:
        return np.array([g.noise_sigma for g in self.generators])

    @property
    def vq_noise_sigma(self) -> np.ndarray:
        return np.array([b.vq_noise_sigma for b in self.ibrs])

    @property
    def k_pllp(self) -> np.ndarray:
        return np.array([b.k_pllp for b in self.ibrs])

    @property
    def k_plli(self) -> np.ndarray:
        return np.array([b.k_plli for b in self.ibrs])

    @property
    def vq_matrix(self) -> np.ndarray:
        """r x (n_gen + r) map from angle states to q-axis voltage deviations."""
        if not self.ibrs:
            return np.zeros((0, self.n_gen))
        return np.array([b.vq_coupling for b in self.ibrs])

    @property
    def power_matrix(self) -> np.ndarray:
        """n_gen x r map from IBR v_q disturbances to generator power."""
        out = np.zeros((self.n_gen, self.n_ibr))
        for j, b in enumerate(self.ibrs):
            if b.power_coupling is not None:
                out[:, j] = b.power_coupling
        return out

    def device_kind(self, device_id: str) -> str:
        if device_id in (g.id for g in self.generators):
            return "generator"
        if device_id in (b.id for b in self.ibrs):
            return "ibr"
        raise ModelError(f"unknown device id {device_id!r}")

    def device_index(self, device_id: str) -> int:
        """Index within the generators (or within the IBRs)."""
        for i, g in enumerate(self.generators):
            if g.id == device_id:
                return i
        for i, b in enumerate(self.ibrs):
            if b.id == device_id:
                return i
        raise ModelError(f"unknown device id {device_id!r}")

    def with_inertia_scale(self, factor: float) -> "SystemModel":
        """Scale every inertia and damping by ``factor`` (keeps D/M fixed)."""
        gens = [
            SynchronousGenerator(g.id, g.inertia * factor, g.damping * factor, g.noise_sigma, g.emf)
            for g in self.generators
        ]
        return replace(self, generators=tuple(gens))


def build_coupling(line_susceptances, emfs, equilibrium_angles) -> CouplingMatrix:
    """Linearize P_e,i = sum_j E_i E_j B_ij sin(d_i - d_j) about an equilibrium.

    >>> build_coupling([[0, 1], [1, 0]], [1, 1], [0, 0]).entries
    array([[ 1., -1.],
           [-1.,  1.]])
    """
    b = np.asarray(line_susceptances, dtype=float)
    e = np.asarray(emfs, dtype=float)
    d = np.asarray(equilibrium_angles, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise ModelError("susceptance matrix must be square")
    n = b.shape[0]
    if e.shape != (n,) or d.shape != (n,):
        raise ModelError(f"emfs and equilibrium_angles must have length {n}")
    if not np.allclose(b, b.T, rtol=0, atol=1e-12):
        raise ModelError("susceptance matrix must be symmetric")
    if np.any(np.diag(b) != 0):
        raise ModelError("susceptance matrix must have a zero diagonal")
    k = np.outer(e, e) * b * np.cos(d[:, None] - d[None, :])
    np.fill_diagonal(k, 0.0)
    j = -k
    # diagonal from the same off-diagonal terms so rows cancel exactly
    np.fill_diagonal(j, k.sum(axis=1))
    return CouplingMatrix(j)


def state_layout(model: SystemModel) -> StateLayout:
    gens = [(f"g{i}", g.id) for i, g in enumerate(model.generators)]
    ibrs = [(f"ibr{j}", b.id) for j, b in enumerate(model.ibrs)]
    states = (
        [Channel(f"{n}.delta", dev, "delta") for n, dev in gens]
        + [Channel(f"{n}.theta", dev, "theta") for n, dev in ibrs]
        + [Channel(f"{n}.omega", dev, "omega") for n, dev in gens]
    )
    inputs = [Channel(f"{n}.vq", dev, "vq") for n, dev in ibrs]
    return StateLayout(tuple(states), tuple(inputs))


def system_matrix(model: SystemModel) -> np.ndarray:
    """Continuous-time matrix of the closed loop, state [delta, theta, omega, vqI].

    The PLL integrator (running integral of v_q) is appended so that the
    matrix describes the complete deterministic linear system.
    """
    g, r = model.n_gen, model.n_ibr
    m = model.inertia
    j = model.coupling.entries
    c = model.vq_matrix
    n = 2 * g + 2 * r
    a = np.zeros((n, n))
    sd, st, sw, si = slice(0, g), slice(g, g + r), slice(g + r, 2 * g + r), slice(2 * g + r, n)
    a[sd, sw] = np.eye(g)
    a[sw, sd] = -j / m[:, None]
    a[sw, sw] = -np.diag(model.damping / m)
    if r:
        kp, ki = model.k_pllp, model.k_plli
        a[st, : g + r] = kp[:, None] * c
        a[st, si] = np.diag(ki)
        a[si, : g + r] = c
    return a


def model_from_dict(data: dict) -> SystemModel:
    try:
        gens = [
            SynchronousGenerator(
                id=str(g["id"]),
                inertia=float(g["M"]),
                damping=float(g["D"]),
                noise_sigma=float(g.get("sigma", 0.0)),
                emf=float(g.get("E", 1.0)),
            )
            for g in data["generators"]
        ]
        ibrs = [
            IbrDevice(
                id=str(b["id"]),
                k_pllp=float(b["k_pllp"]),
                k_plli=float(b["k_plli"]),
                nominal_freq=float(b.get("omega_g", 2 * np.pi * 60.0)),
                vq_coupling=[float(v) for v in b["vq_coupling"]],
                power_coupling=(
                    [float(v) for v in b["power_coupling"]] if "power_coupling" in b else None
                ),
                vq_noise_sigma=float(b.get("vq_sigma", 0.0)),
            )
            for b in data.get("ibrs") or []
        ]
        cp = data["coupling"]
        if "matrix" in cp:
            coupling = CouplingMatrix(np.array(cp["matrix"], dtype=float))
        else:
            coupling = build_coupling(cp["susceptances"], cp["emfs"], cp["equilibrium_angles"])
        ref = int(data.get("reference_device", 0))
    except KeyError as exc:
        raise ModelError(f"model definition is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed model definition: {exc}") from None
    return SystemModel(gens, ibrs, coupling, ref)


def model_to_dict(model: SystemModel) -> dict:
    out = {
        "generators": [
            {"id": g.id, "M": g.inertia, "D": g.damping, "sigma": g.noise_sigma, "E": g.emf}
            for g in model.generators
        ],
        "ibrs": [],
        "coupling": {"matrix": model.coupling.entries.tolist()},
        "reference_device": model.reference_device,
    }
    for b in model.ibrs:
        entry = {
            "id": b.id,
            "k_pllp": b.k_pllp,
            "k_plli": b.k_plli,
            "omega_g": b.nominal_freq,
            "vq_coupling": list(b.vq_coupling),
            "vq_sigma": b.vq_noise_sigma,
        }
        if b.power_coupling is not None:
            entry["power_coupling"] = list(b.power_coupling)
        out["ibrs"].append(entry)
    return out


def load_model(path: str | Path) -> SystemModel:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ModelError(f"{path}: expected a mapping at the top level")
    return model_from_dict(data)


def dump_model(model: SystemModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_dict(model), fh, sort_keys=False)
