"""A small 4-generator / 2-IBR test grid and helpers to retune it.

Inertias use the rad/s speed convention, M = 2H / omega_s, so the
swing modes fall in the 0.5-2 Hz band typical of inter-area and local
oscillations.
"""

from __future__ import annotations

import math

import numpy as np

from .model import IbrDevice, SynchronousGenerator, SystemModel, build_coupling, system_matrix

__all__ = ["desk_model", "oscillatory_modes", "tune_mode", "spectral_abscissa", "REFERENCE_POWER"]

OMEGA_S = 2 * math.pi * 60.0
# reference active power of every desk device (pu); FO strengths are quoted against it
REFERENCE_POWER = 1.0

_H = (6.5, 4.0, 5.0, 3.5)
_SUSCEPTANCE = np.array([
    [0.0, 0.3, 0.12, 0.18],
    [0.3, 0.0, 0.225, 0.0],
    [0.12, 0.225, 0.0, 0.27],
    [0.18, 0.0, 0.27, 0.0],
])
_EMF = (1.05, 1.02, 1.0, 1.03)
_ANGLES = (0.0, -0.05, -0.1, 0.02)


def desk_model(noise_sigma: float = 1e-3, power_coupling: bool = False) -> SystemModel:
    """The reference desk grid.

    ``ibr0`` sits between ``g1`` and ``g2``, ``ibr1`` between ``g3`` and
    ``g0``.  With ``power_coupling`` the IBRs' FO disturbances also load
    the neighbouring generators, letting an IBR FO excite swing modes.
    """
    gens = [
        SynchronousGenerator(f"g{i}", 2 * h / OMEGA_S, 0.4 * 2 * h / OMEGA_S, noise_sigma, e)
        for i, (h, e) in enumerate(zip(_H, _EMF))
    ]
    coupling = build_coupling(_SUSCEPTANCE, _EMF, _ANGLES)
    ibrs = [
        IbrDevice("ibr0", 30.0, 150.0, (0.0, 0.7, 0.2, 0.0, -0.9, 0.0),
                  power_coupling=(0.0, 0.5, 0.3, 0.0) if power_coupling else None),
        IbrDevice("ibr1", 25.0, 120.0, (0.3, 0.0, 0.0, 0.6, 0.0, -0.9),
                  power_coupling=(0.3, 0.0, 0.0, 0.5) if power_coupling else None),
    ]
    return SystemModel(gens, ibrs, coupling, reference_device=0)


def spectral_abscissa(model: SystemModel) -> float:
    return float(np.max(np.linalg.eigvals(system_matrix(model)).real))


def oscillatory_modes(model: SystemModel) -> list[tuple[float, float]]:
    """(frequency Hz, damping ratio) of each complex mode, ascending frequency."""
    ev = np.linalg.eigvals(system_matrix(model))
    modes = []
    for lam in ev:
        if lam.imag > 1e-9:
            modes.append((lam.imag / (2 * math.pi), -lam.real / abs(lam)))
    return sorted(modes)


def tune_mode(model: SystemModel, target_hz: float, tol_hz: float = 1e-4, max_iter: int = 50) -> SystemModel:
    """Scale all inertias (and damping, keeping D/M) so the swing mode
    nearest ``target_hz`` lands on it."""
    current = model
    for _ in range(max_iter):
        modes = oscillatory_modes(current)
        if not modes:
            raise ValueError("model has no oscillatory mode")
        f = min((m[0] for m in modes), key=lambda fm: abs(fm - target_hz))
        if abs(f - target_hz) < tol_hz:
            return current
        current = current.with_inertia_scale((f / target_hz) ** 2)
    raise RuntimeError(f"could not place a mode at {target_hz} Hz")
