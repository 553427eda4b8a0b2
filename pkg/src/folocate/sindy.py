"""Sparse regression of the deviation dynamics on a trigonometric library.

The library holds a constant, the generator angles and speeds, the IBR
q-axis voltages and their running integrals, and a sine/cosine pair for
every candidate FO frequency.  Sequential thresholded least squares keeps
the coefficient matrix sparse; the sinusoid coefficients that land on the
angle equations (generator rotor angles, IBR PLL angles) score each
device as the FO source.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .model import Channel, StateLayout
from .signal import DetectedFrequencies, forward_difference, moving_average
from .window import MeasurementWindow, WindowError

__all__ = [
    "Column",
    "FeatureLibrary",
    "CoefficientMatrix",
    "SourceScore",
    "Localization",
    "LibraryError",
    "build_library",
    "build_derivatives",
    "refine_frequencies",
    "lstsq_min_norm",
    "stls",
    "extract_zeta",
    "locate_source",
    "adaptive_threshold",
    "nonzero_count",
]

log = logging.getLogger(__name__)

ZETA_ZERO = 1e-12


class LibraryError(ValueError):
    pass


class Column(NamedTuple):
    kind: str  # const | delta | omega | vq | vqI | sin | cos
    name: str
    frequency: float | None = None


@dataclass(frozen=True)
class FeatureLibrary:
    matrix: np.ndarray
    column_spec: tuple[Column, ...]
    times: np.ndarray

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.column_spec]

    @property
    def frequencies(self) -> list[float]:
        return [c.frequency for c in self.column_spec if c.kind == "sin"]

    def permuted(self, order) -> "FeatureLibrary":
        order = list(order)
        return FeatureLibrary(self.matrix[:, order], tuple(self.column_spec[i] for i in order), self.times)


@dataclass(frozen=True)
class CoefficientMatrix:
    xi: np.ndarray
    column_spec: tuple[Column, ...]
    rows: tuple[Channel, ...]
    lambda_used: float
    converged: tuple[bool, ...] = ()
    iterations: tuple[int, ...] = ()
    rounds: int = 1
    cap_reached: bool = False

    @property
    def row_names(self) -> list[str]:
        return [r.name for r in self.rows]

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


@dataclass(frozen=True)
class SourceScore:
    zeta: np.ndarray
    frequencies: tuple[float, ...]
    devices: tuple[str, ...]
    ranking: tuple[tuple[str, float, float], ...]


@dataclass(frozen=True)
class Localization:
    found: bool
    device: str | None
    frequency: float | None
    score: float
    dominance: float
    ranking: tuple[tuple[str, float, float], ...]
    ties: tuple[tuple[str, float], ...] = ()


def _freq_label(f: float) -> str:
    return f"{f:.6g}"


def build_library(window: MeasurementWindow, freqs, layout: StateLayout) -> FeatureLibrary:
    """Library rows aligned with the forward-difference derivative rows.

    ``window`` must hold every delta, omega and vq channel of ``layout``
    and the running integrals under ``<ibr>.vqI``.
    """
    values = tuple(freqs.values) if isinstance(freqs, DetectedFrequencies) else tuple(freqs)
    if not values:
        raise LibraryError("no FO frequency to build sinusoid columns for")
    if len(values) > 3:
        raise LibraryError("at most three FO frequencies are supported")
    n = window.n_samples
    if n < 2:
        raise WindowError("need at least 2 samples")
    deltas = [c for c in layout.states if c.kind == "delta"]
    omegas = [c for c in layout.states if c.kind == "omega"]
    vqs = list(layout.inputs)
    spec = [Column("const", "1")]
    cols = [np.ones(n - 1)]
    for group in (deltas, omegas, vqs):
        for ch in group:
            spec.append(Column(ch.kind, ch.name))
            cols.append(window.column(ch.name)[:-1])
    for ch in vqs:
        name = ch.name + "I"
        spec.append(Column("vqI", name))
        cols.append(window.column(name)[:-1])
    t = window.times[:-1]
    for f in values:
        w = 2 * math.pi * f
        spec.append(Column("sin", f"sin({_freq_label(f)}Hz)", f))
        cols.append(np.sin(w * t))
        spec.append(Column("cos", f"cos({_freq_label(f)}Hz)", f))
        cols.append(np.cos(w * t))
    return FeatureLibrary(np.column_stack(cols), tuple(spec), t)


def build_derivatives(window: MeasurementWindow, layout: StateLayout, smoothing_width: int = 0) -> np.ndarray:
    """Forward differences of every state channel, columns in layout order."""
    if window.n_samples < 2:
        raise WindowError("need at least 2 samples")
    out = np.empty((window.n_samples - 1, layout.n_states))
    for k, ch in enumerate(layout.states):
        y = window.column(ch.name)
        if smoothing_width > 1:
            y = moving_average(y, smoothing_width)
        out[:, k] = forward_difference(y, window.dt)
    return out


def _trig(t, f):
    w = 2 * math.pi * np.atleast_1d(f)
    arg = np.outer(t, w)
    return np.sin(arg), np.cos(arg)


def refine_frequencies(window: MeasurementWindow, freqs, layout: StateLayout,
                       derivatives: np.ndarray, span_bins: float = 1.0,
                       resolution_bins: float = 0.004, sweeps: int = 2) -> tuple[float, ...]:
    """Move each candidate frequency off the FFT grid to where it best
    explains the dynamics.

    A sinusoid column that is even a small fraction of a bin away from the
    true FO frequency drifts out of phase across the window, and the state
    columns then absorb most of the forcing.  Each frequency is searched
    within ``+/- span_bins`` bins, on a grid of ``resolution_bins`` and
    then by a bounded scalar search, for the largest Gaussian likelihood of
    the full least-squares fit (minus the sum over equations of the log
    residual energy), holding the other frequencies fixed.  The log lets an
    equation whose residual collapses at the true frequency dominate even
    when its scale is small; the optimum is sharp, hence the fine grid.
    """
    from scipy.optimize import minimize_scalar

    values = list(freqs.values) if isinstance(freqs, DetectedFrequencies) else list(freqs)
    if not values:
        return ()
    base = build_library(window, values, layout)
    n_base = len(base.column_spec) - 2 * len(values)
    q0, _ = np.linalg.qr(base.matrix[:, :n_base])
    y0 = np.asarray(derivatives, dtype=float)
    y0 = y0 - q0 @ (q0.T @ y0)
    t = base.times
    df = 1.0 / (window.n_samples * window.dt)
    tiny = np.finfo(float).tiny

    def proj(f):
        # trig columns at each frequency in ``f``, base columns projected out
        s_, c_ = _trig(t, f)
        s_ -= q0 @ (q0.T @ s_)
        c_ -= q0 @ (q0.T @ c_)
        return s_, c_

    def loglik(s_, c_, y, total):
        ss, cc, sc = (s_ * s_).sum(0), (c_ * c_).sum(0), (s_ * c_).sum(0)
        det = ss * cc - sc * sc
        det = np.where(det > 0, det, np.inf)
        ps, pc = s_.T @ y, c_.T @ y
        got = (cc[:, None] * ps * ps - 2 * sc[:, None] * ps * pc + ss[:, None] * pc * pc) / det[:, None]
        rss = np.maximum(total[None, :] - got, tiny * (1.0 + total[None, :]))
        return -np.sum(np.log(rss), axis=1)

    for _ in range(max(1, sweeps)):
        for k, f0 in enumerate(values):
            others = [f for j, f in enumerate(values) if j != k]
            y = y0
            if others:
                s_o, c_o = proj(others)
                qo, _ = np.linalg.qr(np.column_stack([s_o, c_o]))
            else:
                qo = np.zeros((t.size, 0))
            y = y0 - qo @ (qo.T @ y0)
            total = np.sum(y * y, axis=0)

            def score(fs):
                s_, c_ = proj(fs)
                s_ -= qo @ (qo.T @ s_)
                c_ -= qo @ (qo.T @ c_)
                return loglik(s_, c_, y, total)

            lo = max(f0 - span_bins * df, df / 2)
            hi = min(f0 + span_bins * df, 0.5 / window.dt)
            step = resolution_bins * df
            grid = np.linspace(lo, hi, max(3, int(math.ceil((hi - lo) / step)) + 1))
            vals = np.concatenate([score(grid[i:i + 256]) for i in range(0, grid.size, 256)])
            j = int(np.argmax(vals))
            a, b = grid[max(j - 1, 0)], grid[min(j + 1, grid.size - 1)]
            res = minimize_scalar(lambda f: -score(np.array([f]))[0], bounds=(a, b),
                                  method="bounded", options={"xatol": 1e-6 * df})
            values[k] = float(res.x) if -res.fun >= vals[j] else float(grid[j])
    return tuple(values)


def lstsq_min_norm(a: np.ndarray, b: np.ndarray, rcond: float | None = None) -> np.ndarray:
    """Minimum-norm least squares by QR with column pivoting.

    On rank deficiency the trailing block is eliminated with a second
    orthogonal factorization (complete orthogonal decomposition).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    if n == 0:
        return np.zeros((0,) + b.shape[1:])
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if rcond is None:
        rcond = max(m, n) * np.finfo(float).eps
    rank = int(np.sum(diag > rcond * diag[0])) if diag.size and diag[0] > 0 else 0
    x = np.zeros((n,) + b.shape[1:])
    if rank == 0:
        return x
    qtb = q[:, :rank].T @ b
    if rank == n:
        z = scipy.linalg.solve_triangular(r[:n, :n], qtb)
    else:
        # [R11 R12] = T^T Z^T via QR of its transpose; x = Z T^-T Q^T b
        z2, t = scipy.linalg.qr(r[:rank, :].T, mode="economic")
        y = scipy.linalg.solve_triangular(t, qtb, trans="T")
        z = z2 @ y
    x[piv] = z
    return x


def _stls_row(theta, y, lam, max_iter):
    coef = lstsq_min_norm(theta, y)
    active = np.abs(coef) >= lam
    for it in range(1, max_iter + 1):
        coef = np.zeros_like(coef)
        if active.any():
            coef[active] = lstsq_min_norm(theta[:, active], y)
        new_active = active & (np.abs(coef) >= lam)
        if np.array_equal(new_active, active):
            return coef, True, it
        active = new_active
    coef[~active] = 0.0
    coef[np.abs(coef) < lam] = 0.0
    return coef, False, max_iter


def stls(library: FeatureLibrary, derivatives: np.ndarray, lam: float, rows: Sequence[Channel] | None = None,
         max_iter: int = 50, normalize: bool = False) -> CoefficientMatrix:
    """Sequential thresholded least squares, one state equation at a time.

    Each row alternates a least-squares fit on the active columns with
    hard thresholding at ``lam`` until the active set repeats.
    """
    theta = np.asarray(library.matrix, dtype=float)
    dx = np.asarray(derivatives, dtype=float)
    if dx.ndim == 1:
        dx = dx[:, None]
    if theta.shape[0] != dx.shape[0]:
        raise ValueError(f"library has {theta.shape[0]} rows, derivatives {dx.shape[0]}")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(dx))):
        raise ValueError("library and derivatives must be finite")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if rows is None:
        rows = tuple(Channel(f"x{k}", f"x{k}", "state") for k in range(dx.shape[1]))
    if len(rows) != dx.shape[1]:
        raise ValueError("one row descriptor per derivative column is required")
    scale = np.ones(theta.shape[1])
    if normalize:
        scale = theta.std(axis=0)
        scale[scale == 0] = 1.0
        const = np.all(theta == theta[0], axis=0)
        scale[const] = 1.0
        theta = theta / scale
    xi = np.zeros((dx.shape[1], theta.shape[1]))
    conv, iters = [], []
    for k in range(dx.shape[1]):
        coef, ok, it = _stls_row(theta, dx[:, k], lam, max_iter)
        xi[k] = coef / scale
        conv.append(ok)
        iters.append(it)
    if not all(conv):
        log.warning("STLS hit the %d-iteration cap on %d row(s)", max_iter, conv.count(False))
    return CoefficientMatrix(xi, library.column_spec, tuple(rows), float(lam), tuple(conv), tuple(iters))


def _angle_rows(rows):
    return [k for k, r in enumerate(rows) if r.kind in ("delta", "theta")]


def extract_zeta(coef: CoefficientMatrix, layout: StateLayout | None = None, freqs=None) -> SourceScore:
    """Squared sinusoid magnitude per (frequency, device) on the angle equations."""
    spec = coef.column_spec
    sin_cols = {c.frequency: k for k, c in enumerate(spec) if c.kind == "sin"}
    cos_cols = {c.frequency: k for k, c in enumerate(spec) if c.kind == "cos"}
    if freqs is None:
        values = [c.frequency for c in spec if c.kind == "sin"]
    else:
        values = list(freqs.values if isinstance(freqs, DetectedFrequencies) else freqs)
    if not values:
        raise LibraryError("coefficient matrix has no sinusoid columns")
    missing = [f for f in values if f not in sin_cols or f not in cos_cols]
    if missing:
        raise LibraryError(f"no sin/cos columns for {missing}")
    rows = coef.rows if layout is None else layout.states
    angle = _angle_rows(rows)
    devices = tuple(rows[k].device_id for k in angle)
    zeta = np.empty((len(values), len(angle)))
    for i, f in enumerate(values):
        a = coef.xi[angle, sin_cols[f]]
        b = coef.xi[angle, cos_cols[f]]
        zeta[i] = a * a + b * b
    cells = [(devices[j], float(values[i]), float(zeta[i, j]), j, i)
             for i in range(len(values)) for j in range(len(angle))]
    cells.sort(key=lambda c: (-c[2], c[3], c[4]))
    ranking = tuple((d, f, s) for d, f, s, _, _ in cells)
    return SourceScore(zeta, tuple(float(v) for v in values), devices, ranking)


def locate_source(score: SourceScore) -> Localization:
    if score.zeta.size == 0:
        raise ValueError("empty score matrix")
    top = score.ranking[0]
    if not top[2] > ZETA_ZERO:
        return Localization(False, None, None, 0.0, math.nan, score.ranking)
    second = score.ranking[1][2] if len(score.ranking) > 1 else 0.0
    dominance = math.inf if second == 0 else top[2] / second
    ties = tuple((d, f) for d, f, s in score.ranking if s == top[2])
    return Localization(True, top[0], top[1], top[2], dominance, score.ranking, ties)


def nonzero_count(coef: CoefficientMatrix) -> int:
    return int(np.sum(extract_zeta(coef).zeta > ZETA_ZERO))


def adaptive_threshold(library: FeatureLibrary, derivatives: np.ndarray, lambda0: float,
                       rows: Sequence[Channel] | None = None, max_nonzero: int = 3,
                       growth: float = 1.5, max_rounds: int = 20, **stls_kw) -> CoefficientMatrix:
    """Raise the threshold until at most ``max_nonzero`` score cells survive."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be > 0")
    lam = float(lambda0)
    for rnd in range(1, max_rounds + 1):
        coef = stls(library, derivatives, lam, rows=rows, **stls_kw)
        if nonzero_count(coef) <= max_nonzero:
            return _with_rounds(coef, rnd, False)
        if rnd < max_rounds:
            lam *= growth
    log.warning("adaptive threshold stopped after %d rounds at lambda=%g", max_rounds, lam)
    return _with_rounds(coef, max_rounds, True)


def _with_rounds(coef, rounds, capped):
    return CoefficientMatrix(coef.xi, coef.column_spec, coef.rows, coef.lambda_used,
                             coef.converged, coef.iterations, rounds, capped)
