"""Acceptance criteria, each run at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line before it
asserts; the lines are printed in the terminal summary (see conftest).
Criteria 1-4 run 50 seeded trials per case and take a few minutes.
"""

import math
import time

import numpy as np
import pytest

from folocate.desk import desk_model, oscillatory_modes, tune_mode
from folocate.model import state_layout
from folocate.pipeline import PipelineConfig, ingest_csv, run_pipeline
from folocate.signal import (
    ZScoreConfig,
    detect_fo_frequencies,
    forward_difference,
    running_trapezoid,
    single_sided_spectrum,
)
from folocate.simulator import FoInjection, Scenario, simulate, write_measurements_csv
from folocate.sindy import (
    Column,
    FeatureLibrary,
    build_derivatives,
    build_library,
    extract_zeta,
    lstsq_min_norm,
    stls,
)

from conftest import record_acceptance

pytestmark = pytest.mark.acceptance

TRIALS = 50
FREQ_TOL = 0.025
IBR_CASES = ((0.379, 0.012), (0.614, 0.0222), (1.27, 0.0522))
CONFIG = PipelineConfig(model_path="<memory>", scenario_path="<memory>")


def trial(model, injections, seed):
    sc = Scenario(injections=tuple(injections), seed=seed, process_noise_snr_db=50.0)
    t0 = time.perf_counter()
    res = run_pipeline(CONFIG, model=model, window=simulate(model, sc))
    return res.localization, time.perf_counter() - t0


def hits(model, injections, device, frequency=None):
    ok, worst = 0, 0.0
    for seed in range(TRIALS):
        loc, dt = trial(model, injections, seed)
        worst = max(worst, dt)
        good = loc is not None and loc.found and loc.device == device
        if frequency is not None:
            good = good and abs(loc.frequency - frequency) <= FREQ_TOL
        ok += bool(good)
    return ok, worst


def test_criterion_1_generator():
    model = desk_model()
    ok, worst = hits(model, [FoInjection("g2", "gen_mech_power", 1.2, 0.05)], "g2", 1.2)
    passed = ok >= 48 and worst < 10.0
    record_acceptance(1, passed, f"g2 at 1.2 Hz in {ok}/{TRIALS} trials (need 48), slowest run {worst:.2f} s")
    assert passed


def test_criterion_2_ibr():
    model = desk_model()
    parts, passed = [], True
    for f, a in IBR_CASES:
        ok, _ = hits(model, [FoInjection("ibr0", "ibr_vq", f, a)], "ibr0", f)
        parts.append(f"{f} Hz {ok}/{TRIALS}")
        passed &= ok >= 48
    record_acceptance(2, passed, "ibr0: " + ", ".join(parts) + " (need 48 each)")
    assert passed


def test_criterion_3_resonance():
    base = desk_model(power_coupling=True)
    parts, passed = [], True
    for f, a in IBR_CASES:
        model = tune_mode(base, f + 0.005)
        gap = min(abs(m[0] - f) for m in oscillatory_modes(model))
        ok, _ = hits(model, [FoInjection("ibr0", "ibr_vq", f, a)], "ibr0", f)
        parts.append(f"{f} Hz mode gap {gap:.4f} Hz {ok}/{TRIALS}")
        passed &= ok >= 48 and gap <= 0.01
    record_acceptance(3, passed, "ibr0: " + ", ".join(parts) + " (need gap <= 0.01, 48 each)")
    assert passed


def test_criterion_4_bursts():
    model = desk_model()
    injections = [
        FoInjection("ibr1", "ibr_vq", f, a, start_time=s, end_time=s + 5.0)
        for (f, a), s in zip(IBR_CASES, (5.0, 17.0, 29.0))
    ]
    ok, _ = hits(model, injections, "ibr1")
    passed = ok >= 45
    record_acceptance(4, passed, f"ibr1 bursts named in {ok}/{TRIALS} trials (need 45)")
    assert passed


def _stls_instance(rng, lam=0.006, m=300, q=12, rows=4):
    # well-conditioned random library, 3 nonzeros per row, |xi| >= 10 lambda
    while True:
        theta = rng.standard_normal((m, q))
        if np.linalg.cond(theta) < 1e4:
            break
    truth = np.zeros((rows, q))
    for k in range(rows):
        cols = rng.choice(q, 3, replace=False)
        truth[k, cols] = rng.choice([-1, 1], 3) * rng.uniform(10 * lam, 200 * lam, 3)
    spec = tuple(Column("delta", f"c{k}") for k in range(q))
    return FeatureLibrary(theta, spec, np.arange(m) / 60.0), truth


def test_criterion_5_stls_oracle():
    rng = np.random.default_rng(20240605)
    ok = 0
    for _ in range(100):
        lib, truth = _stls_instance(rng)
        out = stls(lib, lib.matrix @ truth.T, 0.006)
        nz = truth != 0
        support = np.array_equal(out.xi != 0, nz)
        err = np.max(np.abs(out.xi[nz] - truth[nz]) / np.abs(truth[nz]))
        ok += support and err <= 1e-6
    passed = ok == 100
    record_acceptance(5, passed, f"exact support and <= 1e-6 relative error in {ok}/100 instances")
    assert passed


def test_criterion_6_calculus():
    # bit-exact where every sample is representable (dyadic steps); to
    # rounding of the timestamps themselves at 1/60 s
    ramp_exact = all(
        np.array_equal(forward_difference(c * np.arange(200) * tau, tau), np.full(199, c))
        for c in (3.0, -0.75, 12.0) for tau in (1 / 64, 0.5, 2.0)
    )
    t60 = np.arange(600) / 60
    ramp_60 = float(np.max(np.abs(forward_difference(3 * t60, 1 / 60) - 3.0)))
    dt = 1 / 60
    t = np.arange(601) * dt
    trap_err = float(np.max(np.abs(running_trapezoid(np.sin(t), dt) - (1 - np.cos(t)))))
    rng = np.random.default_rng(0)
    y = rng.integers(-100, 100, 500).astype(float)
    inverse = all(np.array_equal(forward_difference(running_trapezoid(y, tau), tau), (y[:-1] + y[1:]) / 2)
                  for tau in (0.5, 0.25, 1.0))
    passed = ramp_exact and ramp_60 <= 1e-12 and trap_err < 1e-3 and inverse
    record_acceptance(6, passed, f"dyadic ramps exact {ramp_exact}, 60 Hz ramp error {ramp_60:.1e}, "
                                 f"trapezoid max error {trap_err:.2e} (< 1e-3), inverse identity exact {inverse}")
    assert passed


def test_criterion_7_detection():
    fs, n = 60.0, 2400
    t = np.arange(n) / fs
    rng = np.random.default_rng(7)
    ok, most = 0, 0
    for _ in range(100):
        f = rng.uniform(0.1, 2.0)
        a = rng.uniform(0.5, 2.0)
        # 20 dB: noise power = signal power (a**2 / 2) / 100
        noise = rng.standard_normal(n) * a / math.sqrt(2) / 10
        x = a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) + noise
        d = detect_fo_frequencies([single_sided_spectrum(x - x.mean(), fs)], ZScoreConfig())
        most = max(most, len(d))
        ok += any(abs(v - f) <= FREQ_TOL for v in d.values)
    for _ in range(100):
        # inputs built to trip many peaks still give at most 3
        x = sum(np.sin(2 * np.pi * f * t) for f in rng.uniform(0.1, 5.0, 8)) + rng.standard_normal(n)
        most = max(most, len(detect_fo_frequencies([single_sided_spectrum(x, fs)])))
    passed = ok >= 95 and most <= 3
    record_acceptance(7, passed, f"detected within 0.025 Hz in {ok}/100 (need 95), most returned {most}")
    assert passed


def test_criterion_8_invariants(tmp_path):
    checks = {}
    quiet = desk_model(noise_sigma=0.0)
    checks["equilibrium fixed point"] = not simulate(quiet, Scenario(duration=10.0)).samples.any()
    model = desk_model()
    sc = Scenario(injections=(FoInjection("ibr1", "ibr_vq", 0.614, 0.0222),), seed=5, process_noise_snr_db=50.0)
    a, b = simulate(model, sc), simulate(model, sc)
    checks["seeded determinism"] = np.array_equal(a.samples, b.samples)

    res = run_pipeline(CONFIG, model=model, window=a)
    coef, lib_ok = res.coefficients, True
    layout = state_layout(model)
    lib = build_library(res.window, res.frequencies, layout)
    der = build_derivatives(res.window, layout)
    for k in range(coef.xi.shape[0]):
        active = coef.xi[k] != 0
        redo = np.zeros(coef.xi.shape[1])
        if active.any():
            redo[active] = lstsq_min_norm(lib.matrix[:, active], der[:, k])
        lib_ok &= np.array_equal(np.abs(redo) >= coef.lambda_used, active)
        lib_ok &= bool(np.all(np.abs(redo - coef.xi[k]) <= 1e-8 * np.maximum(1.0, np.abs(coef.xi[k]))))
    checks["STLS fixed point"] = lib_ok
    checks["zeta nonnegative"] = bool(np.all(extract_zeta(coef).zeta >= 0))

    devices = []
    for amp in (0.0222, 0.0444, 0.111):
        sc_c = Scenario(injections=(FoInjection("ibr1", "ibr_vq", 0.614, amp),), seed=5,
                        process_noise_snr_db=50.0)
        devices.append(run_pipeline(CONFIG, model=model, window=simulate(model, sc_c)).localization.device)
    checks["amplitude-scaling argmax"] = len(set(devices)) == 1 and devices[0] == "ibr1"

    write_measurements_csv(a, tmp_path / "m.csv")
    back = ingest_csv(tmp_path / "m.csv", model)
    checks["CSV round trip"] = np.array_equal(back.samples, a.samples) and back.dt == a.dt
    passed = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    record_acceptance(8, passed, f"{len(checks) - len(failed)}/{len(checks)} invariants hold"
                                 + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert passed, failed
