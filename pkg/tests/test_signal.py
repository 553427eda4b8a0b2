import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from folocate import _kernels_py
from folocate._backend import zscore_signals
from folocate.signal import (
    DetectedFrequencies,
    ZScoreConfig,
    detect_fo_frequencies,
    forward_difference,
    moving_average,
    remove_mean,
    running_trapezoid,
    single_sided_spectrum,
    zscore_peaks,
)
from folocate.window import MeasurementWindow

FS = 60.0
T40 = np.arange(2400) / FS

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def window_of(**cols):
    names = tuple(cols)
    return MeasurementWindow(0.0, 1 / FS, np.column_stack([cols[n] for n in names]), names)


# -- remove_mean ---------------------------------------------------------------

def test_remove_mean_examples():
    n = 600
    t = np.arange(n) / FS
    w = window_of(c=np.full(n, 3.7), s=np.sin(2 * np.pi * t), o=5 + np.sin(2 * np.pi * t))
    out = remove_mean(w)
    assert not out.column("c").any()
    np.testing.assert_allclose(out.column("s"), np.sin(2 * np.pi * t), atol=1e-12)
    assert np.max(np.abs(out.column("o") - np.sin(2 * np.pi * t))) <= 2 / n
    assert out.t0 == w.t0 and out.dt == w.dt and out.channel_names == w.channel_names


@given(arrays(float, st.tuples(st.integers(2, 50), st.integers(1, 4)), elements=finite))
def test_remove_mean_zero_mean(samples):
    w = MeasurementWindow(1.0, 0.1, samples, tuple(f"c{i}" for i in range(samples.shape[1])))
    assert np.all(np.abs(remove_mean(w).samples.mean(axis=0)) <= 1e-12 * max(1.0, np.abs(samples).max()))


# -- differences and integrals --------------------------------------------------

@pytest.mark.parametrize("tau", [1 / 60, 0.017, 0.5])
def test_forward_difference_ramp_exact(tau):
    t = np.arange(100) * tau
    d = forward_difference(3 * t, tau)
    assert d.shape == (99,)
    np.testing.assert_allclose(d, 3.0, rtol=1e-12)
    assert not forward_difference(np.full(10, 2.5), tau).any()


def test_forward_difference_taylor_bound():
    tau = 1 / 60
    t = np.arange(0, 5, tau)
    err = np.abs(forward_difference(np.sin(2 * np.pi * t), tau) - 2 * np.pi * np.cos(2 * np.pi * t[:-1]))
    assert err.max() <= (2 * np.pi) ** 2 * tau / 2


def test_running_trapezoid_examples():
    np.testing.assert_array_equal(running_trapezoid([2.0, 2.0], 0.5), [0.0, 1.0])
    assert not running_trapezoid(np.zeros(7), 0.1).any()


def test_running_trapezoid_sine_antiderivative():
    tau, w = 1 / 60, 2 * np.pi * 0.5
    t = np.arange(0, 10 + tau / 2, tau)
    err = np.abs(running_trapezoid(np.sin(w * t), tau) - (1 - np.cos(w * t)) / w)
    assert err.max() < 1e-3
    assert err.max() <= w**2 * tau**2 / 12 * 10 * w


def test_calculus_input_validation():
    for fn in (forward_difference, running_trapezoid):
        with pytest.raises(ValueError):
            fn([1.0], 0.1)
        with pytest.raises(ValueError):
            fn([1.0, 2.0], 0.0)


@given(arrays(float, st.integers(2, 200), elements=finite), st.floats(1e-3, 10))
def test_difference_of_trapezoid_is_midpoint(x, tau):
    got = forward_difference(running_trapezoid(x, tau), tau)
    mid = (x[:-1] + x[1:]) / 2
    np.testing.assert_allclose(got, mid, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_moving_average():
    x = np.arange(10.0)
    np.testing.assert_allclose(moving_average(x, 3)[1:-1], x[1:-1])
    assert moving_average(x, 3)[0] == pytest.approx(0.5)
    np.testing.assert_array_equal(moving_average(x, 1), x)


# -- spectra -------------------------------------------------------------------

def dft_oracle(x, fs):
    """Single-sided magnitude by the explicit DFT sum."""
    n = x.size
    x = x - x.mean()
    k = np.arange(n // 2 + 1)
    e = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    mag = np.abs(e @ x) / n
    mag[1:] *= 2
    if n % 2 == 0:
        mag[-1] /= 2
    return k * fs / n, mag


def test_spectrum_matches_dft_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(301) + 0.4
    f, mag = dft_oracle(x, FS)
    s = single_sided_spectrum(x, FS, "x")
    np.testing.assert_allclose(s.frequencies, f, rtol=1e-12)
    np.testing.assert_allclose(s.amplitudes, mag / mag.max(), atol=1e-12)
    assert s.scale == pytest.approx(mag.max(), rel=1e-12)
    assert s.resolution == pytest.approx(FS / 301)


def test_spectrum_peak_at_nearest_bin():
    s = single_sided_spectrum(np.sin(2 * np.pi * 0.379 * T40), FS, "x")
    assert s.resolution == pytest.approx(0.025)
    k = int(np.argmax(s.amplitudes))
    assert k == int(np.argmin(np.abs(s.frequencies - 0.379)))


def test_spectrum_two_tone_ratio():
    x = np.sin(2 * np.pi * 0.6 * T40) + 0.5 * np.sin(2 * np.pi * 1.5 * T40)
    s = single_sided_spectrum(x, FS)
    a1 = s.amplitudes[np.argmin(np.abs(s.frequencies - 0.6))]
    a2 = s.amplitudes[np.argmin(np.abs(s.frequencies - 1.5))]
    assert a2 / a1 == pytest.approx(0.5, rel=0.05)


def test_spectrum_edge_cases():
    with pytest.raises(ValueError):
        single_sided_spectrum(np.ones(15), FS)
    z = single_sided_spectrum(np.full(64, 4.0), FS)
    assert not z.amplitudes.any()
    h = single_sided_spectrum(np.sin(2 * np.pi * 2.0 * T40[:600]), FS, taper="hann")
    assert h.amplitudes.max() == 1.0


@given(arrays(float, st.integers(16, 300), elements=finite))
def test_spectrum_rescaling(x):
    s = single_sided_spectrum(x, FS)
    assert np.all(s.amplitudes >= 0) and np.all(s.amplitudes <= 1)
    if s.scale > 0:
        assert s.amplitudes.max() == 1.0


# -- peak detection ------------------------------------------------------------

def test_zscore_backends_agree():
    rng = np.random.default_rng(3)
    for n in (0, 5, 60, 500):
        y = np.abs(rng.standard_normal(n))
        for lag, thr, infl in ((50, 1.0, 0.0), (10, 2.0, 0.5), (3, 0.5, 1.0)):
            np.testing.assert_array_equal(
                np.asarray(zscore_signals(y, lag, thr, infl)), _kernels_py.zscore_signals(y, lag, thr, infl)
            )


def test_zscore_flags_isolated_spike():
    y = np.zeros(200)
    y[120] = 5.0
    y += np.linspace(0, 1e-3, 200)
    assert zscore_peaks(y) == [120]


def test_detect_single_tone():
    s = single_sided_spectrum(np.sin(2 * np.pi * 0.379 * T40), FS, "ibr0.vq")
    d = detect_fo_frequencies([s])
    assert len(d) == 1
    assert abs(d.values[0] - 0.379) <= 0.025
    assert d.channels == (("ibr0.vq",),)


def test_detect_all_zero_spectra():
    s = single_sided_spectrum(np.zeros(256), FS, "a")
    assert detect_fo_frequencies([s, s]).values == ()


def test_detect_keeps_three_largest_of_five():
    freqs = [0.379, 0.614, 0.9, 1.27, 1.8]
    amps = [0.3, 1.0, 0.5, 0.8, 0.15]
    x = sum(a * np.sin(2 * np.pi * f * T40) for f, a in zip(freqs, amps))
    d = detect_fo_frequencies([single_sided_spectrum(x, FS)])
    assert len(d) == 3
    # order follows spectral amplitude, which includes scalloping loss
    found = sorted(d.values)
    np.testing.assert_allclose(found, [0.614, 0.9, 1.27], atol=0.025)
    assert list(d.amplitudes) == sorted(d.amplitudes, reverse=True)


def test_detect_merges_channels_within_one_bin():
    a = single_sided_spectrum(np.sin(2 * np.pi * 1.2 * T40), FS, "a")
    b = single_sided_spectrum(np.sin(2 * np.pi * 1.22 * T40), FS, "b")
    d = detect_fo_frequencies([a, b])
    assert len(d) == 1
    assert set(d.channels[0]) == {"a", "b"}
    assert set(d.per_channel_evidence) == {"a", "b"}


def test_detect_rejects_mismatched_grids():
    a = single_sided_spectrum(np.sin(T40), FS)
    b = single_sided_spectrum(np.sin(T40[:1200]), FS)
    with pytest.raises(ValueError):
        detect_fo_frequencies([a, b])
    with pytest.raises(ValueError):
        detect_fo_frequencies([])


@given(st.lists(st.tuples(st.floats(0.1, 20), st.floats(0.05, 1)), min_size=1, max_size=8),
       st.integers(0, 2**31))
def test_detect_output_contract(tones, seed):
    rng = np.random.default_rng(seed)
    x = sum(a * np.sin(2 * np.pi * f * T40[:1200] + rng.uniform(0, 6)) for f, a in tones)
    x = x + 0.01 * rng.standard_normal(1200)
    d = detect_fo_frequencies([single_sided_spectrum(x, FS, "x")], max_frequencies=3)
    assert isinstance(d, DetectedFrequencies)
    assert len(d) <= 3
    assert len(set(d.bins)) == len(d.bins)
    for i in range(len(d.bins)):
        for j in range(i + 1, len(d.bins)):
            assert abs(d.bins[i] - d.bins[j]) > 1


def test_single_tone_recovery_at_20db():
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(100):
        f = rng.uniform(0.3, 2.0)
        x = np.sin(2 * np.pi * f * T40 + rng.uniform(0, 2 * np.pi))
        # 20 dB: noise RMS one tenth of the tone RMS
        x = x + rng.standard_normal(x.size) * (1 / math.sqrt(2)) * 0.1
        d = detect_fo_frequencies([single_sided_spectrum(x, FS)])
        hits += bool(d.values) and abs(d.values[0] - f) <= 0.025
    assert hits >= 95


def test_zscore_config_is_used():
    rng = np.random.default_rng(0)
    x = np.sin(2 * np.pi * 1.0 * T40) + 0.2 * np.sin(2 * np.pi * 3.0 * T40) + 0.05 * rng.standard_normal(2400)
    s = single_sided_spectrum(x, FS)
    loose = detect_fo_frequencies([s], ZScoreConfig(threshold=1.0))
    strict = detect_fo_frequencies([s], ZScoreConfig(threshold=1e6))
    assert len(loose) >= 2 and len(strict) == 0
