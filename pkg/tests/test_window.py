import numpy as np
import pytest

from folocate.window import MeasurementWindow, WindowError


def make(n=10, dt=0.5, t0=2.0):
    s = np.column_stack([np.arange(n, dtype=float), -np.arange(n, dtype=float)])
    return MeasurementWindow(t0, dt, s, ("a", "b"))


def test_basic_properties():
    w = make()
    assert w.n_samples == 10 and w.fs == 2.0
    np.testing.assert_array_equal(w.times, 2.0 + 0.5 * np.arange(10))
    assert w.has("a") and not w.has("c")
    np.testing.assert_array_equal(w.columns(["b", "a"])[:, 0], w.column("b"))
    assert w.columns([]).shape == (10, 0)


@pytest.mark.parametrize("kwargs,match", [
    (dict(samples=np.zeros(5)), "2-D"),
    (dict(samples=np.zeros((1, 2))), "at least 2"),
    (dict(channel_names=("a",)), "names"),
    (dict(channel_names=("a", "a")), "unique"),
    (dict(dt=0.0), "dt"),
])
def test_validation(kwargs, match):
    args = dict(t0=0.0, dt=0.1, samples=np.zeros((4, 2)), channel_names=("a", "b"))
    args.update(kwargs)
    with pytest.raises(WindowError, match=match):
        MeasurementWindow(**args)


def test_missing_column_named():
    with pytest.raises(WindowError, match="'zz'"):
        make().column("zz")


def test_select():
    w = make()
    s = w.select(1.0, 2.0)
    assert s.t0 == 3.0 and s.n_samples == 4
    np.testing.assert_array_equal(s.column("a"), [2, 3, 4, 5])
    assert w.select(4.0).n_samples == 2
    with pytest.raises(WindowError, match="outside"):
        w.select(5.0)
    with pytest.raises(WindowError, match="exceeds"):
        w.select(1.0, 10.0)


def test_with_channels_and_samples():
    w = make()
    w2 = w.with_channels({"c": np.ones(10)})
    assert w2.channel_names == ("a", "b", "c")
    np.testing.assert_array_equal(w2.column("a"), w.column("a"))
    w3 = w.with_samples(np.zeros((10, 2)))
    assert w3.channel_names == w.channel_names and w3.t0 == w.t0 and not w3.samples.any()
