import math

import numpy as np
import pytest

from taac.normalizers import NormalizerState, normalize_value, update_stats


def impulse_weights(L, xi):
    """Weight of the reward seen at step l in m1 after L updates, read off one-hot streams."""
    w = np.zeros(L)
    for l in range(1, L + 1):
        st = NormalizerState(xi=xi)
        for j in range(1, L + 1):
            st.update(1.0 if j == l else 0.0)
        w[l - 1] = st.m1
    return w


def test_recurrence_by_hand():
    st = update_stats(NormalizerState(xi=8), 1.0)
    assert (st.m1, st.m2, st.count) == (1.0, 1.0, 1)
    update_stats(st, 0.0)
    assert st.m1 == pytest.approx(1 / 9) and st.m2 == pytest.approx(1 / 9) and st.count == 2


def test_worked_two_step_example():
    st = NormalizerState(xi=8, clip=5)
    st.update_many([1.0, 0.0])
    assert normalize_value(st, 1.0) == pytest.approx(2 * math.sqrt(2), abs=1e-9)


def test_fixed_point_and_clip():
    st = NormalizerState()
    st.update_many([3.0] * 200)
    assert st.m1 == pytest.approx(3.0) and st.m2 == pytest.approx(9.0)
    st = NormalizerState(clip=5)
    st.update_many([0.0, 1.0, 2.0])
    assert normalize_value(st, st.m1) == 0.0
    assert normalize_value(st, 1e9) == 5.0 and normalize_value(st, -1e9) == -5.0


def test_output_bounded_and_variance_nonnegative():
    rng = np.random.default_rng(0)
    st = NormalizerState(clip=1.0)
    for r in rng.standard_cauchy(5000):
        st.update(r)
        assert st.m2 >= st.m1 ** 2 - 1e-9
    out = st.normalize(rng.standard_cauchy(1000) * 100)
    assert np.all(np.abs(out) <= 1.0)


def test_constant_stream_uses_variance_floor():
    st = NormalizerState()
    st.update_many([2.0] * 10)
    assert np.isfinite(st.normalize(2.5)) and st.normalize(2.5) == 5.0


def test_errors_and_freeze():
    st = NormalizerState()
    with pytest.raises(RuntimeError):
        st.normalize(1.0)
    with pytest.raises(ValueError):
        st.update(float("nan"))
    assert st.count == 0
    st.update(1.0)
    st.frozen = True
    st.update(5.0)
    assert st.count == 1 and st.m1 == 1.0
    with pytest.raises(ValueError):
        NormalizerState(xi=0)


def test_impulse_profile_follows_power_law():
    L, xi = 1000, 8
    w = impulse_weights(L, xi)
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    l = np.arange(1, L + 1)
    ref = (l / L) ** (xi - 1)
    # compare shapes: both profiles normalised by their peak
    dev = np.abs(w / w.max() - ref / ref.max())
    assert dev.max() < 0.05
    # pointwise agreement of the normalised weights in the bulk of the profile
    wn, rn = w / w.sum(), ref / ref.sum()
    bulk = l >= 300
    assert np.all(np.abs(wn[bulk] / rn[bulk] - 1.0) < 0.05)


def test_roundtrip_dict():
    st = NormalizerState(xi=4, clip=1.0)
    st.update_many([0.5, -0.2, 1.1])
    back = NormalizerState.from_dict(st.to_dict())
    assert back == st
