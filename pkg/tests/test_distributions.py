import math

import numpy as np
import pytest

from taac.autodiff import finite_diff_check
from taac.distributions import (
    SquashedGaussianHead,
    SwitchingDecision,
    approx_mode,
    atanh_clipped,
    bernoulli_from_logit,
    entropy_target_continuous,
    entropy_target_discrete,
    head_from_output,
    log_prob_squashed,
    sample_squashed,
    sample_zeta_duration,
    sigmoid,
    zeta_pmf,
)


def head(mu, log_std, scale=1.0, offset=0.0):
    return SquashedGaussianHead(np.atleast_2d(mu).astype(float), np.atleast_2d(log_std).astype(float), scale, offset)


def test_sample_examples():
    h = head([0.3], [0.1])
    a, _ = sample_squashed(h, np.zeros((1, 1)))
    assert a[0, 0] == approx_mode(h)[0, 0]
    a, _ = sample_squashed(head([0.0], [0.0]), np.ones((1, 1)))
    assert a[0, 0] == pytest.approx(0.76159, abs=1e-5)
    rng = np.random.default_rng(0)
    h = head(rng.normal(size=(1000, 1)) * 5, np.full((1000, 1), 2.0), scale=2.0, offset=1.0)
    a, _ = sample_squashed(h, rng.normal(size=(1000, 1)) * 10)
    assert np.all(np.abs(a - 1.0) < 2.0)


def test_noise_dimension_checked():
    with pytest.raises(ValueError):
        sample_squashed(head([0.0, 0.0], [0.0, 0.0]), np.zeros((1, 3)))


def test_log_prob_examples():
    assert log_prob_squashed(head([0.0], [0.0]), np.zeros((1, 1)))[0] == pytest.approx(-0.91894, abs=1e-5)
    z = np.array([[0.4]])
    lp1 = log_prob_squashed(head([0.1], [-0.3]), z)[0]
    lp2 = log_prob_squashed(head([0.1], [-0.3], scale=2.0), z)[0]
    assert lp2 - lp1 == pytest.approx(-math.log(2.0), abs=1e-12)
    with pytest.raises(ValueError):
        head([0.0], [0.0], scale=0.0)


@pytest.mark.parametrize("mu,log_std,scale,offset", [(0.0, 0.0, 1.0, 0.0), (0.8, -0.7, 1.0, 0.0),
                                                     (-1.5, 0.5, 2.0, 0.5)])
def test_log_prob_density_integrates_to_one(mu, log_std, scale, offset):
    # trapezoid rule over a fine grid of the action interval
    a = np.linspace(offset - scale, offset + scale, 2_000_001)[1:-1]
    z = atanh_clipped(a, scale, offset)
    h = head(np.full((a.size, 1), mu), np.full((a.size, 1), log_std), scale, offset)
    dens = np.exp(log_prob_squashed(h, z[:, None]))
    integral = np.sum((dens[1:] + dens[:-1]) * np.diff(a)) / 2.0
    assert abs(integral - 1.0) < 1e-3


def test_log_prob_matches_direct_formula():
    rng = np.random.default_rng(2)
    mu, ls = rng.normal(size=(5, 2)), rng.uniform(-1, 0.5, size=(5, 2))
    z = rng.normal(size=(5, 2))
    direct = np.sum(-0.5 * ((z - mu) / np.exp(ls)) ** 2 - ls - 0.5 * math.log(2 * math.pi)
                    - np.log(1 - np.tanh(z) ** 2), axis=1)
    np.testing.assert_allclose(log_prob_squashed(head(mu, ls), z), direct, rtol=1e-12)


def test_log_prob_finite_at_saturation():
    lp = log_prob_squashed(head([0.0], [0.0]), np.array([[40.0]]))
    assert np.isfinite(lp).all()


def test_tape_log_prob_and_sample_gradients():
    rng = np.random.default_rng(3)
    out = rng.normal(size=(4, 4))
    noise = rng.normal(size=(4, 2))
    weights = rng.normal(size=(4, 2))

    def loss(tape):
        if tape is None:
            h = head_from_output(out, 2)
            a, z = sample_squashed(h, noise)
            return float(np.sum(log_prob_squashed(h, z)) + np.sum(a * weights))
        o = tape.param(out)
        h = head_from_output(o, 2, tape)
        a, z = sample_squashed(h, noise, tape)
        return tape.add(tape.sum(log_prob_squashed(h, z, tape)), tape.sum(tape.mul(a, weights)))

    assert finite_diff_check(loss, [out]) < 1e-5


def test_head_clamps_log_std():
    h = head_from_output(np.array([[0.0, 50.0], [0.0, -50.0]]), 1)
    assert h.log_std[:, 0].tolist() == [2.0, -20.0]


def test_approx_mode_examples():
    assert approx_mode(head([0.0], [0.0], 2.0, 0.5))[0, 0] == 0.5
    assert approx_mode(head([20.0], [0.0], 1.5, 0.5))[0, 0] == pytest.approx(2.0, abs=1e-8)
    np.testing.assert_allclose(approx_mode(head([0.0, 20.0], [0.0, 0.0])), [[0.0, 1.0]], atol=1e-8)


def test_atanh_clipped_inverts_squash():
    z = np.array([[-2.0, 0.3, 1.7]])
    a = 2.0 * np.tanh(z) + 0.5
    np.testing.assert_allclose(atanh_clipped(a, 2.0, 0.5), z, rtol=1e-10)
    assert np.isfinite(atanh_clipped(np.array([1.0, -1.0]))).all()


def test_switching_decision_invariant():
    with pytest.raises(AssertionError):
        SwitchingDecision(np.array([0.3]), np.array([0.6]))
    d = bernoulli_from_logit(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(d.beta1, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(d.entropy()))
    assert d.entropy()[1] == pytest.approx(math.log(2))


def test_sigmoid_stable():
    x = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s[1:4], 1 / (1 + np.exp(-x[1:4])), rtol=1e-15)


def test_entropy_target_continuous():
    assert entropy_target_continuous(0.184, 1, -1.0, 1.0) == pytest.approx(-1.0, abs=0.01)
    assert entropy_target_continuous(1.0, 1, 0.0, 1.0) == 0.0
    assert entropy_target_continuous(0.1, 2, -1.0, 1.0) == pytest.approx(-3.21888, abs=1e-5)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            entropy_target_continuous(bad, 1)


def test_entropy_target_discrete():
    assert entropy_target_discrete(0.5, 2) == pytest.approx(math.log(2))
    assert entropy_target_discrete(0.05, 2) == pytest.approx(0.19852, abs=1e-5)
    assert entropy_target_discrete(1e-12, 2) < 1e-9
    for k in (2, 3, 5):
        for d in (0.01, 0.3, 0.9):
            assert 0 < entropy_target_discrete(d, k) <= math.log(k) + 1e-12
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            entropy_target_discrete(bad, 2)


def test_zeta_pmf_and_sampler():
    p = zeta_pmf(2.0, 5)
    assert p[0] == pytest.approx(0.68324, abs=1e-5)
    assert p[4] == pytest.approx(0.02733, abs=1e-5)
    rng = np.random.default_rng(0)
    assert all(sample_zeta_duration(2.0, 1, rng) == 1 for _ in range(20))
    n = 1_000_000
    draws = sample_zeta_duration(2.0, 5, np.random.default_rng(1), size=n)
    assert draws.min() >= 1 and draws.max() <= 5
    freq = np.bincount(draws, minlength=6)[1:] / n
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) < 3 * sigma)
    a = sample_zeta_duration(2.0, 5, np.random.default_rng(9), size=50)
    b = sample_zeta_duration(2.0, 5, np.random.default_rng(9), size=50)
    assert np.array_equal(a, b)
