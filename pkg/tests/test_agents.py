import math

import numpy as np
import pytest

from taac.agents import (
    VARIANTS,
    AgentConfig,
    HybridAgent,
    KrepAgent,
    SacAgent,
    TaacAgent,
    beta_star,
    make_agent,
    state_value_taac,
    switch_objective,
)
from taac.agents.core import Temperature, concat, tape_concat
from taac.autodiff import Tape, finite_diff_check
from taac.distributions import SwitchingDecision, entropy_target_discrete, log_prob_squashed, sample_squashed
from taac.envs import make_env
from taac.normalizers import NormalizerState
from taac.replay import ReplayBuffer, Transition

SMALL = AgentConfig(hidden=(16, 16), batch_size=32, lr=1e-3)


def fill(agent, env_name="mcar", frames=300, seed=0):
    """Roll the agent out, storing transitions exactly as the training loop does."""
    env = make_env(env_name)
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(10_000)
    a0 = np.zeros(env.spec.action_dim)
    s, a_prev = env.reset(rng), a0.copy()
    agent.begin_episode()
    for _ in range(frames):
        res = agent.act(s, a_prev, rng)
        st = env.step(res.a)
        buf.push(Transition(a_prev, s, res.b, np.asarray(res.a), st.state, st.reward, done=st.done, last=st.last,
                            behavior_logp=res.logp, a_hat=res.a_hat, k=res.k, explore=res.explore))
        if st.last:
            s, a_prev = env.reset(rng), a0.copy()
            agent.begin_episode()
        else:
            s, a_prev = st.state, np.asarray(res.a)
    return buf


# -- closed-form switching -----------------------------------------------------
def test_beta_star_examples():
    assert beta_star(0.3, 0.3, 1.0).beta1[()] == 0.5
    assert beta_star(0.0, 1.0, 1.0).beta1[()] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)
    assert beta_star(0.0, 1.0, 1e-6).beta1[()] > 1 - 1e-9
    d = beta_star(np.array([0.0, 0.0]), np.array([1e6, -1e6]), 1e-6)
    assert np.all(np.isfinite(d.beta0)) and d.beta1.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        beta_star(0.0, 1.0, 0.0)


def test_beta_star_advantage_clip():
    d = beta_star(2.0, 1.0, 1.0, clip_advantage=True)
    assert d.beta1[()] == 0.5
    assert beta_star(2.0, 1.0, 1.0).beta1[()] < 0.5


def test_beta_star_maximizes_switch_objective():
    rng = np.random.default_rng(0)
    grid = np.linspace(0.001, 0.999, 999)
    for _ in range(200):
        qp, qn = rng.normal(size=2) * 3
        alpha = math.exp(rng.uniform(-3, 2))
        best = switch_objective(beta_star(qp, qn, alpha).beta1, qp, qn, alpha)
        assert np.all(best >= switch_objective(grid, qp, qn, alpha) - 1e-12)


def test_beta_star_shift_invariant():
    rng = np.random.default_rng(1)
    qp, qn = rng.normal(size=50), rng.normal(size=50)
    a = beta_star(qp, qn, 0.7).beta1
    b = beta_star(qp + 12.5, qn + 12.5, 0.7).beta1
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_state_value_mixture():
    assert state_value_taac(2.0, 4.0, SwitchingDecision(np.array(0.5), np.array(0.5))) == 3.0
    assert state_value_taac(2.0, 4.0, SwitchingDecision(np.array(1.0), np.array(0.0))) == 2.0
    d = beta_star(2.0, 4.0, 1.5)
    exact = state_value_taac(2.0, 4.0, d)
    n = 100_000
    b = np.random.default_rng(2).random(n) < d.beta1
    draws = np.where(b, 4.0, 2.0)
    assert abs(draws.mean() - exact) < 3 * draws.std() / math.sqrt(n)


# -- acting ------------------------------------------------------------------
def test_taac_act_semantics():
    env = make_env("mcar")
    agent = TaacAgent(env.spec, SMALL, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    a_prev = np.array([0.1 + 0.2])
    seen = set()
    for i in range(200):
        s = np.array([rng.uniform(-1.2, 0.6), rng.uniform(-0.07, 0.07)])
        res = agent.act(s, a_prev, rng)
        seen.add(res.b)
        if res.b == 0:
            assert res.a.tobytes() == a_prev.tobytes()
        else:
            assert res.a.tobytes() == res.a_hat.tobytes()
        a_prev = res.a
    assert seen == {0, 1}
    s = np.array([-0.5, 0.01])
    r1 = agent.act(s, np.array([0.2]), np.random.default_rng(5), "eval")
    r2 = agent.act(s, np.array([0.2]), np.random.default_rng(6), "eval")
    assert r1.a.tobytes() == r2.a.tobytes() and r1.b == r2.b
    with pytest.raises(ValueError):
        agent.act(s, np.zeros(1), rng, "greedy")


def test_taac_forced_switch_executes_candidate():
    env = make_env("mcar")
    agent = TaacAgent(env.spec, SMALL, np.random.default_rng(0))
    agent.temp_switch.log_alpha[0] = math.log(1e-12)
    rng = np.random.default_rng(3)
    for _ in range(50):
        res = agent.act(np.array([-0.5, 0.0]), np.array([rng.uniform(-1, 1)]), rng)
        if res.beta1 > 1 - 1e-9:
            assert res.b == 1 and np.array_equal(res.a, res.a_hat)
        if res.beta1 < 1e-9:
            assert res.b == 0


def test_nrep_changes_every_third_call():
    env = make_env("mcar")
    agent = SacAgent(env.spec, SMALL.replace(n_repeat=3), np.random.default_rng(0), "SAC_Nrep")
    rng = np.random.default_rng(1)
    acts = [agent.act(np.array([-0.5, 0.0]), np.zeros(1), rng) for _ in range(9)]
    for i, r in enumerate(acts):
        assert r.b == (1 if i % 3 == 0 else 0)
        assert r.k == 3 - i % 3
        assert r.a.tobytes() == acts[i - i % 3].a.tobytes()


def test_ez_without_exploration_is_plain_sac():
    env = make_env("mcar")
    cfg = SMALL.replace(ez_eps_start=0.0, ez_eps_end=0.0)
    ez = SacAgent(env.spec, cfg, np.random.default_rng(0), "SAC_EZ")
    sac = SacAgent(env.spec, cfg, np.random.default_rng(0), "SAC")
    r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
    for _ in range(20):
        s = np.array([-0.5, 0.01])
        a = ez.act(s, np.zeros(1), r1)
        r2.random()  # the epsilon coin drawn by the exploring variant
        b = sac.act(s, np.zeros(1), r2)
        assert not a.explore and a.b == 1
        assert a.a.tobytes() == b.a.tobytes()


def test_ez_exploration_holds_action():
    env = make_env("mcar")
    cfg = SMALL.replace(ez_eps_start=1.0, ez_eps_end=1.0, n_repeat=4)
    agent = SacAgent(env.spec, cfg, np.random.default_rng(0), "SAC_EZ")
    rng = np.random.default_rng(2)
    res = [agent.act(np.array([-0.5, 0.0]), np.zeros(1), rng) for _ in range(200)]
    assert all(r.explore for r in res)
    starts = [i for i, r in enumerate(res) if r.b == 1]
    lengths = np.diff(starts)
    assert lengths.min() >= 1 and lengths.max() <= 4
    for i, r in enumerate(res):
        if r.b == 0:
            assert r.a.tobytes() == res[i - 1].a.tobytes()


def test_krep_duration_is_open_loop():
    env = make_env("mcar")
    agent = KrepAgent(env.spec, SMALL.replace(n_repeat=3), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    res = [agent.act(np.array([rng.uniform(-1, 0), 0.0]), np.zeros(1), rng) for _ in range(300)]
    i, ks = 0, set()
    while i < len(res):
        k = res[i].k
        assert res[i].b == 1 and 1 <= k <= 3
        ks.add(k)
        for j in range(1, k):
            if i + j < len(res):
                assert res[i + j].b == 0 and res[i + j].a.tobytes() == res[i].a.tobytes()
                assert res[i + j].k == k - j
        i += k
    assert len(ks) > 1


def test_hybrid_bit_ignores_candidate():
    env = make_env("mcar")
    agent = HybridAgent(env.spec, SMALL, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    for _ in range(100):
        s, ap = np.array([-0.5, 0.01]), np.array([0.3])
        res = agent.act(s, ap, rng)
        # the bit probability is a function of (s, a_prev) only
        _, logit = agent._heads(concat(agent.scale(s[None]), ap[None]))
        assert res.beta1 == pytest.approx(1 / (1 + math.exp(-logit[0])), rel=1e-12)
        assert res.a.tobytes() == (ap if res.b == 0 else res.a_hat).tobytes()


# -- updates -------------------------------------------------------------------
def test_actor_surrogate_gradient_matches_finite_differences():
    env = make_env("dense-reacher")
    agent = TaacAgent(env.spec, AgentConfig(hidden=(6, 6)), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    s = agent.scale(rng.uniform(-1, 1, size=(5, 2)))
    a_prev = rng.uniform(-1, 1, size=(5, 1))
    noise = rng.standard_normal((5, 1))
    tape = Tape()
    _, _, dec = agent.actor_loss(tape, s, a_prev, noise)
    beta1 = dec.beta1.copy()
    alpha = agent.alpha_dblprime

    def loss(tape):
        if tape is not None:
            return agent.actor_loss(tape, s, a_prev, noise)[0]
        head = agent.actor.head(concat(s, a_prev))
        a_hat, z = sample_squashed(head, noise)
        q = agent.critic.q_min(concat(s, a_hat))[:, 0]
        return float(-np.mean(beta1 * q - alpha * log_prob_squashed(head, z)))

    assert finite_diff_check(loss, agent.actor.net.arrays) < 1e-4


def _actor_grads(agent, s, a_prev, noise):
    tape = Tape()
    loss, _, _ = agent.actor_loss(tape, s, a_prev, noise)
    tape.backward(loss)
    return tape, [tape.grad(p).copy() for p in agent.actor.net.arrays]


def _degenerate_setup():
    env = make_env("dense-reacher")
    agent = TaacAgent(env.spec, AgentConfig(hidden=(6, 6)), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    s = agent.scale(rng.uniform(-1, 1, size=(4, 2)))
    return agent, s, rng.uniform(-1, 1, size=(4, 1)), rng.standard_normal((4, 1))


def test_actor_gradient_with_no_switching_is_entropy_only(monkeypatch):
    agent, s, a_prev, noise = _degenerate_setup()
    monkeypatch.setattr("taac.agents.taac.beta_star",
                        lambda qp, qn, *a: SwitchingDecision(np.ones_like(qn), np.zeros_like(qn)))
    tape, g = _actor_grads(agent, s, a_prev, noise)
    assert all(np.all(tape.grad(p) == 0) for n in agent.critic.nets for p in n.arrays)
    t2 = Tape()
    head = agent.actor.head(concat(s, a_prev), t2)
    _, z = sample_squashed(head, noise, t2)
    t2.backward(t2.mul(t2.mean(log_prob_squashed(head, z, t2)), agent.alpha_dblprime))
    for a, b in zip(g, [t2.grad(p) for p in agent.actor.net.arrays]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_actor_gradient_without_entropy_is_value_chain(monkeypatch):
    agent, s, a_prev, noise = _degenerate_setup()
    monkeypatch.setattr("taac.agents.taac.beta_star",
                        lambda qp, qn, *a: SwitchingDecision(np.zeros_like(qn), np.ones_like(qn)))
    agent.temp_action.log_alpha[0] = -1e4
    assert agent.alpha_dblprime == 0.0
    _, g = _actor_grads(agent, s, a_prev, noise)
    t2 = Tape()
    head = agent.actor.head(concat(s, a_prev), t2)
    a_hat, _ = sample_squashed(head, noise, t2)
    q = agent.critic.q_min_tape(t2, tape_concat(t2, [s, a_hat]))
    t2.backward(t2.mul(t2.mean(q), -1.0))
    for a, b in zip(g, [t2.grad(p) for p in agent.actor.net.arrays]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_temperature_sign_and_fixed_point():
    t = Temperature(0.2, 1e-2)
    t.update(0.2)
    assert t.log_alpha[0] == 0.0
    t.update(0.1)
    assert t.log_alpha[0] > 0.0
    t = Temperature(0.2, 1e-2)
    t.update(0.5)
    assert t.log_alpha[0] < 0.0


def test_switch_temperature_converges_on_synthetic_stream():
    target = entropy_target_discrete(0.05, 2)
    temp = Temperature(target, 1e-4)
    rng = np.random.default_rng(0)
    for _ in range(20_000):
        adv = rng.normal(1.0, 0.1, size=64)
        h = float(np.mean(beta_star(0.0, adv, temp.value).entropy()))
        temp.update(h)
    h = np.mean([np.mean(beta_star(0.0, rng.normal(1.0, 0.1, size=64), temp.value).entropy()) for _ in range(50)])
    assert abs(h - target) < 0.05 * target


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_trains(variant):
    env = make_env("mcar")
    # a short exploration schedule so that some stored steps come from the policy
    agent = make_agent(variant, env.spec, SMALL.replace(ez_decay_frames=100), np.random.default_rng(0))
    buf = fill(agent, frames=400)
    norm = NormalizerState()
    rng = np.random.default_rng(1)
    before = {k: v.copy() for k, v in agent.state_arrays().items()}
    for _ in range(3):
        stats = agent.train_step(buf, norm, rng)
    assert math.isfinite(stats.critic_loss) and math.isfinite(stats.actor_loss)
    assert math.isfinite(stats.entropy_action)
    changed = [k for k, v in agent.state_arrays().items() if not np.array_equal(v, before[k])]
    assert changed
    b0 = buf.field("b") == 0
    assert np.array_equal(buf.field("a")[b0], buf.field("a_prev")[b0])


def test_unknown_variant():
    with pytest.raises(ValueError):
        make_agent("PPO", make_env("mcar").spec, SMALL, np.random.default_rng(0))


def test_krep_single_head_is_sac():
    env = make_env("mcar")
    cfg = SMALL.replace(n_repeat=1)
    krep = KrepAgent(env.spec, cfg, np.random.default_rng(0))
    sac = SacAgent(env.spec, cfg, np.random.default_rng(0))
    for k, v in sac.state_arrays().items():
        assert np.array_equal(krep.state_arrays()[k], v)
    s = krep.scale(np.random.default_rng(1).uniform(-1, 0, size=(8, 2)))
    np.testing.assert_array_equal(krep.soft_value(s, np.random.default_rng(2)),
                                  sac.soft_value(s, np.random.default_rng(2)))
    assert all(r.k == 1 and r.b == 1 for r in (krep.act(np.array([-0.5, 0.0]), np.zeros(1),
                                                         np.random.default_rng(3)) for _ in range(5)))
    buf = fill(sac, frames=300)
    krep.train_step(buf, NormalizerState(), np.random.default_rng(4))
    sac.train_step(buf, NormalizerState(), np.random.default_rng(4))
    for k, v in sac.state_arrays().items():
        np.testing.assert_allclose(krep.state_arrays()[k], v, rtol=0, atol=1e-12)


def test_hybrid_variants_share_shapes():
    env = make_env("mcar")
    a = HybridAgent(env.spec, SMALL, np.random.default_rng(0), "SAC_Hybrid")
    b = HybridAgent(env.spec, SMALL, np.random.default_rng(0), "SAC_Hybrid_CompThr")
    sa, sb = a.state_arrays(), b.state_arrays()
    assert sa.keys() == sb.keys()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert a.critic.heads == 2


def test_training_is_deterministic():
    env = make_env("mcar")
    finals = []
    for _ in range(2):
        agent = TaacAgent(env.spec, SMALL, np.random.default_rng(0))
        buf = fill(agent, frames=300, seed=3)
        rng = np.random.default_rng(4)
        stats = [agent.train_step(buf, NormalizerState(), rng) for _ in range(3)]
        finals.append((agent.state_arrays(), [s.critic_loss for s in stats]))
    (p1, l1), (p2, l2) = finals
    assert l1 == l2
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
