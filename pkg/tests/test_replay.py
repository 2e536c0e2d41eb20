import warnings

import numpy as np
import pytest

from taac.replay import ReplayBuffer, ShardedReplay, Transition


def push_episode(buf, length, start=0.0, done=True, shard=None, dim=1):
    s = np.full(dim, start)
    a_prev = np.zeros(dim)
    for t in range(length):
        s_next = s + 1.0
        a = np.full(dim, float(t))
        tr = Transition(a_prev, s.copy(), 1, a, s_next.copy(), float(t), done=done and t == length - 1,
                        last=t == length - 1, behavior_logp=-0.5)
        if shard is None:
            buf.push(tr)
        else:
            buf.push(tr, shard)
        s, a_prev = s_next, a


def reference_windows(episodes, starts, horizon):
    """Window lengths from explicit episode lists (independent of the ring arithmetic)."""
    flat = [(e, t, len(ep)) for e, ep in enumerate(episodes) for t in range(len(ep))]
    return np.array([min(horizon, flat[i][2] - flat[i][1]) for i in starts])


def test_ring_eviction():
    buf = ReplayBuffer(2)
    for i in range(3):
        buf.push(Transition(np.zeros(1), np.array([float(i)]), 1, np.ones(1), np.array([i + 1.0]), 0.0))
    assert len(buf) == 2
    assert sorted(buf.field("s")[:, 0].tolist()) == [1.0, 2.0]


def test_repeat_invariant_enforced_bit_exactly():
    buf = ReplayBuffer(10)
    a = np.array([0.1 + 0.2])
    buf.push(Transition(a.copy(), np.zeros(1), 0, a.copy(), np.ones(1), 0.0))
    with pytest.raises(ValueError):
        buf.push(Transition(a.copy(), np.zeros(1), 0, a + 1e-16 * 4, np.ones(1), 0.0))
    with pytest.raises(ValueError):
        buf.push(Transition(a.copy(), np.zeros(1), 2, a.copy(), np.ones(1), 0.0))
    stored = buf.field("a")[0]
    assert stored.tobytes() == buf.field("a_prev")[0].tobytes()


def test_window_lengths_match_episode_oracle():
    buf = ReplayBuffer(100)
    lengths = [3, 1, 5, 2]
    for n in lengths:
        push_episode(buf, n)
    starts = np.arange(sum(lengths))
    wb = buf.gather_windows(starts, 4)
    assert np.array_equal(wb.length, reference_windows([range(n) for n in lengths], starts, 4))
    assert wb.length.min() >= 1
    # first step of every window is always present
    assert wb.mask[:, 0].all()


def test_one_step_windows_and_truncation():
    buf = ReplayBuffer(100)
    push_episode(buf, 3)
    wb = buf.sample_windows(50, 1, np.random.default_rng(0))
    assert wb.horizon == 1 and np.all(wb.length == 1)
    wb = buf.sample_windows(50, 5, np.random.default_rng(0))
    assert wb.length.max() <= 3
    starts = np.array([0])
    wb = buf.gather_windows(starts, 5)
    assert wb.length[0] == 3 and wb.terminal[0]


def test_time_limit_end_is_not_terminal():
    buf = ReplayBuffer(100)
    push_episode(buf, 3, done=False)
    wb = buf.gather_windows(np.array([1]), 5)
    assert wb.length[0] == 2 and not wb.terminal[0]


def test_windows_do_not_cross_the_write_head():
    buf = ReplayBuffer(5)
    push_episode(buf, 7, done=False)
    # newest transition is the last step: its window has length 1
    newest = (buf.head - 1) % buf.capacity
    assert buf.gather_windows(np.array([newest]), 3).length[0] == 1


def test_state_chain_consecutive():
    buf = ReplayBuffer(1000)
    for i in range(20):
        push_episode(buf, 1 + i % 7, start=100.0 * i)
    wb = buf.sample_windows(500, 4, np.random.default_rng(1))
    for t in range(3):
        both = wb.mask[:, t + 1]
        assert np.array_equal(wb.fields["s_next"][both, t], wb.fields["s"][both, t + 1])


def test_sampling_is_seeded_and_uniform():
    buf = ReplayBuffer(100)
    push_episode(buf, 100, done=False)
    a = buf.sample_windows(64, 3, np.random.default_rng(5)).index
    b = buf.sample_windows(64, 3, np.random.default_rng(5)).index
    assert np.array_equal(a, b)
    n = 100_000
    idx = buf._sample_starts(n, np.random.default_rng(2))
    counts = np.bincount(idx, minlength=100)
    p = 1 / 100
    sigma = np.sqrt(n * p * (1 - p))
    # a 3 sigma band per slot; allow the handful of excursions expected among 100 slots
    assert np.sum(np.abs(counts - n * p) > 3 * sigma) <= 2


def test_empty_buffer_rejected():
    with pytest.raises(RuntimeError):
        ReplayBuffer(10).sample_windows(1, 1, np.random.default_rng(0))


def test_nonconsecutive_states():
    buf = ReplayBuffer(2000)
    for i in range(4):
        push_episode(buf, 250, start=1000.0 * i)
    s, a_prev, slots = buf.sample_states_nonconsecutive(256, np.random.default_rng(0))
    assert len(slots) == 256 and len(set(slots.tolist())) == 256
    ep = buf.field("episode")
    chosen = set(slots.tolist())
    for c in chosen:
        assert not (c + 1 in chosen and ep[c + 1] == ep[c])
    s2, _, slots2 = buf.sample_states_nonconsecutive(256, np.random.default_rng(0))
    assert np.array_equal(slots, slots2)


def test_nonconsecutive_degenerate_warns():
    buf = ReplayBuffer(10)
    push_episode(buf, 2, done=False)
    with pytest.warns(RuntimeWarning):
        s, _, slots = buf.sample_states_nonconsecutive(2, np.random.default_rng(0))
    assert len(slots) == 1


def test_adjacent_slots_of_different_episodes_allowed():
    buf = ReplayBuffer(10)
    push_episode(buf, 1)
    push_episode(buf, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, _, slots = buf.sample_states_nonconsecutive(2, np.random.default_rng(0))
    assert sorted(slots.tolist()) == [0, 1]


def test_state_roundtrip():
    buf = ReplayBuffer(10)
    push_episode(buf, 4)
    meta, arrays = buf.state_dict()
    back = ReplayBuffer.from_state(meta, arrays)
    assert np.array_equal(back.gather_windows(np.arange(4), 3).length, buf.gather_windows(np.arange(4), 3).length)


def test_sharded_replay_keeps_workers_apart():
    rep = ShardedReplay(2, capacity=50)
    # interleaved pushes from two workers would corrupt a single ring
    for t in range(10):
        for w in range(2):
            s = np.array([100.0 * w + t])
            rep.push(Transition(np.zeros(1), s, 1, np.ones(1), s + 1.0, 0.0, last=t == 9), w)
    wb = rep.sample_windows(200, 3, np.random.default_rng(0))
    for t in range(2):
        both = wb.mask[:, t + 1]
        assert np.array_equal(wb.fields["s_next"][both, t], wb.fields["s"][both, t + 1])
    s, _, slots = rep.sample_states_nonconsecutive(8, np.random.default_rng(1))
    assert np.array_equal(rep.fetch(slots, "s"), s)
    eligible = rep.field("s")[:, 0] >= 100.0
    wb = rep.sample_windows(20, 1, np.random.default_rng(2), eligible)
    assert np.all(wb.fields["s"][:, 0, 0] >= 100.0)
