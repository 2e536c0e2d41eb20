"""Twin critics, target networks and TD-target constructions.

Target functions work on plain arrays laid out per window: ``rewards[:, t]``
is the reward of window step ``t`` and column ``j`` of the leaf/match arrays
refers to the state reached after ``j + 1`` steps.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, NonFiniteError, Tape, init_mlp, mlp_forward

MISMATCH, HORIZON, EPISODE_END = "action_mismatch", "horizon", "episode_end"


@dataclass
class TdTarget:
    value: np.ndarray     # (B,)
    n: np.ndarray         # bootstrap step, in [1, N]
    cut_reason: np.ndarray  # (B,) of strings

    def __post_init__(self):
        if np.any(self.n < 1):
            raise AssertionError("bootstrap step must be >= 1")


class TwinCritic:
    """Two Q networks plus Polyak-averaged copies.

    Each network maps ``in_dim`` inputs to ``heads`` outputs (one for plain
    Q functions, several for multi-head critics).
    """

    def __init__(self, in_dim, hidden, rng, heads=1, lr=1e-4, tau=5e-3, target_interval=1):
        sizes = [in_dim, *hidden, heads]
        self.nets = [init_mlp(sizes, rng), init_mlp(sizes, rng)]
        self.targets = [n.copy() for n in self.nets]
        self.opt = Adam([a for n in self.nets for a in n.arrays], lr=lr)
        self.tau = tau
        self.target_interval = target_interval
        self.updates = 0
        self.heads = heads

    def values(self, x, target=False):
        """Both twins' outputs, each of shape (B, heads)."""
        nets = self.targets if target else self.nets
        return [mlp_forward(n, x) for n in nets]

    def q_min(self, x, target=False):
        q1, q2 = self.values(x, target)
        return np.minimum(q1, q2)

    def q_min_tape(self, tape: Tape, x, trainable=False):
        """Twin minimum on a tape. Ties take the first twin's gradient path."""
        q1 = mlp_forward(self.nets[0], x, tape, trainable)
        q2 = mlp_forward(self.nets[1], x, tape, trainable)
        return tape.select(q1.value <= q2.value, q1, q2)

    def polyak(self, tau=None):
        tau = self.tau if tau is None else tau
        for net, tgt in zip(self.nets, self.targets):
            for p, pt in zip(net.arrays, tgt.arrays):
                pt += tau * (p - pt)

    def state_arrays(self):
        out = {}
        for i, (n, t) in enumerate(zip(self.nets, self.targets)):
            for j, a in enumerate(n.arrays):
                out[f"q{i}.{j}"] = a
            for j, a in enumerate(t.arrays):
                out[f"qt{i}.{j}"] = a
        return out


def q_min(critic: TwinCritic, x, target=False):
    return critic.q_min(x, target)


def critic_loss(critic: TwinCritic, tape: Tape, x, targets, head=None):
    """Mean squared error against fixed targets, summed over both twins (a Var on ``tape``).

    ``head`` selects one output column per row for multi-head critics.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    loss = None
    for net in critic.nets:
        q = mlp_forward(net, x, tape)
        if head is not None:
            onehot = np.zeros(q.value.shape)
            onehot[np.arange(q.value.shape[0]), head] = 1.0
            q = tape.sum(tape.mul(q, onehot), axis=1, keepdims=True)
        term = tape.mean(tape.square(tape.add(q, -targets)))
        loss = term if loss is None else tape.add(loss, term)
    return loss


def critic_update(critic: TwinCritic, x, targets, head=None):
    """One Adam step on :func:`critic_loss`, then the target schedule.

    Returns the loss; a non-finite loss skips the step with a warning.
    """
    tape = Tape()
    loss = critic_loss(critic, tape, x, targets, head)
    value = float(loss.value)
    if not np.isfinite(value):
        warnings.warn("non-finite critic loss; update skipped", RuntimeWarning, stacklevel=2)
        return value
    tape.backward(loss)
    try:
        critic.opt.step([tape.grad(a) for a in critic.opt.params])
    except NonFiniteError:
        warnings.warn("non-finite critic gradient; update skipped", RuntimeWarning, stacklevel=2)
        return value
    critic.updates += 1
    if critic.updates % critic.target_interval == 0:
        critic.polyak()
    return value


# ---------------------------------------------------------------------------
# TD targets


def _discounted_prefix(rewards, gamma):
    """``out[:, n] = sum_{t<n} gamma^t r_t`` for n = 0..N."""
    B, N = rewards.shape
    disc = gamma ** np.arange(N)
    out = np.zeros((B, N + 1))
    out[:, 1:] = np.cumsum(rewards * disc, axis=1)
    return out


def bellman_target(r, done, v_next, gamma):
    """``r + gamma * (1 - done) * v_next``."""
    r = np.asarray(r, dtype=np.float64)
    return r + gamma * (1.0 - np.asarray(done, dtype=np.float64)) * np.asarray(v_next, dtype=np.float64)


def nstep_target(rewards, lengths, terminal, v_boot, gamma, limit=None):
    """Discounted sum over the first ``n`` rewards plus ``gamma^n`` times the bootstrap.

    ``n`` is the window length, capped by ``limit`` (per row) when given.
    ``v_boot[:, j]`` is the bootstrap value after ``j + 1`` steps. A
    terminal step inside the sum drops the bootstrap.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    B, N = rewards.shape
    lengths = np.asarray(lengths)
    n = lengths.copy() if limit is None else np.minimum(lengths, limit)
    n = np.maximum(n, 1)
    rows = np.arange(B)
    stop_terminal = np.asarray(terminal, bool) & (n == lengths)
    prefix = _discounted_prefix(rewards, gamma)
    boot = np.where(stop_terminal, 0.0, np.asarray(v_boot)[rows, n - 1])
    value = prefix[rows, n] + gamma ** n * boot
    reason = np.where(n < lengths, HORIZON, np.where(n == N, HORIZON, EPISODE_END))
    reason = np.where(stop_terminal, EPISODE_END, reason)
    return TdTarget(value, n, reason)


def nstep_uncorrected_target(rewards, lengths, terminal, v_boot, gamma):
    return nstep_target(rewards, lengths, terminal, v_boot, gamma)


def krep_target(rewards, lengths, terminal, v_boot, gamma, repeats):
    """Bootstrap after the ``repeats`` steps of an uninterrupted repetition segment."""
    return nstep_target(rewards, lengths, terminal, v_boot, gamma, limit=np.asarray(repeats))


def compare_through(rewards, matched, leaf_mismatch, leaf_expected, lengths, terminal, gamma):
    """Sampled compare-through target.

    Rewards are accumulated while the resampled action at the next state
    matches the stored one. ``matched[:, j]`` says whether that holds after
    ``j + 1`` steps. At the first mismatch the value ``leaf_mismatch`` is
    bootstrapped; at the horizon or the end of the stored window the value
    ``leaf_expected`` is used instead, and a terminal state bootstraps zero.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    B, N = rewards.shape
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > N):
        raise AssertionError("window lengths must lie in [1, N]")
    matched = np.asarray(matched, bool)
    cols = np.arange(N)
    # a mismatch only counts before the window runs out
    miss = (~matched) & (cols[None, :] < (lengths - 1)[:, None])
    first_miss = np.where(miss.any(axis=1), miss.argmax(axis=1) + 1, N + 1)
    n = np.minimum(first_miss, lengths)
    rows = np.arange(B)
    by_mismatch = first_miss <= lengths
    at_end = ~by_mismatch
    hit_terminal = at_end & np.asarray(terminal, bool)
    leaf = np.where(by_mismatch, np.asarray(leaf_mismatch)[rows, n - 1], np.asarray(leaf_expected)[rows, n - 1])
    leaf = np.where(hit_terminal, 0.0, leaf)
    prefix = _discounted_prefix(rewards, gamma)
    value = prefix[rows, n] + gamma ** n * leaf
    reason = np.where(by_mismatch, MISMATCH, np.where((n == N) & ~hit_terminal, HORIZON, EPISODE_END))
    return TdTarget(value, n, reason)


def compare_through_delta_form(rewards, matched, q0, q_next, lengths, terminal, gamma):
    """The same estimate written as ``q0 + sum_n gamma^n (prod of matches) * TD error``.

    ``q_next[:, j]`` is the bootstrap value after ``j + 1`` steps (the leaf
    that would be used if the estimate stopped there). Used to cross-check
    :func:`compare_through` when both leaves coincide.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    B, N = rewards.shape
    total = np.asarray(q0, dtype=np.float64).copy()
    alive = np.ones(B, bool)
    prev = total.copy()
    for t in range(N):
        live = alive & (t < lengths)
        nxt = q_next[:, t]
        stop_terminal = live & (t == lengths - 1) & np.asarray(terminal, bool)
        nxt = np.where(stop_terminal, 0.0, nxt)
        td = rewards[:, t] + gamma * nxt - prev
        total = total + np.where(live, gamma ** t * td, 0.0)
        prev = nxt
        alive = live & np.asarray(matched[:, t], bool)
    return total


def retrace_target(rewards, q_taken, v_next, traces, lengths, terminal, gamma):
    """Retrace: ``Q(s0,a0) + sum_t gamma^t (prod_{1<=k<=t} c_k) delta_t``.

    ``q_taken[:, t]`` is the target Q of the stored action at step ``t``,
    ``v_next[:, t]`` the expected target value at the following state and
    ``traces[:, t]`` the coefficient ``c_t`` (column 0 is ignored).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    traces = np.asarray(traces, dtype=np.float64)
    B, N = rewards.shape
    lengths = np.asarray(lengths)
    cols = np.arange(N)
    live = cols[None, :] < lengths[:, None]
    if not np.all(np.isfinite(traces[:, 1:][live[:, 1:]])):
        raise ValueError("retrace needs finite behaviour log-probabilities")
    last = cols[None, :] == (lengths - 1)[:, None]
    v = np.where(last & np.asarray(terminal, bool)[:, None], 0.0, v_next)
    delta = np.where(live, rewards + gamma * v - q_taken, 0.0)
    c = np.where(live, traces, 0.0)
    c[:, 0] = 1.0
    coef = np.cumprod(c, axis=1) * gamma ** cols
    value = q_taken[:, 0] + np.sum(coef * delta, axis=1)
    return TdTarget(value, np.maximum(lengths, 1), np.where(lengths == N, HORIZON, EPISODE_END))


def retrace_traces(logp_pi, logp_mu, lam=1.0):
    """``lam * min(1, pi / mu)`` from log-probabilities."""
    return lam * np.exp(np.minimum(0.0, np.asarray(logp_pi) - np.asarray(logp_mu)))
