"""Exact tabular checks for the compare-through operator.

The operator is evaluated in expectation over behaviour trajectories that
follow the tabular dynamics, with behaviour actions drawn at the visited
states. Each trajectory node either stops (the target policy's resampled
action differs from the behaviour action, bootstrap from Q) or expands
(identical action, collect the reward and recurse).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .critics import compare_through
from .envs import TabularMDP, make_random_tabular

MAX_STATES, MAX_ACTIONS, MAX_DEPTH = 10, 4, 5


def _check_policy(pi, mdp):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.S, mdp.A):
        raise ValueError(f"policy must have shape {(mdp.S, mdp.A)}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise ValueError("policy rows must be probability vectors")
    return pi


def random_policy(S, A, rng):
    return rng.dirichlet(np.ones(A), size=S)


def exact_q_pi(mdp: TabularMDP, pi):
    """Solve ``Q = R_bar + gamma * P Pi Q`` densely."""
    pi = _check_policy(pi, mdp)
    if not 0.0 <= mdp.gamma < 1.0:
        raise ValueError("gamma must be < 1 for a unique solution")
    S, A = mdp.S, mdp.A
    M = np.einsum("sat,tb->satb", mdp.P, pi).reshape(S * A, S * A)
    q = np.linalg.solve(np.eye(S * A) - mdp.gamma * M, mdp.r_bar.reshape(-1))
    return q.reshape(S, A)


def bellman_operator(mdp, pi, Q):
    v = np.sum(pi * Q, axis=1)
    return mdp.r_bar + mdp.gamma * mdp.P @ v


def _behaviour_tables(mu, N):
    if isinstance(mu, (list, tuple)):
        if len(mu) < N - 1:
            raise ValueError("need one behaviour table per depth")
        return [np.asarray(m, dtype=np.float64) for m in mu]
    return [np.asarray(mu, dtype=np.float64)] * max(N, 1)


def apply_compare_through_expectation(mdp: TabularMDP, pi, mu, Q, N):
    """Exact expected compare-through backup of ``Q`` with horizon ``N``.

    ``mu`` is an (S, A) behaviour table or a list of tables, one per depth
    ``1..N-1``. Refuses problems larger than the enumeration limits.
    """
    pi = _check_policy(pi, mdp)
    if mdp.S > MAX_STATES or mdp.A > MAX_ACTIONS or not 1 <= N <= MAX_DEPTH:
        raise ValueError(
            f"exact enumeration limited to S <= {MAX_STATES}, A <= {MAX_ACTIONS}, 1 <= N <= {MAX_DEPTH}")
    Q = np.asarray(Q, dtype=np.float64)
    mus = _behaviour_tables(mu, N)
    gamma = mdp.gamma
    R_exp = mdp.r_bar  # E_P[r | s, a]
    stop = np.sum(pi * Q, axis=1, keepdims=True) - pi * Q  # sum over a~ != a of pi Q, per (s, a_n)
    # w[s] = expected node value at state s reached at depth n, before the behaviour action is drawn
    w = np.sum(pi * Q, axis=1)  # depth N
    for n in range(N - 1, 0, -1):
        expand = R_exp + gamma * mdp.P @ w  # (S, A_n)
        node = stop + pi * expand  # Gamma_n(s, a_n)
        w = np.sum(mus[n - 1] * node, axis=1)
    return R_exp + gamma * mdp.P @ w


@dataclass
class OperatorTrace:
    error_to_fixed_point: list = field(default_factory=list)
    step_size: list = field(default_factory=list)
    initial_error: float = 0.0


def contraction_report(mdp, pi, N, iterations, rng, mu=None, q0=None):
    """Iterate the operator from a random start, re-drawing the behaviour policy each time.

    With ``mu`` given the behaviour table is held fixed instead.
    """
    q_pi = exact_q_pi(mdp, pi)
    Q = rng.normal(scale=5.0, size=(mdp.S, mdp.A)) if q0 is None else np.array(q0, dtype=np.float64)
    trace = OperatorTrace(initial_error=float(np.max(np.abs(Q - q_pi))))
    for _ in range(iterations):
        behaviour = mu if mu is not None else [random_policy(mdp.S, mdp.A, rng) for _ in range(max(N - 1, 1))]
        nxt = apply_compare_through_expectation(mdp, pi, behaviour, Q, N)
        trace.step_size.append(float(np.max(np.abs(nxt - Q))))
        Q = nxt
        trace.error_to_fixed_point.append(float(np.max(np.abs(Q - q_pi))))
    return trace


def applications_needed(initial_error, gamma, eps=1e-8):
    if initial_error <= eps:
        return 0
    return math.ceil(math.log(eps / initial_error) / math.log(gamma))


def sample_compare_through(mdp: TabularMDP, pi, mu, Q, N, s0, a0, count, rng):
    """Sampled compare-through estimates of ``(T Q)(s0, a0)`` from ``count`` behaviour trajectories.

    Action equality is index equality. Returns the per-trajectory estimates.
    """
    pi = _check_policy(pi, mdp)
    mus = _behaviour_tables(mu, N)
    S, A = mdp.S, mdp.A
    cum_p = np.cumsum(mdp.P, axis=2)
    cum_pi = np.cumsum(pi, axis=1)

    def draw(cum, rows):
        u = rng.random(rows.shape[0])
        idx = (u[:, None] > cum[rows]).sum(axis=1)
        return np.minimum(idx, cum.shape[-1] - 1)

    s = np.full(count, s0)
    a = np.full(count, a0)
    rewards = np.zeros((count, N))
    matched = np.zeros((count, N), bool)
    leaf_mismatch = np.zeros((count, N))
    leaf_expected = np.zeros((count, N))
    v_pi = np.sum(pi * Q, axis=1)
    for t in range(N):
        s_next = draw(cum_p.reshape(S * A, S), s * A + a)
        rewards[:, t] = mdp.R[s, a, s_next]
        s = s_next
        a_tilde = draw(cum_pi, s)
        if t < N - 1:
            a = draw(np.cumsum(mus[t], axis=1), s)
        matched[:, t] = a_tilde == a
        leaf_mismatch[:, t] = Q[s, a_tilde]
        leaf_expected[:, t] = v_pi[s]
    lengths = np.full(count, N)
    tgt = compare_through(rewards, matched, leaf_mismatch, leaf_expected, lengths, np.zeros(count, bool), mdp.gamma)
    return tgt.value


def verify_report(S=5, A=3, gamma=0.9, depth=3, iters=60, seed=0):
    """Plain-text fixed-point / contraction report and an overall pass flag."""
    rng = np.random.default_rng(seed)
    mdp = make_random_tabular(S, A, gamma, rng, max_states=MAX_STATES, max_actions=MAX_ACTIONS)
    pi = random_policy(S, A, rng)
    mu = random_policy(S, A, rng)
    q_pi = exact_q_pi(mdp, pi)
    fixed = float(np.max(np.abs(apply_compare_through_expectation(mdp, pi, mu, q_pi, depth) - q_pi)))
    worst_ratio = 0.0
    for _ in range(20):
        q1 = rng.normal(size=(S, A))
        q2 = rng.normal(size=(S, A))
        d_out = np.max(np.abs(apply_compare_through_expectation(mdp, pi, mu, q1, depth)
                              - apply_compare_through_expectation(mdp, pi, mu, q2, depth)))
        worst_ratio = max(worst_ratio, d_out / np.max(np.abs(q1 - q2)))
    trace = contraction_report(mdp, pi, depth, iters, rng)
    bound_ok = all(e <= gamma ** (k + 1) * trace.initial_error + 1e-9
                   for k, e in enumerate(trace.error_to_fixed_point))
    ok = fixed < 1e-10 and worst_ratio <= gamma + 1e-12 and bound_ok
    lines = [
        f"tabular operator check: S={S} A={A} gamma={gamma} depth={depth} iters={iters} seed={seed}",
        f"fixed point residual  {fixed:.3e}  (limit 1e-10)",
        f"worst contraction     {worst_ratio:.6f}  (limit {gamma})",
        f"error after {iters} steps {trace.error_to_fixed_point[-1]:.3e}  (start {trace.initial_error:.3e})",
        f"geometric bound held  {bound_ok}",
        "PASS" if ok else "FAIL",
    ]
    return "\n".join(lines), ok
