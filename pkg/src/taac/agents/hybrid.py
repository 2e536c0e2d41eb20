"""Baselines with a discrete action next to the continuous one.

``SAC_Krep``            picks (a, K) and repeats a for K uninterrupted steps;
                        the critic has one head per duration.
``SAC_Hybrid``          factored policy over a new action and an independent
                        repeat bit, Retrace targets.
``SAC_Hybrid_CompThr``  the same model trained with compare-through targets.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Adam, Tape, mlp_forward
from ..critics import (
    TwinCritic,
    compare_through,
    critic_update,
    krep_target,
    retrace_target,
    retrace_traces,
)
from ..distributions import (
    approx_mode,
    atanh_clipped,
    entropy_target_discrete,
    head_from_output,
    log_prob_squashed,
    sample_squashed,
    sigmoid,
)
from .core import (
    ActResult,
    Actor,
    Agent,
    AgentConfig,
    InputScaler,
    Temperature,
    TrainStats,
    action_entropy_target,
    concat,
    sample_and_normalize,
    switch_entropy_target,
    tape_concat,
)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(x):
    m = x.max(axis=-1)
    return m + np.log(np.sum(np.exp(x - m[..., None]), axis=-1))


class KrepAgent(Agent):
    """Open-loop repetition with a learned duration.

    The duration policy is the closed-form optimum ``pi*(k) ∝ exp(Q_k / alpha')``
    over the critic's heads, so the continuous actor maximizes
    ``alpha' * logsumexp(Q / alpha') - alpha'' log pi``.
    """

    variant = "SAC_Krep"
    rollout_fields = ("_left", "_held")

    def __init__(self, spec, cfg: AgentConfig, rng):
        self.cfg = cfg
        self.spec = spec
        self.obs_dim, self.act_dim = spec.observation_dim, spec.action_dim
        self.heads = cfg.n_repeat
        self.scale = InputScaler(spec.state_low, spec.state_high)
        self.actor = Actor(self.obs_dim, self.act_dim, cfg.hidden, rng, cfg.lr)
        self.critic = TwinCritic(self.obs_dim + self.act_dim, cfg.hidden, rng, heads=self.heads,
                                 lr=cfg.lr, tau=cfg.tau, target_interval=cfg.target_interval)
        self.temp_action = Temperature(action_entropy_target(cfg, self.act_dim), cfg.lr, cfg.initial_log_alpha)
        self.temp_switch = None
        if self.heads > 1:
            self.temp_switch = Temperature(entropy_target_discrete(cfg.delta_switch, self.heads),
                                           cfg.lr, cfg.initial_log_alpha)
        self._left = 0
        self._held = None

    @property
    def alpha_prime(self):
        return self.temp_switch.value if self.temp_switch is not None else float("nan")

    @property
    def alpha_dblprime(self):
        return self.temp_action.value

    def begin_episode(self):
        self._left = 0
        self._held = None

    def duration_probs(self, q):
        if self.heads == 1:
            return np.ones_like(q)
        return _softmax(q / self.temp_switch.value)

    def act(self, s, a_prev, rng, mode="sample"):
        if mode not in ("sample", "eval"):
            raise ValueError(f"unknown acting mode {mode!r}")
        if self._left > 0 and self._held is not None:
            self._left -= 1
            return ActResult(a=self._held.copy(), b=0, a_hat=self._held.copy(), k=self._left + 1)
        x = self.scale(np.asarray(s, dtype=np.float64)[None, :])
        if mode == "sample":
            a, logp, _ = self.actor.sample(x, rng)
        else:
            a, logp = approx_mode(self.actor.head(x)), np.array([np.nan])
        p = self.duration_probs(self.critic.q_min(concat(x, a)))[0]
        k = int(rng.choice(self.heads, p=p)) + 1 if mode == "sample" else int(np.argmax(p)) + 1
        self._held = a[0].copy()
        self._left = k - 1
        return ActResult(a=a[0].copy(), b=1, a_hat=a[0].copy(), logp=float(logp[0]), k=k)

    def soft_value(self, s_scaled, rng):
        """``alpha' * logsumexp(Q / alpha') - alpha'' log pi`` at a fresh action sample."""
        a, logp, _ = self.actor.sample(s_scaled, rng)
        q = self.critic.q_min(concat(s_scaled, a), target=True)
        if self.heads == 1:
            v = q[:, 0]
        else:
            al = self.temp_switch.value
            v = al * _logsumexp(q / al)
        return v - self.temp_action.value * logp

    def actor_loss(self, tape: Tape, s_scaled, noise):
        head = self.actor.head(s_scaled, tape)
        a, z = sample_squashed(head, noise, tape)
        logp = log_prob_squashed(head, z, tape)
        q = self.critic.q_min_tape(tape, tape_concat(tape, [s_scaled, a]), trainable=False)
        if self.heads == 1:
            v = tape.sum(q, axis=1)
            probs = np.ones((q.value.shape[0], 1))
        else:
            al = self.temp_switch.value
            scaled = tape.mul(q, 1.0 / al)
            m = scaled.value.max(axis=1, keepdims=True)
            lse = tape.add(tape.log(tape.sum(tape.exp(tape.add(scaled, -m)), axis=1)), m[:, 0])
            v = tape.mul(lse, al)
            probs = _softmax(scaled.value)
        objective = tape.add(v, tape.mul(logp, -self.temp_action.value))
        return tape.mul(tape.mean(objective), -1.0), logp, probs

    def train_step(self, buffer, normalizer, rng):
        cfg = self.cfg
        wb = sample_and_normalize(buffer, normalizer, cfg.batch_size, self.heads, rng)
        B, H = wb.batch, wb.horizon
        s_next = self.scale(np.swapaxes(wb.fields["s_next"], 0, 1).reshape(B * H, -1))
        v_next = self.soft_value(s_next, rng).reshape(H, B).T
        k = np.maximum(wb.fields["k"][:, 0], 1)
        tgt = krep_target(wb.fields["r"], wb.length, wb.terminal, v_next, cfg.gamma, k)
        x0 = concat(self.scale(wb.fields["s"][:, 0]), wb.fields["a"][:, 0])
        closs = critic_update(self.critic, x0, tgt.value, head=k - 1)

        s, _, _ = buffer.sample_states_nonconsecutive(cfg.batch_size, rng)
        s_scaled = self.scale(s)
        tape = Tape()
        loss, logp, probs = self.actor_loss(tape, s_scaled, rng.standard_normal((s.shape[0], self.act_dim)))
        aloss = float(loss.value)
        if np.isfinite(aloss):
            tape.backward(loss)
            self.actor.step(tape)
        h_action = float(-np.mean(logp.value))
        self.temp_action.update(h_action)
        h_switch = float("nan")
        if self.temp_switch is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                h_switch = float(np.mean(-np.sum(np.where(probs > 0, probs * np.log(probs), 0.0), axis=1)))
            self.temp_switch.update(h_switch)
        return TrainStats(closs, aloss, h_action, h_switch, float(np.mean(1.0 - probs[:, 0])))

    def state_arrays(self):
        out = {f"actor.{i}": a for i, a in enumerate(self.actor.net.arrays)}
        out.update(self.critic.state_arrays())
        out["log_alpha_action"] = self.temp_action.log_alpha
        if self.temp_switch is not None:
            out["log_alpha_switch"] = self.temp_switch.log_alpha
        return out

    def optimizers(self):
        d = {"actor": self.actor.opt, "critic": self.critic.opt, "alpha_action": self.temp_action.opt}
        if self.temp_switch is not None:
            d["alpha_switch"] = self.temp_switch.opt
        return d


class HybridAgent(Agent):
    """Factored policy ``pi(a_hat | s, a_prev) * pi(b | s, a_prev)`` with a two-head critic.

    The critic sees ``(s, a_prev, a_hat)`` and outputs one value per bit.
    The repeat bit comes from a logit output on the actor network, so it is
    chosen independently of the new candidate action.
    """

    uses_prev_action = True

    def __init__(self, spec, cfg: AgentConfig, rng, variant="SAC_Hybrid"):
        if variant not in ("SAC_Hybrid", "SAC_Hybrid_CompThr"):
            raise ValueError(f"unknown hybrid variant {variant!r}")
        self.variant = variant
        self.cfg = cfg
        self.spec = spec
        self.obs_dim, self.act_dim = spec.observation_dim, spec.action_dim
        self.scale = InputScaler(spec.state_low, spec.state_high)
        # actor outputs [mu, log_std, b_logit]
        self.actor = Actor(self.obs_dim + self.act_dim, self.act_dim, cfg.hidden, rng, cfg.lr)
        w, b = self.actor.net.layers[-1]
        self.actor.net.layers[-1] = (np.concatenate([w, np.zeros((w.shape[0], 1))], axis=1),
                                     np.concatenate([b, np.zeros(1)]))
        self.actor.opt = Adam(self.actor.net.arrays, lr=cfg.lr)
        self.critic = TwinCritic(self.obs_dim + 2 * self.act_dim, cfg.hidden, rng, heads=2,
                                 lr=cfg.lr, tau=cfg.tau, target_interval=cfg.target_interval)
        self.temp_switch = Temperature(switch_entropy_target(cfg), cfg.lr, cfg.initial_log_alpha)
        self.temp_action = Temperature(action_entropy_target(cfg, self.act_dim), cfg.lr, cfg.initial_log_alpha)

    @property
    def alpha_prime(self):
        return self.temp_switch.value

    @property
    def alpha_dblprime(self):
        return self.temp_action.value

    def _heads(self, x):
        out = mlp_forward(self.actor.net, x)
        head = head_from_output(out[:, :2 * self.act_dim], self.act_dim)
        return head, out[:, 2 * self.act_dim]

    @staticmethod
    def _bit_logps(logit):
        """``(log pi(b=0), log pi(b=1))`` from the logit of ``b = 1``."""
        return -np.logaddexp(0.0, logit), -np.logaddexp(0.0, -logit)

    def act(self, s, a_prev, rng, mode="sample"):
        if mode not in ("sample", "eval"):
            raise ValueError(f"unknown acting mode {mode!r}")
        s_scaled = self.scale(np.asarray(s, dtype=np.float64)[None, :])
        a_prev = np.asarray(a_prev, dtype=np.float64).reshape(1, -1)
        head, logit = self._heads(concat(s_scaled, a_prev))
        lp0, lp1 = self._bit_logps(logit)
        if mode == "sample":
            noise = rng.standard_normal((1, self.act_dim))
            a_hat, z = sample_squashed(head, noise)
            logp_a = log_prob_squashed(head, z)
            b = int(rng.random() < sigmoid(logit)[0])
            logp = float(logp_a[0] + (lp1 if b else lp0)[0])
        else:
            a_hat = approx_mode(head)
            b = int(logit[0] > 0)
            logp = float("nan")
        a = a_prev[0].copy() if b == 0 else a_hat[0].copy()
        return ActResult(a=a, b=b, a_hat=a_hat[0].copy(), logp=logp, beta1=float(sigmoid(logit)[0]))

    def soft_value(self, s_scaled, a_prev, rng):
        """Soft value at ``(s, a_prev)``; returns ``(value, q_b1_at_sample, extras)``."""
        head, logit = self._heads(concat(s_scaled, a_prev))
        a_hat, z = sample_squashed(head, rng.standard_normal((s_scaled.shape[0], self.act_dim)))
        logp_a = log_prob_squashed(head, z)
        q = self.critic.q_min(concat(s_scaled, a_prev, a_hat), target=True)
        p1 = sigmoid(logit)
        lp0, lp1 = self._bit_logps(logit)
        ent_b = -((1 - p1) * lp0 + p1 * lp1)
        v = (1 - p1) * q[:, 0] + p1 * q[:, 1] - self.temp_action.value * logp_a + self.temp_switch.value * ent_b
        leaf_switch = q[:, 1] - self.temp_action.value * logp_a - self.temp_switch.value * lp1
        return v, leaf_switch, p1

    def critic_targets(self, wb, rng):
        cfg = self.cfg
        B, H = wb.batch, wb.horizon
        flat = lambda name: np.swapaxes(wb.fields[name], 0, 1).reshape(B * H, -1)  # noqa: E731
        s_next = self.scale(flat("s_next"))
        v_next, leaf_switch, p1 = self.soft_value(s_next, flat("a"), rng)
        v_next, leaf_switch, p1 = (x.reshape(H, B).T for x in (v_next, leaf_switch, p1))
        r = wb.fields["r"]
        if self.variant == "SAC_Hybrid_CompThr":
            b_tilde = (rng.random((B, H)) < p1).astype(np.int64)
            b_stored = np.zeros((B, H), dtype=np.int64)
            b_stored[:, :H - 1] = wb.fields["b"][:, 1:H]
            matched = (b_tilde == 0) & (b_stored == 0)
            leaf_mismatch = np.where(b_stored == 1, v_next, leaf_switch)
            return compare_through(r, matched, leaf_mismatch, v_next, wb.length, wb.terminal, cfg.gamma).value
        s = self.scale(flat("s"))
        a_prev, a_hat, b = flat("a_prev"), flat("a_hat"), wb.fields["b"].T.reshape(-1)
        q = self.critic.q_min(concat(s, a_prev, a_hat), target=True)
        q_taken = q[np.arange(B * H), b].reshape(H, B).T
        head, logit = self._heads(concat(s, a_prev))
        lp0, lp1 = self._bit_logps(logit)
        logp_pi = log_prob_squashed(head, atanh_clipped(a_hat)) + np.where(b == 1, lp1, lp0)
        traces = retrace_traces(logp_pi.reshape(H, B).T, wb.fields["behavior_logp"], cfg.retrace_lambda)
        return retrace_target(r, q_taken, v_next, traces, wb.length, wb.terminal, cfg.gamma).value

    def actor_loss(self, tape: Tape, s_scaled, a_prev, noise):
        x = concat(s_scaled, a_prev)
        out = mlp_forward(self.actor.net, x, tape)
        d = self.act_dim
        head = head_from_output(out, d, tape)
        pick = np.zeros((out.value.shape[1], 1))
        pick[2 * d, 0] = 1.0
        logit = tape.sum(tape.matmul(out, pick), axis=1)
        a_hat, z = sample_squashed(head, noise, tape)
        logp_a = log_prob_squashed(head, z, tape)
        q = self.critic.q_min_tape(tape, tape_concat(tape, [s_scaled, a_prev, a_hat]), trainable=False)
        lp1 = tape.mul(tape.softplus(tape.mul(logit, -1.0)), -1.0)
        lp0 = tape.mul(tape.softplus(logit), -1.0)
        p1 = tape.exp(lp1)
        p0 = tape.exp(lp0)
        q0 = tape.sum(tape.mul(q, np.array([1.0, 0.0])), axis=1)
        q1 = tape.sum(tape.mul(q, np.array([0.0, 1.0])), axis=1)
        value = tape.add(tape.mul(p0, q0), tape.mul(p1, q1))
        ent_b = tape.mul(tape.add(tape.mul(p0, lp0), tape.mul(p1, lp1)), -1.0)
        objective = tape.add(tape.add(value, tape.mul(logp_a, -self.temp_action.value)),
                             tape.mul(ent_b, self.temp_switch.value))
        return tape.mul(tape.mean(objective), -1.0), logp_a, p1.value, ent_b.value

    def train_step(self, buffer, normalizer, rng):
        cfg = self.cfg
        wb = sample_and_normalize(buffer, normalizer, cfg.batch_size, cfg.n_repeat, rng)
        tgt = self.critic_targets(wb, rng)
        x0 = concat(self.scale(wb.fields["s"][:, 0]), wb.fields["a_prev"][:, 0], wb.fields["a_hat"][:, 0])
        closs = critic_update(self.critic, x0, tgt, head=wb.fields["b"][:, 0])

        s, a_prev, _ = buffer.sample_states_nonconsecutive(cfg.batch_size, rng)
        tape = Tape()
        loss, logp_a, p1, ent_b = self.actor_loss(tape, self.scale(s), a_prev,
                                                  rng.standard_normal((s.shape[0], self.act_dim)))
        aloss = float(loss.value)
        if np.isfinite(aloss):
            tape.backward(loss)
            self.actor.step(tape)
        h_action = float(-np.mean(logp_a.value))
        h_switch = float(np.mean(ent_b))
        self.temp_action.update(h_action)
        self.temp_switch.update(h_switch)
        return TrainStats(closs, aloss, h_action, h_switch, float(np.mean(p1)))

    def state_arrays(self):
        out = {f"actor.{i}": a for i, a in enumerate(self.actor.net.arrays)}
        out.update(self.critic.state_arrays())
        out["log_alpha_switch"] = self.temp_switch.log_alpha
        out["log_alpha_action"] = self.temp_action.log_alpha
        return out

    def optimizers(self):
        return {"actor": self.actor.opt, "critic": self.critic.opt,
                "alpha_switch": self.temp_switch.opt, "alpha_action": self.temp_action.opt}

