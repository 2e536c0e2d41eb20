"""Soft actor-critic and its repetition / multi-step baselines.

``SAC``       one-step soft Bellman targets.
``SAC_Ntd``   N-step Retrace targets.
``SAC_Nrep``  every action repeated N times, trained on decision steps.
``SAC_EZ``    SAC plus temporally extended epsilon-greedy exploration.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Tape
from ..critics import TwinCritic, bellman_target, critic_update, krep_target, retrace_target, retrace_traces
from ..distributions import approx_mode, atanh_clipped, log_prob_squashed, sample_squashed, sample_zeta_duration
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
    tape_concat,
)

SAC_VARIANTS = ("SAC", "SAC_Ntd", "SAC_Nrep", "SAC_EZ")


class SacAgent(Agent):
    rollout_fields = ("_left", "_explore_left", "_held", "_held_logp")

    def __init__(self, spec, cfg: AgentConfig, rng, variant="SAC"):
        if variant not in SAC_VARIANTS:
            raise ValueError(f"unknown SAC variant {variant!r}")
        self.variant = variant
        self.cfg = cfg
        self.spec = spec
        self.obs_dim, self.act_dim = spec.observation_dim, spec.action_dim
        self.scale = InputScaler(spec.state_low, spec.state_high)
        self.actor = Actor(self.obs_dim, self.act_dim, cfg.hidden, rng, cfg.lr)
        self.critic = TwinCritic(self.obs_dim + self.act_dim, cfg.hidden, rng, lr=cfg.lr,
                                 tau=cfg.tau, target_interval=cfg.target_interval)
        self.temp_action = Temperature(action_entropy_target(cfg, self.act_dim), cfg.lr, cfg.initial_log_alpha)
        self.frames = 0  # sampled (training) steps taken, drives the exploration schedule
        self._left = 0   # steps still to repeat the current action
        self._explore_left = 0
        self._held = None
        self._held_logp = float("nan")

    @property
    def alpha_dblprime(self):
        return self.temp_action.value

    def begin_episode(self):
        self._left = 0
        self._explore_left = 0
        self._held = None

    def epsilon(self):
        c = self.cfg
        if self.frames >= c.ez_decay_frames:
            return c.ez_eps_end
        return c.ez_eps_start + (c.ez_eps_end - c.ez_eps_start) * self.frames / c.ez_decay_frames

    # -- acting -----------------------------------------------------------------
    def _policy(self, s, rng, mode):
        x = self.scale(np.asarray(s, dtype=np.float64)[None, :])
        if mode == "eval":
            return approx_mode(self.actor.head(x))[0], float("nan")
        a, logp, _ = self.actor.sample(x, rng)
        return a[0], float(logp[0])

    def act(self, s, a_prev, rng, mode="sample"):
        if mode not in ("sample", "eval"):
            raise ValueError(f"unknown acting mode {mode!r}")
        if mode == "sample":
            self.frames += 1
        if self.variant == "SAC_Nrep":
            return self._act_repeat(s, rng, mode)
        if self.variant == "SAC_EZ" and mode == "sample":
            return self._act_ez(s, a_prev, rng)
        a, logp = self._policy(s, rng, mode)
        return ActResult(a=a.copy(), b=1, a_hat=a.copy(), logp=logp)

    def _act_repeat(self, s, rng, mode):
        n = self.cfg.n_repeat
        if self._left > 0 and self._held is not None:
            self._left -= 1
            return ActResult(a=self._held.copy(), b=0, a_hat=self._held.copy(), logp=self._held_logp, k=self._left + 1)
        a, logp = self._policy(s, rng, mode)
        self._held, self._held_logp = a.copy(), logp
        self._left = n - 1
        return ActResult(a=a.copy(), b=1, a_hat=a.copy(), logp=logp, k=n)

    def _act_ez(self, s, a_prev, rng):
        if self._explore_left > 0 and self._held is not None:
            self._explore_left -= 1
            return ActResult(a=self._held.copy(), b=0, a_hat=self._held.copy(), explore=True)
        if rng.random() < self.epsilon():
            a = rng.uniform(-1.0, 1.0, size=self.act_dim)
            self._held = a.copy()
            self._explore_left = sample_zeta_duration(self.cfg.ez_mu, self.cfg.n_repeat, rng) - 1
            return ActResult(a=a, b=1, a_hat=a.copy(), explore=True)
        a, logp = self._policy(s, rng, "sample")
        return ActResult(a=a.copy(), b=1, a_hat=a.copy(), logp=logp)

    # -- targets ----------------------------------------------------------------
    def soft_value(self, s_scaled, rng):
        """Single-sample soft value ``Q_target(s, a~) - alpha'' log pi(a~|s)``."""
        a, logp, _ = self.actor.sample(s_scaled, rng)
        return self.critic.q_min(concat(s_scaled, a), target=True)[:, 0] - self.temp_action.value * logp

    def critic_targets(self, wb, rng):
        B = wb.batch
        gamma = self.cfg.gamma
        if self.variant in ("SAC", "SAC_EZ"):
            v = self.soft_value(self.scale(wb.fields["s_next"][:, 0]), rng)
            return bellman_target(wb.fields["r"][:, 0], wb.fields["done"][:, 0], v, gamma)
        H = wb.horizon
        s_next = self.scale(np.swapaxes(wb.fields["s_next"], 0, 1).reshape(B * H, -1))
        v_next = self.soft_value(s_next, rng).reshape(H, B).T
        if self.variant == "SAC_Nrep":
            return krep_target(wb.fields["r"], wb.length, wb.terminal, v_next, gamma, wb.fields["k"][:, 0]).value
        # Retrace over the stored actions
        s = self.scale(np.swapaxes(wb.fields["s"], 0, 1).reshape(B * H, -1))
        a = np.swapaxes(wb.fields["a"], 0, 1).reshape(B * H, -1)
        q_taken = self.critic.q_min(concat(s, a), target=True)[:, 0].reshape(H, B).T
        head = self.actor.head(s)
        logp_pi = log_prob_squashed(head, atanh_clipped(a)).reshape(H, B).T
        traces = retrace_traces(logp_pi, wb.fields["behavior_logp"], self.cfg.retrace_lambda)
        return retrace_target(wb.fields["r"], q_taken, v_next, traces, wb.length, wb.terminal, gamma).value

    # -- training ---------------------------------------------------------------
    def actor_loss(self, tape: Tape, s_scaled, noise):
        head = self.actor.head(s_scaled, tape)
        a, z = sample_squashed(head, noise, tape)
        logp = log_prob_squashed(head, z, tape)
        q = self.critic.q_min_tape(tape, tape_concat(tape, [s_scaled, a]), trainable=False)
        objective = tape.add(tape.sum(q, axis=1), tape.mul(logp, -self.temp_action.value))
        return tape.mul(tape.mean(objective), -1.0), logp

    def train_step(self, buffer, normalizer, rng):
        cfg = self.cfg
        horizon = 1 if self.variant in ("SAC", "SAC_EZ") else cfg.n_repeat
        eligible = None
        if self.variant == "SAC_Nrep":
            eligible = buffer.field("k") == cfg.n_repeat
        wb = sample_and_normalize(buffer, normalizer, cfg.batch_size, horizon, rng, eligible)
        tgt = self.critic_targets(wb, rng)
        x0 = concat(self.scale(wb.fields["s"][:, 0]), wb.fields["a"][:, 0])
        closs = critic_update(self.critic, x0, tgt)

        s, _, slots = buffer.sample_states_nonconsecutive(cfg.batch_size, rng)
        s_scaled = self.scale(s)
        noise = rng.standard_normal((s.shape[0], self.act_dim))
        tape = Tape()
        loss, logp = self.actor_loss(tape, s_scaled, noise)
        aloss = float(loss.value)
        if np.isfinite(aloss):
            tape.backward(loss)
            self.actor.step(tape)
        ent = -logp.value
        keep = ~buffer.fetch(slots, "explore")
        h_action = float(np.mean(ent[keep])) if np.any(keep) else float("nan")
        if np.isfinite(h_action):
            self.temp_action.update(h_action)
        return TrainStats(closs, aloss, h_action, float("nan"), float("nan"))

    def state_arrays(self):
        out = {f"actor.{i}": a for i, a in enumerate(self.actor.net.arrays)}
        out.update(self.critic.state_arrays())
        out["log_alpha_action"] = self.temp_action.log_alpha
        return out

    def optimizers(self):
        return {"actor": self.actor.opt, "critic": self.critic.opt, "alpha_action": self.temp_action.opt}
