"""The act-or-repeat agent and its one-step / uncorrected N-step ablations."""
from __future__ import annotations

import numpy as np

from ..autodiff import Tape
from ..critics import TwinCritic, compare_through, critic_update, nstep_uncorrected_target
from ..distributions import (
    SwitchingDecision,
    approx_mode,
    log_prob_squashed,
    sample_bernoulli,
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


def beta_star(q_prev, q_new, alpha, clip_advantage=False):
    """Closed-form switching distribution ``beta_1 = sigmoid((q_new - q_prev) / alpha)``."""
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("switching temperature must be positive")
    adv = np.asarray(q_new, dtype=np.float64) - np.asarray(q_prev, dtype=np.float64)
    if clip_advantage:
        adv = np.maximum(adv, 0.0)
    x = adv / alpha
    # both tails computed directly so neither underflows to an inaccurate 1 - p
    return SwitchingDecision(sigmoid(-x), sigmoid(x))


def switch_objective(beta1, q_prev, q_new, alpha):
    """Entropy-regularized value of a switching distribution (maximized by :func:`beta_star`)."""
    beta1 = np.asarray(beta1, dtype=np.float64)
    beta0 = 1.0 - beta1
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -(np.where(beta0 > 0, beta0 * np.log(np.where(beta0 > 0, beta0, 1)), 0.0)
                + np.where(beta1 > 0, beta1 * np.log(np.where(beta1 > 0, beta1, 1)), 0.0))
    return beta1 * q_new + beta0 * q_prev + alpha * ent


def state_value_taac(q_prev, q_new, decision: SwitchingDecision):
    """``beta0 * Q(s, a_prev) + beta1 * Q(s, a_hat)``."""
    return decision.beta0 * np.asarray(q_prev) + decision.beta1 * np.asarray(q_new)


class TaacAgent(Agent):
    """Two-stage policy: a new candidate action, then a closed-form repeat-or-switch choice.

    ``variant`` picks the critic target: ``TAAC`` (compare-through),
    ``TAAC_1td`` (one step) or ``TAAC_Ntd`` (uncorrected N-step).
    """

    uses_prev_action = True

    def __init__(self, spec, cfg: AgentConfig, rng, variant="TAAC"):
        if variant not in ("TAAC", "TAAC_1td", "TAAC_Ntd"):
            raise ValueError(f"unknown act-or-repeat variant {variant!r}")
        self.variant = variant
        self.cfg = cfg
        self.spec = spec
        self.obs_dim, self.act_dim = spec.observation_dim, spec.action_dim
        self.scale = InputScaler(spec.state_low, spec.state_high)
        self.actor = Actor(self.obs_dim + self.act_dim, self.act_dim, cfg.hidden, rng, cfg.lr)
        self.critic = TwinCritic(self.obs_dim + self.act_dim, cfg.hidden, rng, lr=cfg.lr,
                                 tau=cfg.tau, target_interval=cfg.target_interval)
        self.temp_switch = Temperature(switch_entropy_target(cfg), cfg.lr, cfg.initial_log_alpha)
        self.temp_action = Temperature(action_entropy_target(cfg, self.act_dim), cfg.lr, cfg.initial_log_alpha)
        self.horizon = 1 if variant == "TAAC_1td" else cfg.n_repeat

    @property
    def alpha_prime(self):
        return self.temp_switch.value

    @property
    def alpha_dblprime(self):
        return self.temp_action.value

    # -- acting ---------------------------------------------------------------
    def decide(self, s_scaled, a_prev, a_hat, target=False):
        """Switching distribution and both twin-min values at ``(s, a_prev)`` / ``(s, a_hat)``."""
        n = s_scaled.shape[0]
        both = self.critic.q_min(np.concatenate([concat(s_scaled, a_prev), concat(s_scaled, a_hat)]), target)[:, 0]
        q_prev, q_new = both[:n], both[n:]
        return beta_star(q_prev, q_new, self.temp_switch.value, self.cfg.advantage_clip), q_prev, q_new

    def act(self, s, a_prev, rng, mode="sample"):
        s_scaled = self.scale(np.asarray(s, dtype=np.float64)[None, :])
        a_prev = np.asarray(a_prev, dtype=np.float64).reshape(1, -1)
        x = concat(s_scaled, a_prev)
        if mode == "sample":
            a_hat, logp, _ = self.actor.sample(x, rng)
        elif mode == "eval":
            a_hat = approx_mode(self.actor.head(x))
            logp = np.array([np.nan])
        else:
            raise ValueError(f"unknown acting mode {mode!r}")
        dec, _, _ = self.decide(s_scaled, a_prev, a_hat)
        if mode == "sample":
            b = int(sample_bernoulli(dec, rng)[0])
        else:
            b = int(dec.beta1[0] > dec.beta0[0])
        a = a_prev[0].copy() if b == 0 else a_hat[0].copy()
        return ActResult(a=a, b=b, a_hat=a_hat[0].copy(), logp=float(logp[0]), beta1=float(dec.beta1[0]))

    # -- targets --------------------------------------------------------------
    def critic_targets(self, wb, rng):
        """TD targets for the first step of every window (target critic, fresh policy samples)."""
        B, H = wb.batch, self.horizon
        # states reached after t+1 steps and the action executed just before them
        s_next = self.scale(np.swapaxes(wb.fields["s_next"][:, :H], 0, 1).reshape(B * H, -1))
        a_before = np.swapaxes(wb.fields["a"][:, :H], 0, 1).reshape(B * H, -1)
        a_hat, _, _ = self.actor.sample(concat(s_next, a_before), rng)
        dec, q_prev, q_new = self.decide(s_next, a_before, a_hat, target=True)
        expected = state_value_taac(q_prev, q_new, dec).reshape(H, B).T
        b_tilde = sample_bernoulli(dec, rng).reshape(H, B).T
        q_new = q_new.reshape(H, B).T
        r = wb.fields["r"][:, :H]
        if self.variant == "TAAC_Ntd":
            return nstep_uncorrected_target(r, wb.length, wb.terminal, expected, self.cfg.gamma)
        # stored switching bit at the state reached after t+1 steps
        b_stored = np.zeros((B, H), dtype=np.int64)
        b_stored[:, :H - 1] = wb.fields["b"][:, 1:H]
        matched = (b_tilde == 0) & (b_stored == 0)
        # stored b = 1: any resample differs, average over the resampled bit;
        # stored b = 0 with a fresh switch: bootstrap the fresh candidate
        leaf_mismatch = np.where(b_stored == 1, expected, q_new)
        return compare_through(r, matched, leaf_mismatch, expected, wb.length, wb.terminal, self.cfg.gamma)

    # -- losses ---------------------------------------------------------------
    def actor_loss(self, tape: Tape, s_scaled, a_prev, noise):
        """Surrogate whose gradient is the truncated actor update.

        Returns ``(loss Var, log_prob Var, switching decision)``. The switching
        probability multiplies the new-action value as a detached constant.
        """
        x = concat(s_scaled, a_prev)
        head = self.actor.head(x, tape)
        a_hat, z = sample_squashed(head, noise, tape)
        logp = log_prob_squashed(head, z, tape)
        q_new = self.critic.q_min_tape(tape, tape_concat(tape, [s_scaled, a_hat]), trainable=False)
        q_prev = self.critic.q_min(concat(s_scaled, a_prev))
        dec = beta_star(q_prev[:, 0], q_new.value[:, 0], self.temp_switch.value, self.cfg.advantage_clip)
        gain = tape.mul(tape.sum(q_new, axis=1), dec.beta1)
        objective = tape.add(gain, tape.mul(logp, -self.temp_action.value))
        loss = tape.mul(tape.mean(objective), -1.0)
        return loss, logp, dec

    def train_step(self, buffer, normalizer, rng):
        cfg = self.cfg
        wb = sample_and_normalize(buffer, normalizer, cfg.batch_size, self.horizon, rng)
        tgt = self.critic_targets(wb, rng)
        x0 = concat(self.scale(wb.fields["s"][:, 0]), wb.fields["a"][:, 0])
        closs = critic_update(self.critic, x0, tgt.value)

        s, a_prev, _ = buffer.sample_states_nonconsecutive(cfg.batch_size, rng)
        s_scaled = self.scale(s)
        noise = rng.standard_normal((s.shape[0], self.act_dim))
        tape = Tape()
        loss, logp, dec = self.actor_loss(tape, s_scaled, a_prev, noise)
        aloss = float(loss.value)
        if np.isfinite(aloss):
            tape.backward(loss)
            self.actor.step(tape)
        h_action = float(-np.mean(logp.value))
        h_switch = float(np.mean(dec.entropy()))
        self.temp_switch.update(h_switch)
        self.temp_action.update(h_action)
        return TrainStats(closs, aloss, h_action, h_switch, float(np.mean(dec.beta1)),
                          {"mean_bootstrap_n": float(np.mean(tgt.n))})

    # -- persistence ----------------------------------------------------------
    def state_arrays(self):
        out = {f"actor.{i}": a for i, a in enumerate(self.actor.net.arrays)}
        out.update(self.critic.state_arrays())
        out["log_alpha_switch"] = self.temp_switch.log_alpha
        out["log_alpha_action"] = self.temp_action.log_alpha
        return out

    def optimizers(self):
        return {"actor": self.actor.opt, "critic": self.critic.opt,
                "alpha_switch": self.temp_switch.opt, "alpha_action": self.temp_action.opt}
