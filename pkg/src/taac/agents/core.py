"""Pieces shared by every agent: config, actor network, temperatures, action records."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..autodiff import Adam, NonFiniteError, Tape, init_mlp, mlp_forward
from ..distributions import (
    entropy_target_continuous,
    entropy_target_discrete,
    head_from_output,
    log_prob_squashed,
    sample_squashed,
)


@dataclass
class AgentConfig:
    lr: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 256
    tau: float = 5e-3
    target_interval: int = 1
    hidden: tuple = (256, 256)
    n_repeat: int = 3
    delta_action: float = 0.1
    delta_switch: float = 0.05
    advantage_clip: bool = False
    retrace_lambda: float = 1.0
    ez_mu: float = 2.0
    ez_decay_frames: int = 10_000
    ez_eps_start: float = 1.0
    ez_eps_end: float = 0.01
    initial_log_alpha: float = 0.0

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return AgentConfig(**d)


@dataclass
class ActResult:
    """What the rollout loop needs to execute and store one step."""

    a: np.ndarray
    b: int = 1
    a_hat: np.ndarray | None = None
    logp: float = float("nan")
    k: int = 0
    explore: bool = False
    beta1: float = 1.0


class InputScaler:
    """Affine map of the state box onto [-1, 1] (identity when no box is known)."""

    def __init__(self, low=(), high=()):
        if len(low):
            low = np.asarray(low, dtype=np.float64)
            high = np.asarray(high, dtype=np.float64)
            self.center = (high + low) / 2.0
            self.half = (high - low) / 2.0
        else:
            self.center, self.half = 0.0, 1.0

    def __call__(self, s):
        return (np.asarray(s, dtype=np.float64) - self.center) / self.half


class Actor:
    """Squashed-Gaussian policy network; the log-std output starts at zero."""

    def __init__(self, in_dim, action_dim, hidden, rng, lr):
        self.action_dim = action_dim
        self.net = init_mlp([in_dim, *hidden, 2 * action_dim], rng)
        w, b = self.net.layers[-1]
        w[:, action_dim:] = 0.0
        self.opt = Adam(self.net.arrays, lr=lr)

    def head(self, x, tape=None):
        out = mlp_forward(self.net, x, tape)
        return head_from_output(out, self.action_dim, tape)

    def sample(self, x, rng, tape=None):
        """Reparameterized draw: returns ``(action, log_prob, head)``."""
        head = self.head(x, tape)
        n = np.shape(head.mu.value if tape is not None else head.mu)[0]
        noise = rng.standard_normal((n, self.action_dim))
        a, z = sample_squashed(head, noise, tape)
        return a, log_prob_squashed(head, z, tape), head

    def step(self, tape):
        try:
            self.opt.step([tape.grad(p) for p in self.opt.params])
            return True
        except NonFiniteError:
            return False


class Temperature:
    """``log alpha`` trained on ``log alpha * (entropy - target)``."""

    def __init__(self, target, lr, init=0.0):
        self.target = float(target)
        self.log_alpha = np.array([float(init)])
        self.opt = Adam([self.log_alpha], lr=lr)

    @property
    def value(self):
        return float(math.exp(self.log_alpha[0]))

    def loss(self, entropy):
        return float(self.log_alpha[0]) * (float(entropy) - self.target)

    def update(self, entropy):
        """Gradient step; the gradient of the loss w.r.t. log alpha is ``entropy - target``."""
        g = np.array([float(entropy) - self.target])
        if np.isfinite(g[0]):
            self.opt.step([g])
        return self.value


def action_entropy_target(cfg: AgentConfig, action_dim):
    return entropy_target_continuous(cfg.delta_action, action_dim, -1.0, 1.0)


def switch_entropy_target(cfg: AgentConfig, n=2):
    return entropy_target_discrete(cfg.delta_switch, n)


def concat(*parts):
    return np.concatenate([np.asarray(p, dtype=np.float64).reshape(len(p), -1) for p in parts], axis=1)


def flat_windows(wb, t_lo, t_hi, name):
    """Window field over steps ``t_lo..t_hi-1`` flattened to rows (time-major)."""
    v = wb.fields[name][:, t_lo:t_hi]
    return np.swapaxes(v, 0, 1).reshape((-1,) + v.shape[2:])


@dataclass
class TrainStats:
    critic_loss: float = float("nan")
    actor_loss: float = float("nan")
    entropy_action: float = float("nan")
    entropy_switch: float = float("nan")
    beta1_mean: float = float("nan")
    extra: dict = field(default_factory=dict)


class Agent:
    """Interface implemented by every variant."""

    variant = "base"
    uses_prev_action = False
    # per-episode acting state (repeat counters); swapped per rollout worker
    rollout_fields: tuple = ()

    def begin_episode(self):
        pass

    def rollout_state(self):
        return {k: getattr(self, k) for k in self.rollout_fields}

    def set_rollout_state(self, state):
        for k, v in state.items():
            setattr(self, k, v)

    def act(self, s, a_prev, rng, mode="sample") -> ActResult:
        raise NotImplementedError

    def train_step(self, buffer, normalizer, rng) -> TrainStats:
        raise NotImplementedError

    @property
    def alpha_prime(self):
        return float("nan")

    @property
    def alpha_dblprime(self):
        return float("nan")

    def state_arrays(self):
        raise NotImplementedError

    def optimizers(self):
        raise NotImplementedError


def sample_and_normalize(buffer, normalizer, batch, horizon, rng, eligible=None):
    """Sample windows and normalize their rewards.

    The normalizer statistics absorb the first reward of every sampled
    window, so they only ever see rewards drawn from replay.
    """
    wb = buffer.sample_windows(batch, horizon, rng, eligible)
    if normalizer is not None:
        normalizer.update_many(wb.fields["r"][:, 0])
        wb.fields["r"] = np.where(wb.mask, normalizer.normalize(wb.fields["r"]), 0.0)
    else:
        wb.fields["r"] = np.where(wb.mask, wb.fields["r"], 0.0)
    return wb


def tape_concat(tape: Tape, parts):
    """Column-concatenate arrays and Vars using selection matmuls."""
    widths = [(p.value if hasattr(p, "value") else np.asarray(p)).shape[1] for p in parts]
    total = sum(widths)
    out = None
    col = 0
    for p, w in zip(parts, widths):
        sel = np.zeros((w, total))
        sel[np.arange(w), col + np.arange(w)] = 1.0
        col += w
        term = tape.matmul(p, sel)
        out = term if out is None else tape.add(out, term)
    return out
