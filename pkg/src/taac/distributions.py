"""Squashed Gaussian actions, the act-or-repeat switch, entropy targets, zeta durations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_TANH_LIMIT = 1.0 - 1e-12


@dataclass
class SquashedGaussianHead:
    """Pre-squash Gaussian over ``z`` with action ``x = scale * tanh(z) + offset``.

    ``mu`` and ``log_std`` are arrays of shape ``(batch, dim)`` or Vars on a
    tape. ``log_std`` is clamped to ``[LOG_STD_MIN, LOG_STD_MAX]`` by
    :func:`head_from_output`.
    """

    mu: object
    log_std: object
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"squash scale must be positive, got {self.scale}")


def head_from_output(out, action_dim, tape=None, scale=1.0, offset=0.0):
    """Split a network output ``[mu, log_std]`` into a head (clamping log_std)."""
    if tape is None:
        mu = out[:, :action_dim]
        log_std = np.clip(out[:, action_dim:2 * action_dim], LOG_STD_MIN, LOG_STD_MAX)
        return SquashedGaussianHead(mu, log_std, scale, offset)
    a = action_dim
    n = out.value.shape[1]
    pick_mu = np.zeros((n, a))
    pick_ls = np.zeros((n, a))
    pick_mu[np.arange(a), np.arange(a)] = 1.0
    pick_ls[a + np.arange(a), np.arange(a)] = 1.0
    mu = tape.matmul(out, pick_mu)
    log_std = tape.clamp(tape.matmul(out, pick_ls), LOG_STD_MIN, LOG_STD_MAX)
    return SquashedGaussianHead(mu, log_std, scale, offset)


def _val(x):
    return x.value if isinstance(x, Var) else x


def sample_squashed(head: SquashedGaussianHead, noise, tape: Tape | None = None):
    """Reparameterized draw. Returns ``(action, z)``.

    ``z = mu + exp(log_std) * noise`` and ``action = scale * tanh(z) + offset``.
    With a tape both are Vars differentiable w.r.t. the head.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != np.shape(_val(head.mu))[-1]:
        raise ValueError("noise dimension must equal action dimension")
    if tape is None:
        z = head.mu + np.exp(head.log_std) * noise
        t = np.clip(np.tanh(z), -_TANH_LIMIT, _TANH_LIMIT)
        return head.scale * t + head.offset, z
    z = tape.add(head.mu, tape.mul(tape.exp(head.log_std), noise))
    t = tape.clamp(tape.tanh(z), -_TANH_LIMIT, _TANH_LIMIT)
    return tape.add(tape.mul(t, head.scale), head.offset), z


def _log1m_tanh_sq(z):
    # log(1 - tanh(z)^2) = 2 * (log 2 - z - softplus(-2z)); finite for all z
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


def log_prob_squashed(head: SquashedGaussianHead, z, tape: Tape | None = None):
    """Log-density of the squashed action produced by pre-squash value ``z``.

    Sums the diagonal Gaussian log-density of ``z`` and subtracts the
    change-of-variables term ``sum_i log(scale * (1 - tanh(z_i)^2))``. Returns
    shape ``(batch,)`` (a Var of that shape when a tape is given).
    """
    if tape is None:
        z = np.asarray(z, dtype=np.float64)
        eps = (z - head.mu) * np.exp(-head.log_std)
        gauss = -0.5 * eps * eps - head.log_std - _HALF_LOG_2PI
        jac = math.log(head.scale) + _log1m_tanh_sq(z)
        return np.sum(gauss - jac, axis=-1)
    eps = tape.mul(tape.add(z, tape.mul(head.mu, -1.0)), tape.exp(tape.mul(head.log_std, -1.0)))
    gauss = tape.add(tape.mul(tape.square(eps), -0.5), tape.add(tape.mul(head.log_std, -1.0), -_HALF_LOG_2PI))
    # -log(scale) - 2 log 2 + 2 z + 2 softplus(-2z)
    neg_jac = tape.add(
        tape.add(tape.mul(z, 2.0), tape.mul(tape.softplus(tape.mul(z, -2.0)), 2.0)),
        -math.log(head.scale) - 2.0 * math.log(2.0),
    )
    return tape.sum(tape.add(gauss, neg_jac), axis=-1)


def approx_mode(head: SquashedGaussianHead):
    """``scale * tanh(mu) + offset``: the squashed Gaussian mean, used as its mode."""
    return head.scale * np.tanh(_val(head.mu)) + head.offset


def atanh_clipped(action, scale=1.0, offset=0.0):
    """Pre-squash value of a stored action (clipped inside the open box)."""
    t = np.clip((np.asarray(action) - offset) / scale, -_TANH_LIMIT, _TANH_LIMIT)
    return np.arctanh(t)


# ---------------------------------------------------------------------------
# Switching (Bernoulli) policy


@dataclass
class SwitchingDecision:
    """Probabilities of repeating (``beta0``) or switching to the new action (``beta1``)."""

    beta0: np.ndarray
    beta1: np.ndarray
    source: str = "closed_form"
    b: np.ndarray | None = None

    def __post_init__(self):
        b0 = np.asarray(self.beta0)
        b1 = np.asarray(self.beta1)
        if np.any(b0 < 0) or np.any(b1 < 0) or np.any(np.abs(b0 + b1 - 1.0) > 1e-12):
            raise AssertionError("switching probabilities must lie in [0, 1] and sum to 1")

    def log_probs(self):
        """``(log beta0, log beta1)`` without underflow to ``-inf`` when computed from logits."""
        with np.errstate(divide="ignore"):
            return np.log(self.beta0), np.log(self.beta1)

    def entropy(self):
        b0, b1 = np.asarray(self.beta0), np.asarray(self.beta1)
        return -(_xlogx(b0) + _xlogx(b1))


def _xlogx(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def bernoulli_from_logit(logit, source="parameterized"):
    """Switching probabilities from the log-odds of ``b = 1``."""
    beta1 = sigmoid(logit)
    # 1 - sigmoid(x) == sigmoid(-x); compute both directly so they sum to 1 in float
    return SwitchingDecision(1.0 - beta1, beta1, source)


def sample_bernoulli(decision: SwitchingDecision, rng):
    u = rng.random(np.shape(decision.beta1))
    return (u < decision.beta1).astype(np.int64)


# ---------------------------------------------------------------------------
# Entropy targets


def entropy_target_continuous(delta, action_dim, low=-1.0, high=1.0):
    """Entropy of a uniform density on a ``delta`` slice of each box side."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if high <= low:
        raise ValueError("need high > low")
    if action_dim < 1:
        raise ValueError("action_dim must be >= 1")
    return action_dim * (math.log(delta) + math.log(high - low))


def entropy_target_discrete(delta, n):
    """Entropy of ``n`` outcomes with one at ``1 - delta`` and ``delta`` spread evenly."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if n < 2:
        raise ValueError("need at least two outcomes")
    return -delta * math.log(delta / (n - 1)) - (1.0 - delta) * math.log(1.0 - delta)


# ---------------------------------------------------------------------------
# Zeta durations (temporally extended epsilon-greedy)


def zeta_pmf(mu, max_n):
    if mu <= 0 or max_n < 1:
        raise ValueError("need mu > 0 and max_n >= 1")
    w = np.arange(1, max_n + 1, dtype=np.float64) ** (-mu)
    return w / w.sum()


def sample_zeta_duration(mu, max_n, rng, size=None):
    """Duration in ``[1, max_n]`` with ``P(n) ∝ n**-mu``."""
    p = zeta_pmf(mu, max_n)
    draw = rng.choice(max_n, size=size, p=p) + 1
    return int(draw) if size is None else draw
