"""Experiment configuration: one JSON document, validated field by field."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..agents import VARIANTS, AgentConfig
from ..envs import REGISTRY

# algo names accepted besides the learning agents
DISPATCH_ALGOS = ("tabular-verify",)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algo: str = "TAAC"
    env: str = "mcar"
    seed: int = 0
    lr: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 256
    buffer_capacity: int = 100_000
    tau: float = 5e-3
    target_interval: int = 1
    train_interval: int = 1
    total_frames: int = 100_000
    actors: int = 1
    delta_action: float = 0.1
    delta_switch: float = 0.05
    n_repeat: int = 3
    reward_clip: float = 5.0
    normalizer_xi: float = 8.0
    advantage_clip: bool = False
    hidden: list = field(default_factory=lambda: [256, 256])
    retrace_lambda: float = 1.0
    ez_mu: float = 2.0
    ez_decay_fraction: float = 0.1
    initial_log_alpha: float = 0.0
    warmup_frames: int = 0
    eval_fraction: float = 0.05
    eval_episodes: int = 10
    final_eval_episodes: int = 100
    checkpoint: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algo not in VARIANTS and self.algo not in DISPATCH_ALGOS:
            raise ConfigError(f"algo must be one of {', '.join(VARIANTS + DISPATCH_ALGOS)}, got {self.algo!r}")
        if self.env not in REGISTRY:
            raise ConfigError(f"env must be one of {', '.join(sorted(REGISTRY))}, got {self.env!r}")
        positive_ints = ("batch_size", "buffer_capacity", "target_interval", "train_interval",
                         "total_frames", "actors", "n_repeat")
        for name in positive_ints:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("seed", "warmup_frames", "eval_episodes", "final_eval_episodes"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if not 0.0 < self.delta_action < 1.0 or not 0.0 < self.delta_switch < 1.0:
            raise ConfigError("entropy fractions must lie in (0, 1)")
        if not self.reward_clip > 0 or not self.normalizer_xi > 0:
            raise ConfigError("reward_clip and normalizer_xi must be positive")
        if not 0.0 <= self.retrace_lambda <= 1.0:
            raise ConfigError("retrace_lambda must lie in [0, 1]")
        if not self.ez_mu > 1.0:
            raise ConfigError("ez_mu must exceed 1")
        if not 0.0 < self.ez_decay_fraction <= 1.0 or not 0.0 < self.eval_fraction <= 1.0:
            raise ConfigError("fractions must lie in (0, 1]")
        if not isinstance(self.advantage_clip, bool) or not isinstance(self.checkpoint, bool):
            raise ConfigError("advantage_clip and checkpoint must be booleans")
        h = self.hidden
        if not isinstance(h, (list, tuple)) or not h or any(
                isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in h):
            raise ConfigError("hidden must be a non-empty list of positive integers")
        self.hidden = list(h)

    # -- conversion ---------------------------------------------------------
    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            lr=self.lr, gamma=self.gamma, batch_size=self.batch_size, tau=self.tau,
            target_interval=self.target_interval, hidden=tuple(self.hidden), n_repeat=self.n_repeat,
            delta_action=self.delta_action, delta_switch=self.delta_switch,
            advantage_clip=self.advantage_clip, retrace_lambda=self.retrace_lambda, ez_mu=self.ez_mu,
            ez_decay_frames=max(1, int(round(self.ez_decay_fraction * self.total_frames))),
            initial_log_alpha=self.initial_log_alpha)

    @property
    def warmup(self):
        """Frames collected before the first gradient step.

        At least four batches, so the non-adjacent state sampler can fill a
        whole batch even from a single long episode.
        """
        return max(self.warmup_frames, 4 * self.batch_size)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a JSON config (or start from defaults) and apply overrides."""
    d = {}
    if path is not None:
        with open(path) as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


def parse_assignment(text):
    """``key=value`` with the value parsed as JSON when possible (``lr=3e-4``, ``hidden=[64,64]``)."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
