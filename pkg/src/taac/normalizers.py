"""Adaptive moving-average reward normalization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VAR_FLOOR = 1e-8


@dataclass
class NormalizerState:
    """Running first/second moments with averaging weight ``xi / (L + xi)``.

    Early updates use near-uniform averaging and later ones weight the
    reward seen at step ``l`` roughly like ``(l / L) ** (xi - 1)``.
    """

    m1: float = 0.0
    m2: float = 0.0
    count: int = 0
    xi: float = 8.0
    clip: float = 5.0
    frozen: bool = False

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.clip <= 0:
            raise ValueError("clip bound must be positive")

    def update(self, r):
        r = float(r)
        if not math.isfinite(r):
            raise ValueError(f"non-finite reward {r!r} rejected")
        if self.frozen:
            return self
        eta = self.xi / (self.count + self.xi)
        self.m1 = (1.0 - eta) * self.m1 + eta * r
        self.m2 = (1.0 - eta) * self.m2 + eta * r * r
        self.count += 1
        return self

    def update_many(self, rewards):
        for r in rewards:
            self.update(r)
        return self

    @property
    def variance(self):
        return max(self.m2 - self.m1 * self.m1, 0.0)

    def normalize(self, r):
        """Standardize and clip to ``[-clip, clip]``. Works on scalars or arrays."""
        if self.count < 1:
            raise RuntimeError("normalizer used before any statistics update")
        std = math.sqrt(max(self.m2 - self.m1 * self.m1, VAR_FLOOR))
        out = np.clip((np.asarray(r, dtype=np.float64) - self.m1) / std, -self.clip, self.clip)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"m1": self.m1, "m2": self.m2, "count": self.count, "xi": self.xi, "clip": self.clip}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["m1"]), float(d["m2"]), int(d["count"]), float(d["xi"]), float(d["clip"]))


def update_stats(state: NormalizerState, r):
    return state.update(r)


def normalize_value(state: NormalizerState, r):
    return state.normalize(r)
