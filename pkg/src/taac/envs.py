"""Toy continuous-control environments and random tabular MDPs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    observation_dim: int
    action_dim: int
    low: float = -1.0
    high: float = 1.0
    time_limit: int = 1000
    # box used for state-coverage grids: (lows, highs) per observation dim
    state_low: tuple = ()
    state_high: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise ValueError("action bounds must be finite with low < high")
        if self.time_limit < 1:
            raise ValueError("time_limit must be >= 1")


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool       # terminal: do not bootstrap
    truncated: bool  # time limit reached: bootstrap

    @property
    def last(self):
        return self.done or self.truncated

    def __iter__(self):
        return iter((self.state, self.reward, self.done))


class Env:
    """Base class. Subclasses implement ``_reset`` and ``_step``."""

    spec: EnvSpec
    name = "env"

    def __init__(self):
        self.t = 0
        self.clamp_count = 0
        self._over = True
        self.state = None

    def reset(self, rng):
        self.t = 0
        self._over = False
        self.state = self._reset(rng)
        return self.state.copy()

    def step(self, action):
        if self._over:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        clipped = np.clip(a, self.spec.low, self.spec.high)
        if not np.array_equal(clipped, a):
            self.clamp_count += 1
        self.t += 1
        s, r, done = self._step(clipped)
        self.state = s
        truncated = (not done) and self.t >= self.spec.time_limit
        self._over = done or truncated
        return StepResult(s.copy(), float(r), bool(done), bool(truncated))

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, a):
        raise NotImplementedError


class MountainCar(Env):
    """Continuous mountain car: +100 on reaching the hill top, -0.1 * a^2 per step."""

    name = "mcar"
    MIN_POS, MAX_POS, GOAL_POS = -1.2, 0.6, 0.45
    MAX_SPEED = 0.07
    POWER = 0.0015

    def __init__(self, time_limit=999):
        super().__init__()
        self.spec = EnvSpec(2, 1, -1.0, 1.0, time_limit,
                            (self.MIN_POS, -self.MAX_SPEED), (self.MAX_POS, self.MAX_SPEED))

    def _reset(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _step(self, a):
        p, v = self.state
        force = float(a[0])
        v = v + force * self.POWER - 0.0025 * math.cos(3.0 * p)
        v = min(max(v, -self.MAX_SPEED), self.MAX_SPEED)
        p = p + v
        p = min(max(p, self.MIN_POS), self.MAX_POS)
        if p == self.MIN_POS and v < 0:
            v = 0.0
        done = p >= self.GOAL_POS
        r = -0.1 * force * force + (100.0 if done else 0.0)
        return np.array([p, v]), r, done


class SparsePointMass(Env):
    """2-D point mass with a goal disk; reward 1 only inside the disk."""

    name = "sparse-pm"
    GOAL = (0.8, 0.8)
    RADIUS = 0.05
    STEP = 0.05

    def __init__(self, time_limit=200):
        super().__init__()
        self.spec = EnvSpec(2, 2, -1.0, 1.0, time_limit, (-1.0, -1.0), (1.0, 1.0))

    def _reset(self, rng):
        return np.zeros(2)

    def _step(self, a):
        s = np.clip(self.state + self.STEP * a, -1.0, 1.0)
        hit = math.hypot(s[0] - self.GOAL[0], s[1] - self.GOAL[1]) <= self.RADIUS
        return s, (1.0 if hit else 0.0), hit


class DenseReacher(Env):
    """1-D reacher: position follows the action, reward is minus the distance to a target."""

    name = "dense-reacher"
    STEP = 0.1

    def __init__(self, time_limit=100):
        super().__init__()
        self.spec = EnvSpec(2, 1, -1.0, 1.0, time_limit, (-1.0, -1.0), (1.0, 1.0))
        self.target = 0.0

    def _reset(self, rng):
        self.target = rng.uniform(-1.0, 1.0)
        return np.array([rng.uniform(-1.0, 1.0), self.target])

    def _step(self, a):
        x = float(np.clip(self.state[0] + self.STEP * a[0], -1.0, 1.0))
        return np.array([x, self.target]), -abs(x - self.target), False


# ---------------------------------------------------------------------------
# Tabular MDPs


@dataclass
class TabularMDP:
    P: np.ndarray  # (S, A, S)
    R: np.ndarray  # (S, A, S)
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.P.shape != self.R.shape or self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError("P and R must both have shape (S, A, S)")
        if np.any(np.abs(self.P.sum(axis=2) - 1.0) > 1e-12) or np.any(self.P < 0):
            raise ValueError("transition rows must be probability vectors")

    @property
    def S(self):
        return self.P.shape[0]

    @property
    def A(self):
        return self.P.shape[1]

    @property
    def r_bar(self):
        """Expected immediate reward, shape (S, A)."""
        return np.einsum("sat,sat->sa", self.P, self.R)


def make_random_tabular(S, A, gamma, rng, max_states=16, max_actions=4):
    if not (1 <= S <= max_states and 1 <= A <= max_actions):
        raise ValueError(f"tabular MDP limited to S <= {max_states}, A <= {max_actions}")
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(S, A, S))
    return TabularMDP(P, R, gamma)


class TabularEnv(Env):
    """Step-through wrapper over a :class:`TabularMDP`; actions are indices."""

    name = "tabular"

    def __init__(self, mdp: TabularMDP | None = None, time_limit=100, seed=0):
        super().__init__()
        self.mdp = mdp if mdp is not None else make_random_tabular(5, 2, 0.9, np.random.default_rng(seed))
        self.spec = EnvSpec(1, 1, 0.0, float(self.mdp.A - 1), time_limit, (0.0,), (float(self.mdp.S - 1),))
        self._rng = None

    def _reset(self, rng):
        self._rng = rng
        return np.array([0.0])

    def _step(self, a):
        s = int(self.state[0])
        ai = int(round(float(a[0])))
        s2 = int(self._rng.choice(self.mdp.S, p=self.mdp.P[s, ai]))
        return np.array([float(s2)]), float(self.mdp.R[s, ai, s2]), False


REGISTRY = {
    "mcar": MountainCar,
    "sparse-pm": SparsePointMass,
    "dense-reacher": DenseReacher,
    "tabular": TabularEnv,
}


def make_env(name, **kwargs):
    try:
        return REGISTRY[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(REGISTRY)}") from None
