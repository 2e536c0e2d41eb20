"""Ring-buffer replay with N-step windows and non-adjacent state sampling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    """One environment step as stored for training.

    ``done`` marks a true terminal state (no bootstrap). ``last`` marks the
    final step of an episode for any reason, including the time limit.
    For the open-loop repeating baselines ``k`` counts the steps of the
    current commitment still to run, this one included, so a fresh
    decision stores its full duration. ``explore`` flags forced exploration.
    """

    a_prev: np.ndarray
    s: np.ndarray
    b: int
    a: np.ndarray
    s_next: np.ndarray
    r: float
    done: bool = False
    last: bool = False
    behavior_logp: float = float("nan")
    a_hat: np.ndarray | None = None
    k: int = 0
    explore: bool = False


_VECTOR_FIELDS = ("a_prev", "s", "a", "s_next", "a_hat")
_SCALAR_FIELDS = {
    "b": np.int64, "r": np.float64, "done": bool, "last": bool,
    "behavior_logp": np.float64, "k": np.int64, "explore": bool, "episode": np.int64,
}


@dataclass
class WindowBatch:
    """``batch`` windows of up to ``horizon`` steps, padded after ``length``.

    Every field has shape ``(batch, horizon, ...)``; ``mask[i, t]`` is True
    for real steps. ``terminal[i]`` says whether the last real step ended in
    a terminal state.
    """

    index: np.ndarray
    length: np.ndarray
    mask: np.ndarray
    fields: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["fields"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def batch(self):
        return self.index.shape[0]

    @property
    def horizon(self):
        return self.mask.shape[1]

    @property
    def terminal(self):
        return self.fields["done"][np.arange(self.batch), self.length - 1]

    def step(self, t):
        """Dictionary of fields at window offset ``t``."""
        return {k: v[:, t] for k, v in self.fields.items()}


class ReplayBuffer:
    def __init__(self, capacity=100_000):
        if capacity <= 0:
            raise ValueError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.size = 0
        self.head = 0  # next write slot
        self.episode = 0
        self._store = None
        self.pushes = 0

    def __len__(self):
        return self.size

    def _allocate(self, tr: Transition):
        c = self.capacity
        st = {}
        for name in _VECTOR_FIELDS:
            v = getattr(tr, name)
            if name == "a_hat" and v is None:
                v = tr.a
            st[name] = np.zeros((c,) + np.shape(v), dtype=np.float64)
        for name, dt in _SCALAR_FIELDS.items():
            st[name] = np.zeros(c, dtype=dt)
        self._store = st

    def push(self, tr: Transition):
        a = np.asarray(tr.a, dtype=np.float64)
        a_prev = np.asarray(tr.a_prev, dtype=np.float64)
        if int(tr.b) not in (0, 1):
            raise ValueError(f"switching bit must be 0 or 1, got {tr.b}")
        if int(tr.b) == 0 and not np.array_equal(a, a_prev):
            raise ValueError("b == 0 requires the executed action to equal a_prev exactly")
        if not np.isfinite(tr.r):
            raise ValueError("non-finite reward")
        if self._store is None:
            self._allocate(tr)
        st, i = self._store, self.head
        st["a_prev"][i] = a_prev
        st["s"][i] = tr.s
        st["a"][i] = a
        st["s_next"][i] = tr.s_next
        st["a_hat"][i] = a if tr.a_hat is None else tr.a_hat
        st["b"][i] = tr.b
        st["r"][i] = tr.r
        st["done"][i] = tr.done
        st["last"][i] = tr.last or tr.done
        st["behavior_logp"][i] = tr.behavior_logp
        st["k"][i] = tr.k
        st["explore"][i] = tr.explore
        st["episode"][i] = self.episode
        if tr.last or tr.done:
            self.episode += 1
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1

    def _slots(self, idx):
        """Ring slots -> logical positions 0 (oldest) .. size-1 (newest)."""
        oldest = (self.head - self.size) % self.capacity
        return (idx - oldest) % self.capacity

    def _sample_starts(self, batch, rng, eligible=None):
        if self.size == 0:
            raise RuntimeError("cannot sample from an empty replay buffer")
        oldest = (self.head - self.size) % self.capacity
        if eligible is None:
            return (oldest + rng.integers(0, self.size, size=batch)) % self.capacity
        slots = (oldest + np.arange(self.size)) % self.capacity
        slots = slots[eligible[slots]]
        if slots.size == 0:
            raise RuntimeError("no eligible start steps in the replay buffer")
        return slots[rng.integers(0, slots.size, size=batch)]

    def gather_windows(self, starts, horizon):
        """Windows beginning at the given ring slots (see :meth:`sample_windows`)."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        st = self._store
        starts = np.asarray(starts, dtype=np.int64)
        offs = np.arange(horizon)
        idx = (starts[:, None] + offs[None, :]) % self.capacity
        # a step is in the window if it is not past the newest transition,
        # belongs to the start's episode and no earlier step closed the episode
        pos = self._slots(starts)
        inside = (pos[:, None] + offs[None, :]) < self.size
        same = st["episode"][idx] == st["episode"][starts][:, None]
        ended = np.cumsum(st["last"][idx], axis=1)
        before_end = np.concatenate([np.ones((len(starts), 1), bool), ended[:, :-1] == 0], axis=1)
        mask = np.cumprod(inside & same & before_end, axis=1).astype(bool)
        length = mask.sum(axis=1)
        fields = {k: v[idx] for k, v in st.items()}
        wb = WindowBatch(starts, length, mask, fields)
        _check_chain(wb)
        return wb

    def sample_windows(self, batch, horizon, rng, eligible=None):
        """Uniform start slots; windows stop after the episode's last step.

        ``eligible`` optionally restricts starts to ring slots flagged True.
        """
        return self.gather_windows(self._sample_starts(batch, rng, eligible), horizon)

    def field(self, name):
        """The raw ring array of a stored field (read-only use)."""
        return self._store[name]

    def sample_states_nonconsecutive(self, batch, rng):
        """Slots with no two at adjacent time steps of the same episode.

        Returns ``(s, a_prev, slots)``. When the buffer cannot supply
        ``batch`` such slots the batch shrinks and a warning is issued.
        """
        if self.size == 0:
            raise RuntimeError("cannot sample from an empty replay buffer")
        st = self._store
        episode = st["episode"]
        cap = self.capacity
        chosen = []
        taken = set()

        def consider(cands):
            # neighbouring ring slots with equal episode id are consecutive steps
            # (or, for an episode longer than the buffer, rejected conservatively)
            ep = episode[cands].tolist()
            ep_prev = episode[(cands - 1) % cap].tolist()
            ep_next = episode[(cands + 1) % cap].tolist()
            for c, e, ep_p, ep_n in zip(cands.tolist(), ep, ep_prev, ep_next):
                if c in taken:
                    continue
                if ((c - 1) % cap in taken and ep_p == e) or ((c + 1) % cap in taken and ep_n == e):
                    continue
                taken.add(c)
                chosen.append(c)
                if len(chosen) == batch:
                    return True
            return False

        if not consider(self._sample_starts(2 * batch, rng)):
            # slow path: scan a full random permutation of the stored slots
            oldest = (self.head - self.size) % self.capacity
            perm = (oldest + rng.permutation(self.size)) % self.capacity
            consider(perm)
        if len(chosen) < batch:
            warnings.warn(
                f"replay holds too few non-adjacent steps: batch reduced from {batch} to {len(chosen)}",
                RuntimeWarning, stacklevel=2)
        slots = np.asarray(chosen, dtype=np.int64)
        return st["s"][slots], st["a_prev"][slots], slots

    def fetch(self, slots, name):
        return self._store[name][np.asarray(slots)]

    # -- persistence ---------------------------------------------------------
    def state_dict(self):
        meta = {"capacity": self.capacity, "size": self.size, "head": self.head,
                "episode": self.episode, "pushes": self.pushes}
        arrays = {} if self._store is None else {k: v.copy() for k, v in self._store.items()}
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        buf = cls(meta["capacity"])
        buf.size, buf.head = meta["size"], meta["head"]
        buf.episode, buf.pushes = meta["episode"], meta["pushes"]
        buf._store = dict(arrays) if arrays else None
        return buf


def _check_chain(wb: WindowBatch):
    if wb.horizon < 2:
        return
    both = wb.mask[:, 1:]
    s_next = wb.fields["s_next"][:, :-1][both]
    s = wb.fields["s"][:, 1:][both]
    if not np.array_equal(s_next, s):
        raise AssertionError("replay window is not a consecutive state chain")


class ShardedReplay:
    """One ring buffer per rollout worker behind the sampling interface of :class:`ReplayBuffer`.

    Windows never cross workers. Samples are spread over the shards in
    proportion to their (eligible) sizes, so every stored step is equally
    likely. Slot numbers are global: ``shard * capacity + local slot``.
    """

    def __init__(self, shards, capacity=100_000):
        self.shards = [ReplayBuffer(capacity) for _ in range(shards)]
        self.capacity = capacity

    def __len__(self):
        return sum(len(s) for s in self.shards)

    def push(self, tr: Transition, shard=0):
        self.shards[shard].push(tr)

    def field(self, name):
        return np.concatenate([s.field(name) if s._store is not None
                               else np.zeros(self.capacity, dtype=_SCALAR_FIELDS.get(name, np.float64))
                               for s in self.shards])

    def _split(self, batch, rng, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.sum() <= 0:
            raise RuntimeError("cannot sample from an empty replay buffer")
        return rng.multinomial(batch, weights / weights.sum())

    def sample_windows(self, batch, horizon, rng, eligible=None):
        c = self.capacity
        if eligible is None:
            weights = [len(s) for s in self.shards]
        else:
            weights = [_count_eligible(s, eligible[i * c:(i + 1) * c]) for i, s in enumerate(self.shards)]
        counts = self._split(batch, rng, weights)
        parts = []
        for i, (s, n) in enumerate(zip(self.shards, counts)):
            if n:
                el = None if eligible is None else eligible[i * c:(i + 1) * c]
                wb = s.sample_windows(int(n), horizon, rng, el)
                wb.index = wb.index + i * c
                parts.append(wb)
        fields = {k: np.concatenate([p.fields[k] for p in parts]) for k in parts[0].fields}
        return WindowBatch(np.concatenate([p.index for p in parts]), np.concatenate([p.length for p in parts]),
                           np.concatenate([p.mask for p in parts]), fields)

    def sample_states_nonconsecutive(self, batch, rng):
        counts = self._split(batch, rng, [len(s) for s in self.shards])
        out_s, out_a, out_slots = [], [], []
        for i, (s, n) in enumerate(zip(self.shards, counts)):
            if n:
                st, ap, slots = s.sample_states_nonconsecutive(int(n), rng)
                out_s.append(st)
                out_a.append(ap)
                out_slots.append(slots + i * self.capacity)
        return np.concatenate(out_s), np.concatenate(out_a), np.concatenate(out_slots)

    def fetch(self, slots, name):
        slots = np.asarray(slots)
        shard, local = slots // self.capacity, slots % self.capacity
        out = None
        for i, s in enumerate(self.shards):
            sel = shard == i
            if np.any(sel):
                vals = s.fetch(local[sel], name)
                if out is None:
                    out = np.zeros((slots.shape[0],) + vals.shape[1:], dtype=vals.dtype)
                out[sel] = vals
        return out


def _count_eligible(buf: ReplayBuffer, eligible):
    if buf.size == 0:
        return 0
    oldest = (buf.head - buf.size) % buf.capacity
    slots = (oldest + np.arange(buf.size)) % buf.capacity
    return int(np.sum(eligible[slots]))
