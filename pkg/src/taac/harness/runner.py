"""Training and evaluation orchestration."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from importlib import metadata
from importlib.resources import files

import numpy as np

from ..agents import ActResult, Agent, make_agent
from ..envs import make_env
from ..normalizers import NormalizerState
from ..replay import ReplayBuffer, ShardedReplay, Transition
from ..tabular import verify_report
from .checkpoint import agent_arrays, optimizer_steps, read_checkpoint, restore_agent, write_checkpoint
from .config import ExperimentConfig
from .metrics import MetricsWriter, n_auc, n_score, repetition_percentage

REFERENCE_FILE = "reference_scores.json"


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def load_reference_scores(path=None):
    """``{env: {"z0": random-policy mean, "z1": best-method mean}}``."""
    if path is None:
        text = files("taac.harness").joinpath(REFERENCE_FILE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def _seed_rng(*keys):
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


# -- acting ----------------------------------------------------------------------
@dataclass
class EvalResult:
    returns: list = field(default_factory=list)
    switch_bits: list = field(default_factory=list)
    lengths: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.returns)) if self.returns else float("nan")

    @property
    def std(self):
        return float(np.std(self.returns)) if self.returns else float("nan")

    @property
    def repetition(self):
        return repetition_percentage(self.switch_bits)


class RandomAgent(Agent):
    """Uniform actions over the box; the random-policy reference for n-scores."""

    variant = "random"

    def __init__(self, spec):
        self.spec = spec

    def act(self, s, a_prev, rng, mode="sample"):
        a = rng.uniform(self.spec.low, self.spec.high, size=self.spec.action_dim)
        return ActResult(a=a, b=1, a_hat=a.copy())


def evaluate(agent, env, episodes, rng, mode="eval"):
    """Run whole episodes without learning; the agent's acting state is restored afterwards."""
    saved = agent.rollout_state()
    out = EvalResult()
    a0 = np.zeros(env.spec.action_dim)
    for _ in range(episodes):
        s = env.reset(rng)
        a_prev = a0.copy()
        agent.begin_episode()
        total, bits = 0.0, []
        while True:
            res = agent.act(s, a_prev, rng, mode)
            st = env.step(res.a)
            total += st.reward
            bits.append(res.b)
            s, a_prev = st.state, np.asarray(res.a, dtype=np.float64)
            if st.last:
                break
        out.returns.append(total)
        out.switch_bits.append(bits)
        out.lengths.append(len(bits))
    agent.set_rollout_state(saved)
    return out


def rollout_states(agent, env, frames, rng, mode="sample"):
    """State log of ``frames`` acting steps without learning (for coverage analysis)."""
    states = np.zeros((frames, env.spec.observation_dim))
    a0 = np.zeros(env.spec.action_dim)
    s, a_prev = env.reset(rng), a0.copy()
    agent.begin_episode()
    bits = []
    for i in range(frames):
        states[i] = s
        res = agent.act(s, a_prev, rng, mode)
        bits.append(res.b)
        st = env.step(res.a)
        s, a_prev = st.state, np.asarray(res.a, dtype=np.float64)
        if st.last:
            s, a_prev = env.reset(rng), a0.copy()
            agent.begin_episode()
    return states, bits


class _Worker:
    """One rollout stream: its environment, current state and the agent's acting state."""

    def __init__(self, env, rng, agent):
        self.env = env
        self.a0 = np.zeros(env.spec.action_dim)
        self.s = env.reset(rng)
        self.a_prev = self.a0.copy()
        agent.begin_episode()
        self.acting = agent.rollout_state()
        self.episode_return = 0.0


# -- experiments -------------------------------------------------------------------
@dataclass
class RunResult:
    config: ExperimentConfig
    out_dir: str
    rows: list = field(default_factory=list)
    final: EvalResult | None = None
    n_auc: float = float("nan")
    final_n_score: float = float("nan")
    train_returns: list = field(default_factory=list)
    ok: bool = True
    report: str = ""

    @property
    def metrics_path(self):
        return os.path.join(self.out_dir, "metrics.csv")


def build(cfg: ExperimentConfig, rng):
    env = make_env(cfg.env)
    agent = make_agent(cfg.algo, env.spec, cfg.agent_config(), rng)
    return env, agent


def _eval_points(cfg):
    step = max(1, int(round(cfg.eval_fraction * cfg.total_frames)))
    pts = list(range(step, cfg.total_frames + 1, step))
    if not pts or pts[-1] != cfg.total_frames:
        pts.append(cfg.total_frames)
    return pts


def run_experiment(cfg: ExperimentConfig, out_dir, dry_run=False, reference=None, log=None):
    """Train, evaluate every ``eval_fraction`` of the frames, and write artifacts to ``out_dir``.

    Artifacts: ``config.json``, ``metrics.csv`` (one row per evaluation
    point), ``summary.txt`` and ``checkpoint.bin``.
    """
    log = log or (lambda msg: None)
    os.makedirs(out_dir, exist_ok=True)
    result = RunResult(cfg, out_dir)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    if dry_run:
        result.report = cfg.to_json()
        return result
    if cfg.algo == "tabular-verify":
        text, ok = verify_report(seed=cfg.seed)
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(text + "\n")
        result.ok, result.report = ok, text
        return result

    reference = load_reference_scores() if reference is None else reference
    ref = reference.get(cfg.env, {})
    z0, z1 = ref.get("z0"), ref.get("z1")

    def score(z):
        if z0 is None or z1 is None or z0 == z1:
            return float("nan")
        return float(n_score(z, z0, z1))

    rng = _seed_rng(cfg.seed, 0)
    env, agent = build(cfg, rng)
    envs = [env] + [make_env(cfg.env) for _ in range(cfg.actors - 1)]
    eval_env = make_env(cfg.env)
    if cfg.actors == 1:
        buffer = ReplayBuffer(cfg.buffer_capacity)
        push = lambda tr, w: buffer.push(tr)  # noqa: E731
    else:
        buffer = ShardedReplay(cfg.actors, cfg.buffer_capacity)
        push = buffer.push
    normalizer = NormalizerState(xi=cfg.normalizer_xi, clip=cfg.reward_clip)
    workers = [_Worker(e, rng, agent) for e in envs]
    eval_points = _eval_points(cfg)
    writer = MetricsWriter(result.metrics_path)
    train_every = cfg.train_interval * cfg.actors
    stats_acc = {"entropy_switch": [], "entropy_action": []}
    t_start = time.time()
    next_eval = 0
    frames_done = 0
    try:
        for frame in range(cfg.total_frames):
            w = workers[frame % cfg.actors]
            agent.set_rollout_state(w.acting)
            res = agent.act(w.s, w.a_prev, rng, "sample")
            st = w.env.step(res.a)
            a = np.asarray(res.a, dtype=np.float64)
            push(Transition(a_prev=w.a_prev, s=w.s, b=int(res.b), a=a, s_next=st.state, r=float(st.reward),
                            done=bool(st.done), last=bool(st.last), behavior_logp=float(res.logp),
                            a_hat=res.a_hat, k=int(res.k), explore=bool(res.explore)),
                 frame % cfg.actors)
            w.episode_return += st.reward
            if st.last:
                result.train_returns.append(w.episode_return)
                w.episode_return = 0.0
                w.s, w.a_prev = w.env.reset(rng), w.a0.copy()
                agent.begin_episode()
            else:
                w.s, w.a_prev = st.state, a
            w.acting = agent.rollout_state()
            frames_done = frame + 1

            if len(buffer) >= cfg.warmup and (frame + 1) % train_every == 0:
                ts = agent.train_step(buffer, normalizer, rng)
                stats_acc["entropy_switch"].append(ts.entropy_switch)
                stats_acc["entropy_action"].append(ts.entropy_action)

            if frame + 1 == eval_points[next_eval]:
                ev = evaluate(agent, eval_env, cfg.eval_episodes, _seed_rng(cfg.seed, 1, frame + 1))
                row = {
                    "frame": frame + 1, "mean_return": ev.mean, "std_return": ev.std, "n_score": score(ev.mean),
                    "repetition_pct": ev.repetition, "alpha_prime": agent.alpha_prime,
                    "alpha_dblprime": agent.alpha_dblprime,
                    "entropy_switch": _nanmean(stats_acc["entropy_switch"]),
                    "entropy_action": _nanmean(stats_acc["entropy_action"]),
                }
                writer.write(row)
                stats_acc = {k: [] for k in stats_acc}
                log(f"frame {frame + 1:>8d}  return {ev.mean:9.3f}  n-score {row['n_score']:.3f}  "
                    f"repeat {ev.repetition:.3f}  ({time.time() - t_start:.0f}s)")
                next_eval += 1
        normalizer.frozen = True
        result.final = evaluate(agent, eval_env, cfg.final_eval_episodes, _seed_rng(cfg.seed, 2))
    finally:
        writer.close()
        result.rows = writer.rows
        if cfg.checkpoint:
            save_run_checkpoint(os.path.join(out_dir, "checkpoint.bin"), cfg, agent, normalizer, rng,
                                frames=frames_done)
    curve = [r["n_score"] for r in result.rows]
    if curve and all(c == c for c in curve):
        result.n_auc = n_auc(curve)
    result.final_n_score = score(result.final.mean) if result.final.returns else float("nan")
    result.report = _summary_text(result, time.time() - t_start)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(result.report)
    return result


def _nanmean(xs):
    xs = [x for x in xs if x == x]
    return float(np.mean(xs)) if xs else float("nan")


def _summary_text(result: RunResult, seconds):
    cfg, fin = result.config, result.final
    lines = [
        f"code version {code_version()}",
        f"algo {cfg.algo}  env {cfg.env}  seed {cfg.seed}  frames {cfg.total_frames}",
        f"config {json.dumps(cfg.to_dict(), sort_keys=True)}",
        f"final evaluation over {len(fin.returns)} episodes: mean {fin.mean:.4f}  std {fin.std:.4f}",
        f"final n-score {result.final_n_score:.4f}  n-AUC {result.n_auc:.4f}",
        f"repetition percentage {100 * fin.repetition:.2f}%",
        f"wall time {seconds:.1f}s",
    ]
    return "\n".join(lines) + "\n"


# -- checkpoints -------------------------------------------------------------------
def save_run_checkpoint(path, cfg, agent, normalizer, rng, frames):
    meta = {
        "config": cfg.to_dict(), "code_version": code_version(), "frames": frames,
        "normalizer": normalizer.to_dict(), "rng": rng.bit_generator.state,
        "optimizer_steps": optimizer_steps(agent), "agent_frames": getattr(agent, "frames", 0),
    }
    write_checkpoint(path, meta, agent_arrays(agent))


def load_run_checkpoint(path):
    """Rebuild ``(config, agent, normalizer, rng)`` from a checkpoint."""
    meta, arrays = read_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    _, agent = build(cfg, _seed_rng(cfg.seed, 0))
    restore_agent(agent, arrays, meta["optimizer_steps"])
    if hasattr(agent, "frames"):
        agent.frames = int(meta.get("agent_frames", 0))
    normalizer = NormalizerState.from_dict(meta["normalizer"])
    return cfg, agent, normalizer, rng


def calibrate(env_name, base: ExperimentConfig, algos, out_dir, log=None, random_episodes=100):
    """Random-policy and best-method scores for one environment.

    Runs every algorithm in ``algos`` with ``base`` and keeps the best final
    mean as ``z1``; ``z0`` is the uniform-random policy's mean.
    """
    env = make_env(env_name)
    z0 = evaluate(RandomAgent(env.spec), env, random_episodes, _seed_rng(base.seed, 3), mode="sample").mean
    finals = {}
    for algo in algos:
        cfg = base.replace(algo=algo, env=env_name)
        res = run_experiment(cfg, os.path.join(out_dir, algo), reference={}, log=log)
        finals[algo] = res.final.mean
    best = max(finals, key=finals.get)
    return {"z0": z0, "z1": finals[best], "best": best, "finals": finals}
