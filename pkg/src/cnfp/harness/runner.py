"""Training and evaluation loops with CSV metric logging."""
from __future__ import annotations

import csv
import ctypes
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cnfp.agents.sac import SacAgent
from cnfp.env import NavigationEnv

log = logging.getLogger(__name__)

METRICS_HEADER = ["episode", "return", "violations_obstacle", "violations_battery", "seconds"]


class TrainingAborted(RuntimeError):
    pass


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    violations_obstacle: int
    violations_battery: int
    seconds: float


@dataclass
class RunMetrics:
    seed: int
    variant: str
    episodes: list = field(default_factory=list)
    env_violations: list = field(default_factory=lambda: [0, 0])

    @property
    def returns(self):
        return np.array([e.ret for e in self.episodes])

    @property
    def violations(self):
        return np.array([[e.violations_obstacle, e.violations_battery] for e in self.episodes])


def _format_row(rec):
    return [rec.episode, repr(float(rec.ret)), rec.violations_obstacle,
            rec.violations_battery, f"{rec.seconds:.3f}"]


def tune_allocator():
    """Keep glibc from mmap-ing every (256, 64) float64 temporary.

    Those arrays sit right at the default 128 KiB mmap threshold, which
    makes each network pass pay for fresh pages; raising the thresholds
    roughly halves training time.  No-op where glibc is unavailable.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 64 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 256 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def make_env(config, seed):
    return NavigationEnv(config.layout, config.rule, max_steps=config.max_steps,
                         goal_radius=config.goal_radius, seed=seed)


def run_seed(config, seed, out_dir=None, progress=False):
    """Train one agent for ``config.episodes`` episodes.

    Metrics go to ``out_dir/metrics.csv`` one row per finished episode; the
    final agent is saved to ``out_dir/checkpoint.npz``.  Everything written
    is a function of (config, seed) only, unless ``record_wall_clock`` is set.
    """
    tune_allocator()
    env_seed, agent_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    env = make_env(config, env_seed)
    agent = SacAgent(config.variant, config.sac, config.layout, config.rule, seed=agent_seed)
    metrics = RunMetrics(seed=int(seed), variant=config.variant)
    writer = timing = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        th = open(out_dir / "timing.csv", "w", newline="")
        timing = csv.writer(th, lineterminator="\n")
        timing.writerow(["episode", "seconds"])
    bad_streak = 0
    try:
        for ep in range(config.episodes):
            t0 = time.perf_counter()
            obs = env.reset()
            ret = 0.0
            while True:
                if agent.ready():
                    action = agent.act(obs)
                else:
                    action = agent.random_action(obs)
                res = env.step(action)
                agent.observe(obs, action, res.reward, res.observation, res.truncated,
                              res.violations)
                ret += res.reward
                obs = res.observation
                if agent.ready():
                    for _ in range(config.sac.updates_per_step):
                        if agent.update() is None:
                            bad_streak += 1
                        else:
                            bad_streak = 0
                    if bad_streak >= config.max_bad_updates:
                        raise TrainingAborted(
                            f"{bad_streak} consecutive non-finite updates at episode {ep}: "
                            f"{agent.diagnostics[-1]['error']}"
                        )
                if res.truncated:
                    break
            seconds = time.perf_counter() - t0
            vo, vb = env.episode_violations
            metrics.env_violations[0] += vo
            metrics.env_violations[1] += vb
            rec = EpisodeRecord(ep, ret, vo, vb, seconds if config.record_wall_clock else 0.0)
            metrics.episodes.append(rec)
            if writer is not None:
                writer.writerow(_format_row(rec))
                fh.flush()
                timing.writerow([ep, f"{seconds:.3f}"])
            if progress:
                log.info("%s seed=%s ep=%d return=%.2f viol=(%d,%d) alpha=%.3f lam=%s",
                         config.variant, seed, ep, ret, vo, vb, agent.alpha, agent.lambdas)
            if config.eval_every and (ep + 1) % config.eval_every == 0 and out_dir is not None:
                summary = evaluate_agent(agent, make_env(config, [seed, ep]), config.eval_episodes)
                with open(out_dir / "evaluations.jsonl", "a") as ev:
                    ev.write(json.dumps({"episode": ep, **summary}) + "\n")
    except TrainingAborted as exc:
        if out_dir is not None:
            with open(out_dir / "error.json", "w") as eh:
                json.dump({"error": "training_aborted", "message": str(exc),
                           "diagnostics": agent.diagnostics[-10:]}, eh, indent=2)
        raise
    finally:
        if writer is not None:
            fh.close()
            th.close()
    if out_dir is not None:
        agent.save(out_dir / "checkpoint.npz", include_buffer=False)
        with open(out_dir / "summary.json", "w") as sh:
            json.dump({
                "variant": config.variant,
                "seed": int(seed),
                "episodes": len(metrics.episodes),
                "env_violations": metrics.env_violations,
                "skipped_updates": agent.skipped_updates,
                "alpha": agent.alpha,
                "lambdas": agent.lambdas.tolist(),
            }, sh, indent=2)
    metrics.agent = agent
    return metrics


def train(config, out_dir=None, progress=False):
    """Run every seed of ``config`` sequentially; returns {seed: RunMetrics}."""
    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    results = {}
    for seed in config.seeds:
        results[seed] = run_seed(config, seed, out_dir / config.variant / f"seed_{seed}", progress)
    return results


def rollout(policy_fn, env, episodes, seed=None):
    """Run ``episodes`` episodes with ``policy_fn(obs) -> action``.

    Returns a list of (return, obstacle violations, battery violations).
    """
    out = []
    for i in range(episodes):
        obs = env.reset(None if seed is None else [seed, i])
        ret = 0.0
        while True:
            res = env.step(policy_fn(obs))
            ret += res.reward
            obs = res.observation
            if res.truncated:
                break
        out.append((ret, *env.episode_violations))
    return out


def summarize(results):
    if not results:
        return {"episodes": 0}
    arr = np.asarray(results, dtype=np.float64)
    names = ["return", "violations_obstacle", "violations_battery"]
    summary = {"episodes": len(results)}
    for j, name in enumerate(names):
        summary[f"{name}_mean"] = float(arr[:, j].mean())
        summary[f"{name}_std"] = float(arr[:, j].std(ddof=1)) if len(arr) > 1 else 0.0
    return summary


def evaluate_agent(agent, env, episodes, seed=None):
    """Deterministic-mode rollouts (zero policy noise) and their summary."""
    results = rollout(lambda o: agent.act(o, deterministic=True), env, episodes, seed)
    return summarize(results)


def evaluate(checkpoint, episodes, seed=12345, max_steps=100, goal_radius=0.3):
    """Load a checkpoint and evaluate it deterministically."""
    agent = SacAgent.load(checkpoint)
    if episodes == 0:
        return summarize([])
    env = NavigationEnv(agent.layout, agent.rule, max_steps=max_steps, goal_radius=goal_radius)
    return evaluate_agent(agent, env, episodes, seed=seed)
