"""Constrained 2-D point navigation with a draining battery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cnfp.regions import (
    BatteryRule,
    WorldLayout,
    contact_time,
    in_free_space,
    resolve_motion,
    step_battery,
)


class ProtocolError(RuntimeError):
    pass


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    truncated: bool
    violation_obstacle: bool
    violation_battery: bool
    goal_reached: bool

    @property
    def violations(self):
        return (self.violation_obstacle, self.violation_battery)


class NavigationEnv:
    """Point agent that must reach random goals inside a walled arena.

    Reward is the negative distance to the goal after the move, plus a
    bonus when the goal is reached (a new goal is then sampled).  There are
    no terminal states; episodes are truncated after ``max_steps`` steps.
    Violating actions are still executed, but motion stops just short of
    the first contact.
    """

    obs_dim = 5
    action_dim = 2

    def __init__(self, layout=None, rule=None, max_steps=100, goal_radius=0.3,
                 goal_bonus=10.0, start_clearance=0.1, seed=None):
        self.layout = layout or WorldLayout()
        self.rule = rule or BatteryRule()
        self.max_steps = int(max_steps)
        self.goal_radius = float(goal_radius)
        self.goal_bonus = float(goal_bonus)
        self.start_clearance = float(start_clearance)
        self.rng = np.random.default_rng(seed)
        self.position = None
        self.battery = 100.0
        self.goal = None
        self.steps = 0
        self.truncated = False
        self.episode_violations = [0, 0]

    def sample_free_point(self):
        ax0, ay0, ax1, ay1 = self.layout.arena
        while True:
            p = self.rng.uniform((ax0, ay0), (ax1, ay1))
            if in_free_space(p, self.layout, self.start_clearance):
                return p

    def observation(self):
        return np.array([self.position[0], self.position[1], self.battery,
                         self.goal[0], self.goal[1]])

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.position = self.sample_free_point()
        self.goal = self.sample_free_point()
        self.battery = 100.0
        self.steps = 0
        self.truncated = False
        self.episode_violations = [0, 0]
        return self.observation()

    def step(self, action):
        if self.position is None:
            raise ProtocolError("call reset() before step()")
        if self.truncated:
            raise ProtocolError("episode is truncated; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,) or not np.all(np.isfinite(action)):
            raise ValueError(f"action must be a finite 2-vector, got {action!r}")
        # Same semantics as violates_obstacle / violates_battery, sharing
        # one contact computation.
        t_hit = contact_time(self.position, action, self.layout)
        v_obstacle = bool(t_hit <= 1.0)
        self.position = resolve_motion(self.position, action, self.layout, t_hit)
        self.battery = float(step_battery(self.battery, self.position, self.layout, self.rule))
        v_battery = self.battery < self.rule.threshold
        dist = float(np.linalg.norm(self.position - self.goal))
        reward = -dist
        reached = dist <= self.goal_radius
        if reached:
            reward += self.goal_bonus
            self.goal = self.sample_free_point()
        self.steps += 1
        self.truncated = self.steps >= self.max_steps
        self.episode_violations[0] += v_obstacle
        self.episode_violations[1] += v_battery
        return StepResult(self.observation(), reward, self.truncated, v_obstacle, v_battery, reached)


def violation_counts(results):
    """(obstacle, battery) violation counts over a sequence of StepResults."""
    obstacle = sum(1 for r in results if r.violation_obstacle)
    battery = sum(1 for r in results if r.violation_battery)
    return obstacle, battery
