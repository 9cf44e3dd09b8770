from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling.

    Stores the executed action, the raw environment reward, the truncation
    flag and the two constraint-violation flags (obstacle, battery).
    """

    fields = ("obs", "action", "reward", "next_obs", "done", "costs")

    def __init__(self, capacity, obs_dim=5, action_dim=2, n_costs=2):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.costs = np.zeros((self.capacity, n_costs))
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, costs):
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.costs[i] = costs
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {name: getattr(self, name)[idx] for name in self.fields}

    def state_arrays(self):
        return {f"buffer_{name}": getattr(self, name)[: self.size] for name in self.fields}

    def load_state_arrays(self, arrays, cursor):
        n = len(arrays["buffer_reward"])
        for name in self.fields:
            getattr(self, name)[:n] = arrays[f"buffer_{name}"]
        self.size = n
        self.cursor = int(cursor)
