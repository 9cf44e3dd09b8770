"""Gaussian policy heads pushed through a per-state flow chain."""
from __future__ import annotations

import numpy as np

from cnfp.diffcore import Mlp
from cnfp.flows import Box, FlowChain
from cnfp.regions import battery_region, obstacle_region

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def cnfp_chain(layout, rule):
    """Battery disc first, obstacle box last: the obstacle constraint wins."""

    def build(obs):
        return FlowChain([battery_region(obs, layout, rule), obstacle_region(obs, layout)],
                         names=["battery", "obstacle"])

    return build


def box_chain(layout):
    """The usual tanh squash onto [-max_step, max_step]^2."""
    s = layout.max_step
    box = Box(np.full(2, -s), np.full(2, s))

    def build(obs):
        return FlowChain([box])

    return build


def observation_scaler(layout):
    ax0, ay0, ax1, ay1 = layout.arena
    cx, cy = 0.5 * (ax0 + ax1), 0.5 * (ay0 + ay1)
    hx, hy = 0.5 * (ax1 - ax0), 0.5 * (ay1 - ay0)
    offset = np.array([cx, cy, 50.0, cx, cy])
    scale = np.array([hx, hy, 50.0, hx, hy])

    def normalize(obs):
        return (np.asarray(obs, dtype=np.float64) - offset) / scale

    return normalize


def gaussian_log_prob(a, mean, log_std):
    z = (a - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


class FlowPolicy:
    """Diagonal Gaussian N(mu(s), sigma(s)^2) followed by a flow chain.

    ``chain_fn`` maps a batch of observations to a FlowChain whose steps
    carry one region per observation.  The sample's log-density is the
    Gaussian log-density minus the chain's accumulated log-determinant.
    """

    def __init__(self, actor, chain_fn, normalize):
        self.actor = actor
        self.chain_fn = chain_fn
        self.normalize = normalize

    @classmethod
    def build(cls, chain_fn, normalize, hidden=(64, 64), rng=None, activation="relu"):
        actor = Mlp([5, *hidden, 4], activation=activation, rng=rng)
        return cls(actor, chain_fn, normalize)

    def head(self, obs):
        out, cache = self.actor.forward_cached(self.normalize(obs))
        mean = out[..., :2]
        raw = out[..., 2:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, raw, cache

    def sample(self, obs, rng=None, deterministic=False, noise=None):
        """Reparametrized sample.

        Returns ``(action, log_prob, pre_flow, ctx)``; ``ctx`` is what
        ``backward`` needs to push loss gradients into the actor.
        """
        obs = np.asarray(obs, dtype=np.float64)
        mean, log_std, raw, cache = self.head(obs)
        if noise is not None:
            xi = np.asarray(noise, dtype=np.float64)
        elif deterministic:
            xi = np.zeros_like(mean)
        else:
            xi = rng.standard_normal(mean.shape)
        std = np.exp(log_std)
        a = mean + std * xi
        chain = self.chain_fn(obs)
        y, log_det, points = chain.forward(a, return_intermediates=True)
        log_prob = np.sum(-0.5 * xi * xi - log_std - HALF_LOG_2PI, axis=-1) - log_det
        ctx = (cache, chain, a, xi, std, raw, points)
        return y, log_prob, a, ctx

    def backward(self, ctx, action_grad, log_prob_grad):
        """Actor parameter gradients of <action, action_grad> + <log_prob, log_prob_grad>."""
        cache, chain, a, xi, std, raw, points = ctx
        log_prob_grad = np.asarray(log_prob_grad, dtype=np.float64)
        # log_prob = base - log_det, so log_det receives -log_prob_grad.
        ga = chain.backward(a, action_grad, -log_prob_grad, points=points)
        g_mean = ga
        g_log_std = ga * std * xi - log_prob_grad[..., None]
        g_log_std = g_log_std * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))
        grads, _ = self.actor.backward(cache, np.concatenate([g_mean, g_log_std], axis=-1))
        return grads

    def log_prob(self, obs, action):
        """Log-density of executed actions; ``-inf`` outside the chain's image."""
        obs = np.asarray(obs, dtype=np.float64)
        mean, log_std, _, _ = self.head(obs)
        chain = self.chain_fn(obs)
        a, valid = chain.inverse_where_valid(action)
        _, log_det = chain.forward(a)
        return np.where(valid, gaussian_log_prob(a, mean, log_std) - log_det, -np.inf)
