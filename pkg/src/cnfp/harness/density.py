"""Policy densities on a grid and per-stage sample clouds."""
from __future__ import annotations

import json

import numpy as np

from cnfp.agents.sac import SacAgent
from cnfp.regions import InvalidStateError, in_free_space


def final_region_bounds(chain):
    """Bounding rectangle of the chain's last region, which holds its image."""
    lo, hi = chain.steps[-1].bounding_box()
    return np.asarray(lo, dtype=np.float64).reshape(-1), np.asarray(hi, dtype=np.float64).reshape(-1)


def density_grid(policy, obs, resolution, bounds=None):
    """Policy density at the cell centres of a ``resolution``^2 grid.

    The grid spans the final region unless ``bounds = (lo, hi)`` is given.
    Returns ``(xs, ys, density, (lo, hi))`` with ``density[iy, ix]``; cells
    outside the chain's image get exactly zero.
    """
    obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    chain = policy.chain_fn(obs)
    lo, hi = final_region_bounds(chain) if bounds is None else bounds
    xs = lo[0] + (np.arange(resolution) + 0.5) * (hi[0] - lo[0]) / resolution
    ys = lo[1] + (np.arange(resolution) + 0.5) * (hi[1] - lo[1]) / resolution
    gx, gy = np.meshgrid(xs, ys)
    points = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    logp = policy.log_prob(np.repeat(obs, len(points), axis=0), points)
    density = np.where(np.isfinite(logp), np.exp(logp), 0.0).reshape(resolution, resolution)
    return xs, ys, density, (lo, hi)


def grid_mass(xs, ys, density):
    return float(density.sum() * (xs[1] - xs[0]) * (ys[1] - ys[0]))


def stage_samples(policy, obs, n, rng):
    """Samples before the flow and after each of its steps."""
    obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    obs_b = np.repeat(obs, n, axis=0)
    mean, log_std, _, _ = policy.head(obs_b)
    a = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    chain = policy.chain_fn(obs)
    y, _, points = chain.forward(a, return_intermediates=True)
    outputs = points[1:] + [y]
    clouds = {"pre_flow": a}
    for name, cloud in zip(chain.names, outputs):
        clouds[f"after_{name}"] = cloud
    return clouds


def _describe(step):
    if step.kind == "box":
        return {"kind": "box", "low": step.low.reshape(-1).tolist(), "high": step.high.reshape(-1).tolist()}
    if step.kind == "ball":
        return {"kind": "ball", "center": step.center.reshape(-1).tolist(),
                "radius": float(np.reshape(step.radius, -1)[0])}
    return {"kind": step.kind, "center": step.center.reshape(-1).tolist(),
            "factor": step.factor.reshape(2, 2).tolist()}


def export_density(checkpoint, state, resolution, out_path=None, n_samples=2000, seed=0):
    """Write the grid density and stage sample clouds for one state as JSON."""
    agent = checkpoint if isinstance(checkpoint, SacAgent) else SacAgent.load(checkpoint)
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (5,) or not np.all(np.isfinite(state)):
        raise InvalidStateError("state must be five finite numbers x,y,battery,goal_x,goal_y")
    if not in_free_space(state[:2], agent.layout) or not 0.0 <= state[2] <= 100.0:
        raise InvalidStateError(f"state {state.tolist()} is not a valid agent state")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    xs, ys, dens, (lo, hi) = density_grid(agent.policy, state, resolution)
    chain = agent.policy.chain_fn(state[None, :])
    clouds = stage_samples(agent.policy, state, n_samples, np.random.default_rng(seed))
    doc = {
        "variant": agent.variant,
        "state": state.tolist(),
        "resolution": int(resolution),
        "bounds": [[float(lo[0]), float(hi[0])], [float(lo[1]), float(hi[1])]],
        "x": xs.tolist(),
        "y": ys.tolist(),
        "mass": grid_mass(xs, ys, dens),
        "density": dens.tolist(),
        "regions": [_describe(s) for s in chain.steps],
        "stages": {k: v.tolist() for k, v in clouds.items()},
    }
    if out_path is not None:
        with open(out_path, "w") as fh:
            json.dump(doc, fh)
    return doc
