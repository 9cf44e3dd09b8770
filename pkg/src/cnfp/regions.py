"""World geometry, constraint indicators and per-state constraint regions.

Observations are 5-vectors ``(x, y, battery, goal_x, goal_y)``.  Every
function here accepts either one observation or a batch ``(n, 5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cnfp.flows import Ball, Box


class InvalidStateError(ValueError):
    pass


def _rect(r):
    r = tuple(float(v) for v in r)
    if len(r) != 4 or not (r[0] < r[2] and r[1] < r[3]):
        raise ValueError(f"rectangle must be (x0, y0, x1, y1) with x0 < x1, y0 < y1: {r}")
    return r


@dataclass(frozen=True)
class WorldLayout:
    """Static geometry.  Rectangles are ``(x0, y0, x1, y1)`` in world units."""

    arena: tuple = (-5.0, -5.0, 5.0, 5.0)
    obstacles: tuple = ((-1.0, -1.0, 1.0, 1.0),)
    stations: tuple = ((-5.0, 0.0), (5.0, 0.0), (0.0, -5.0), (0.0, 5.0))
    station_radius: float = 0.5
    max_step: float = 1.0
    # Subtracted from every geometric bound of the obstacle box.
    margin: float = 1e-3
    min_box_width: float = 1e-3
    # How fast the non-separating axis is released near an obstacle corner;
    # must be >= 1 for far-field boxes to recover [-max_step, max_step].
    corner_blend: float = 4.0

    def __post_init__(self):
        arena = _rect(self.arena)
        obstacles = tuple(_rect(o) for o in self.obstacles)
        stations = tuple((float(x), float(y)) for x, y in self.stations)
        object.__setattr__(self, "arena", arena)
        object.__setattr__(self, "obstacles", obstacles)
        object.__setattr__(self, "stations", stations)
        ax0, ay0, ax1, ay1 = arena
        for ox0, oy0, ox1, oy1 in obstacles:
            if not (ax0 < ox0 and ox1 < ax1 and ay0 < oy0 and oy1 < ay1):
                raise ValueError("obstacles must lie strictly inside the arena")
        for sx, sy in stations:
            if not (ax0 <= sx <= ax1 and ay0 <= sy <= ay1):
                raise ValueError("stations must lie inside the arena")
            if any(o[0] <= sx <= o[2] and o[1] <= sy <= o[3] for o in obstacles):
                raise ValueError("stations must lie outside obstacles")
        if self.station_radius <= 0 or self.max_step <= 0:
            raise ValueError("station radius and max step must be positive")
        if self.corner_blend < 1.0:
            raise ValueError("corner_blend must be >= 1")

    @property
    def diagonal(self):
        ax0, ay0, ax1, ay1 = self.arena
        return float(np.hypot(ax1 - ax0, ay1 - ay0))

    def to_dict(self):
        return {
            "arena": list(self.arena),
            "obstacles": [list(o) for o in self.obstacles],
            "stations": [list(s) for s in self.stations],
            "station_radius": self.station_radius,
            "max_step": self.max_step,
            "margin": self.margin,
            "min_box_width": self.min_box_width,
            "corner_blend": self.corner_blend,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("obstacles", "stations"):
            if key in d:
                d[key] = tuple(tuple(v) for v in d[key])
        if "arena" in d:
            d["arena"] = tuple(d["arena"])
        return cls(**d)


@dataclass(frozen=True)
class BatteryRule:
    depletion: float = 1.0
    threshold: float = 20.0
    # Added on a station visit, capped at 100; 100 means charge to full.
    charge_amount: float = 100.0
    # Above this level the battery region is the large zero-centred disc.
    high_threshold: float = 50.0
    # At or below this level the pull toward the station is complete.
    full_pull_level: float = 20.0
    radius_max: float = 1.0
    radius_min: float = 0.25

    def __post_init__(self):
        if not self.full_pull_level < self.high_threshold:
            raise ValueError("full_pull_level must be below high_threshold")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError("need 0 < radius_min <= radius_max")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _as_obs(obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != 5:
        raise InvalidStateError(f"observation must have length 5, got shape {obs.shape}")
    return obs


def in_free_space(pos, layout, clearance=0.0):
    """Strictly inside the arena and outside every (closed) obstacle."""
    pos = np.asarray(pos, dtype=np.float64)
    px, py = pos[..., 0], pos[..., 1]
    ax0, ay0, ax1, ay1 = layout.arena
    c = clearance
    ok = (px > ax0 + c) & (px < ax1 - c) & (py > ay0 + c) & (py < ay1 - c)
    for ox0, oy0, ox1, oy1 in layout.obstacles:
        inside = (px >= ox0 - c) & (px <= ox1 + c) & (py >= oy0 - c) & (py <= oy1 + c)
        ok &= ~inside
    return ok


def obstacle_region(obs, layout):
    """Box of displacements whose whole swept rectangle is collision-free.

    Per axis the box starts at ``[-max_step, max_step]`` and is clamped by
    the distance to the arena walls.  For each obstacle, separation along
    the axis with the larger gap is enforced exactly; the other axis is
    clamped by a bound that blends in continuously near the corner
    diagonal, so the box parameters vary continuously with position.
    """
    obs = _as_obs(obs)
    px, py = obs[..., 0], obs[..., 1]
    m, s = layout.margin, layout.max_step
    ax0, ay0, ax1, ay1 = layout.arena
    if np.any((px <= ax0) | (px >= ax1) | (py <= ay0) | (py >= ay1)):
        raise InvalidStateError("agent outside the arena")
    hx = np.minimum(s, ax1 - px - m)
    lx = np.minimum(s, px - ax0 - m)
    hy = np.minimum(s, ay1 - py - m)
    ly = np.minimum(s, py - ay0 - m)
    blend = layout.corner_blend
    for ox0, oy0, ox1, oy1 in layout.obstacles:
        g_right, g_left = ox0 - px, px - ox1
        g_up, g_down = oy0 - py, py - oy1
        gx = np.maximum(g_right, g_left)
        gy = np.maximum(g_up, g_down)
        if np.any((gx < 0) & (gy < 0)):
            raise InvalidStateError("agent inside an obstacle")
        gx, gy = gx - m, gy - m
        sep_x = gx >= gy
        bx = np.where(sep_x, gx, gx + blend * (gy - gx))
        by = np.where(sep_x, gy + blend * (gx - gy), gy)
        right, up = g_right >= g_left, g_up >= g_down
        hx = np.where(right, np.minimum(hx, bx), hx)
        lx = np.where(right, lx, np.minimum(lx, bx))
        hy = np.where(up, np.minimum(hy, by), hy)
        ly = np.where(up, ly, np.minimum(ly, by))
    low = np.stack([-lx, -ly], axis=-1)
    high = np.stack([hx, hy], axis=-1)
    # Contact leaves no room on an axis: keep a thin sliver at the feasible side.
    w = layout.min_box_width
    thin = high - low < w
    if np.any(thin):
        mid = 0.5 * (low + high)
        low = np.where(thin, mid - 0.5 * w, low)
        high = np.where(thin, mid + 0.5 * w, high)
    return Box(low, high)


def nearest_station(pos, layout):
    """Return (station position, distance) of the nearest charging station."""
    pos = np.asarray(pos, dtype=np.float64)
    st = np.asarray(layout.stations, dtype=np.float64)
    diff = pos[..., None, :] - st
    d2 = np.einsum("...ij,...ij->...i", diff, diff)
    return st[np.argmin(d2, axis=-1)], np.sqrt(np.min(d2, axis=-1))


def battery_pull(battery, rule):
    """Pull strength in [0, 1]: 0 at or above high_threshold, 1 at full_pull_level."""
    t = (rule.high_threshold - battery) / (rule.high_threshold - rule.full_pull_level)
    return np.clip(t, 0.0, 1.0)


def battery_region(obs, layout, rule):
    """Disc of pre-obstacle actions that steers the agent toward charging.

    With a high battery the disc is centred at zero with ``radius_max``.
    As the battery drains, the centre slides toward ``max_step`` along the
    direction to the nearest station and the radius shrinks toward
    ``radius_min``; both are affine in the battery level.
    """
    obs = _as_obs(obs)
    battery = obs[..., 2]
    if np.any((battery < 0) | (battery > 100)):
        raise InvalidStateError("battery must lie in [0, 100]")
    pos = obs[..., :2]
    station, dist = nearest_station(pos, layout)
    direction = (station - pos) / np.maximum(dist, 1e-12)[..., None]
    t = battery_pull(battery, rule)
    center = (t * layout.max_step)[..., None] * direction
    radius = rule.radius_max + t * (rule.radius_min - rule.radius_max)
    return Ball(center, radius)


def _slab_entry(p, a, lo, hi):
    """Liang-Barsky entry/exit parameters of p + t a against the slab [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t0 = (lo - p) / a
        t1 = (hi - p) / a
    moving = a != 0
    inside = (p >= lo) & (p <= hi)
    enter = np.where(moving, np.minimum(t0, t1), np.where(inside, -np.inf, np.inf))
    leave = np.where(moving, np.maximum(t0, t1), np.where(inside, np.inf, -np.inf))
    return enter, leave


def contact_time(pos, action, layout):
    """First t in [0, 1] where pos + t * action touches an obstacle or a wall.

    Returns ``inf`` where the segment stays strictly in free space.
    """
    pos = np.asarray(pos, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    px, py = pos[..., 0], pos[..., 1]
    ax, ay = action[..., 0], action[..., 1]
    t_hit = np.full(np.broadcast(px, ax).shape, np.inf)
    for ox0, oy0, ox1, oy1 in layout.obstacles:
        ex, lx = _slab_entry(px, ax, ox0, ox1)
        ey, ly = _slab_entry(py, ay, oy0, oy1)
        enter = np.maximum(ex, ey)
        leave = np.minimum(lx, ly)
        hit = (enter <= leave) & (enter <= 1.0) & (leave >= 0.0)
        t_hit = np.where(hit, np.minimum(t_hit, np.maximum(enter, 0.0)), t_hit)
    x0, y0, x1, y1 = layout.arena
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tx = np.where(ax > 0, (x1 - px) / ax, np.where(ax < 0, (x0 - px) / ax, np.inf))
        ty = np.where(ay > 0, (y1 - py) / ay, np.where(ay < 0, (y0 - py) / ay, np.inf))
    t_wall = np.minimum(tx, ty)
    t_hit = np.where(t_wall <= 1.0, np.minimum(t_hit, t_wall), t_hit)
    return t_hit


def resolve_motion(pos, action, layout, t_hit=None):
    """End point of a translation, stopped ``margin`` short of the first contact.

    ``t_hit`` may pass in an already computed ``contact_time``.
    """
    pos = np.asarray(pos, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if t_hit is None:
        t_hit = contact_time(pos, action, layout)
    length = np.linalg.norm(action, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_stop = np.maximum(0.0, t_hit - layout.margin / length)
    t = np.where(np.isfinite(t_hit), t_stop, 1.0)
    return pos + t[..., None] * action


def violates_obstacle(obs, action, layout):
    """Indicator of a collision with an obstacle or wall along the step."""
    obs = _as_obs(obs)
    return contact_time(obs[..., :2], action, layout) <= 1.0


def step_battery(battery, new_pos, layout, rule):
    """Battery after one step ending at ``new_pos``."""
    battery = np.maximum(0.0, np.asarray(battery, dtype=np.float64) - rule.depletion)
    _, dist = nearest_station(new_pos, layout)
    charged = np.minimum(100.0, battery + rule.charge_amount)
    return np.where(dist <= layout.station_radius, charged, battery)


def violates_battery(obs, action, layout, rule):
    """Indicator of the post-step battery falling below the threshold."""
    obs = _as_obs(obs)
    new_pos = resolve_motion(obs[..., :2], action, layout)
    return step_battery(obs[..., 2], new_pos, layout, rule) < rule.threshold
