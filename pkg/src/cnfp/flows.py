"""Invertible squashing maps into convex regions, and their composition.

Each region type knows how to push an unbounded point into its interior
(``forward``), pull it back (``inverse``), report ``log|det J|`` of the
forward map, and propagate gradients backwards (``vjp``).  All methods are
batched: a point array of shape ``(..., d)`` broadcasts against region
parameters with matching leading dimensions, so a batch of states can carry
a batch of per-state regions.

A ``FlowChain`` applies its steps first to last and accumulates the
log-determinants, which gives the density of the final point as the base
density minus that sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG2 = np.log(2.0)
# Saturation guard: |tanh| never reaches 1 in forward, so every output stays
# strictly inside the open region even for huge inputs.
SATURATION = 1.0 - 1e-11
# Inverse rejects points closer than this (in normalized units) to a boundary.
BOUNDARY_GUARD = 1e-12
# Below this radius the radial maps switch to their Taylor series.
SERIES_RADIUS = 1e-2


class RegionError(ValueError):
    """Invalid region parameters."""


class DomainError(ValueError):
    """Point outside the domain of an inverse map."""


def _check_finite(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input to a flow step")
    return a


def log_sech2(x):
    """log(1 - tanh(x)**2), stable for large |x|."""
    x = np.abs(x)
    return 2.0 * (LOG2 - x - np.log1p(np.exp(-2.0 * x)))


def _safe_tanh(x):
    return np.clip(np.tanh(x), -SATURATION, SATURATION)


# Radial helpers.  With g(r) = tanh(r)/r the unit-ball squash is a -> g(r) a.

def _radial(r, series, direct, fill=1.0):
    """``direct(r)``, switching to ``series(r**2)`` below SERIES_RADIUS."""
    small = r < SERIES_RADIUS
    if not np.any(small):
        return direct(r)
    return np.where(small, series(r * r), direct(np.where(small, fill, r)))


def _tanh_over_r(r):
    return _radial(
        r,
        lambda r2: 1.0 - r2 / 3.0 + 2.0 * r2**2 / 15.0 - 17.0 * r2**3 / 315.0,
        lambda rs: np.minimum(np.tanh(rs), SATURATION) / rs,
    )


def _dg_over_r(r):
    """g'(r) / r."""
    return _radial(
        r,
        lambda r2: -2.0 / 3.0 + 8.0 * r2 / 15.0 - 34.0 * r2**2 / 105.0 + 496.0 * r2**3 / 2835.0,
        lambda rs: (rs * np.exp(log_sech2(rs)) - np.tanh(rs)) / rs**3,
    )


def _sinh_term(rs):
    with np.errstate(over="ignore"):
        return (2.0 / np.sinh(2.0 * rs) - 1.0 / rs) / rs


def _dloggr_over_r(r):
    """(d/dr log g(r)) / r = (2/sinh(2r) - 1/r) / r."""
    return _radial(
        r,
        lambda r2: -2.0 / 3.0 + 14.0 * r2 / 45.0 - 124.0 * r2**2 / 945.0 + 254.0 * r2**3 / 4725.0,
        _sinh_term,
    )


def _atanh_over_rho(rho):
    return _radial(
        rho,
        lambda p2: 1.0 + p2 / 3.0 + p2**2 / 5.0 + p2**3 / 7.0,
        lambda rs: np.arctanh(rs) / rs,
        fill=0.5,
    )


def _unit_ball_forward(a):
    r = np.linalg.norm(a, axis=-1)
    return _tanh_over_r(r)[..., None] * a


def _unit_ball_inverse(u):
    rho = np.linalg.norm(u, axis=-1)
    if np.any(rho >= 1.0 - BOUNDARY_GUARD):
        raise DomainError("point on or outside the ball boundary")
    return _atanh_over_rho(rho)[..., None] * u


def _unit_ball_log_det(a):
    m = a.shape[-1]
    r = np.linalg.norm(a, axis=-1)
    return (m - 1) * np.log(_tanh_over_r(r)) + log_sech2(r)


def _unit_ball_vjp(a, gy, glogdet):
    """Gradient w.r.t. a of <g(r) a, gy> + glogdet * unit log-det."""
    m = a.shape[-1]
    r = np.linalg.norm(a, axis=-1)
    g = _tanh_over_r(r)
    a_dot_gy = np.sum(a * gy, axis=-1)
    ga = g[..., None] * gy + (_dg_over_r(r) * a_dot_gy)[..., None] * a
    # d/da [(m-1) log g(r) + log sech^2 r] = ((m-1) (log g)'(r)/r - 2 tanh(r)/r) a
    dlog = (m - 1) * _dloggr_over_r(r) - 2.0 * _tanh_over_r(r)
    return ga + (glogdet * dlog)[..., None] * a


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``low < y < high``; squash is an affine-scaled tanh."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        if low.shape != high.shape:
            raise RegionError("box bounds differ in shape")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise RegionError("box bounds must be finite")
        if np.any(high <= low):
            raise RegionError("box needs low < high in every dimension")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    kind = "box"

    @property
    def dim(self):
        return self.low.shape[-1]

    @property
    def center(self):
        return 0.5 * (self.low + self.high)

    @property
    def half_width(self):
        return 0.5 * (self.high - self.low)

    def forward(self, a):
        a = _check_finite(a)
        return self.center + self.half_width * _safe_tanh(a)

    def inverse(self, y):
        u = (np.asarray(y, dtype=np.float64) - self.center) / self.half_width
        if np.any(np.abs(u) >= 1.0 - BOUNDARY_GUARD):
            raise DomainError("point on or outside the box boundary")
        return np.arctanh(u)

    def log_det(self, a):
        a = _check_finite(a)
        return np.sum(np.log(self.half_width) + log_sech2(a), axis=-1)

    def invertible(self, y):
        u = (np.asarray(y, dtype=np.float64) - self.center) / self.half_width
        return np.all(np.abs(u) < 1.0 - BOUNDARY_GUARD, axis=-1)

    def vjp(self, a, gy, glogdet):
        sech2 = np.exp(log_sech2(a))
        return gy * self.half_width * sech2 - 2.0 * np.asarray(glogdet)[..., None] * np.tanh(a)

    def param_grads(self, a, gy, glogdet):
        t = np.tanh(a)
        glogdet = np.asarray(glogdet)[..., None]
        width = self.high - self.low
        return {
            "low": gy * 0.5 * (1.0 - t) - glogdet / width,
            "high": gy * 0.5 * (1.0 + t) + glogdet / width,
        }

    def contains(self, y, strict=True):
        y = np.asarray(y)
        if strict:
            return np.all((y > self.low) & (y < self.high), axis=-1)
        return np.all((y >= self.low) & (y <= self.high), axis=-1)

    def bounding_box(self):
        return self.low, self.high


@dataclass(frozen=True, eq=False)
class Ball:
    """Euclidean ball ``|y - center| < radius``; squash is a radial tanh."""

    center: np.ndarray
    radius: np.ndarray

    kind = "ball"

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        radius = np.asarray(self.radius, dtype=np.float64)
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(radius))):
            raise RegionError("ball parameters must be finite")
        if np.any(radius <= 0):
            raise RegionError("ball radius must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", radius)

    @property
    def dim(self):
        return self.center.shape[-1]

    def forward(self, a):
        a = _check_finite(a)
        return self.center + self.radius[..., None] * _unit_ball_forward(a)

    def inverse(self, y):
        u = (np.asarray(y, dtype=np.float64) - self.center) / self.radius[..., None]
        return _unit_ball_inverse(u)

    def log_det(self, a):
        a = _check_finite(a)
        return a.shape[-1] * np.log(self.radius) + _unit_ball_log_det(a)

    def invertible(self, y):
        u = (np.asarray(y, dtype=np.float64) - self.center) / self.radius[..., None]
        return np.linalg.norm(u, axis=-1) < 1.0 - BOUNDARY_GUARD

    def vjp(self, a, gy, glogdet):
        return _unit_ball_vjp(a, self.radius[..., None] * gy, glogdet)

    def param_grads(self, a, gy, glogdet):
        u = _unit_ball_forward(a)
        return {
            "center": np.array(gy, dtype=np.float64),
            "radius": np.sum(gy * u, axis=-1) + glogdet * a.shape[-1] / self.radius,
        }

    def contains(self, y, strict=True):
        d = np.linalg.norm(np.asarray(y) - self.center, axis=-1)
        return d < self.radius if strict else d <= self.radius

    def bounding_box(self):
        r = self.radius[..., None]
        return self.center - r, self.center + r


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{center + L u : |u| < 1}`` with lower-triangular ``L``, positive diagonal."""

    center: np.ndarray
    factor: np.ndarray

    kind = "ellipsoid"

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        factor = np.asarray(self.factor, dtype=np.float64)
        d = center.shape[-1]
        if factor.shape[-2:] != (d, d):
            raise RegionError("shape factor must be d x d")
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(factor))):
            raise RegionError("ellipsoid parameters must be finite")
        if np.any(np.triu(factor, k=1) != 0.0):
            raise RegionError("shape factor must be lower triangular")
        if np.any(np.diagonal(factor, axis1=-2, axis2=-1) <= 0.0):
            raise RegionError("shape factor needs a positive diagonal")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self):
        return self.center.shape[-1]

    def forward(self, a):
        a = _check_finite(a)
        u = _unit_ball_forward(a)
        return self.center + np.einsum("...ij,...j->...i", self.factor, u)

    def inverse(self, y):
        diff = np.asarray(y, dtype=np.float64) - self.center
        factor = np.broadcast_to(self.factor, diff.shape + (diff.shape[-1],))
        u = np.linalg.solve(factor, diff[..., None])[..., 0]
        return _unit_ball_inverse(u)

    def log_det(self, a):
        a = _check_finite(a)
        diag = np.diagonal(self.factor, axis1=-2, axis2=-1)
        return _unit_ball_log_det(a) + np.sum(np.log(diag), axis=-1)

    def invertible(self, y):
        diff = np.asarray(y, dtype=np.float64) - self.center
        factor = np.broadcast_to(self.factor, diff.shape + (diff.shape[-1],))
        u = np.linalg.solve(factor, diff[..., None])[..., 0]
        return np.linalg.norm(u, axis=-1) < 1.0 - BOUNDARY_GUARD

    def vjp(self, a, gy, glogdet):
        gu = np.einsum("...ji,...j->...i", self.factor, gy)
        return _unit_ball_vjp(a, gu, glogdet)

    def param_grads(self, a, gy, glogdet):
        u = _unit_ball_forward(a)
        gL = np.tril(gy[..., :, None] * u[..., None, :])
        diag = np.diagonal(self.factor, axis1=-2, axis2=-1)
        d = self.dim
        gL[..., np.arange(d), np.arange(d)] += np.asarray(glogdet)[..., None] / diag
        return {"center": np.array(gy, dtype=np.float64), "factor": gL}

    def contains(self, y, strict=True):
        diff = np.asarray(y, dtype=np.float64) - self.center
        factor = np.broadcast_to(self.factor, diff.shape + (diff.shape[-1],))
        u = np.linalg.solve(factor, diff[..., None])[..., 0]
        n = np.linalg.norm(u, axis=-1)
        return n < 1.0 if strict else n <= 1.0

    def bounding_box(self):
        half = np.linalg.norm(self.factor, axis=-1)
        return self.center - half, self.center + half


def box_forward(a, region):
    return region.forward(a)


def box_inverse(y, region):
    return region.inverse(y)


def box_log_det(a, region):
    return region.log_det(a)


def ball_forward(a, region):
    return region.forward(a)


def ball_inverse(y, region):
    return region.inverse(y)


def ball_log_det(a, region, m=None):
    a = np.asarray(a, dtype=np.float64)
    if m is not None and m != a.shape[-1]:
        raise ValueError(f"dimension {m} does not match point of length {a.shape[-1]}")
    return region.log_det(a)


def ellipsoid_forward(a, region):
    return region.forward(a)


def ellipsoid_inverse(y, region):
    return region.inverse(y)


def ellipsoid_log_det(a, region):
    return region.log_det(a)


class FlowChain:
    """Ordered composition of squashing steps, applied first to last.

    Later steps dominate: the output always lies in the last step's region,
    so putting the higher-priority constraint last enforces it even when the
    regions do not intersect.
    """

    def __init__(self, steps=(), names=None):
        self.steps = list(steps)
        self.names = list(names) if names is not None else [s.kind for s in self.steps]
        if len(self.names) != len(self.steps):
            raise ValueError("need one name per step")

    def __len__(self):
        return len(self.steps)

    def forward(self, a, return_intermediates=False):
        """Push ``a`` through every step.

        Returns ``(y, log_det)``, plus the list of points fed into each step
        when ``return_intermediates`` is set.
        """
        x = _check_finite(a)
        total = np.zeros(x.shape[:-1])
        points = []
        for step in self.steps:
            points.append(x)
            total = total + step.log_det(x)
            x = step.forward(x)
        if return_intermediates:
            return x, total, points
        return x, total

    def inverse(self, y):
        x = np.asarray(y, dtype=np.float64)
        for step in reversed(self.steps):
            x = step.inverse(x)
        return x

    def inverse_where_valid(self, y):
        """Inverse that tolerates points outside the chain's image.

        Returns ``(a, valid)``; entries of ``a`` where ``valid`` is False
        are meaningless.
        """
        x = np.array(y, dtype=np.float64)
        valid = np.ones(x.shape[:-1], dtype=bool)
        for step in reversed(self.steps):
            lo, hi = step.bounding_box()
            inner = 0.5 * (lo + hi)
            valid &= step.invertible(x)
            x = step.inverse(np.where(valid[..., None], x, inner))
        return x, valid

    def log_prob(self, y, base_log_prob):
        """Density of ``y`` under the pushed-forward base distribution.

        ``base_log_prob`` maps pre-flow points to base log-densities.
        Raises ``DomainError`` if any ``y`` lies outside the chain's image.
        """
        a = self.inverse(y)
        _, log_det = self.forward(a)
        return base_log_prob(a) - log_det

    def backward(self, a, output_grad, log_det_grad=1.0, region_grads=False, points=None):
        """Reverse-mode gradient of ``<y, output_grad> + log_det_grad * log_det``.

        Returns the gradient w.r.t. ``a``; with ``region_grads`` also a list
        holding, per step, a dict of gradients w.r.t. that step's parameters.
        ``points`` may carry the intermediates of an earlier ``forward(a)``.
        """
        a = _check_finite(a)
        if points is None:
            _, _, points = self.forward(a, return_intermediates=True)
        g = np.array(output_grad, dtype=np.float64)
        glog = np.broadcast_to(np.asarray(log_det_grad, dtype=np.float64), a.shape[:-1])
        per_step = [None] * len(self.steps)
        for i in reversed(range(len(self.steps))):
            step, x = self.steps[i], points[i]
            if region_grads:
                per_step[i] = step.param_grads(x, g, glog)
            g = step.vjp(x, g, glog)
        if region_grads:
            return g, per_step
        return g


def chain_forward(a, chain):
    return chain.forward(a)


def chain_backward_grad(a, chain, output_grad, log_det_grad=1.0):
    """Input gradient and per-step region-parameter gradients."""
    return chain.backward(a, output_grad, log_det_grad, region_grads=True)
