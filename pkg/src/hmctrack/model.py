"""Near-constant-velocity dynamics and the two observation models.

States are arrays whose last axis is ``[x, vx, y, vy]``; model noise is an
array whose last axis is ``[v_x, v_y]`` (the acceleration perturbation over
one step).  Every function broadcasts over leading axes, so the same code
handles a single target, a vector of targets, or a whole particle ensemble.

The transition density is evaluated in noise coordinates: a state is always
rebuilt from its predecessor with :func:`propagate`, never sampled directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

X, VX, Y, VY = 0, 1, 2, 3


class Space(str, enum.Enum):
    XY = "xy"
    THETA_R = "theta_r"


class ObsKind(str, enum.Enum):
    LINEAR = "linear"
    BEARING_RANGE = "bearing_range"


@dataclass(frozen=True)
class DynamicsParams:
    """Time step and acceleration-noise variances of the motion model."""

    dt: float = 1.0
    sigma_x2: float = 1.0
    sigma_y2: float = 1.0

    def __post_init__(self):
        for name in ("dt", "sigma_x2", "sigma_y2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def noise_variances(self) -> np.ndarray:
        return np.array([self.sigma_x2, self.sigma_y2])


@dataclass(frozen=True)
class ObsModel:
    """Observation model and its noise variances.

    For ``LINEAR`` the variances are (sigma2_x, sigma2_y) of the position
    measurement; for ``BEARING_RANGE`` they are (sigma2_theta, sigma2_r).
    """

    kind: ObsKind = ObsKind.LINEAR
    var_a: float = 1.0
    var_b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ObsKind(self.kind))
        for name in ("var_a", "var_b"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @classmethod
    def linear(cls, sigma2_x: float = 1.0, sigma2_y: float = 1.0) -> "ObsModel":
        return cls(ObsKind.LINEAR, sigma2_x, sigma2_y)

    @classmethod
    def bearing_range(cls, sigma2_theta: float = 1e-4, sigma2_r: float = 1.0) -> "ObsModel":
        return cls(ObsKind.BEARING_RANGE, sigma2_theta, sigma2_r)

    @property
    def space(self) -> Space:
        return Space.XY if self.kind is ObsKind.LINEAR else Space.THETA_R

    @property
    def variances(self) -> np.ndarray:
        return np.array([self.var_a, self.var_b])


class Observation(NamedTuple):
    """One measurement: (x, y) in ``XY`` space or (bearing, range) in ``THETA_R``."""

    a: float
    b: float
    space: Space

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b], dtype=float)


def transition_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return the (A, B) pair with ``x_t = A x_{t-1} + B v_t``."""
    A = np.array([[1.0, dt, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, dt],
                  [0.0, 0.0, 0.0, 1.0]])
    B = np.array([[0.5 * dt**2, 0.0],
                  [dt, 0.0],
                  [0.0, 0.5 * dt**2],
                  [0.0, dt]])
    return A, B


def propagate(s, v, p: DynamicsParams) -> np.ndarray:
    """Advance states ``s`` (..., 4) by one step under noise ``v`` (..., 2)."""
    s = np.asarray(s, dtype=float)
    v = np.asarray(v, dtype=float)
    dt = p.dt
    half_dt2 = 0.5 * dt * dt
    out = np.empty(np.broadcast_shapes(s.shape, v.shape[:-1] + (4,)))
    out[..., X] = s[..., X] + dt * s[..., VX] + half_dt2 * v[..., 0]
    out[..., VX] = s[..., VX] + dt * v[..., 0]
    out[..., Y] = s[..., Y] + dt * s[..., VY] + half_dt2 * v[..., 1]
    out[..., VY] = s[..., VY] + dt * v[..., 1]
    return out


def unpropagate(s, p: DynamicsParams) -> np.ndarray:
    """Inverse of the noise-free transition: the state one step earlier."""
    s = np.asarray(s, dtype=float)
    out = s.copy()
    out[..., X] = s[..., X] - p.dt * s[..., VX]
    out[..., Y] = s[..., Y] - p.dt * s[..., VY]
    return out


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def xy_to_polar(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.stack([np.arctan2(xy[..., 1], xy[..., 0]), np.hypot(xy[..., 0], xy[..., 1])], axis=-1)


def polar_to_xy(tr) -> np.ndarray:
    tr = np.asarray(tr, dtype=float)
    return np.stack([tr[..., 1] * np.cos(tr[..., 0]), tr[..., 1] * np.sin(tr[..., 0])], axis=-1)


def positions(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return s[..., [X, Y]]


def observe_array(s, m: ObsModel) -> np.ndarray:
    """Noiseless observation of states ``s`` (..., 4) as an array (..., 2).

    Bearing-range observations of a state at the origin are returned as NaN
    bearing with zero range; :func:`observe` turns that into an error.
    """
    pos = positions(s)
    if m.kind is ObsKind.LINEAR:
        return pos
    return xy_to_polar(pos)


def observe(s, m: ObsModel) -> Observation:
    """Noiseless observation of a single target state."""
    s = np.asarray(s, dtype=float)
    if m.kind is ObsKind.BEARING_RANGE and s[X] == 0.0 and s[Y] == 0.0:
        raise ValueError("bearing is undefined for a target at the origin")
    a, b = observe_array(s, m)
    return Observation(float(a), float(b), m.space)


def noise_logdensity(v, p: DynamicsParams) -> np.ndarray:
    """Log-density of the acceleration noise ``v`` (..., 2) under N(0, Sigma_v)."""
    v = np.asarray(v, dtype=float)
    quad = v[..., 0] ** 2 / (2.0 * p.sigma_x2) + v[..., 1] ** 2 / (2.0 * p.sigma_y2)
    return -quad - LOG_2PI - 0.5 * math.log(p.sigma_x2 * p.sigma_y2)


def obs_residual(predicted, z, m: ObsModel) -> np.ndarray:
    """``z - predicted`` with the bearing component wrapped to (-pi, pi]."""
    r = np.asarray(z, dtype=float) - np.asarray(predicted, dtype=float)
    if m.kind is ObsKind.BEARING_RANGE:
        r = r.copy()
        r[..., 0] = wrap_angle(r[..., 0])
    return r


def obs_loglik(s, z, m: ObsModel) -> np.ndarray:
    """Vectorized observation log-density; ``-inf`` where bearing is undefined.

    ``s`` is (..., 4) and ``z`` an array broadcastable to (..., 2).
    """
    s = np.asarray(s, dtype=float)
    pred = observe_array(s, m)
    resid = obs_residual(pred, z, m)
    var = m.variances
    out = -np.sum(resid**2 / (2.0 * var), axis=-1) - LOG_2PI - 0.5 * math.log(var[0] * var[1])
    if m.kind is ObsKind.BEARING_RANGE:
        at_origin = (s[..., X] == 0.0) & (s[..., Y] == 0.0)
        out = np.where(at_origin, -np.inf, out)
    return out


def obs_logdensity(s, z, m: ObsModel) -> np.ndarray:
    """Gaussian log-density of observation ``z`` given state(s) ``s``.

    ``z`` may be an :class:`Observation` (its space must match the model) or
    a raw array of coordinates.

    Raises
    ------
    ValueError
        On a space mismatch, or for a bearing-range model evaluated at the
        origin.
    """
    if isinstance(z, Observation):
        if Space(z.space) is not m.space:
            raise ValueError(f"observation in {Space(z.space).value} space, model expects {m.space.value}")
        z = z.as_array()
    s = np.asarray(s, dtype=float)
    if m.kind is ObsKind.BEARING_RANGE and np.any((s[..., X] == 0.0) & (s[..., Y] == 0.0)):
        raise ValueError("bearing is undefined for a target at the origin")
    return obs_loglik(s, z, m)
