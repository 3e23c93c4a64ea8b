"""Hybrid Monte Carlo move in model-noise coordinates.

For each particle the chain state ``q`` is the (n_targets, 2) array of
acceleration noises that carried the particle from its previous state to
its current one.  The potential is the negative log of observation
likelihood times transition density, written in ``q``; the current state is
always rebuilt as ``propagate(prev, q)``.

All chains of an ensemble advance in lockstep: arrays carry a leading batch
axis and every sweep draws momenta for the whole batch, then one uniform
per chain.  Draw order is therefore independent of how the work might be
split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import DynamicsParams, ObsKind, ObsModel, propagate, wrap_angle


@dataclass(frozen=True)
class HmcConfig:
    metropolis_sweeps: int = 100
    leapfrog_steps: int = 1
    step_size: float = 0.1

    def __post_init__(self):
        if self.metropolis_sweeps < 0:
            raise ValueError("metropolis_sweeps must be >= 0")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")


@dataclass
class PotentialContext:
    """Everything the potential needs besides the noise itself.

    ``prev`` is (..., n_targets, 4), ``z`` is (n_targets, 2).
    """

    prev: np.ndarray
    z: np.ndarray
    dynamics: DynamicsParams
    obs_model: ObsModel


@dataclass
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    ok: np.ndarray | bool = True
    grad: np.ndarray | None = None


def _sum_event(a, ndim):
    return a.sum(axis=tuple(range(a.ndim - ndim, a.ndim))) if ndim else a


def _predicted_position(q, ctx: PotentialContext):
    dt = ctx.dynamics.dt
    prev = ctx.prev
    det = np.stack([prev[..., 0] + dt * prev[..., 1], prev[..., 2] + dt * prev[..., 3]], axis=-1)
    return det + 0.5 * dt * dt * q


def _bearing_terms(pos, z):
    x, y = pos[..., 0], pos[..., 1]
    r2 = x * x + y * y
    r = np.sqrt(r2)
    res_t = wrap_angle(z[..., 0] - np.arctan2(y, x))
    res_r = z[..., 1] - r
    return x, y, r2, r, res_t, res_r


def potential(q, ctx: PotentialContext) -> np.ndarray:
    """Energy of noise configuration(s) ``q`` (..., n_targets, 2).

    Sums, over targets, the squared observation residuals scaled by the
    observation variances plus the Gaussian prior on the noise.  Returns
    ``inf`` for bearing-range configurations that put a target on the
    origin.
    """
    q = np.asarray(q, dtype=float)
    dyn, m = ctx.dynamics, ctx.obs_model
    pos = _predicted_position(q, ctx)
    prior = q[..., 0] ** 2 / (2 * dyn.sigma_x2) + q[..., 1] ** 2 / (2 * dyn.sigma_y2)
    if m.kind is ObsKind.LINEAR:
        res = ctx.z - pos
        like = res[..., 0] ** 2 / (2 * m.var_a) + res[..., 1] ** 2 / (2 * m.var_b)
    else:
        _, _, r2, _, res_t, res_r = _bearing_terms(pos, ctx.z)
        with np.errstate(invalid="ignore"):
            like = res_t**2 / (2 * m.var_a) + res_r**2 / (2 * m.var_b)
        like = np.where(r2 == 0.0, np.inf, like)
    return np.sum(like + prior, axis=-1)


def grad_potential(q, ctx: PotentialContext) -> np.ndarray:
    """Analytic gradient of :func:`potential` with respect to ``q``."""
    q = np.asarray(q, dtype=float)
    dyn, m = ctx.dynamics, ctx.obs_model
    c = 0.5 * ctx.dynamics.dt ** 2
    pos = _predicted_position(q, ctx)
    g = np.empty(np.broadcast_shapes(q.shape, pos.shape))
    if m.kind is ObsKind.LINEAR:
        res = ctx.z - pos
        g[..., 0] = -c * res[..., 0] / m.var_a
        g[..., 1] = -c * res[..., 1] / m.var_b
    else:
        x, y, r2, r, res_t, res_r = _bearing_terms(pos, ctx.z)
        with np.errstate(divide="ignore", invalid="ignore"):
            dvdx = res_t * y / (m.var_a * r2) - res_r * x / (m.var_b * r)
            dvdy = -res_t * x / (m.var_a * r2) - res_r * y / (m.var_b * r)
        g[..., 0] = c * dvdx
        g[..., 1] = c * dvdy
    g[..., 0] += q[..., 0] / dyn.sigma_x2
    g[..., 1] += q[..., 1] / dyn.sigma_y2
    return g


def leapfrog(ps: PhaseState, n_steps: int, step_size: float, grad: Callable, event_ndim: int | None = None,
             grad_q: np.ndarray | None = None) -> PhaseState:
    """Kick-drift-kick Verlet integration with unit mass.

    ``grad`` maps q to dV/dq.  Chains whose trajectory hits a non-finite
    value are flagged in ``ok`` and must be rejected by the caller.
    ``grad_q`` may pass a cached gradient at the starting point.
    """
    q = np.array(ps.q, dtype=float)
    p = np.array(ps.p, dtype=float)
    if event_ndim is None:
        event_ndim = q.ndim
    g = grad(q) if grad_q is None else grad_q
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_steps):
            p = p - 0.5 * step_size * g
            q = q + step_size * p
            g = grad(q)
            p = p - 0.5 * step_size * g
    ok = np.isfinite(_sum_event(q, event_ndim) + _sum_event(p, event_ndim))
    return PhaseState(q, p, ok, g)


def hmc_kernel(q, potential_fn: Callable, grad_fn: Callable, cfg: HmcConfig, rng: np.random.Generator,
               event_ndim: int = 2):
    """Run ``cfg.metropolis_sweeps`` HMC transitions for a batch of chains.

    ``q`` has shape batch + event, where the event part spans the trailing
    ``event_ndim`` axes; ``potential_fn`` returns one energy per chain.
    Each sweep draws fresh standard-normal momenta, integrates, then
    accepts with probability ``min(1, exp(H_old - H_new))``.

    Returns ``(q_new, accepted)`` where ``accepted`` counts acceptances per
    chain.
    """
    q = np.array(q, dtype=float)
    batch_shape = q.shape[: q.ndim - event_ndim]
    accepted = np.zeros(batch_shape, dtype=np.int64)
    if cfg.metropolis_sweeps == 0:
        return q, accepted

    v = potential_fn(q)
    g = grad_fn(q)
    expand = (...,) + (None,) * event_ndim
    for _ in range(cfg.metropolis_sweeps):
        p0 = rng.standard_normal(q.shape)
        u = rng.random(batch_shape)
        ps = leapfrog(PhaseState(q, p0), cfg.leapfrog_steps, cfg.step_size, grad_fn, event_ndim, grad_q=g)
        with np.errstate(over="ignore", invalid="ignore"):
            v_new = np.where(ps.ok, potential_fn(np.where(ps.ok[expand], ps.q, q)), np.inf)
            h_old = v + 0.5 * _sum_event(p0**2, event_ndim)
            h_new = v_new + 0.5 * _sum_event(ps.p**2, event_ndim)
            log_ratio = h_old - h_new
        acc = ps.ok & np.isfinite(h_new) & (np.log(u) < log_ratio)
        if np.any(acc):
            q = np.where(acc[expand], ps.q, q)
            v = np.where(acc, v_new, v)
            g = np.where(acc[expand], ps.grad, g)
        accepted += acc
    return q, accepted


def mcmc_step(ens, z, dynamics: DynamicsParams, obs_model: ObsModel, cfg: HmcConfig, rng: np.random.Generator):
    """Move every particle's current noise with HMC, holding ``prev`` fixed.

    ``ens`` is a :class:`~hmctrack.filter.ParticleEnsemble`; ``z`` the
    (n_targets, 2) observations of its targets.  Returns the moved
    ensemble and the acceptance rate over all chains and sweeps.
    """
    if cfg.metropolis_sweeps == 0 or ens.n_targets == 0:
        return ens.copy(), float("nan")
    ctx = PotentialContext(ens.prev, np.asarray(z, dtype=float), dynamics, obs_model)
    q, accepted = hmc_kernel(
        ens.noise,
        lambda x: potential(x, ctx),
        lambda x: grad_potential(x, ctx),
        cfg,
        rng,
        event_ndim=2,
    )
    out = type(ens)(ens.prev.copy(), propagate(ens.prev, q, dynamics), q)
    rate = accepted.sum() / (accepted.size * cfg.metropolis_sweeps)
    return out, float(rate)
