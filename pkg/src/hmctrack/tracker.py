"""Run a filter over a whole scenario, including target births and deaths.

The birth/death schedule is known to the filter.  A newborn target gets a
slot in every particle, its position taken from the newborn observation
(linear: observation plus observation-noise jitter; bearing-range: the
observed bearing and range mapped to xy) and its velocity uniform on the birth velocity range.  Dead targets lose
their slot.  Survivors' observations are taken in target order; with
association enabled their order is re-derived by Metropolis search.

Per step the random stream is consumed as: prediction noise, association
proposals (if enabled), fallback choice (if degenerate), resampling
uniforms, HMC momenta and uniforms (improved filter), newborn jitter (linear
model only), then newborn velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import metropolis_associate
from .filter import ParticleEnsemble, posterior_mean, step_generic, step_improved
from .hmc import HmcConfig
from .metrics import RunReport, rmse
from .model import DynamicsParams, ObsKind, ObsModel, polar_to_xy
from .scenario import GroundTruth

GENERIC = "generic"
IMPROVED = "improved"


@dataclass
class TrackerConfig:
    method: str = IMPROVED
    n_samples: int = 100
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    hmc: HmcConfig = field(default_factory=HmcConfig)
    birth_velocity_range: tuple[float, float] = (-1.0, 1.0)
    associate: bool = False
    association_iterations: int = 200
    association_temperature: float = 1.0
    # generic filter normalizes in linear space, so its weights can all underflow
    naive_weights: bool | None = None

    def __post_init__(self):
        if self.method not in (GENERIC, IMPROVED):
            raise ValueError(f"unknown filter {self.method!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.naive_weights is None:
            self.naive_weights = self.method == GENERIC


@dataclass
class TrackResult:
    method: str
    target_ids: list[np.ndarray]
    estimates: list[np.ndarray]
    report: RunReport


def newborn_particles(z_born, n_samples: int, obs_model: ObsModel, velocity_range, dynamics: DynamicsParams,
                      rng: np.random.Generator) -> ParticleEnsemble:
    """Particles for targets first observed at ``z_born`` (n_born, 2)."""
    z_born = np.asarray(z_born, dtype=float).reshape(-1, 2)
    shape = (n_samples, len(z_born), 2)
    if obs_model.kind is ObsKind.LINEAR:
        pos = z_born[None] + rng.standard_normal(shape) * np.sqrt(obs_model.variances)
    else:
        pos = np.broadcast_to(polar_to_xy(z_born), shape)
    lo, hi = velocity_range
    vel = rng.uniform(lo, hi, shape) if hi > lo else np.full(shape, lo)
    states = np.stack([pos[..., 0], vel[..., 0], pos[..., 1], vel[..., 1]], axis=-1)
    return ParticleEnsemble.from_states(states, dynamics)


def track(truth: GroundTruth, cfg: TrackerConfig, rng: np.random.Generator) -> TrackResult:
    """Filter the observations in ``truth`` and score against its states."""
    m = truth.obs_model
    n = cfg.n_samples
    ens = ParticleEnsemble.empty(n)
    ids = np.zeros(0, dtype=np.int64)
    report = RunReport(n)
    result = TrackResult(cfg.method, [], [], report)

    for t in range(truth.steps + 1):
        alive = truth.target_ids[t]
        born = truth.births[t]
        keep = np.isin(ids, alive)
        ens, ids = ens.select_targets(np.nonzero(keep)[0]), ids[keep]
        n_surv = len(ids)
        z_all = truth.obs[t]
        z_surv, z_born = z_all[:n_surv], z_all[n_surv:]

        ess_value, degenerate, rate, ess_pre = float(n), False, float("nan"), float("nan")
        est = np.zeros((0, 4))
        if n_surv:
            relabel = None
            if cfg.associate and n_surv > 1:
                def relabel(pred, z):
                    perm = metropolis_associate(posterior_mean(pred), z, m, cfg.association_iterations,
                                                cfg.association_temperature, rng)
                    return z[perm]
            if cfg.method == GENERIC:
                out = step_generic(ens, z_surv, cfg.dynamics, m, rng, cfg.naive_weights, relabel)
            else:
                out = step_improved(ens, z_surv, cfg.dynamics, m, cfg.hmc, rng, cfg.naive_weights, relabel)
            ens, est, ess_value, rate = out.ensemble, out.estimate, out.ess, out.acceptance_rate
            degenerate, ess_pre = out.weights.degenerate, out.ess_before_move

        if len(born):
            fresh = newborn_particles(z_born, n, m, cfg.birth_velocity_range, cfg.dynamics, rng)
            ens = ens.concat_targets(fresh)
            ids = np.concatenate([ids, born])
            est = np.concatenate([est, posterior_mean(fresh)])

        order = np.argsort(ids, kind="stable")
        ids_sorted = ids[order]
        if not np.array_equal(ids_sorted, np.sort(alive)):
            raise RuntimeError(f"filter targets {ids_sorted} disagree with scenario {alive} at step {t}")
        est = est[order]
        truth_rows = truth.states[t][np.argsort(alive, kind="stable")]
        report.append(t, rmse(truth_rows, est), ess_value, degenerate, rate, ess_pre)
        result.target_ids.append(ids_sorted.copy())
        result.estimates.append(est)
    return result
