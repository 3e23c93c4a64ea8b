"""Generic multi-target particle filter and the resample-move variant.

A particle carries, per target, the state at the previous observation, the
state at the current one and the noise that links them, so resampling can
copy whole (previous, current) pairs and the HMC move can re-draw the noise
from the good starting points.  A single target is the ``n_targets == 1``
case of the same code.

Weights stay in log space until normalization.  The generic filter can
optionally reproduce a naive linear-space normalization: when every
``exp(log_g)`` underflows to zero the step is declared degenerate and all
weight goes to one sample picked uniformly at random.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hmc import HmcConfig, mcmc_step
from .model import DynamicsParams, ObsModel, obs_loglik, propagate, unpropagate

# smallest uniform handed to the resampler; keeps draws inside (0, 1)
_TINY = np.nextafter(0.0, 1.0)


@dataclass
class ParticleEnsemble:
    """``prev`` and ``curr`` are (N, n_targets, 4); ``noise`` is (N, n_targets, 2)."""

    prev: np.ndarray
    curr: np.ndarray
    noise: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.curr.shape[0]

    @property
    def n_targets(self) -> int:
        return self.curr.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.prev.copy(), self.curr.copy(), self.noise.copy())

    def take(self, idx) -> "ParticleEnsemble":
        return ParticleEnsemble(self.prev[idx], self.curr[idx], self.noise[idx])

    def select_targets(self, cols) -> "ParticleEnsemble":
        return ParticleEnsemble(self.prev[:, cols], self.curr[:, cols], self.noise[:, cols])

    def concat_targets(self, other: "ParticleEnsemble") -> "ParticleEnsemble":
        return ParticleEnsemble(
            np.concatenate([self.prev, other.prev], axis=1),
            np.concatenate([self.curr, other.curr], axis=1),
            np.concatenate([self.noise, other.noise], axis=1),
        )

    @classmethod
    def empty(cls, n_samples: int) -> "ParticleEnsemble":
        return cls(np.zeros((n_samples, 0, 4)), np.zeros((n_samples, 0, 4)), np.zeros((n_samples, 0, 2)))

    @classmethod
    def from_states(cls, states, p: DynamicsParams) -> "ParticleEnsemble":
        """Ensemble whose current states are (approximately) ``states``.

        The previous states are the noise-free back-propagation and the
        noise is zero, so ``curr == propagate(prev, noise)`` holds exactly.
        """
        prev = unpropagate(states, p)
        noise = np.zeros(prev.shape[:-1] + (2,))
        return cls(prev, propagate(prev, noise, p), noise)


@dataclass
class WeightVector:
    log_g: np.ndarray
    normalized: np.ndarray
    degenerate: bool = False


def normalize_log_weights(log_g) -> np.ndarray:
    log_g = np.asarray(log_g, dtype=float)
    w = np.exp(log_g - np.max(log_g))
    return w / w.sum()


def naive_underflow(log_g) -> bool:
    """True if every unnormalized linear-space weight is numerically zero."""
    with np.errstate(under="ignore"):
        return bool(np.all(np.exp(np.asarray(log_g, dtype=float)) == 0.0))


def predict(ens: ParticleEnsemble, p: DynamicsParams, rng: np.random.Generator) -> ParticleEnsemble:
    """Draw fresh noise for every particle and target and advance one step."""
    v = rng.standard_normal(ens.noise.shape) * np.sqrt(p.noise_variances)
    prev = ens.curr.copy()
    return ParticleEnsemble(prev, propagate(prev, v, p), v)


def log_likelihoods(ens: ParticleEnsemble, z, m: ObsModel) -> np.ndarray:
    """Per-sample joint observation log-likelihood, summed over targets."""
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    if z.shape[0] != ens.n_targets:
        raise ValueError(f"{z.shape[0]} observations for {ens.n_targets} targets")
    return obs_loglik(ens.curr, z, m).sum(axis=-1)


def update_weights(ens: ParticleEnsemble, z, m: ObsModel, linear_space: bool = False) -> WeightVector:
    """Weight each particle by the product of its per-target likelihoods.

    With ``linear_space=True`` the step counts as degenerate when all
    ``exp(log_g)`` underflow; otherwise only when every log-weight is
    ``-inf``.  Degenerate vectors carry uniform placeholder weights and
    must go through :func:`degenerate_fallback`.
    """
    log_g = log_likelihoods(ens, z, m)
    n = len(log_g)
    degenerate = not np.isfinite(np.max(log_g)) or (linear_space and naive_underflow(log_g))
    if degenerate:
        return WeightVector(log_g, np.full(n, 1.0 / n), True)
    return WeightVector(log_g, normalize_log_weights(log_g))


def ess(raw_g) -> float:
    """Effective sample size ``N / (1 + C**2)``, C the coefficient of variation.

    ``raw_g`` are unnormalized, non-negative weights.  The variance is the
    population (1/N) one, for which ``N / (1 + C**2) == sum(g)**2 / sum(g**2)``.
    Evaluating the right-hand side on ``g / max(g)`` makes both extremes
    exact in floating point: uniform weights give N, a point mass gives 1.
    """
    g = np.asarray(raw_g, dtype=float)
    if np.any(g < 0):
        raise ValueError("weights must be non-negative")
    top = g.max() if g.size else 0.0
    if not top > 0:
        raise ValueError("all weights are zero: the weight vector is degenerate")
    h = g / top
    return float(h.sum() ** 2 / np.dot(h, h))


def ess_from_log(log_g) -> float:
    """:func:`ess` of ``exp(log_g)`` computed after max-subtraction."""
    log_g = np.asarray(log_g, dtype=float)
    return ess(np.exp(log_g - np.max(log_g)))


def resample_indices(weights, uniforms) -> np.ndarray:
    """Multinomial resampling by inverting the weight CDF at ``uniforms``.

    Index ``j`` is selected for uniform ``u`` when
    ``sum(W[:j]) <= u < sum(W[:j+1])``.
    """
    u = np.asarray(uniforms, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("uniforms must lie strictly inside (0, 1)")
    cdf = np.cumsum(np.asarray(weights, dtype=float))
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def resample_pairs(ens: ParticleEnsemble, w: WeightVector, uniforms) -> ParticleEnsemble:
    """Copy whole (prev, curr, noise) triples of the selected samples."""
    return ens.take(resample_indices(w.normalized, uniforms))


def draw_uniforms(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(_TINY, 1.0, n)


def degenerate_fallback(w: WeightVector, rng: np.random.Generator) -> WeightVector:
    """Put all weight on one uniformly chosen sample.

    Only valid when every unnormalized weight is numerically zero.
    """
    if not naive_underflow(w.log_g):
        raise ValueError("degenerate_fallback requires all unnormalized weights to underflow")
    n = len(w.log_g)
    k = int(rng.integers(n))
    mass = np.zeros(n)
    mass[k] = 1.0
    return WeightVector(w.log_g, mass, True)


def weights_ess(w: WeightVector) -> float:
    if w.degenerate:
        return ess(w.normalized)
    return ess_from_log(w.log_g)


class StepOutput(NamedTuple):
    """Result of one filter cycle.

    ``ensemble`` is what the next step starts from, ``estimate`` the
    (n_targets, 4) posterior mean at this step and ``z`` the observations
    in the order they were matched to targets.
    """

    ensemble: ParticleEnsemble
    weights: WeightVector
    ess: float
    estimate: np.ndarray
    acceptance_rate: float
    z: np.ndarray
    ess_before_move: float = float("nan")


def _weigh_and_resample(ens, z, dynamics, obs_model, rng, linear_space, relabel):
    pred = predict(ens, dynamics, rng)
    z = np.asarray(z, dtype=float).reshape(-1, 2)
    if relabel is not None:
        z = relabel(pred, z)
    w = update_weights(pred, z, obs_model, linear_space=linear_space)
    if w.degenerate:
        w = degenerate_fallback(w, rng)
    res = resample_pairs(pred, w, draw_uniforms(pred.n_samples, rng))
    return pred, z, w, res


def step_generic(ens: ParticleEnsemble, z, dynamics: DynamicsParams, obs_model: ObsModel,
                 rng: np.random.Generator, linear_space: bool = True, relabel=None) -> StepOutput:
    """Predict, weight and resample.

    The estimate is the weighted mean of the predicted particles.
    ``relabel(predicted, z)`` may reorder the observations before weighting.
    """
    pred, z, w, res = _weigh_and_resample(ens, z, dynamics, obs_model, rng, linear_space, relabel)
    return StepOutput(res, w, weights_ess(w), posterior_mean(pred, w), float("nan"), z)


def step_improved(ens: ParticleEnsemble, z, dynamics: DynamicsParams, obs_model: ObsModel,
                  hmc_cfg: HmcConfig, rng: np.random.Generator, linear_space: bool = False,
                  relabel=None) -> StepOutput:
    """Predict, weight, resample (prev, curr) pairs, then move with HMC.

    The moved samples are unweighted, so the estimate is their plain mean.
    """
    _, z, w, res = _weigh_and_resample(ens, z, dynamics, obs_model, rng, linear_space, relabel)
    moved, rate = mcmc_step(res, z, dynamics, obs_model, hmc_cfg, rng)
    moved_ess = ess_from_log(log_likelihoods(moved, z, obs_model))
    return StepOutput(moved, w, moved_ess, posterior_mean(moved), rate, z, weights_ess(w))


def posterior_mean(states, weights=None) -> np.ndarray:
    """Per-target mean of ``states`` (N, n_targets, 4), optionally weighted.

    An ensemble may be passed in place of the raw array.
    """
    if isinstance(states, ParticleEnsemble):
        states = states.curr
    states = np.asarray(states, dtype=float)
    if states.shape[0] == 0:
        raise ValueError("empty ensemble")
    if weights is None:
        return states.mean(axis=0)
    if isinstance(weights, WeightVector):
        weights = weights.normalized
    return np.tensordot(np.asarray(weights, dtype=float), states, axes=(0, 0))
