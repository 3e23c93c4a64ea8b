"""Multi-target particle filtering with a Hybrid Monte Carlo move step."""

from .association import association_cost, metropolis_associate
from .filter import (
    ParticleEnsemble,
    WeightVector,
    degenerate_fallback,
    ess,
    posterior_mean,
    predict,
    resample_pairs,
    step_generic,
    step_improved,
    update_weights,
)
from .hmc import HmcConfig, grad_potential, hmc_kernel, leapfrog, mcmc_step, potential
from .metrics import RunReport, linearized_obs_error, rmse, summarize
from .model import (
    DynamicsParams,
    ObsKind,
    ObsModel,
    Observation,
    Space,
    noise_logdensity,
    obs_logdensity,
    observe,
    propagate,
)
from .scenario import GroundTruth, ScenarioConfig, newborn_state, synthesize
from .tracker import TrackerConfig, track

__version__ = "0.1.0"
