"""Target-to-observation association by Metropolis search over permutations.

The cost of an assignment is the negative joint observation log-likelihood
evaluated at one representative state per target (the predicted mean).
The search starts at the identity, proposes random transpositions and
returns the cheapest assignment it visited.
"""

from __future__ import annotations

import numpy as np

from .model import ObsModel, obs_loglik


def _as_z(obs) -> np.ndarray:
    rows = [o.as_array() if hasattr(o, "as_array") else o for o in obs]
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def cost_matrix(states, obs, m: ObsModel) -> np.ndarray:
    """``C[i, j] = -log g(states[i], obs[j])``."""
    states = np.asarray(states, dtype=float).reshape(-1, 4)
    z = _as_z(obs)
    if len(states) != len(z):
        raise ValueError(f"{len(states)} targets but {len(z)} observations")
    return -obs_loglik(states[:, None, :], z[None, :, :], m)


def association_cost(states, obs, perm, m: ObsModel) -> float:
    """Negative log-likelihood of pairing target ``i`` with ``obs[perm[i]]``."""
    c = cost_matrix(states, obs, m)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(len(c))):
        raise ValueError("perm must be a permutation of range(n_targets)")
    return float(c[np.arange(len(c)), perm].sum())


def metropolis_associate(states, obs, m: ObsModel, iterations: int = 200, temperature: float = 1.0,
                         rng: np.random.Generator | None = None) -> np.ndarray:
    """Best-visited assignment of a Metropolis walk over transpositions.

    Each iteration draws a pair of distinct labels and one uniform, in that
    order.  Returns ``perm`` with target ``i`` paired to ``obs[perm[i]]``.
    """
    if rng is None:
        rng = np.random.default_rng()
    c = cost_matrix(states, obs, m)
    n = len(c)
    if n == 0:
        raise ValueError("need at least one target")
    perm = np.arange(n)
    if n == 1:
        return perm
    rows = np.arange(n)
    cost = c[rows, perm].sum()
    best, best_cost = perm.copy(), cost
    for _ in range(iterations):
        i, j = rng.choice(n, size=2, replace=False)
        u = rng.random()
        delta = c[i, perm[j]] + c[j, perm[i]] - c[i, perm[i]] - c[j, perm[j]]
        if delta <= 0 or u < np.exp(-delta / temperature):
            perm[i], perm[j] = perm[j], perm[i]
            cost += delta
            if cost < best_cost:
                best, best_cost = perm.copy(), cost
    return best
