"""The HMC kernel on a standard normal target.

The kernel is the same one the improved filter uses to move particles; here
it samples exp(-|q|^2 / 2) in two dimensions so its output can be compared
with known moments.  One leapfrog step of size 0.1 per Metropolis trial
accepts almost always but moves slowly, which is why many sweeps are needed.

    python demos/hmc_gaussian.py
"""
import numpy as np

from hmctrack import HmcConfig
from hmctrack.hmc import hmc_kernel

rng = np.random.default_rng(0)
chains = rng.normal(size=(50_000, 2)) * 3  # deliberately too wide a start

print("sweeps  mean_x   var_x   var_y   acceptance")
done = 0
for sweeps in (10, 90, 400, 500):
    cfg = HmcConfig(metropolis_sweeps=sweeps)
    chains, acc = hmc_kernel(chains, lambda q: 0.5 * np.sum(q**2, axis=-1), lambda q: q, cfg, rng, event_ndim=1)
    done += sweeps
    print(f"{done:>6}  {chains[:, 0].mean():+.4f}  {chains[:, 0].var():.4f}  {chains[:, 1].var():.4f}  "
          f"{acc.mean() / sweeps:.4f}")
