"""Recovering which observation belongs to which target.

The filters assume observation k comes from target k.  When the sensor
returns observations in arbitrary order, a Metropolis walk over label swaps
finds the pairing with the highest joint likelihood at the predicted
target positions.

    python demos/association.py
"""
import numpy as np

from hmctrack import ObsModel
from hmctrack.association import association_cost, metropolis_associate

rng = np.random.default_rng(3)
m = ObsModel.linear()
targets = np.array([[0.0, 0, 0, 0], [60.0, 0, 10, 0], [-40.0, 0, 70, 0], [20.0, 0, -80, 0], [90.0, 0, 90, 0]])
order = rng.permutation(len(targets))
z = targets[:, [0, 2]] + rng.normal(size=(len(targets), 2))
z = z[order]  # shuffled sensor output

perm = metropolis_associate(targets, z, m, iterations=300, rng=rng)
print("shuffle applied      :", order.tolist())
print("target -> observation:", perm.tolist())
print("recovered            :", bool(np.all(order[perm] == np.arange(len(targets)))))
print(f"cost identity {association_cost(targets, z, np.arange(5), m):.1f}  "
      f"-> found {association_cost(targets, z, perm, m):.1f}")
