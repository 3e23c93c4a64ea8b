"""A single linear-Gaussian target: the particle filter against the exact answer.

With one target, a linear sensor and Gaussian noise the Kalman filter gives
the exact posterior mean, so the particle estimate can be checked directly.
The error shrinks like 1/sqrt(N).

    python demos/single_target_vs_kalman.py
"""
import numpy as np

from hmctrack import DynamicsParams, ScenarioConfig, synthesize
from hmctrack.model import transition_matrices
from hmctrack.tracker import GENERIC, TrackerConfig, track

STEPS = 50


def kalman_means(zs, dt=1.0):
    A, B = transition_matrices(dt)
    Q, H, R = B @ B.T, np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]]), np.eye(2)
    # the particle filter starts from N(z0, I) in position and U[-1, 1] in velocity
    x = np.array([zs[0][0], 0.0, zs[0][1], 0.0])
    P = np.diag([1.0, 1 / 3, 1.0, 1 / 3])
    out = [x]
    for z in zs[1:]:
        x, P = A @ x, A @ P @ A.T + Q
        K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
        x, P = x + K @ (z - H @ x), (np.eye(4) - K @ H) @ P
        out.append(x)
    return np.array(out)


truth = synthesize(ScenarioConfig(steps=STEPS, lambda_schedule=(1,) * (STEPS + 1)), np.random.default_rng(1))
kf = kalman_means([truth.obs[t][0] for t in range(STEPS + 1)])

print(f"{'N':>7}  mean |particle - Kalman| position error")
for n in (200, 2_000, 20_000):
    res = track(truth, TrackerConfig(GENERIC, n_samples=n, dynamics=DynamicsParams()), np.random.default_rng(2))
    est = np.array([e[0] for e in res.estimates])
    err = np.linalg.norm(est[1:, [0, 2]] - kf[1:, [0, 2]], axis=1).mean()
    print(f"{n:>7}  {err:.4f}")
