"""Synthetic ground truth: target births, deaths, tracks and observations.

Random draws are consumed in a fixed order so a seed pins the whole
scenario.  At every step ``t >= 1``:

1. targets scheduled to die are removed (highest target id first);
2. model noise for the survivors, shape (n_survivors, 2), in target-id order;
3. observation noise for the survivors, shape (n_survivors, 2), same order;
4. one draw block per newborn: position (2), velocity (2), observation noise (2).

Step 0 consists of births only.  Observations at a step are listed in
target-id order, so newborns get the last observation indices.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .model import (
    DynamicsParams,
    Observation,
    ObsKind,
    ObsModel,
    Space,
    observe_array,
    polar_to_xy,
    propagate,
    wrap_angle,
    xy_to_polar,
)

DEFAULT_SCHEDULE_HEAD = (2, 2, 1, 2, 3)
DEFAULT_SCHEDULE_TAIL = 4


def default_schedule(steps: int = 200) -> tuple[int, ...]:
    """Target counts 2, 2, 1, 2, 3 followed by 4 up to and including ``steps``."""
    head = DEFAULT_SCHEDULE_HEAD[: steps + 1]
    return head + (DEFAULT_SCHEDULE_TAIL,) * (steps + 1 - len(head))


@dataclass(frozen=True)
class ScenarioConfig:
    steps: int = 200
    lambda_schedule: tuple[int, ...] | None = None
    birth_position_range: tuple[float, float] = (-100.0, 100.0)
    birth_velocity_range: tuple[float, float] = (-1.0, 1.0)
    obs_model: ObsModel = field(default_factory=ObsModel.linear)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        schedule = self.lambda_schedule
        if schedule is None:
            schedule = default_schedule(self.steps)
        schedule = tuple(int(c) for c in schedule)
        if len(schedule) != self.steps + 1:
            raise ValueError(
                f"lambda_schedule has {len(schedule)} entries, expected steps + 1 = {self.steps + 1}"
            )
        if any(c < 0 for c in schedule):
            raise ValueError("lambda_schedule counts must be non-negative")
        object.__setattr__(self, "lambda_schedule", schedule)
        for name in ("birth_position_range", "birth_velocity_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy low <= high")
            object.__setattr__(self, name, (lo, hi))


@dataclass
class GroundTruth:
    """Per-step target states and observations.

    ``target_ids[t]`` lists the living targets in id order; row ``i`` of
    ``states[t]`` belongs to ``target_ids[t][i]``.  ``obs[t][m]`` is the
    m-th observation (a, b) and ``obs_target[t][m]`` the target it came
    from.  ``births[t]`` are the ids created at step ``t``.
    """

    obs_model: ObsModel
    target_ids: list[np.ndarray]
    states: list[np.ndarray]
    obs: list[np.ndarray]
    obs_target: list[np.ndarray]
    births: list[np.ndarray]

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    def observations(self, t: int) -> list[Observation]:
        space = self.obs_model.space
        return [Observation(float(a), float(b), space) for a, b in self.obs[t]]

    def obs_xy(self, t: int) -> np.ndarray:
        """Observations at ``t`` expressed as xy positions."""
        if self.obs_model.kind is ObsKind.LINEAR:
            return self.obs[t].copy()
        return polar_to_xy(self.obs[t])


def _uniform(rng, lo, hi, size):
    if lo == hi:
        rng.random(size)  # keep draw consumption independent of the range
        return np.full(size, lo)
    return rng.uniform(lo, hi, size)


def _noise(rng, variances, size):
    return rng.standard_normal(size) * np.sqrt(variances)


def newborn_state(rng: np.random.Generator, cfg: ScenarioConfig, obs_model: ObsModel | None = None):
    """Draw a newborn target and its observation.

    Returns ``(state, Observation)``.  For bearing-range the recorded state
    position is the perturbed (bearing, range) mapped back to xy, so the
    observation and the position agree exactly.
    """
    m = obs_model if obs_model is not None else cfg.obs_model
    lo, hi = cfg.birth_position_range
    pos = _uniform(rng, lo, hi, 2)
    lo, hi = cfg.birth_velocity_range
    vel = _uniform(rng, lo, hi, 2)
    w = _noise(rng, m.variances, 2)
    if m.kind is ObsKind.LINEAR:
        z = pos + w
    else:
        tr = xy_to_polar(pos) + w
        tr[0] = wrap_angle(tr[0])
        if tr[1] <= 0.0:
            tr = np.array([wrap_angle(tr[0] + np.pi), -tr[1]])
        pos = polar_to_xy(tr)
        z = tr
    state = np.array([pos[0], vel[0], pos[1], vel[1]])
    return state, Observation(float(z[0]), float(z[1]), m.space)


def _observe_noisy(states, w, m: ObsModel) -> np.ndarray:
    z = observe_array(states, m) + w
    if m.kind is ObsKind.BEARING_RANGE:
        z[..., 0] = wrap_angle(z[..., 0])
        flip = z[..., 1] <= 0.0
        z[flip, 0] = wrap_angle(z[flip, 0] + np.pi)
        z[flip, 1] = -z[flip, 1]
    return z


def synthesize(cfg: ScenarioConfig, rng: np.random.Generator | None = None) -> GroundTruth:
    """Generate tracks and observations following ``cfg.lambda_schedule``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    m, dyn = cfg.obs_model, cfg.dynamics
    sched = cfg.lambda_schedule

    next_id = 0
    ids = np.zeros(0, dtype=np.int64)
    cur = np.zeros((0, 4))
    out = GroundTruth(m, [], [], [], [], [])

    for t, count in enumerate(sched):
        z = np.zeros((0, 2))
        if t > 0:
            n_dead = max(len(ids) - count, 0)
            if n_dead:
                keep = np.argsort(ids)[: len(ids) - n_dead]
                keep.sort()
                ids, cur = ids[keep], cur[keep]
            v = _noise(rng, dyn.noise_variances, (len(ids), 2))
            w = _noise(rng, m.variances, (len(ids), 2))
            cur = propagate(cur, v, dyn)
            z = _observe_noisy(cur, w, m)
        n_born = count - len(ids)
        born = []
        for _ in range(n_born):
            s, ob = newborn_state(rng, cfg, m)
            cur = np.vstack([cur, s])
            z = np.vstack([z, ob.as_array()])
            ids = np.append(ids, next_id)
            born.append(next_id)
            next_id += 1
        if len(ids) != count:
            raise ValueError(f"schedule inconsistent at step {t}")
        out.target_ids.append(ids.copy())
        out.states.append(cur.copy())
        out.obs.append(z.reshape(-1, 2).copy())
        out.obs_target.append(ids.copy())
        out.births.append(np.array(born, dtype=np.int64))
    return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_truth_csv(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "target_id", "x", "vx", "y", "vy"])
        for t, (ids, states) in enumerate(zip(truth.target_ids, truth.states)):
            for tid, s in zip(ids, states):
                w.writerow([t, int(tid), *(_fmt(v) for v in s)])


def write_obs_csv(truth: GroundTruth, path) -> None:
    space = truth.obs_model.space.value
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "obs_index", "a", "b", "space"])
        for t, z in enumerate(truth.obs):
            for i, (a, b) in enumerate(z):
                w.writerow([t, i, _fmt(a), _fmt(b), space])


def write_scenario(truth: GroundTruth, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_truth_csv(truth, os.path.join(out_dir, "truth.csv"))
    write_obs_csv(truth, os.path.join(out_dir, "obs.csv"))


def read_scenario(out_dir, obs_model: ObsModel) -> GroundTruth:
    """Load ``truth.csv`` and ``obs.csv`` written by :func:`write_scenario`.

    Observation ``m`` is attributed to the m-th living target in id order,
    the convention the writer follows.
    """
    rows: dict[int, list] = {}
    with open(os.path.join(out_dir, "truth.csv"), newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["step"]), []).append(
                (int(r["target_id"]), [float(r[k]) for k in ("x", "vx", "y", "vy")])
            )
    obs: dict[int, list] = {}
    with open(os.path.join(out_dir, "obs.csv"), newline="") as fh:
        for r in csv.DictReader(fh):
            if Space(r["space"]) is not obs_model.space:
                raise ValueError(f"obs.csv holds {r['space']} observations, model expects {obs_model.space.value}")
            obs.setdefault(int(r["step"]), []).append((int(r["obs_index"]), float(r["a"]), float(r["b"])))
    n_steps = max(rows) + 1 if rows else 0
    truth = GroundTruth(obs_model, [], [], [], [], [])
    seen: set[int] = set()
    for t in range(n_steps):
        entries = sorted(rows.get(t, []))
        ids = np.array([e[0] for e in entries], dtype=np.int64)
        truth.target_ids.append(ids)
        truth.states.append(np.array([e[1] for e in entries], dtype=float).reshape(-1, 4))
        zs = sorted(obs.get(t, []))
        if len(zs) != len(ids):
            raise ValueError(f"step {t}: {len(zs)} observations for {len(ids)} targets")
        truth.obs.append(np.array([[a, b] for _, a, b in zs], dtype=float).reshape(-1, 2))
        truth.obs_target.append(ids.copy())
        truth.births.append(np.array([i for i in ids if i not in seen], dtype=np.int64))
        seen.update(int(i) for i in ids)
    return truth
