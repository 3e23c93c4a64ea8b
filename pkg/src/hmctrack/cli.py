"""Experiment driver and command-line interface.

Configuration files are UTF-8 ``key = value`` lines; ``#`` starts a
comment and dotted keys address nested settings::

    seed = 3
    obs_model = bearing_range
    hmc.step_size = 0.1
    scenario.lambda_schedule = 2, 2, 1, 2, 3, 4

A schedule shorter than ``steps + 1`` entries is padded with its last
count.  Omitted keys take built-in defaults; the sample counts default to
100/120 (improved/generic) for the linear model and 200/220 for
bearing-range.

Subcommands: ``synth`` writes the scenario only, ``run`` the full
experiment, ``report`` recomputes ``summary.txt`` from report CSVs and
``plot`` writes a matplotlib script for the outputs.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .hmc import HmcConfig
from .metrics import read_report_csv, read_summary, summarize, write_report_csv, write_summary
from .model import DynamicsParams, ObsKind, ObsModel
from .scenario import ScenarioConfig, default_schedule, synthesize, write_scenario
from .tracker import GENERIC, IMPROVED, TrackerConfig, TrackResult, track

FILTER_CHOICES = (GENERIC, IMPROVED, "both")
DEFAULT_SAMPLES = {ObsKind.LINEAR: (100, 120), ObsKind.BEARING_RANGE: (200, 220)}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    filter: str = "both"
    n_samples_generic: int = 120
    n_samples_improved: int = 100
    hmc: HmcConfig = field(default_factory=HmcConfig)
    associate: bool = False
    association_iterations: int = 200
    association_temperature: float = 1.0
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1

    @property
    def obs_model(self) -> ObsModel:
        return self.scenario.obs_model

    @property
    def filters(self) -> tuple[str, ...]:
        return (GENERIC, IMPROVED) if self.filter == "both" else (self.filter,)


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s, n=None):
    vals = tuple(float(x) for x in s.split(",") if x.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return vals


def _parse_ints(s):
    vals = tuple(int(x) for x in s.split(",") if x.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _positive(conv):
    def f(s):
        v = conv(s)
        if not v > 0:
            raise ValueError("must be > 0")
        return v
    return f


def _non_negative_int(s):
    v = int(s)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _obs_kind(s):
    try:
        return ObsKind(s.strip())
    except ValueError:
        raise ValueError(f"expected one of {[k.value for k in ObsKind]}") from None


def _filter_choice(s):
    s = s.strip()
    if s not in FILTER_CHOICES:
        raise ValueError(f"expected one of {FILTER_CHOICES}")
    return s


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


_KEYS = {
    "seed": _seed,
    "steps": _non_negative_int,
    "filter": _filter_choice,
    "obs_model": _obs_kind,
    "n_samples_generic": _positive(int),
    "n_samples_improved": _positive(int),
    "associate": _parse_bool,
    "out_dir": str.strip,
    "threads": _positive(int),
    "dynamics.dt": _positive(float),
    "dynamics.sigma_x2": _positive(float),
    "dynamics.sigma_y2": _positive(float),
    "obs.sigma2_x": _positive(float),
    "obs.sigma2_y": _positive(float),
    "obs.sigma2_theta": _positive(float),
    "obs.sigma2_r": _positive(float),
    "scenario.lambda_schedule": _parse_ints,
    "scenario.birth_position_range": lambda s: _parse_floats(s, 2),
    "scenario.birth_velocity_range": lambda s: _parse_floats(s, 2),
    "hmc.metropolis_sweeps": _non_negative_int,
    "hmc.leapfrog_steps": _positive(int),
    "hmc.step_size": _positive(float),
    "association.iterations": _non_negative_int,
    "association.temperature": _positive(float),
}

_OBS_KEYS = {
    ObsKind.LINEAR: ("obs.sigma2_x", "obs.sigma2_y"),
    ObsKind.BEARING_RANGE: ("obs.sigma2_theta", "obs.sigma2_r"),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate ``key = value`` text into an :class:`ExperimentConfig`.

    Raises :class:`ConfigError` naming the offending line and key.
    """
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: invalid value for {key}: {exc}") from None
        lines[key] = lineno

    def err(key, msg):
        where = f"line {lines[key]}: " if key in lines else ""
        return ConfigError(f"{where}{key}: {msg}")

    kind = values.get("obs_model", ObsKind.LINEAR)
    for k in _OBS_KEYS[ObsKind.BEARING_RANGE if kind is ObsKind.LINEAR else ObsKind.LINEAR]:
        if k in values:
            raise err(k, f"not applicable to obs_model = {kind.value}")
    if kind is ObsKind.LINEAR:
        obs_model = ObsModel.linear(values.get("obs.sigma2_x", 1.0), values.get("obs.sigma2_y", 1.0))
    else:
        obs_model = ObsModel.bearing_range(values.get("obs.sigma2_theta", 1e-4), values.get("obs.sigma2_r", 1.0))

    steps = values.get("steps", 200)
    schedule = values.get("scenario.lambda_schedule")
    if schedule is None:
        schedule = default_schedule(steps)
    else:
        if any(c < 0 for c in schedule):
            raise err("scenario.lambda_schedule", "counts must be >= 0")
        if len(schedule) > steps + 1:
            raise err("scenario.lambda_schedule", f"{len(schedule)} entries exceed steps + 1 = {steps + 1}")
        schedule = schedule + (schedule[-1],) * (steps + 1 - len(schedule))

    seed = values.get("seed", 0)
    for key in ("scenario.birth_position_range", "scenario.birth_velocity_range"):
        if key in values and values[key][0] > values[key][1]:
            raise err(key, "low must not exceed high")
    scenario = ScenarioConfig(
        steps=steps,
        lambda_schedule=schedule,
        birth_position_range=values.get("scenario.birth_position_range", (-100.0, 100.0)),
        birth_velocity_range=values.get("scenario.birth_velocity_range", (-1.0, 1.0)),
        obs_model=obs_model,
        dynamics=DynamicsParams(
            values.get("dynamics.dt", 1.0),
            values.get("dynamics.sigma_x2", 1.0),
            values.get("dynamics.sigma_y2", 1.0),
        ),
        seed=seed,
    )
    n_imp, n_gen = DEFAULT_SAMPLES[kind]
    return ExperimentConfig(
        scenario=scenario,
        filter=values.get("filter", "both"),
        n_samples_generic=values.get("n_samples_generic", n_gen),
        n_samples_improved=values.get("n_samples_improved", n_imp),
        hmc=HmcConfig(
            values.get("hmc.metropolis_sweeps", 100),
            values.get("hmc.leapfrog_steps", 1),
            values.get("hmc.step_size", 0.1),
        ),
        associate=values.get("associate", False),
        association_iterations=values.get("association.iterations", 200),
        association_temperature=values.get("association.temperature", 1.0),
        seed=seed,
        out_dir=values.get("out_dir", "out"),
        threads=values.get("threads", 1),
    )


def _trim_schedule(schedule):
    s = list(schedule)
    while len(s) > 1 and s[-1] == s[-2]:
        s.pop()
    return s


def serialize_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (every key written explicitly)."""
    sc, m, d, h = cfg.scenario, cfg.obs_model, cfg.scenario.dynamics, cfg.hmc
    g = repr
    lines = [
        f"seed = {cfg.seed}",
        f"steps = {sc.steps}",
        f"filter = {cfg.filter}",
        f"obs_model = {m.kind.value}",
        f"n_samples_generic = {cfg.n_samples_generic}",
        f"n_samples_improved = {cfg.n_samples_improved}",
        f"associate = {str(cfg.associate).lower()}",
        f"out_dir = {cfg.out_dir}",
        f"threads = {cfg.threads}",
        f"dynamics.dt = {g(d.dt)}",
        f"dynamics.sigma_x2 = {g(d.sigma_x2)}",
        f"dynamics.sigma_y2 = {g(d.sigma_y2)}",
    ]
    ka, kb = _OBS_KEYS[m.kind]
    lines += [f"{ka} = {g(m.var_a)}", f"{kb} = {g(m.var_b)}"]
    lines += [
        "scenario.lambda_schedule = " + ", ".join(str(c) for c in _trim_schedule(sc.lambda_schedule)),
        "scenario.birth_position_range = " + ", ".join(g(v) for v in sc.birth_position_range),
        "scenario.birth_velocity_range = " + ", ".join(g(v) for v in sc.birth_velocity_range),
        f"hmc.metropolis_sweeps = {h.metropolis_sweeps}",
        f"hmc.leapfrog_steps = {h.leapfrog_steps}",
        f"hmc.step_size = {g(h.step_size)}",
        f"association.iterations = {cfg.association_iterations}",
        f"association.temperature = {g(cfg.association_temperature)}",
    ]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, seed=None, out_dir=None, filter=None, associate=None,
                   threads=None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed, scenario=replace(cfg.scenario, seed=seed))
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    if filter is not None:
        cfg = replace(cfg, filter=_filter_choice(filter))
    if associate:
        cfg = replace(cfg, associate=True)
    if threads is not None:
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        cfg = replace(cfg, threads=threads)
    return cfg


def streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for the scenario and each filter."""
    ss = np.random.SeedSequence(seed).spawn(3)
    return {"scenario": np.random.default_rng(ss[0]),
            GENERIC: np.random.default_rng(ss[1]),
            IMPROVED: np.random.default_rng(ss[2])}


def tracker_config(cfg: ExperimentConfig, method: str) -> TrackerConfig:
    n = cfg.n_samples_generic if method == GENERIC else cfg.n_samples_improved
    return TrackerConfig(
        method=method,
        n_samples=n,
        dynamics=cfg.scenario.dynamics,
        hmc=cfg.hmc,
        birth_velocity_range=cfg.scenario.birth_velocity_range,
        associate=cfg.associate,
        association_iterations=cfg.association_iterations,
        association_temperature=cfg.association_temperature,
    )


def write_estimates_csv(result: TrackResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "target_id", "x", "vx", "y", "vy"])
        for t, (ids, est) in enumerate(zip(result.target_ids, result.estimates)):
            for tid, s in zip(ids, est):
                w.writerow([t, int(tid), *(f"{v:.17g}" for v in s)])


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def synth(cfg: ExperimentConfig):
    truth = synthesize(cfg.scenario, streams(cfg.seed)["scenario"])
    write_scenario(truth, cfg.out_dir)
    return truth


def run_experiment(cfg: ExperimentConfig) -> int:
    """Synthesize the scenario, run the requested filters and write all outputs.

    Returns the exit status: 0 when every requested filter processed every
    step.  Degenerate steps are recorded, not treated as failures.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    rngs = streams(cfg.seed)
    status = 0
    summaries = {}
    with _limit_threads(cfg.threads):
        truth = synthesize(cfg.scenario, rngs["scenario"])
        write_scenario(truth, cfg.out_dir)
        with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
            fh.write(serialize_config(cfg))
        for method in cfg.filters:
            result = track(truth, tracker_config(cfg, method), rngs[method])
            if len(result.report) != truth.steps + 1:
                status = 1
            write_estimates_csv(result, os.path.join(cfg.out_dir, f"estimates_{method}.csv"))
            write_report_csv(result.report, os.path.join(cfg.out_dir, f"report_{method}.csv"))
            summaries[method] = summarize(result.report)
    write_summary(summaries, os.path.join(cfg.out_dir, "summary.txt"), _summary_header(cfg))
    return status


def _summary_header(cfg: ExperimentConfig) -> dict:
    return {"seed": cfg.seed, "obs_model": cfg.obs_model.kind.value, "steps": cfg.scenario.steps}


def report(out_dir) -> dict:
    """Recompute ``summary.txt`` from the ``report_*.csv`` files in ``out_dir``."""
    paths = sorted(glob.glob(os.path.join(out_dir, "report_*.csv")))
    if not paths:
        raise FileNotFoundError(f"no report_*.csv in {out_dir}")
    summaries = {}
    for p in paths:
        name = os.path.basename(p)[len("report_"):-len(".csv")]
        summaries[name] = summarize(read_report_csv(p))
    path = os.path.join(out_dir, "summary.txt")
    header = {}
    if os.path.exists(path):
        header = {k: v for k, v in read_summary(path).items() if "." not in k}
    write_summary(summaries, path, header)
    return summaries


PLOT_SCRIPT = "plot_results.py"


def emit_plot_script(out_dir) -> str:
    """Write a standalone matplotlib script that plots the outputs in ``out_dir``.

    Only files that exist are referenced.  Returns the script path.
    """
    truth = os.path.join(out_dir, "truth.csv")
    obs = os.path.join(out_dir, "obs.csv")
    for p in (truth, obs):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    names = [n for n in (IMPROVED, GENERIC)
             if os.path.exists(os.path.join(out_dir, f"report_{n}.csv"))
             and os.path.exists(os.path.join(out_dir, f"estimates_{n}.csv"))]
    if not names:
        raise FileNotFoundError(f"no report/estimates CSV pairs in {out_dir}")
    track_name = names[0]
    text = _PLOT_TEMPLATE.format(
        filters=repr(names),
        track_name=repr(track_name),
    )
    path = os.path.join(out_dir, PLOT_SCRIPT)
    with open(path, "w") as fh:
        fh.write(text)
    return path


_PLOT_TEMPLATE = '''"""Plot tracks, RMSE and ESS for the CSV files next to this script.

Run with ``python plot_results.py``; figures are written as PNG files.
"""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
FILTERS = {filters}
TRACK_FILTER = {track_name}
# estimates are drawn every DECIMATE steps to keep the track figure readable
DECIMATE = 5


def read(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        return list(csv.DictReader(fh))


def by_target(rows):
    out = {{}}
    for r in rows:
        out.setdefault(int(r["target_id"]), []).append((int(r["step"]), float(r["x"]), float(r["y"])))
    return out


truth = by_target(read("truth.csv"))
obs = read("obs.csv")
obs_xy = []
for r in obs:
    a, b = float(r["a"]), float(r["b"])
    if r["space"] == "theta_r":
        a, b = b * np.cos(a), b * np.sin(a)
    obs_xy.append((a, b))
obs_xy = np.array(obs_xy).reshape(-1, 2)

# tracks, observations and decimated estimates
fig, ax = plt.subplots(figsize=(7, 7))
for tid, pts in truth.items():
    pts = np.array(pts)
    ax.plot(pts[:, 1], pts[:, 2], "-", lw=1)
ax.plot(obs_xy[:, 0], obs_xy[:, 1], "x", ms=3, color="gray", label="observations")
est = [r for r in read("estimates_" + TRACK_FILTER + ".csv") if int(r["step"]) % DECIMATE == 0]
ax.plot([float(r["x"]) for r in est], [float(r["y"]) for r in est], ".", color="k",
        label=TRACK_FILTER + " estimates")
ax.set_xlabel("x")
ax.set_ylabel("y")
ax.legend()
fig.savefig(os.path.join(HERE, "tracks.png"), dpi=150)

# RMSE per target
fig, ax = plt.subplots()
for name in FILTERS:
    rep = read("report_" + name + ".csv")
    ax.semilogy([int(r["step"]) for r in rep], [max(float(r["rmse"]), 1e-12) for r in rep], label=name)
ax.set_xlabel("step")
ax.set_ylabel("RMSE per target")
ax.legend()
fig.savefig(os.path.join(HERE, "rmse.png"), dpi=150)

# ESS as a percentage of the sample count
fig, ax = plt.subplots()
for name in FILTERS:
    rep = read("report_" + name + ".csv")
    ax.plot([int(r["step"]) for r in rep], [100 * float(r["ess_fraction"]) for r in rep], label=name)
ax.set_xlabel("step")
ax.set_ylabel("ESS (% of samples)")
ax.legend()
fig.savefig(os.path.join(HERE, "ess.png"), dpi=150)
'''


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmctrack", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("synth", "write truth.csv and obs.csv only"),
                        ("run", "synthesize and run the filters"),
                        ("report", "recompute summary.txt from report CSVs"),
                        ("plot", "write a plotting script for the outputs")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        if name in ("synth", "run"):
            p.add_argument("--seed", type=int)
        if name == "run":
            p.add_argument("--filter", choices=FILTER_CHOICES)
            p.add_argument("--associate", action="store_true")
            p.add_argument("--threads", type=int)
    return parser


def load_config(path) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=getattr(args, "seed", None), out_dir=args.out,
                             filter=getattr(args, "filter", None), associate=getattr(args, "associate", False),
                             threads=getattr(args, "threads", None))
    except (ConfigError, OSError) as exc:
        print(f"hmctrack: {exc}", file=sys.stderr)
        return 2
    if args.command == "synth":
        synth(cfg)
        return 0
    if args.command == "run":
        return run_experiment(cfg)
    if args.command == "report":
        for name, s in report(cfg.out_dir).items():
            print(name, " ".join(f"{k}={v}" for k, v in s.items()))
        return 0
    print(emit_plot_script(cfg.out_dir))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
