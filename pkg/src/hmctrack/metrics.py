"""Tracking diagnostics: per-target RMSE, ESS series and run summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


def rmse(truth, estimates) -> float:
    """Root-mean-square full-state error per target.

    ``truth`` and ``estimates`` are (n_targets, 4) arrays matched row by
    row; the norm covers positions and velocities.
    """
    truth = np.asarray(truth, dtype=float).reshape(-1, 4)
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 4)
    if truth.shape != estimates.shape:
        raise ValueError(f"{len(truth)} true targets but {len(estimates)} estimates")
    if len(truth) == 0:
        return 0.0
    return float(np.sqrt(np.sum((truth - estimates) ** 2) / len(truth)))


@dataclass
class RunReport:
    """Per-step diagnostics of one filter run."""

    n_samples: int
    steps: list[int] = field(default_factory=list)
    rmse: list[float] = field(default_factory=list)
    ess: list[float] = field(default_factory=list)
    degenerate: list[bool] = field(default_factory=list)
    acceptance_rate: list[float] = field(default_factory=list)
    # improved filter only: ESS of the resampled particles before the HMC move
    ess_before_move: list[float] = field(default_factory=list)

    def append(self, step, rmse_value, ess_value, degenerate=False, acceptance_rate=float("nan"),
               ess_before_move=float("nan")):
        self.steps.append(int(step))
        self.rmse.append(float(rmse_value))
        self.ess.append(float(ess_value))
        self.degenerate.append(bool(degenerate))
        self.acceptance_rate.append(float(acceptance_rate))
        self.ess_before_move.append(float(ess_before_move))

    @property
    def ess_fraction(self) -> np.ndarray:
        return np.asarray(self.ess) / self.n_samples

    def __len__(self):
        return len(self.steps)


def summarize(report: RunReport) -> dict:
    """Mean and population std of the RMSE series plus ESS statistics."""
    if len(report) == 0:
        raise ValueError("empty report")
    r = np.asarray(report.rmse)
    acc = np.asarray(report.acceptance_rate)
    acc = acc[np.isfinite(acc)]
    return {
        "rmse_mean": float(r.mean()),
        "rmse_std": float(r.std()),
        "rmse_max": float(r.max()),
        "ess_fraction_mean": float(report.ess_fraction.mean()),
        "degenerate_steps": int(np.sum(report.degenerate)),
        "degeneracy_onset": degeneracy_onset(report),
        "acceptance_rate_mean": float(acc.mean()) if acc.size else float("nan"),
    }


def degeneracy_onset(report: RunReport, threshold: float = 1.01) -> int:
    """First step from which the ESS stays below ``threshold`` for good.

    Returns -1 if the run never settles there.
    """
    ess = np.asarray(report.ess)
    above = np.nonzero(ess >= threshold)[0]
    start = 0 if above.size == 0 else above[-1] + 1
    if start >= len(ess):
        return -1
    return int(report.steps[start])


def linearized_obs_error(theta0: float, r0: float, dtheta: float, dr: float):
    """First-order and exact xy displacement of a bearing-range perturbation.

    Returns ``(dx, dy, exact_dx, exact_dy)``; the first-order terms come from
    the Jacobian of ``(r cos(theta), r sin(theta))`` at ``(theta0, r0)``.
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    x0, y0 = r0 * math.cos(theta0), r0 * math.sin(theta0)
    dx = -y0 * dtheta + math.cos(theta0) * dr
    dy = x0 * dtheta + math.sin(theta0) * dr
    exact_dx = (r0 + dr) * math.cos(theta0 + dtheta) - x0
    exact_dy = (r0 + dr) * math.sin(theta0 + dtheta) - y0
    return dx, dy, exact_dx, exact_dy


REPORT_COLUMNS = ("step", "rmse", "ess", "ess_fraction", "degenerate", "acceptance_rate")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_report_csv(report: RunReport, path) -> None:
    frac = report.ess_fraction
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for i, t in enumerate(report.steps):
            w.writerow([t, _fmt(report.rmse[i]), _fmt(report.ess[i]), _fmt(frac[i]),
                        int(report.degenerate[i]), _fmt(report.acceptance_rate[i])])


def read_report_csv(path) -> RunReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = 0
    if rows:
        ess0, frac0 = float(rows[0]["ess"]), float(rows[0]["ess_fraction"])
        n = int(round(ess0 / frac0))
    report = RunReport(n)
    for r in rows:
        report.append(int(r["step"]), float(r["rmse"]), float(r["ess"]), r["degenerate"] == "1",
                      float(r["acceptance_rate"]))
    return report


def write_summary(summaries: dict, path, extra: dict | None = None) -> None:
    """Write ``key=value`` lines; ``summaries`` maps filter name to :func:`summarize` output."""
    lines = [f"{k}={v}" for k, v in (extra or {}).items()]
    for name, s in summaries.items():
        for k, v in s.items():
            lines.append(f"{name}.{k}={_fmt(v) if isinstance(v, float) else v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_summary(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out
