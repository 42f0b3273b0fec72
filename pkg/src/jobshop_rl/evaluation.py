"""Training-gap, relative-improvement and performance-profile statistics, and
the benchmark harness pairing the learned policy with the exact search.

Benchmark analyses:

* ``time``: the exact search runs until it matches the policy's makespan (or
  hits the limit); compares wall times. Method tag ``exact:match_quality``.
* ``quality``: the exact search gets the policy's wall time as its budget;
  compares makespans. Method tag ``exact:match_time``.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import exact, ppo
from .errors import DataError
from .instances import Instance

RL = "rl"
EXACT_QUALITY = "exact:match_quality"
EXACT_TIME = "exact:match_time"


@dataclass(frozen=True)
class RunRecord:
    instance_id: str
    method: str
    objective: float
    time_s: float
    optimal: bool = False
    size_class: str = ""
    solved: bool = True  # False when a run missed its goal (e.g. hit the limit before matching)

    def __post_init__(self):
        if not self.objective > 0:
            raise DataError(f"objective must be positive, got {self.objective}")
        if not self.time_s >= 0:
            raise DataError(f"time must be non-negative, got {self.time_s}")


@dataclass
class ProfileCurve:
    method: str
    eta: np.ndarray
    gamma: np.ndarray

    def at(self, tau: float) -> float:
        i = np.searchsorted(self.eta, tau, side="right") - 1
        return 0.0 if i < 0 else float(self.gamma[i])


def phi(history: Sequence[tuple[str, float]], literal: bool = False) -> np.ndarray:
    """Per-episode gap of each return against the best return of its instance.

    ``history`` is ``(instance_id, return)`` in episode order. By default the
    ratio is |R_k| / |R_best| with R_best the return of smallest magnitude, so
    values are >= 1 and equal 1 at the best episode. ``literal=True`` divides
    the raw return by the minimum raw return of the instance instead.
    """
    if not history:
        raise DataError("empty return history")
    ids = [h[0] for h in history]
    vals = np.array([float(h[1]) for h in history])
    out = np.empty(len(vals))
    for name in set(ids):
        sel = np.array([i == name for i in ids])
        if literal:
            out[sel] = vals[sel] / vals[sel].min()
        else:
            out[sel] = np.abs(vals[sel]) / np.abs(vals[sel]).min()
    return out


def phi_for(history: Sequence[tuple[str, float]], instance_id: str, literal: bool = False) -> np.ndarray:
    if not any(h[0] == instance_id for h in history):
        raise DataError(f"unknown instance id {instance_id!r}")
    values = phi(history, literal)
    return values[[h[0] == instance_id for h in history]]


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` points (shorter at the start)."""
    x = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(len(x))
    lo = np.maximum(0, idx - window + 1)
    return (c[idx + 1] - c[lo]) / (idx + 1 - lo)


def _check_pair(rl: RunRecord, baseline: RunRecord) -> None:
    if rl.instance_id != baseline.instance_id:
        raise DataError(f"records for different instances: {rl.instance_id!r} vs {baseline.instance_id!r}")


def tau(rl: RunRecord, baseline: RunRecord) -> float:
    """Relative time difference; negative when ``rl`` is faster."""
    _check_pair(rl, baseline)
    if not baseline.time_s > 0:
        raise DataError("baseline time must be positive")
    return (rl.time_s - baseline.time_s) / baseline.time_s


def rho(rl: RunRecord, baseline: RunRecord) -> float:
    """Relative makespan difference; negative when ``rl`` is shorter."""
    _check_pair(rl, baseline)
    return (rl.objective - baseline.objective) / baseline.objective


def performance_profile(records: Iterable[RunRecord], performance: str = "time") -> dict[str, ProfileCurve]:
    """Dolan-More curves: gamma_a(t) = share of problems with ratio-to-best <= t.

    Problems are all instance ids present. A method without a record for a
    problem gets ratio infinity there. Every curve is evaluated at the union
    of finite ratios over all methods.
    """
    if performance not in ("time", "objective"):
        raise ValueError(f"performance must be 'time' or 'objective', got {performance!r}")
    records = list(records)
    if not records:
        raise DataError("no records for a performance profile")
    perf: dict[str, dict[str, float]] = {}
    for r in records:
        v = r.time_s if performance == "time" else r.objective
        if not v > 0:
            raise DataError(f"{performance} of {r.method} on {r.instance_id} must be positive, got {v}")
        perf.setdefault(r.method, {})[r.instance_id] = float(v)
    problems = sorted({r.instance_id for r in records})
    methods = sorted(perf)
    best = {p: min(perf[a][p] for a in methods if p in perf[a]) for p in problems}
    ratios = {a: np.array([perf[a][p] / best[p] if p in perf[a] else math.inf for p in problems]) for a in methods}
    breaks = np.unique(np.concatenate([r[np.isfinite(r)] for r in ratios.values()]))
    out = {}
    for a in methods:
        r = np.sort(ratios[a])
        gamma = np.searchsorted(r, breaks, side="right") / len(problems)
        out[a] = ProfileCurve(a, breaks.copy(), gamma)
    return out


def summary_rows(records: Sequence[RunRecord], metric: str) -> list[dict]:
    """Per (class, method): mean, population std, max and min of ``metric``."""
    groups: dict[tuple[str, str], list[float]] = {}
    for r in records:
        groups.setdefault((r.size_class, r.method), []).append(r.time_s if metric == "time" else r.objective)
    rows = []
    for (cls, method), vals in sorted(groups.items()):
        v = np.sort(np.array(vals))
        rows.append({"class": cls, "method": method, "metric": metric, "count": len(v),
                     "mean": float(v.mean()), "std": float(v.std()), "max": float(v.max()), "min": float(v.min())})
    return rows


def average_ratio(records: Sequence[RunRecord], baseline_method: str, fn) -> dict[str, float]:
    """Per class mean of ``fn(rl, baseline)`` over instances that have both records."""
    by_id: dict[tuple[str, str], RunRecord] = {(r.instance_id, r.method): r for r in records}
    acc: dict[str, list[float]] = {}
    for (iid, method), r in sorted(by_id.items()):
        if method != RL or (iid, baseline_method) not in by_id:
            continue
        base = by_id[iid, baseline_method]
        if not base.solved:
            continue
        acc.setdefault(r.size_class, []).append(fn(r, base))
    return {k: float(np.mean(sorted(v))) for k, v in acc.items()}


@dataclass
class BenchResult:
    records: list[RunRecord]
    summary: list[dict]
    profiles: dict[str, dict[str, ProfileCurve]]


def _solve_one(item, actor, time_limit, analyses):
    iid, inst = item
    t0 = time.perf_counter()
    _, rl_obj = ppo.greedy_solve(inst, actor)
    rl_time = time.perf_counter() - t0
    cls = inst.size_class
    out = [RunRecord(iid, RL, rl_obj, rl_time, False, cls)]
    if "time" in analyses:
        res = exact.branch_and_bound(inst, time_limit, target=rl_obj)
        out.append(RunRecord(iid, EXACT_QUALITY, res.makespan, res.elapsed, res.optimal, cls,
                             solved=res.makespan <= rl_obj))
    if "quality" in analyses:
        res = exact.branch_and_bound(inst, max(rl_time, 1e-9))
        out.append(RunRecord(iid, EXACT_TIME, res.makespan, res.elapsed, res.optimal, cls))
    return out


def bench(instances: Sequence[tuple[str, Instance]], actor, time_limit: float = 60.0,
          analyses: Sequence[str] = ("time", "quality"), workers: int = 1) -> BenchResult:
    bad = set(analyses) - {"time", "quality"}
    if bad:
        raise ValueError(f"unknown analyses {sorted(bad)}")
    if not instances:
        raise DataError("no instances to benchmark")
    # compile kernels before anything is timed
    exact.branch_and_bound(instances[0][1], 1.0)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda it: _solve_one(it, actor, time_limit, analyses), instances))
    else:
        parts = [_solve_one(it, actor, time_limit, analyses) for it in instances]
    records = [r for part in parts for r in part]

    summary = []
    profiles = {}
    if "time" in analyses:
        recs = [r for r in records if r.method in (RL, EXACT_QUALITY)]
        taus = average_ratio(recs, EXACT_QUALITY, tau)
        for row in summary_rows(recs, "time"):
            row["avg_tau"] = taus.get(row["class"]) if row["method"] == RL else None
            summary.append(row)
        ok = [_relabel(r) for r in recs if r.solved and r.time_s > 0]
        profiles["time"] = performance_profile(ok, "time")
    if "quality" in analyses:
        recs = [r for r in records if r.method in (RL, EXACT_TIME)]
        rhos = average_ratio(recs, EXACT_TIME, rho)
        for row in summary_rows(recs, "objective"):
            row["avg_rho"] = rhos.get(row["class"]) if row["method"] == RL else None
            summary.append(row)
        profiles["objective"] = performance_profile([_relabel(r) for r in recs], "objective")
    return BenchResult(records, summary, profiles)


def _relabel(r: RunRecord) -> RunRecord:
    method = "exact" if r.method.startswith("exact") else r.method
    return RunRecord(r.instance_id, method, r.objective, r.time_s, r.optimal, r.size_class, r.solved)


SUMMARY_COLUMNS = ("class", "method", "metric", "count", "mean", "std", "max", "min", "avg_tau", "avg_rho")


def write_bench(result: BenchResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / "records.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "method", "objective", "time_s", "optimal"])
        for r in result.records:
            w.writerow([r.instance_id, r.method, _num(r.objective), repr(r.time_s), str(r.optimal).lower()])
    written.append(path)
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in result.summary:
            w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in SUMMARY_COLUMNS])
    written.append(path)
    for metric, curves in result.profiles.items():
        path = out / f"profile_{metric}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "eta", "gamma"])
            for name, curve in sorted(curves.items()):
                for e, g in zip(curve.eta, curve.gamma):
                    w.writerow([name, repr(float(e)), repr(float(g))])
        written.append(path)
    return written


def read_records(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        return [RunRecord(r["instance_id"], r["method"], float(r["objective"]), float(r["time_s"]),
                          r["optimal"] == "true") for r in csv.DictReader(fh)]


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))
