"""Exact baselines: the big-M MILP (with LP-file export), a branch-and-bound
search over the MDP's decision tree, and a brute-force oracle.

Search class. The MDP appends each chosen task to its machine at
max(job ready, machine ready). Replaying any semi-active schedule in order of
start times reproduces it exactly, and some semi-active schedule is always
optimal, so exhausting the decision tree gives the true JSSP optimum. The LP
export carries the unrestricted formulation for external solvers.

LP naming: ``t_<j>_<k>`` start of job j on machine k, ``x_<j>_<i>_<k>`` equals
1 when job j precedes job i (j < i) on machine k, ``Cmax`` the makespan. Rows
are named ``prec_<j>_<pos>``, ``dA_<j>_<i>_<k>``, ``dB_<j>_<i>_<k>`` and
``mk_<j>_<k>``.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import env, kernels
from .errors import DataError, SizeGuardError
from .instances import Instance

BRUTE_FORCE_MAX_TASKS = 12


@dataclass
class Constraint:
    name: str
    coeffs: dict[str, int]
    sense: str  # ">=" or "<="
    rhs: int


@dataclass
class MilpModel:
    continuous: list[str]
    binary: list[str]
    constraints: list[Constraint]
    big_m: int
    objective: str = "Cmax"
    lower_bounds: dict[str, int] = field(default_factory=dict)

    @property
    def variables(self) -> list[str]:
        return self.continuous + self.binary

    def count(self, prefix: str) -> int:
        return sum(1 for c in self.constraints if c.name.startswith(prefix))


def build_milp(instance: Instance) -> MilpModel:
    big_m = math.ceil(instance.total_processing_time())
    cont = [f"t_{j}_{t.machine}" for j, job in enumerate(instance.jobs) for t in job]
    cont.append("Cmax")
    binary = []
    rows = []
    for j, job in enumerate(instance.jobs):
        for pos, (a, b) in enumerate(zip(job, job[1:])):
            rows.append(Constraint(
                f"prec_{j}_{pos}", {f"t_{j}_{b.machine}": 1, f"t_{j}_{a.machine}": -1}, ">=", a.processing_time
            ))
    ptime = {(j, t.machine): t.processing_time for j, job in enumerate(instance.jobs) for t in job}
    for k in range(instance.num_machines):
        users = [j for j in range(instance.num_jobs) if (j, k) in ptime]
        for j, i in combinations(users, 2):
            x = f"x_{j}_{i}_{k}"
            binary.append(x)
            tj, ti = f"t_{j}_{k}", f"t_{i}_{k}"
            # t_jk - t_ik >= p_ik - M x
            rows.append(Constraint(f"dA_{j}_{i}_{k}", {tj: 1, ti: -1, x: big_m}, ">=", ptime[i, k]))
            # t_ik - t_jk >= p_jk - M (1 - x)
            rows.append(Constraint(f"dB_{j}_{i}_{k}", {ti: 1, tj: -1, x: -big_m}, ">=", ptime[j, k] - big_m))
    for j, job in enumerate(instance.jobs):
        for t in job:
            rows.append(Constraint(f"mk_{j}_{t.machine}", {"Cmax": 1, f"t_{j}_{t.machine}": -1}, ">=", t.processing_time))
    return MilpModel(cont, binary, rows, big_m, lower_bounds={v: 0 for v in cont})


def _term(coef: int, name: str, first: bool) -> str:
    sign = "-" if coef < 0 else ("" if first else "+")
    mag = abs(coef)
    body = name if mag == 1 else f"{mag} {name}"
    return f"{sign} {body}" if sign else body


def export_lp(model: MilpModel) -> bytes:
    """CPLEX LP text: objective, constraints, bounds, binaries."""
    out = ["\\ job-shop makespan model", f"\\ big_M = {model.big_m}", "Minimize", f" obj: {model.objective}", "Subject To"]
    for c in model.constraints:
        terms = " ".join(_term(v, k, i == 0) for i, (k, v) in enumerate(c.coeffs.items()))
        out.append(f" {c.name}: {terms} {c.sense} {c.rhs}")
    out.append("Bounds")
    for v in model.continuous:
        out.append(f" {v} >= {model.lower_bounds.get(v, 0)}")
    if model.binary:
        out.append("Binary")
        for v in model.binary:
            out.append(f" {v}")
    out.append("End")
    return ("\n".join(out) + "\n").encode("ascii")


_TERM = re.compile(r"([+-])?\s*(\d+(?:\.\d+)?)?\s*([A-Za-z_][A-Za-z0-9_]*)")


def _parse_expr(text: str) -> dict[str, float]:
    coeffs: dict[str, float] = {}
    text = text.strip()
    pos = 0
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m:
            raise DataError(f"cannot parse LP expression near {text[pos:]!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        coeffs[m.group(3)] = coeffs.get(m.group(3), 0.0) + sign * coef
        pos = m.end()
        while pos < len(text) and text[pos] == " ":
            pos += 1
    return coeffs


def parse_lp(data: bytes | str) -> dict:
    """Read back the subset of LP syntax that ``export_lp`` writes.

    Grammar: ``\\`` comment lines; section keywords ``Minimize``,
    ``Subject To``, ``Bounds``, ``Binary``, ``End``; one item per line;
    constraints ``name: expr (>=|<=|=) number``; bounds ``var >= number``.
    Returns ``{"objective", "constraints", "bounds", "binary"}``.
    """
    if isinstance(data, bytes):
        data = data.decode("ascii")
    section = None
    result = {"objective": {}, "constraints": [], "bounds": {}, "binary": []}
    sections = {"minimize": "obj", "subject to": "st", "bounds": "bounds", "binary": "bin", "end": "end"}
    for raw in data.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line.lower() in sections:
            section = sections[line.lower()]
            continue
        if section == "obj":
            _, expr = line.split(":", 1)
            result["objective"] = _parse_expr(expr)
        elif section == "st":
            name, rest = line.split(":", 1)
            m = re.match(r"(.*?)(>=|<=|=)\s*(-?\d+(?:\.\d+)?)\s*$", rest)
            if not m:
                raise DataError(f"bad constraint line {line!r}")
            result["constraints"].append((name.strip(), _parse_expr(m.group(1)), m.group(2), float(m.group(3))))
        elif section == "bounds":
            var, val = line.split(">=")
            result["bounds"][var.strip()] = float(val)
        elif section == "bin":
            result["binary"].append(line)
        else:
            raise DataError(f"content outside a section: {line!r}")
    if section != "end":
        raise DataError("LP text lacks End")
    return result


@dataclass
class ExactResult:
    makespan: int
    schedule: list
    optimal: bool
    nodes: int
    elapsed: float

    def summary(self) -> str:
        return f"makespan={self.makespan} optimal={str(self.optimal).lower()} nodes={self.nodes}"


def lower_bound(instance: Instance) -> int:
    machines, times, lengths = instance.to_arrays()
    return int(kernels.root_lower_bound(times, lengths, machines, instance.num_machines))


def spt_rollout(instance: Instance) -> tuple[list[int], int]:
    machines, times, lengths = instance.to_arrays()
    seq, ms = kernels.spt_sequence(machines, times, lengths, instance.num_machines)
    return [int(a) for a in seq], int(ms)


def branch_and_bound(instance: Instance, time_limit: float | None = 60.0, target: int | None = None,
                     chunk: int = 2000) -> ExactResult:
    """Exact search with a wall-clock limit.

    ``target`` stops the search as soon as a schedule with makespan <= target
    is known (used to time how long reaching a given quality takes). The
    result is flagged optimal only when the tree was exhausted or the incumbent
    meets the root lower bound.
    """
    t0 = time.perf_counter()
    machines, times, lengths = instance.to_arrays()
    n, m, total = instance.num_jobs, instance.num_machines, instance.num_tasks
    seq, inc = kernels.spt_sequence(machines, times, lengths, m)
    best = np.array(seq, dtype=np.int64)
    root = int(kernels.root_lower_bound(times, lengths, machines, m))
    nodes = 0
    optimal = inc <= root
    stop = target if target is not None else 0
    if not optimal and inc > stop:
        remj = times.sum(axis=1).astype(np.int64)
        remm = np.zeros(m, dtype=np.int64)
        np.add.at(remm, machines[machines >= 0], times[machines >= 0])
        arrays = dict(
            nxt=np.zeros(n, np.int64), jr=np.zeros(n, np.int64), mr=np.zeros(m, np.int64),
            remj=remj, remm=remm, cand=np.zeros((total, n), np.int64), ncand=np.zeros(total, np.int64),
            pos=np.zeros(total, np.int64), chosen=np.zeros(total, np.int64), sv_jr=np.zeros(total, np.int64),
            sv_mr=np.zeros(total, np.int64), sv_ms=np.zeros(total, np.int64),
        )
        ctl = np.zeros(6, np.int64)
        ctl[kernels.C_INCUMBENT] = inc
        ctl[kernels.C_FRESH] = 1
        budget = chunk
        while True:
            status = kernels.bnb_search(
                machines, times, lengths, arrays["nxt"], arrays["jr"], arrays["mr"], arrays["remj"],
                arrays["remm"], arrays["cand"], arrays["ncand"], arrays["pos"], arrays["chosen"],
                arrays["sv_jr"], arrays["sv_mr"], arrays["sv_ms"], best, ctl, budget, stop,
            )
            if status != kernels.RUNNING:
                break
            if time_limit is not None and time.perf_counter() - t0 >= time_limit:
                break
            budget = min(budget * 2, 1_000_000)
        inc = int(ctl[kernels.C_INCUMBENT])
        nodes = int(ctl[kernels.C_NODES])
        optimal = status == kernels.EXHAUSTED or inc <= root
    state, _ = env.run_actions(instance, [int(a) for a in best])
    if state.current_makespan != inc:
        raise AssertionError(f"search incumbent {inc} disagrees with replayed makespan {state.current_makespan}")
    return ExactResult(int(inc), env.extract_schedule(state), bool(optimal), nodes, time.perf_counter() - t0)


def brute_force(instance: Instance) -> int:
    """Minimum terminal makespan over every legal decision sequence, via ``env.step``."""
    if instance.num_tasks > BRUTE_FORCE_MAX_TASKS:
        raise SizeGuardError(
            f"brute force limited to {BRUTE_FORCE_MAX_TASKS} tasks, instance has {instance.num_tasks}"
        )
    best = math.inf
    stack = [env.reset(instance)]
    while stack:
        state = stack.pop()
        if state.done:
            best = min(best, state.current_makespan)
            continue
        for j in np.flatnonzero(env.mask(state)):
            stack.append(env.step(state, int(j)).next_state)
    return int(best)
