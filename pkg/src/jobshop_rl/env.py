"""Sequential scheduling MDP.

Each decision picks a job; its next unscheduled task starts at the earliest
time allowed by the job's previous task and the machine's last task. The
reward is minus the increase of the running makespan, so the negated sum of
rewards over an episode equals the final makespan. All time arithmetic is
integer.

States are immutable values: ``step`` returns a fresh state and never
touches its input.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidActionError, StateError
from .instances import Instance, Task


class ScheduleRecord(NamedTuple):
    job: int
    machine: int
    start: int
    completion: int


@dataclass(frozen=True)
class SchedulingState:
    instance: Instance
    next_task: tuple[int, ...]
    job_ready: tuple[int, ...]
    machine_ready: tuple[int, ...]
    current_makespan: int
    step_index: int
    scheduled: tuple[ScheduleRecord, ...]

    @property
    def remaining(self) -> tuple[tuple[Task, ...], ...]:
        return tuple(job[i:] for job, i in zip(self.instance.jobs, self.next_task))

    @property
    def done(self) -> bool:
        return self.step_index == self.instance.num_tasks

    def head(self, job: int) -> Task:
        tasks = self.instance.jobs[job]
        i = self.next_task[job]
        if i >= len(tasks):
            raise InvalidActionError(f"job {job} has no remaining task")
        return tasks[i]


class StepOutcome(NamedTuple):
    next_state: SchedulingState
    reward: int
    done: bool


@dataclass(frozen=True)
class StateFeatures:
    """Per job, an ``(len, 3)`` array of (machine, time, start-or--1) rows."""

    jobs: tuple[np.ndarray, ...]

    @property
    def num_jobs(self) -> int:
        return len(self.jobs)


def reset(instance: Instance) -> SchedulingState:
    n, m = instance.num_jobs, instance.num_machines
    return SchedulingState(instance, (0,) * n, (0,) * n, (0,) * m, 0, 0, ())


def earliest_start(state: SchedulingState, job: int) -> int:
    if not 0 <= job < state.instance.num_jobs:
        raise InvalidActionError(f"job index {job} out of range")
    task = state.head(job)
    return max(state.job_ready[job], state.machine_ready[task.machine])


def mask(state: SchedulingState) -> np.ndarray:
    return np.array(
        [i < len(job) for job, i in zip(state.instance.jobs, state.next_task)], dtype=bool
    )


def step(state: SchedulingState, action: int) -> StepOutcome:
    action = int(action)
    if not 0 <= action < state.instance.num_jobs:
        raise InvalidActionError(f"job index {action} out of range")
    task = state.head(action)
    start = max(state.job_ready[action], state.machine_ready[task.machine])
    completion = start + task.processing_time
    reward = -(completion - state.current_makespan) if completion > state.current_makespan else 0

    next_task = list(state.next_task)
    next_task[action] += 1
    job_ready = list(state.job_ready)
    job_ready[action] = completion
    machine_ready = list(state.machine_ready)
    machine_ready[task.machine] = completion
    new = SchedulingState(
        state.instance,
        tuple(next_task),
        tuple(job_ready),
        tuple(machine_ready),
        max(state.current_makespan, completion),
        state.step_index + 1,
        state.scheduled + (ScheduleRecord(action, task.machine, start, completion),),
    )
    return StepOutcome(new, reward, new.done)


def encode(state: SchedulingState, scale: float) -> StateFeatures:
    """Machine index divided by m, times divided by ``scale``; -1 marks non-head starts."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    m = state.instance.num_machines
    out = []
    for j, (job, i) in enumerate(zip(state.instance.jobs, state.next_task)):
        rest = job[i:]
        arr = np.empty((len(rest), 3), dtype=np.float64)
        for r, task in enumerate(rest):
            arr[r, 0] = task.machine / m
            arr[r, 1] = task.processing_time / scale
            arr[r, 2] = -1.0
        if len(rest):
            arr[0, 2] = earliest_start(state, j) / scale
        out.append(arr)
    return StateFeatures(tuple(out))


def extract_schedule(state: SchedulingState) -> list[ScheduleRecord]:
    if not state.done:
        raise StateError(
            f"schedule requested after {state.step_index} of {state.instance.num_tasks} decisions"
        )
    return list(state.scheduled)


def run_actions(instance: Instance, actions: Sequence[int]) -> tuple[SchedulingState, list[int]]:
    state = reset(instance)
    rewards = []
    for a in actions:
        state, r, _ = step(state, a)
        rewards.append(r)
    return state, rewards


def random_episode(instance: Instance, rng: np.random.Generator) -> tuple[SchedulingState, list[int]]:
    """Uniformly random allowed action at every step."""
    state = reset(instance)
    rewards = []
    while not state.done:
        allowed = np.flatnonzero(mask(state))
        state, r, _ = step(state, allowed[rng.integers(len(allowed))])
        rewards.append(r)
    return state, rewards


def check_schedule(instance: Instance, records: Sequence[ScheduleRecord]) -> list[str]:
    """Return every violated scheduling constraint; empty means feasible.

    Checks coverage of all tasks, completion = start + p, job precedence in
    task order, and that no two tasks on one machine overlap.
    """
    problems = []
    by_job: dict[int, list[ScheduleRecord]] = {}
    for rec in records:
        by_job.setdefault(rec.job, []).append(rec)
    for j, job in enumerate(instance.jobs):
        recs = by_job.get(j, [])
        if [r.machine for r in recs] != [t.machine for t in job]:
            problems.append(f"job {j}: scheduled machines {[r.machine for r in recs]} != task order")
            continue
        prev = 0
        for r, task in zip(recs, job):
            if r.start < 0:
                problems.append(f"job {j} machine {r.machine}: negative start {r.start}")
            if r.completion != r.start + task.processing_time:
                problems.append(f"job {j} machine {r.machine}: completion {r.completion} != start + p")
            if r.start < prev:
                problems.append(f"job {j} machine {r.machine}: starts at {r.start} before predecessor ends at {prev}")
            prev = r.completion
    extra = set(by_job) - set(range(instance.num_jobs))
    if extra:
        problems.append(f"records for unknown jobs {sorted(extra)}")
    by_machine: dict[int, list[ScheduleRecord]] = {}
    for rec in records:
        by_machine.setdefault(rec.machine, []).append(rec)
    for k, recs in by_machine.items():
        recs = sorted(recs, key=lambda r: (r.start, r.completion))
        for a, b in zip(recs, recs[1:]):
            if b.start < a.completion:
                problems.append(f"machine {k}: jobs {a.job} and {b.job} overlap")
    return problems


def is_semi_active(records: Sequence[ScheduleRecord]) -> bool:
    """Each start equals max(job predecessor end, machine predecessor end)."""
    job_prev: dict[int, int] = {}
    machine_prev: dict[int, int] = {}
    for rec in sorted(records, key=lambda r: r.start):
        expected = max(job_prev.get(rec.job, 0), machine_prev.get(rec.machine, 0))
        if rec.start != expected:
            return False
        job_prev[rec.job] = rec.completion
        machine_prev[rec.machine] = rec.completion
    return True


def makespan(records: Sequence[ScheduleRecord]) -> int:
    return max((r.completion for r in records), default=0)


def schedule_to_csv(records: Sequence[ScheduleRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["job", "machine", "start", "completion"])
    for r in records:
        writer.writerow([r.job, r.machine, r.start, r.completion])
    return buf.getvalue()
