"""JSSP instances: data model, random generation and the text format.

File format (OR-library style, UTF-8, LF line endings, no comments)::

    <n> <m>
    <machine> <time> <machine> <time> ...     # job 0
    ...                                       # job n-1

Random generation draws every number from one PCG64 stream (numpy's
``Generator.random``). Gaussian times use the Box-Muller transform, Poisson
times use sequential inversion, and machine orders use a Fisher-Yates
shuffle driven by the same uniforms. Sampled times are rounded to the nearest
integer (half to even) and clamped to at least 1.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError

# inversion needs exp(-lam) to stay a normal double
POISSON_MAX_LAMBDA = 700.0


class Task(NamedTuple):
    machine: int
    processing_time: int


@dataclass(frozen=True)
class Instance:
    num_jobs: int
    num_machines: int
    jobs: tuple[tuple[Task, ...], ...]

    def __post_init__(self):
        jobs = tuple(tuple(Task(int(k), int(p)) for k, p in job) for job in self.jobs)
        object.__setattr__(self, "jobs", jobs)
        validate(self)

    @property
    def num_tasks(self) -> int:
        return sum(len(job) for job in self.jobs)

    @property
    def size_class(self) -> str:
        return f"{self.num_jobs}x{self.num_machines}"

    def total_processing_time(self) -> int:
        return sum(t.processing_time for job in self.jobs for t in job)

    def to_arrays(self):
        """Dense ``(machines, times, lengths)`` arrays, padded with -1 / 0."""
        width = max((len(job) for job in self.jobs), default=0)
        machines = np.full((self.num_jobs, max(width, 1)), -1, dtype=np.int64)
        times = np.zeros((self.num_jobs, max(width, 1)), dtype=np.int64)
        lengths = np.zeros(self.num_jobs, dtype=np.int64)
        for j, job in enumerate(self.jobs):
            lengths[j] = len(job)
            for i, task in enumerate(job):
                machines[j, i] = task.machine
                times[j, i] = task.processing_time
        return machines, times, lengths


def validate(instance: Instance) -> None:
    n, m = instance.num_jobs, instance.num_machines
    if n < 1 or m < 1:
        raise DataError(f"instance needs at least one job and one machine, got {n}x{m}")
    if len(instance.jobs) != n:
        raise DataError(f"expected {n} jobs, got {len(instance.jobs)}")
    for j, job in enumerate(instance.jobs):
        if not 1 <= len(job) <= m:
            raise DataError(f"job {j} has {len(job)} tasks, expected 1..{m}")
        seen = set()
        for task in job:
            if not 0 <= task.machine < m:
                raise DataError(f"job {j} uses machine {task.machine} outside 0..{m - 1}")
            if task.machine in seen:
                raise DataError(f"job {j} visits machine {task.machine} twice")
            if task.processing_time < 1:
                raise DataError(f"job {j} has non-positive processing time {task.processing_time}")
            seen.add(task.machine)


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.mu > 0 and self.sigma > 0):
            raise ConfigError(f"gaussian needs mu > 0 and sigma > 0, got {self.mu}, {self.sigma}")

    @property
    def mean(self) -> float:
        return self.mu

    def label(self) -> str:
        return "gaussian"


@dataclass(frozen=True)
class Poisson:
    lam: float

    def __post_init__(self):
        if not 0 < self.lam <= POISSON_MAX_LAMBDA:
            raise ConfigError(f"poisson needs 0 < lambda <= {POISSON_MAX_LAMBDA}, got {self.lam}")

    @property
    def mean(self) -> float:
        return self.lam

    def label(self) -> str:
        return "poisson"


Distribution = Gaussian | Poisson


@dataclass(frozen=True)
class GeneratorSpec:
    num_jobs: int
    num_machines: int
    distribution: Distribution
    seed: int = 0

    def __post_init__(self):
        if self.num_jobs < 1 or self.num_machines < 1:
            raise ConfigError(
                f"need num_jobs >= 1 and num_machines >= 1, got {self.num_jobs}x{self.num_machines}"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def parse_distribution(text: str) -> Distribution:
    """Parse ``gaussian:<mu>:<sigma>`` or ``poisson:<lambda>``."""
    name, *args = text.strip().lower().split(":")
    try:
        values = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"bad distribution parameters in {text!r}") from None
    if name in ("gaussian", "normal") and len(values) == 2:
        return Gaussian(*values)
    if name == "poisson" and len(values) == 1:
        return Poisson(*values)
    raise ConfigError(f"unknown distribution {text!r}; use gaussian:MU:SIGMA or poisson:LAMBDA")


def format_distribution(dist: Distribution) -> str:
    if isinstance(dist, Gaussian):
        return f"gaussian:{dist.mu:g}:{dist.sigma:g}"
    return f"poisson:{dist.lam:g}"


def make_rng(seed, *extra) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, extra)])))


def _normal_pair(rng: np.random.Generator) -> tuple[float, float]:
    u1 = 1.0 - rng.random()  # (0, 1]
    u2 = rng.random()
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)


def _poisson(rng: np.random.Generator, lam: float) -> int:
    u = rng.random()
    k = 0
    p = math.exp(-lam)
    cdf = p
    while u > cdf:
        k += 1
        p *= lam / k
        cdf += p
        if p == 0.0 and k > lam:
            break
    return k


def sample_processing_times(dist: Distribution, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` raw (unrounded) samples."""
    out = np.empty(count, dtype=np.float64)
    if isinstance(dist, Gaussian):
        i = 0
        while i < count:
            z0, z1 = _normal_pair(rng)
            out[i] = dist.mu + dist.sigma * z0
            if i + 1 < count:
                out[i + 1] = dist.mu + dist.sigma * z1
            i += 2
    else:
        for i in range(count):
            out[i] = _poisson(rng, dist.lam)
    return out


def _shuffle(values: list, rng: np.random.Generator) -> list:
    for i in range(len(values) - 1, 0, -1):
        k = min(int(rng.random() * (i + 1)), i)
        values[i], values[k] = values[k], values[i]
    return values


def generate(spec: GeneratorSpec) -> Instance:
    rng = make_rng(spec.seed)
    n, m = spec.num_jobs, spec.num_machines
    orders = [_shuffle(list(range(m)), rng) for _ in range(n)]
    raw = sample_processing_times(spec.distribution, n * m, rng)
    times = np.maximum(np.rint(raw), 1).astype(np.int64).reshape(n, m)
    jobs = tuple(
        tuple(Task(k, int(times[j, i])) for i, k in enumerate(orders[j])) for j in range(n)
    )
    return Instance(n, m, jobs)


def generate_many(num_jobs: int, num_machines: int, dist: Distribution, count: int, seed: int) -> list[Instance]:
    """Instance ``i`` of the batch is ``generate`` with the seed derived from ``(seed, i)``."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    out = []
    for i in range(count):
        child = int(np.random.SeedSequence([int(seed), i]).generate_state(2, np.uint32).view(np.uint64)[0])
        out.append(generate(GeneratorSpec(num_jobs, num_machines, dist, child)))
    return out


_INT = re.compile(r"^-?\d+$")


def parse_instance(text: str | bytes) -> Instance:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = [(no, line.split()) for no, line in enumerate(text.split("\n"), start=1)]
    lines = [(no, toks) for no, toks in lines if toks]
    if not lines:
        raise ParseError("empty instance", 1)
    no, header = lines[0]
    if len(header) != 2 or not all(_INT.match(t) for t in header):
        raise ParseError("header must be '<jobs> <machines>'", no)
    n, m = int(header[0]), int(header[1])
    if n < 1 or m < 1:
        raise ParseError(f"header needs positive sizes, got {n} {m}", no)
    body = lines[1:]
    if len(body) != n:
        raise ParseError(f"header declares {n} jobs but {len(body)} job lines follow", body[-1][0] if body else no)
    jobs = []
    for j, (no, toks) in enumerate(body):
        if not all(_INT.match(t) for t in toks):
            raise ParseError("non-integer token", no)
        if len(toks) % 2:
            raise ParseError("odd number of integers; expected machine/time pairs", no)
        vals = [int(t) for t in toks]
        tasks = [Task(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
        if not 1 <= len(tasks) <= m:
            raise ParseError(f"job {j} has {len(tasks)} tasks, expected 1..{m}", no)
        machines = [t.machine for t in tasks]
        if len(set(machines)) != len(machines):
            raise ParseError(f"job {j} visits a machine twice", no)
        for t in tasks:
            if not 0 <= t.machine < m:
                raise ParseError(f"machine {t.machine} outside 0..{m - 1}", no)
            if t.processing_time < 1:
                raise ParseError(f"non-positive processing time {t.processing_time}", no)
        jobs.append(tuple(tasks))
    return Instance(n, m, tuple(jobs))


def write_instance(instance: Instance) -> str:
    lines = [f"{instance.num_jobs} {instance.num_machines}"]
    for job in instance.jobs:
        lines.append(" ".join(f"{t.machine} {t.processing_time}" for t in job))
    return "\n".join(lines) + "\n"


def load_instance(path) -> Instance:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_instance(data)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_instance(instance: Instance, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_instance(instance))


def from_lists(jobs: Sequence[Sequence[tuple[int, int]]], num_machines: int | None = None) -> Instance:
    """Build an instance from ``[[(machine, time), ...], ...]``."""
    if num_machines is None:
        num_machines = 1 + max(k for job in jobs for k, _ in job)
    return Instance(len(jobs), num_machines, tuple(tuple(Task(k, p) for k, p in job) for job in jobs))
