"""Actor-critic training with a KL-penalized objective and adaptive penalty.

One episode: pick an instance, run N roll-outs of the current policy (with
probability epsilon a step takes a uniformly random allowed job instead),
compute rewards-to-go and one-step advantages, take Adam steps on the actor
loss, adapt beta from the mean KL after the update, then regress the critic on
the rewards-to-go.

The N roll-outs of an episode see the same instance, so they advance in
lockstep and each decision step evaluates the actor once on an N-state batch.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import __version__
from . import autodiff as ad
from . import env
from .autodiff import AdamState, Tensor
from .errors import ConfigError, DataError, NumericError
from .instances import Instance
from .models import (ActorNet, CriticNet, FeatureBatch, ModelConfig, actor_log_probs, critic_values,
                     init_params, load_state_dict, pad_features, state_dict)

log = logging.getLogger(__name__)

DEFAULT_EPSILON_SCHEDULE = ((0.0, 0.20), (0.40, 0.10), (0.55, 0.05), (0.70, 0.0))
LOG_COLUMNS = ("episode", "instance_id", "mean_return", "best_return", "phi", "critic_loss", "kl", "beta", "epsilon")


@dataclass
class TrainConfig:
    episodes: int = 5000
    rollouts: int = 10
    beta0: float = 15.0
    delta: float = 0.05
    actor_steps: int = 1
    critic_steps: int = 3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    epsilon_schedule: tuple[tuple[float, float], ...] = DEFAULT_EPSILON_SCHEDULE
    seed: int = 0
    kl_direction: str = "old_new"  # "old_new": KL(old || new); "new_old": KL(new || old)
    guard_factor: float = 50.0
    checkpoint_every: int = 0
    model: ModelConfig | None = None

    def __post_init__(self):
        self.epsilon_schedule = tuple((float(f), float(e)) for f, e in self.epsilon_schedule)
        for name in ("episodes", "rollouts", "actor_steps", "critic_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if not self.beta0 > 0:
            raise ConfigError(f"beta0 must be positive, got {self.beta0}")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.kl_direction not in ("old_new", "new_old"):
            raise ConfigError(f"kl_direction must be old_new or new_old, got {self.kl_direction!r}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        sched = self.epsilon_schedule
        if not sched or sched[0][0] != 0.0:
            raise ConfigError("epsilon schedule must start at fraction 0")
        fracs = [f for f, _ in sched]
        eps = [e for _, e in sched]
        if fracs != sorted(fracs) or any(not 0 <= e <= 1 for e in eps) or any(b > a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilon schedule must have increasing fractions and non-increasing values in [0,1]: {sched}")

    def epsilon(self, episode: int) -> float:
        frac = episode / self.episodes
        value = self.epsilon_schedule[0][1]
        for f, e in self.epsilon_schedule:
            if frac >= f:
                value = e
        return value

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["epsilon_schedule"] = [list(p) for p in self.epsilon_schedule]
        d["model"] = self.model.to_dict() if self.model else None
        return d


@dataclass
class RolloutBatch:
    instance_id: str
    features: list[env.StateFeatures]
    masks: np.ndarray  # (T, n) bool
    actions: np.ndarray  # (T,)
    old_log_probs: np.ndarray  # (T, n), full vectors
    rewards: np.ndarray  # (T,) int
    makespan: int
    schedule: list = field(default_factory=list)
    rewards_to_go: np.ndarray | None = None
    advantages: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    @property
    def total_return(self) -> int:
        return int(self.rewards.sum())

    @property
    def old_log_prob_taken(self) -> np.ndarray:
        return self.old_log_probs[np.arange(len(self.actions)), self.actions]


def default_model_config(dataset: Sequence[Instance], **overrides) -> ModelConfig:
    """Scale features by mean processing time times the largest machine count."""
    times = [t.processing_time for inst in dataset for job in inst.jobs for t in job]
    scale = float(np.mean(times)) * max(inst.num_machines for inst in dataset)
    kw = {"time_scale": scale, "value_scale": scale}
    kw.update(overrides)
    return ModelConfig(**kw)


def _policy(actor: ActorNet, features: list[env.StateFeatures], masks: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        fb = pad_features(features, actor.config.features)
        return actor_log_probs(actor, fb, masks).value


def _choose(logp: np.ndarray, allowed: np.ndarray, epsilon: float, u_explore: float, u_pick: float) -> int:
    idx = np.flatnonzero(allowed)
    if u_explore < epsilon:
        return int(idx[min(int(u_pick * len(idx)), len(idx) - 1)])
    p = np.exp(logp[idx])
    cdf = np.cumsum(p)
    k = int(np.searchsorted(cdf, u_pick * cdf[-1], side="right"))
    return int(idx[min(k, len(idx) - 1)])


def collect_rollouts(instance: Instance, actor: ActorNet, epsilon: float, count: int,
                     rng: np.random.Generator, instance_id: str = "0") -> list[RolloutBatch]:
    """Run ``count`` roll-outs in lockstep; two uniforms are drawn per roll-out per step."""
    scale = actor.config.time_scale
    states = [env.reset(instance) for _ in range(count)]
    T = instance.num_tasks
    n = instance.num_jobs
    feats = [[] for _ in range(count)]
    masks = np.zeros((count, T, n), dtype=bool)
    actions = np.zeros((count, T), dtype=np.int64)
    logps = np.zeros((count, T, n))
    rewards = np.zeros((count, T), dtype=np.int64)
    for t in range(T):
        f_t = [env.encode(s, scale) for s in states]
        m_t = np.stack([env.mask(s) for s in states])
        lp = _policy(actor, f_t, m_t)
        u = rng.random((count, 2))
        for r in range(count):
            a = _choose(lp[r], m_t[r], epsilon, u[r, 0], u[r, 1])
            feats[r].append(f_t[r])
            masks[r, t] = m_t[r]
            actions[r, t] = a
            logps[r, t] = lp[r]
            states[r], rewards[r, t], _ = env.step(states[r], a)
    return [
        RolloutBatch(instance_id, feats[r], masks[r], actions[r], logps[r], rewards[r],
                     states[r].current_makespan, env.extract_schedule(states[r]))
        for r in range(count)
    ]


def collect_rollout(instance: Instance, actor: ActorNet, epsilon: float, seed: int) -> RolloutBatch:
    rng = np.random.Generator(np.random.PCG64(seed))
    return collect_rollouts(instance, actor, epsilon, 1, rng)[0]


def rewards_to_go(batch: RolloutBatch) -> None:
    batch.rewards_to_go = np.cumsum(batch.rewards[::-1])[::-1].astype(np.float64)


def advantages_from_values(rewards: np.ndarray, values: np.ndarray) -> np.ndarray:
    """A_t = r_t + V(s_{t+1}) - V(s_t), with the value after the last step taken as 0."""
    values = np.asarray(values, dtype=np.float64)
    nxt = np.append(values[1:], 0.0)
    return np.asarray(rewards, dtype=np.float64) + nxt - values


def state_values(critic: CriticNet, batches: Sequence[RolloutBatch]) -> list[np.ndarray]:
    feats = [f for b in batches for f in b.features]
    with ad.no_grad():
        v = critic_values(critic, pad_features(feats, critic.config.features)).value[:, 0]
    out, start = [], 0
    for b in batches:
        out.append(v[start:start + len(b)])
        start += len(b)
    return out


def advantages(batches: RolloutBatch | Sequence[RolloutBatch], critic: CriticNet) -> None:
    if isinstance(batches, RolloutBatch):
        batches = [batches]
    for b, v in zip(batches, state_values(critic, batches)):
        b.advantages = advantages_from_values(b.rewards, v)


@dataclass
class EpisodeData:
    """All N*T samples of an episode, padded once and reused by every update step."""

    features: FeatureBatch
    masks: np.ndarray
    onehot: np.ndarray
    old_log_probs: np.ndarray
    old_taken: np.ndarray
    old_probs: np.ndarray
    advantages: np.ndarray | None
    rewards_to_go: np.ndarray | None

    @property
    def size(self) -> int:
        return self.masks.shape[0]


def prepare(batches: Sequence[RolloutBatch], features: int = 3) -> EpisodeData:
    feats = [f for b in batches for f in b.features]
    fb = pad_features(feats, features)
    jobs = fb.jobs
    size = len(feats)
    masks = np.zeros((size, jobs), dtype=bool)
    old = np.full((size, jobs), ad.NEG_SENTINEL)
    onehot = np.zeros((size, jobs))
    row = 0
    for b in batches:
        T, n = b.masks.shape
        masks[row:row + T, :n] = b.masks
        old[row:row + T, :n] = np.where(b.masks, b.old_log_probs, ad.NEG_SENTINEL)
        onehot[row + np.arange(T), b.actions] = 1.0
        row += T
    old_probs = np.where(masks, np.exp(np.where(masks, old, 0.0)), 0.0)
    taken = (old * onehot).sum(axis=1, where=onehot > 0, keepdims=True)
    adv = None if any(b.advantages is None for b in batches) else np.concatenate([b.advantages for b in batches])[:, None]
    rtg = None if any(b.rewards_to_go is None for b in batches) else np.concatenate([b.rewards_to_go for b in batches])[:, None]
    return EpisodeData(fb, masks, onehot, old, taken, old_probs, adv, rtg)


def _as_data(batches, features: int) -> EpisodeData:
    return batches if isinstance(batches, EpisodeData) else prepare(batches, features)


def kl_terms(new_logp: Tensor, data: EpisodeData, direction: str = "old_new") -> Tensor:
    """(B, 1) per-state KL divergence between the old and new policies over allowed jobs."""
    if direction == "old_new":
        const = (data.old_probs * np.where(data.masks, data.old_log_probs, 0.0)).sum(axis=1, keepdims=True)
        return ad.sub(Tensor(const), ad.sum_cols(ad.mul(new_logp, data.old_probs)))
    p_new = ad.exp(new_logp)
    diff = ad.sub(new_logp, Tensor(np.where(data.masks, data.old_log_probs, ad.NEG_SENTINEL)))
    return ad.sum_cols(ad.mul(p_new, diff))


def actor_loss(batches, actor: ActorNet, beta: float, direction: str = "old_new") -> Tensor:
    """Negated mean of ratio * advantage - beta * KL over all samples."""
    data = _as_data(batches, actor.config.features)
    if data.advantages is None:
        raise DataError("advantages must be computed before the actor loss")
    logp = actor_log_probs(actor, data.features, data.masks)
    taken = ad.sum_cols(ad.mul(logp, data.onehot))
    ratio = ad.exp(ad.sub(taken, Tensor(data.old_taken)))
    surrogate = ad.mul(ratio, Tensor(data.advantages))
    objective = ad.sub(surrogate, ad.scale(kl_terms(logp, data, direction), beta))
    return ad.scale(ad.mean(objective), -1.0)


def mean_kl(batches, actor: ActorNet, direction: str = "old_new") -> float:
    data = _as_data(batches, actor.config.features)
    with ad.no_grad():
        logp = actor_log_probs(actor, data.features, data.masks)
        return float(kl_terms(logp, data, direction).value.mean())


def critic_loss(batches, critic: CriticNet) -> Tensor:
    data = _as_data(batches, critic.config.features)
    if data.rewards_to_go is None:
        raise DataError("rewards-to-go must be computed before the critic loss")
    return ad.mse(critic_values(critic, data.features), Tensor(data.rewards_to_go))


def update_beta(beta: float, observed_kl: float, delta: float) -> float:
    if observed_kl > 1.5 * delta:
        return 2.0 * beta
    if observed_kl < delta / 1.5:
        return beta / 2.0
    return beta


def greedy_solve(instance: Instance, actor: ActorNet) -> tuple[list[env.ScheduleRecord], int]:
    """Deterministic roll-out taking the most probable allowed job (lowest index on ties)."""
    state = env.reset(instance)
    while not state.done:
        m = env.mask(state)
        lp = _policy(actor, [env.encode(state, actor.config.time_scale)], m[None, :])[0]
        lp = np.where(m, lp, -np.inf)
        state = env.step(state, int(np.argmax(lp))).next_state
    return env.extract_schedule(state), state.current_makespan


@dataclass
class LogRow:
    episode: int
    instance_id: str
    mean_return: float
    best_return: int
    phi: float
    critic_loss: float
    kl: float
    beta: float
    epsilon: float
    guard: bool = False

    def csv_fields(self) -> list[str]:
        return [str(self.episode), self.instance_id, repr(float(self.mean_return)), str(self.best_return),
                repr(float(self.phi)), repr(float(self.critic_loss)), repr(float(self.kl)),
                repr(float(self.beta)), repr(float(self.epsilon))]


@dataclass
class Trainer:
    """Training state; everything needed to resume lives here and in the checkpoint."""

    config: TrainConfig
    actor: ActorNet
    critic: CriticNet
    actor_opt: AdamState
    critic_opt: AdamState
    rng: np.random.Generator
    beta: float
    episode: int = 0
    best_returns: dict[str, int] = field(default_factory=dict)
    rows: list[LogRow] = field(default_factory=list)

    @classmethod
    def create(cls, dataset: Sequence[tuple[str, Instance]], config: TrainConfig) -> "Trainer":
        model_cfg = config.model or default_model_config([inst for _, inst in dataset])
        config = dataclasses.replace(config, model=model_cfg)
        actor, critic = init_params(model_cfg, config.seed)
        return cls(
            config, actor, critic,
            AdamState(list(actor.parameters().values()), config.actor_lr),
            AdamState(list(critic.parameters().values()), config.critic_lr),
            np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(config.seed), 1]))),
            config.beta0,
        )

    def run_episode(self, dataset: Sequence[tuple[str, Instance]]) -> LogRow:
        cfg = self.config
        k = self.episode
        eps = cfg.epsilon(k)
        name, inst = dataset[int(self.rng.integers(len(dataset)))]
        batches = collect_rollouts(inst, self.actor, eps, cfg.rollouts, self.rng, name)
        for b in batches:
            rewards_to_go(b)
        advantages(batches, self.critic)
        data = prepare(batches, self.actor.config.features)

        actor_params = list(self.actor.parameters().values())
        saved = [p.value.copy() for p in actor_params]
        opt_saved = self.actor_opt.snapshot()
        for _ in range(cfg.actor_steps):
            loss = actor_loss(data, self.actor, self.beta, cfg.kl_direction)
            self._check_finite("actor loss", loss.item())
            ad.backward(loss)
            ad.adam_step(actor_params, self.actor_opt)
        kl = mean_kl(data, self.actor, cfg.kl_direction)
        self._check_finite("KL", kl)
        guard = kl > cfg.guard_factor * cfg.delta
        if guard:
            for p, v in zip(actor_params, saved):
                p.value = v
            self.actor_opt.restore(opt_saved)
            self.beta *= 2.0
            log.warning("episode %d: KL %.4g above %.4g; actor update skipped, beta -> %g",
                        k, kl, cfg.guard_factor * cfg.delta, self.beta)
        else:
            self.beta = update_beta(self.beta, kl, cfg.delta)

        critic_params = list(self.critic.parameters().values())
        losses = []
        for _ in range(cfg.critic_steps):
            loss = critic_loss(data, self.critic)
            losses.append(loss.item())
            self._check_finite("critic loss", losses[-1])
            ad.backward(loss)
            ad.adam_step(critic_params, self.critic_opt)

        returns = [b.total_return for b in batches]
        best = max(returns)
        prev = self.best_returns.get(name)
        self.best_returns[name] = best if prev is None else max(prev, best)
        row = LogRow(k, name, float(np.mean(returns)), best, abs(best) / abs(self.best_returns[name]),
                     float(np.mean(losses)), kl, self.beta, eps, guard)
        self.rows.append(row)
        self.episode += 1
        return row

    def _check_finite(self, what: str, value: float) -> None:
        if not math.isfinite(value):
            raise NumericError(f"non-finite {what} at episode {self.episode}")

    def params_finite(self) -> bool:
        return all(np.isfinite(p.value).all() for net in (self.actor, self.critic) for p in net.parameters().values())

    def checkpoint_bytes(self) -> bytes:
        tensors = state_dict(self.actor, self.critic)
        tensors.update(self.actor_opt.state_arrays("opt.actor"))
        tensors.update(self.critic_opt.state_arrays("opt.critic"))
        meta = {
            "toolkit_version": __version__,
            "format": ad.FORMAT_VERSION,
            "model": self.config.model.to_dict(),
            "train": self.config.to_dict(),
            "episode": self.episode,
            "beta": self.beta,
            "rng": _rng_state(self.rng),
            "best_returns": self.best_returns,
            "opt_steps": [self.actor_opt.step_count, self.critic_opt.step_count],
        }
        return ad.dump_container(tensors, meta)


def _rng_state(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"], "state": {k: str(v) for k, v in st["state"].items()},
            "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def _set_rng_state(rng: np.random.Generator, st: dict) -> None:
    rng.bit_generator.state = {"bit_generator": st["bit_generator"],
                               "state": {k: int(v) for k, v in st["state"].items()},
                               "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def save_checkpoint(trainer: Trainer, path) -> None:
    data = trainer.checkpoint_bytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_policy(path) -> tuple[ActorNet, CriticNet, dict]:
    """Load actor and critic parameters plus checkpoint metadata."""
    try:
        with open(path, "rb") as fh:
            tensors, meta = ad.load_container(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if "model" not in meta:
        raise DataError(f"{path}: checkpoint has no model configuration")
    cfg = ModelConfig.from_dict(meta["model"])
    actor, critic = init_params(cfg, 0)
    load_state_dict(actor, critic, tensors)
    return actor, critic, meta


def resume_trainer(path, config: TrainConfig) -> Trainer:
    with open(path, "rb") as fh:
        tensors, meta = ad.load_container(fh.read())
    model = ModelConfig.from_dict(meta["model"])
    config = dataclasses.replace(config, model=model)
    actor, critic = init_params(model, config.seed)
    load_state_dict(actor, critic, tensors)
    trainer = Trainer(
        config, actor, critic,
        AdamState(list(actor.parameters().values()), config.actor_lr),
        AdamState(list(critic.parameters().values()), config.critic_lr),
        np.random.Generator(np.random.PCG64(0)),
        float(meta["beta"]), int(meta["episode"]), {k: int(v) for k, v in meta["best_returns"].items()},
    )
    trainer.actor_opt.load_arrays("opt.actor", tensors, meta["opt_steps"][0])
    trainer.critic_opt.load_arrays("opt.critic", tensors, meta["opt_steps"][1])
    _set_rng_state(trainer.rng, meta["rng"])
    return trainer


@dataclass
class TrainResult:
    actor: ActorNet
    critic: CriticNet
    log: list[LogRow]
    trainer: Trainer


def _named(dataset) -> list[tuple[str, Instance]]:
    if isinstance(dataset, dict):
        items = sorted(dataset.items())
    else:
        items = [x if isinstance(x, tuple) else (str(i), x) for i, x in enumerate(dataset)]
    if not items:
        raise ConfigError("training dataset is empty")
    return [(str(k), v) for k, v in items]


def log_header() -> str:
    return ",".join(LOG_COLUMNS) + "\n"


def format_rows(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def train(dataset, config: TrainConfig, log_path=None, checkpoint_path=None, resume=None,
          stop_after: int | None = None) -> TrainResult:
    """Run episodes ``trainer.episode .. config.episodes - 1``.

    ``resume`` continues from a checkpoint (episode numbering, optimizer,
    beta and RNG state included). ``stop_after`` ends the run after that many
    new episodes while still writing the exit checkpoint.
    """
    data = _named(dataset)
    trainer = resume_trainer(resume, config) if resume else Trainer.create(data, config)
    cfg = trainer.config
    fh = None
    if log_path is not None:
        fresh = not resume or not os.path.exists(log_path)
        fh = open(log_path, "w" if fresh else "a", encoding="utf-8", newline="\n")
        if fresh:
            fh.write(log_header())
    try:
        done = 0
        while trainer.episode < cfg.episodes and (stop_after is None or done < stop_after):
            try:
                row = trainer.run_episode(data)
                if not trainer.params_finite():
                    raise NumericError(f"non-finite parameters after episode {row.episode}")
            except NumericError:
                if checkpoint_path is not None:
                    save_checkpoint(trainer, f"{checkpoint_path}.diagnostic")
                raise
            done += 1
            if fh:
                fh.write(format_rows([row]))
                fh.flush()
            if checkpoint_path is not None and cfg.checkpoint_every and trainer.episode % cfg.checkpoint_every == 0:
                save_checkpoint(trainer, checkpoint_path)
    finally:
        if fh:
            fh.close()
    if checkpoint_path is not None:
        save_checkpoint(trainer, checkpoint_path)
    return TrainResult(trainer.actor, trainer.critic, trainer.rows, trainer)


def random_rollout_makespans(instance: Instance, count: int, rng: np.random.Generator) -> np.ndarray:
    """Makespans of ``count`` uniformly random roll-outs (compiled kernel)."""
    from .kernels import random_makespans

    machines, times, lengths = instance.to_arrays()
    u = rng.random((count, instance.num_tasks))
    return random_makespans(machines, times, lengths, instance.num_machines, u)
