"""Double-LSTM actor and critic.

Both heads share one pattern: a first LSTM (weights shared across jobs) reads
each job's remaining task rows and keeps its last hidden vector as the job
embedding (zero for a finished job); a second LSTM then reads the job
embeddings in job-index order. The actor projects every second-LSTM output to
a score and applies the masked softmax. The critic sums the second-LSTM
outputs and passes the sum through a ReLU feed-forward net with a linear
scalar output.

Batches are padded: shorter task sequences and missing job positions carry
their previous hidden state forward, so a padded batch reproduces per-state
results exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import StateFeatures
from .errors import ConfigError, DataError, DimensionError


@dataclass
class ModelConfig:
    hidden1: int = 110
    hidden2: int = 220
    ffn: tuple[int, ...] = (1100, 550, 110)
    features: int = 3
    time_scale: float = 300.0
    value_scale: float = 300.0

    def __post_init__(self):
        self.ffn = tuple(int(w) for w in self.ffn)
        if min(self.hidden1, self.hidden2, self.features, *self.ffn) < 1:
            raise ConfigError(f"all widths must be positive: {self}")
        if any(b >= a for a, b in zip(self.ffn, self.ffn[1:])):
            raise ConfigError(f"FFN hidden widths must strictly decrease, got {self.ffn}")
        if not (self.time_scale > 0 and self.value_scale > 0):
            raise ConfigError("time_scale and value_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ffn"] = list(self.ffn)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "ffn": tuple(d["ffn"])})


@dataclass
class LstmLayer:
    input_size: int
    hidden_size: int
    Wx: Tensor  # (input, 4h), gate blocks i, f, g, o
    Wh: Tensor  # (h, 4h)
    b: Tensor  # (4h,)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.Wx": self.Wx, f"{prefix}.Wh": self.Wh, f"{prefix}.b": self.b}


@dataclass
class Linear:
    W: Tensor
    b: Tensor | None = None

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.W)
        return y if self.b is None else ad.add(y, self.b)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.W": self.W}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


@dataclass
class ActorNet:
    config: ModelConfig
    lstm1: LstmLayer
    lstm2: LstmLayer
    proj: Linear

    def parameters(self) -> dict[str, Tensor]:
        return {**self.lstm1.parameters("lstm1"), **self.lstm2.parameters("lstm2"), **self.proj.parameters("proj")}


@dataclass
class CriticNet:
    config: ModelConfig
    lstm1: LstmLayer
    lstm2: LstmLayer
    ffn: list[Linear] = field(default_factory=list)

    def parameters(self) -> dict[str, Tensor]:
        out = {**self.lstm1.parameters("lstm1"), **self.lstm2.parameters("lstm2")}
        for i, layer in enumerate(self.ffn):
            out.update(layer.parameters(f"ffn{i}"))
        return out


def _uniform(rng, fan_in, shape, name):
    bound = 1.0 / np.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape), name=name)


def make_lstm(rng: np.random.Generator, input_size: int, hidden_size: int) -> LstmLayer:
    fan_in = input_size + hidden_size
    h = hidden_size
    Wx = _uniform(rng, fan_in, (input_size, 4 * h), "Wx")
    Wh = _uniform(rng, fan_in, (h, 4 * h), "Wh")
    b = _uniform(rng, fan_in, (4 * h,), "b")
    b.value[h:2 * h] += 1.0
    return LstmLayer(input_size, hidden_size, Wx, Wh, b)


def init_params(config: ModelConfig, seed: int) -> tuple[ActorNet, CriticNet]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5EED])))
    c = config
    actor = ActorNet(
        c,
        make_lstm(rng, c.features, c.hidden1),
        make_lstm(rng, c.hidden1, c.hidden2),
        Linear(_uniform(rng, c.hidden2, (c.hidden2, 1), "W")),
    )
    widths = [c.hidden2, *c.ffn, 1]
    critic = CriticNet(
        c,
        make_lstm(rng, c.features, c.hidden1),
        make_lstm(rng, c.hidden1, c.hidden2),
        [Linear(_uniform(rng, a, (a, b), "W"), _uniform(rng, a, (b,), "b")) for a, b in zip(widths, widths[1:])],
    )
    return actor, critic


def parameter_count(config: ModelConfig) -> tuple[int, int]:
    """Closed-form (actor, critic) parameter counts."""
    def lstm(i, h):
        return 4 * h * (i + h + 1)

    c = config
    enc = lstm(c.features, c.hidden1) + lstm(c.hidden1, c.hidden2)
    widths = [c.hidden2, *c.ffn, 1]
    ffn = sum(a * b + b for a, b in zip(widths, widths[1:]))
    return enc + c.hidden2, enc + ffn


def lstm_step(layer: LstmLayer, x, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    hs = layer.hidden_size
    z = ad.add(ad.add(ad.matmul(x, layer.Wx), ad.matmul(h, layer.Wh)), layer.b)
    i = ad.sigmoid(ad.cols(z, 0, hs))
    f = ad.sigmoid(ad.cols(z, hs, 2 * hs))
    g = ad.tanh(ad.cols(z, 2 * hs, 3 * hs))
    o = ad.sigmoid(ad.cols(z, 3 * hs, 4 * hs))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _carry(new: Tensor, old: Tensor, valid: np.ndarray) -> Tensor:
    keep = np.broadcast_to(valid[:, None], new.shape).astype(np.float64)
    return ad.add(ad.mul(new, keep), ad.mul(old, 1.0 - keep))


def lstm_batch(layer: LstmLayer, inputs: Sequence, valid: Sequence[np.ndarray] | None = None) -> list[Tensor]:
    """Run ``layer`` over time steps of a batch.

    ``inputs[t]`` is a (B, input_size) array or tensor; ``valid[t]`` a (B,)
    bool array. Rows with ``valid[t]`` false keep their previous state.
    """
    if not inputs:
        return []
    batch = ad.as_tensor(inputs[0]).shape[0]
    h = Tensor(np.zeros((batch, layer.hidden_size)))
    c = Tensor(np.zeros((batch, layer.hidden_size)))
    out = []
    for t, x in enumerate(inputs):
        x = ad.as_tensor(x)
        if x.value.ndim != 2 or x.shape[1] != layer.input_size:
            raise DimensionError(f"LSTM expects inputs of width {layer.input_size}, got shape {x.shape}")
        h_new, c_new = lstm_step(layer, x, h, c)
        if valid is not None and not valid[t].all():
            h_new = _carry(h_new, h, valid[t])
            c_new = _carry(c_new, c, valid[t])
        h, c = h_new, c_new
        out.append(h)
    return out


def lstm_forward(layer: LstmLayer, sequence) -> list[Tensor]:
    """Single sequence: list of feature vectors in, list of (1, hidden) outputs."""
    rows = [np.asarray(x, dtype=np.float64).reshape(1, -1) for x in sequence]
    return lstm_batch(layer, rows)


@dataclass
class FeatureBatch:
    """Padded states. Task rows are job-major: row ``j * batch + b``."""

    tasks: np.ndarray  # (jobs * batch, max_len, features)
    task_valid: np.ndarray  # (jobs * batch, max_len)
    job_valid: np.ndarray  # (batch, jobs)

    @property
    def batch(self) -> int:
        return self.job_valid.shape[0]

    @property
    def jobs(self) -> int:
        return self.job_valid.shape[1]


def pad_features(states: Sequence[StateFeatures], features: int = 3) -> FeatureBatch:
    if not states:
        raise DimensionError("empty feature batch")
    batch = len(states)
    jobs = max(s.num_jobs for s in states)
    max_len = max((len(a) for s in states for a in s.jobs), default=0)
    tasks = np.zeros((jobs * batch, max_len, features))
    task_valid = np.zeros((jobs * batch, max_len), dtype=bool)
    job_valid = np.zeros((batch, jobs), dtype=bool)
    for b, s in enumerate(states):
        for j, arr in enumerate(s.jobs):
            job_valid[b, j] = True
            if len(arr):
                if arr.shape[1] != features:
                    raise DimensionError(f"task rows have width {arr.shape[1]}, expected {features}")
                tasks[j * batch + b, :len(arr)] = arr
                task_valid[j * batch + b, :len(arr)] = True
    return FeatureBatch(tasks, task_valid, job_valid)


def _encode_jobs(lstm1: LstmLayer, lstm2: LstmLayer, fb: FeatureBatch) -> list[Tensor]:
    steps = fb.tasks.shape[1]
    if steps:
        outs = lstm_batch(lstm1, [fb.tasks[:, t, :] for t in range(steps)],
                          [fb.task_valid[:, t] for t in range(steps)])
        emb = outs[-1]
    else:
        emb = Tensor(np.zeros((fb.tasks.shape[0], lstm1.hidden_size)))
    B = fb.batch
    per_job = [ad.rows(emb, j * B, (j + 1) * B) for j in range(fb.jobs)]
    return lstm_batch(lstm2, per_job, [fb.job_valid[:, j] for j in range(fb.jobs)])


def actor_log_probs(net: ActorNet, fb: FeatureBatch, masks: np.ndarray) -> Tensor:
    """(B, jobs) masked log-probabilities."""
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != fb.job_valid.shape:
        raise DimensionError(f"mask shape {masks.shape} does not match batch {fb.job_valid.shape}")
    if (masks & ~fb.job_valid).any():
        raise DataError("mask allows a padded job position")
    outs = _encode_jobs(net.lstm1, net.lstm2, fb)
    y = ad.concat([net.proj(h) for h in outs], axis=1)
    return ad.masked_log_softmax(y, masks)


def critic_values(net: CriticNet, fb: FeatureBatch) -> Tensor:
    """(B, 1) value estimates."""
    outs = _encode_jobs(net.lstm1, net.lstm2, fb)
    z = None
    for j, h in enumerate(outs):
        if fb.job_valid[:, j].all():
            term = h
        else:
            term = ad.mul(h, np.broadcast_to(fb.job_valid[:, j:j + 1], h.shape).astype(np.float64))
        z = term if z is None else ad.add(z, term)
    x = z
    for layer in net.ffn[:-1]:
        x = ad.relu(layer(x))
    return ad.scale(net.ffn[-1](x), net.config.value_scale)


def actor_forward(net: ActorNet, features: StateFeatures, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (features.num_jobs,):
        raise DimensionError(f"mask of length {mask.shape} for {features.num_jobs} jobs")
    fb = pad_features([features], net.config.features)
    return ad.reshape(actor_log_probs(net, fb, mask[None, :]), (features.num_jobs,))


def critic_forward(net: CriticNet, features: StateFeatures) -> Tensor:
    if features.num_jobs < 1:
        raise DimensionError("critic needs at least one job")
    fb = pad_features([features], net.config.features)
    return ad.reshape(critic_values(net, fb), ())


def state_dict(actor: ActorNet, critic: CriticNet) -> dict[str, np.ndarray]:
    out = {f"actor.{k}": v.value for k, v in actor.parameters().items()}
    out.update({f"critic.{k}": v.value for k, v in critic.parameters().items()})
    return out


def load_state_dict(actor: ActorNet, critic: CriticNet, arrays: dict[str, np.ndarray]) -> None:
    for prefix, net in (("actor", actor), ("critic", critic)):
        for k, p in net.parameters().items():
            key = f"{prefix}.{k}"
            if key not in arrays:
                raise DataError(f"checkpoint lacks parameter {key}")
            if arrays[key].shape != p.shape:
                raise DataError(f"parameter {key} has shape {arrays[key].shape}, model expects {p.shape}")
            p.value = np.array(arrays[key], dtype=np.float64)
