"""Scalar losses exercising each differentiable op, for finite-difference checks.

``build(name, seed)`` returns ``(loss_fn, params)``; the loss closes over the
parameter tensors so the checker can perturb them in place.
"""

import numpy as np

from jobshop_rl import autodiff as ad
from jobshop_rl import ppo
from jobshop_rl.instances import from_lists
from jobshop_rl.models import ModelConfig, init_params, lstm_step

SMALL = ModelConfig(hidden1=4, hidden2=5, ffn=(6, 4, 3), time_scale=10.0, value_scale=10.0)
GRAD_INSTANCE = [[(0, 3), (1, 2)], [(1, 4), (0, 1)], [(0, 2), (1, 5)]]


def _weights(rng, *shape):
    return rng.normal(size=shape)


def _away_from_zero(rng, *shape):
    # relu has a kink at 0; keep samples clear of it so central differences are valid
    x = rng.uniform(0.2, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _probe(rng, shape):
    """A fixed random weighting so every output entry contributes distinctly."""
    return ad.Tensor(rng.normal(size=shape))


def _weighted(t, rng):
    return ad.total(ad.mul(t, _probe(rng, t.shape)))


def case_matmul(rng):
    a, b = ad.parameter(_weights(rng, 3, 4)), ad.parameter(_weights(rng, 4, 2))
    c = _probe(rng, (3, 2))
    return lambda: ad.total(ad.mul(ad.matmul(a, b), c)), [a, b]


def case_add(rng):
    a, b = ad.parameter(_weights(rng, 3, 4)), ad.parameter(_weights(rng, 3, 4))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.add(a, b), c)), [a, b]


def case_add_bias(rng):
    a, b = ad.parameter(_weights(rng, 3, 4)), ad.parameter(_weights(rng, 4))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.add(a, b), c)), [a, b]


def case_sub(rng):
    a, b = ad.parameter(_weights(rng, 2, 3)), ad.parameter(_weights(rng, 2, 3))
    c = _probe(rng, (2, 3))
    return lambda: ad.total(ad.mul(ad.sub(a, b), c)), [a, b]


def case_mul(rng):
    a, b = ad.parameter(_weights(rng, 3, 3)), ad.parameter(_weights(rng, 3, 3))
    return lambda: ad.total(ad.mul(a, b)), [a, b]


def case_scale(rng):
    a = ad.parameter(_weights(rng, 2, 5))
    c = _probe(rng, (2, 5))
    return lambda: ad.total(ad.mul(ad.scale(a, -2.5), c)), [a]


def case_sigmoid(rng):
    a = ad.parameter(_weights(rng, 3, 4))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.sigmoid(a), c)), [a]


def case_tanh(rng):
    a = ad.parameter(_weights(rng, 3, 4))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.tanh(a), c)), [a]


def case_relu(rng):
    a = ad.parameter(_away_from_zero(rng, 3, 4))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.relu(a), c)), [a]


def case_exp(rng):
    a = ad.parameter(_weights(rng, 2, 3))
    c = _probe(rng, (2, 3))
    return lambda: ad.total(ad.mul(ad.exp(a), c)), [a]


def case_concat(rng):
    a, b = ad.parameter(_weights(rng, 2, 3)), ad.parameter(_weights(rng, 2, 2))
    c, d = _probe(rng, (2, 5)), _probe(rng, (4, 3))
    e = ad.parameter(_weights(rng, 2, 3))
    return (lambda: ad.add(ad.total(ad.mul(ad.concat([a, b], axis=1), c)),
                           ad.total(ad.mul(ad.concat([a, e], axis=0), d)))), [a, b, e]


def case_slices(rng):
    a = ad.parameter(_weights(rng, 4, 6))
    c, d = _probe(rng, (4, 2)), _probe(rng, (2, 6))
    return (lambda: ad.add(ad.total(ad.mul(ad.cols(a, 1, 3), c)),
                           ad.total(ad.mul(ad.rows(a, 2, 4), d)))), [a]


def case_reshape(rng):
    a = ad.parameter(_weights(rng, 2, 6))
    c = _probe(rng, (3, 4))
    return lambda: ad.total(ad.mul(ad.reshape(a, (3, 4)), c)), [a]


def case_sums(rng):
    a = ad.parameter(_weights(rng, 3, 4))
    c, d = _probe(rng, (1, 4)), _probe(rng, (3, 1))
    return (lambda: ad.add(ad.total(ad.mul(ad.sum_rows(a), c)),
                           ad.total(ad.mul(ad.sum_cols(a), d)))), [a]


def case_mean(rng):
    a = ad.parameter(_weights(rng, 3, 4))
    return lambda: ad.mean(ad.mul(a, a)), [a]


def case_mse(rng):
    W, x, t = ad.parameter(_weights(rng, 3, 2)), ad.Tensor(_weights(rng, 5, 3)), ad.Tensor(_weights(rng, 5, 2))
    return lambda: ad.mse(ad.matmul(x, W), t), [W]


def case_masked_log_softmax(rng):
    y = ad.parameter(_weights(rng, 3, 5))
    mask = rng.random((3, 5)) < 0.6
    mask[:, 0] = True
    c = ad.Tensor(np.where(mask, rng.normal(size=(3, 5)), 0.0))
    return lambda: ad.total(ad.mul(ad.masked_log_softmax(y, mask), c)), [y]


def case_lstm_cell(rng):
    from jobshop_rl.models import make_lstm

    layer = make_lstm(rng, 3, 4)
    x = ad.Tensor(_weights(rng, 2, 3))
    h0, c0 = ad.parameter(_weights(rng, 2, 4) * 0.5), ad.parameter(_weights(rng, 2, 4) * 0.5)
    p, q = _probe(rng, (2, 4)), _probe(rng, (2, 4))

    def loss():
        h, c = lstm_step(layer, x, h0, c0)
        return ad.add(ad.total(ad.mul(h, p)), ad.total(ad.mul(c, q)))

    return loss, [layer.Wx, layer.Wh, layer.b, h0, c0]


def training_batch(seed: int):
    """Roll-outs with advantages from an old actor, plus a perturbed new actor."""
    inst = from_lists(GRAD_INSTANCE)
    actor, critic = init_params(SMALL, seed)
    rng = np.random.default_rng(seed)
    batches = ppo.collect_rollouts(inst, actor, 0.0, 2, rng)
    for b in batches:
        ppo.rewards_to_go(b)
    ppo.advantages(batches, critic)
    for p in actor.parameters().values():
        p.value = p.value + 0.05 * rng.normal(size=p.shape)
    return batches, actor, critic


def _actor_case(beta):
    def make(rng):
        batches, actor, _ = training_batch(int(rng.integers(1 << 30)))
        data = ppo.prepare(batches)
        return lambda: ppo.actor_loss(data, actor, beta), list(actor.parameters().values())
    return make


def case_critic_loss(rng):
    batches, _, critic = training_batch(int(rng.integers(1 << 30)))
    data = ppo.prepare(batches)
    return lambda: ppo.critic_loss(data, critic), list(critic.parameters().values())


CASES = {
    "matmul": case_matmul, "add": case_add, "add_bias": case_add_bias, "sub": case_sub, "mul": case_mul,
    "scale": case_scale, "sigmoid": case_sigmoid, "tanh": case_tanh, "relu": case_relu, "exp": case_exp,
    "concat": case_concat, "cols_rows": case_slices, "reshape": case_reshape, "sum_rows_cols": case_sums,
    "mean": case_mean, "mse": case_mse, "masked_log_softmax": case_masked_log_softmax,
    "lstm_cell": case_lstm_cell, "actor_loss_beta0": _actor_case(0.0), "actor_loss_beta15": _actor_case(15.0),
    "critic_loss": case_critic_loss,
}


def build(name: str, seed: int):
    return CASES[name](np.random.default_rng([seed, 17]))


def max_error(name: str, seed: int) -> float:
    loss_fn, params = build(name, seed)
    return ad.finite_difference_check(loss_fn, params, h=1e-4)
