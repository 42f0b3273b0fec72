"""Acceptance criteria 1-12.

Each test records a PASS/FAIL line that the terminal summary prints (see
conftest.py). Running this file directly prints the same lines.
"""

import contextlib
import time

import numpy as np
import pytest

import gradcases
from jobshop_rl import cli, env, exact, ppo
from jobshop_rl import evaluation as ev
from jobshop_rl.instances import Gaussian, GeneratorSpec, generate
from jobshop_rl.models import ModelConfig, actor_forward, critic_forward, init_params

RESULTS: dict[int, tuple[bool, str]] = {}

# desk-scale training setup shared by criteria 5, 7, 8 and 11
DESK_MODEL = ModelConfig(hidden1=16, hidden2=32, ffn=(128, 64, 32), time_scale=300.0, value_scale=300.0)
DESK_SEEDS = range(10)
DESK_INSTANCE = GeneratorSpec(4, 3, Gaussian(100, 10), 7)


@contextlib.contextmanager
def criterion(n, title):
    detail = {"text": ""}
    try:
        yield detail
    except BaseException:
        RESULTS[n] = (False, f"{title} {detail['text']}".strip())
        raise
    RESULTS[n] = (True, f"{title} {detail['text']}".strip())


def report_lines():
    return [f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {text}" for n, (ok, text) in sorted(RESULTS.items())]


@pytest.fixture(scope="module")
def random_episodes():
    rng = np.random.default_rng(2024)
    out = []
    start = time.perf_counter()
    for n, m in ((2, 2), (3, 3), (5, 4), (8, 6)):
        for k in range(250):
            inst = generate(GeneratorSpec(n, m, Gaussian(100, 10), 1000 * n + k))
            state, rewards = env.random_episode(inst, rng)
            out.append((inst, state, rewards))
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def oracle_instances():
    return ([generate(GeneratorSpec(3, 3, Gaussian(100, 10), 500 + s)) for s in range(20)]
            + [generate(GeneratorSpec(2, 2, Gaussian(100, 10), 600 + s)) for s in range(10)])


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    inst = generate(DESK_INSTANCE)
    median = float(np.median(ppo.random_rollout_makespans(inst, 1000, np.random.default_rng(0))))
    ckpt_dir = tmp_path_factory.mktemp("desk")
    runs = []
    start = time.perf_counter()
    for seed in DESK_SEEDS:
        cfg = ppo.TrainConfig(episodes=300, rollouts=10, seed=seed, actor_lr=1e-3, critic_lr=1e-2,
                              model=DESK_MODEL)
        res = ppo.train([inst], cfg, checkpoint_path=ckpt_dir / f"seed{seed}.ckpt")
        runs.append(res)
    return inst, median, runs, ckpt_dir, time.perf_counter() - start


def test_c01_feasibility(random_episodes):
    with criterion(1, "feasibility of 1000 random episodes") as d:
        episodes, elapsed = random_episodes
        bad = sum(bool(env.check_schedule(inst, s.scheduled)) for inst, s, _ in episodes)
        d["text"] = f"violations={bad} time={elapsed:.2f}s"
        assert len(episodes) == 1000 and bad == 0 and elapsed < 10


def test_c02_makespan_identity(random_episodes):
    with criterion(2, "-sum(rewards) == makespan") as d:
        episodes, _ = random_episodes
        bad = sum(-sum(r) != env.makespan(s.scheduled) or s.current_makespan != env.makespan(s.scheduled)
                  for _, s, r in episodes)
        d["text"] = f"mismatches={bad}"
        assert bad == 0


def test_c03_gradient_suite():
    with criterion(3, "finite-difference gradient suite") as d:
        start = time.perf_counter()
        worst = max(gradcases.max_error(name, seed) for name in gradcases.CASES for seed in range(10))
        elapsed = time.perf_counter() - start
        d["text"] = f"cases={len(gradcases.CASES)} seeds=10 max_rel_err={worst:.2e} time={elapsed:.1f}s"
        assert worst <= 1e-4 and elapsed < 60


def test_c04_oracle_equivalence(oracle_instances):
    with criterion(4, "branch_and_bound == brute_force") as d:
        start = time.perf_counter()
        bad = 0
        for inst in oracle_instances:
            res = exact.branch_and_bound(inst, 30)
            bad += not res.optimal or res.makespan != exact.brute_force(inst)
        elapsed = time.perf_counter() - start
        d["text"] = f"instances={len(oracle_instances)} mismatches={bad} time={elapsed:.2f}s"
        assert bad == 0 and elapsed < 30


def test_c05_optimality_bound(oracle_instances, desk_runs):
    with criterion(5, "greedy makespan >= optimum") as d:
        actors = [init_params(DESK_MODEL, s)[0] for s in range(3)] + [r.actor for r in desk_runs[2]]
        optima = [exact.brute_force(inst) for inst in oracle_instances]
        bad = sum(ppo.greedy_solve(inst, a)[1] < opt
                  for a in actors for inst, opt in zip(oracle_instances, optima))
        d["text"] = f"actors={len(actors)} checks={len(actors) * len(optima)} violations={bad}"
        assert bad == 0


def test_c06_beta_adaptation():
    with criterion(6, "adaptive beta branches") as d:
        cases = [(0.10, 30.0), (0.01, 7.5), (1.5 * 0.05, 15.0), (0.05 / 1.5, 15.0), (0.05, 15.0)]
        got = [ppo.update_beta(15.0, kl, 0.05) for kl, _ in cases]
        d["text"] = " ".join(f"kl={kl:.4g}->{g:g}" for (kl, _), g in zip(cases, got))
        assert got == [want for _, want in cases]


def test_c07_learning_signal(desk_runs):
    with criterion(7, "learning signal at desk scale") as d:
        inst, median, runs, _, elapsed = desk_runs
        greedy = [ppo.greedy_solve(inst, r.actor)[1] for r in runs]
        beat = sum(g <= median for g in greedy)
        falling = 0
        for r in runs:
            ma = ev.moving_average([row.critic_loss for row in r.log], 30)
            third = len(ma) // 3
            falling += ma[-third:].mean() < ma[:third].mean()
        d["text"] = (f"median={median:g} optimum={exact.branch_and_bound(inst, 30).makespan} greedy={greedy} "
                     f"beat_median={beat}/10 critic_falls={falling}/10 time={elapsed:.0f}s")
        assert beat >= 8 and falling >= 8 and elapsed < 15 * 60


def test_c08_phi_trend(desk_runs):
    with criterion(8, "phi moving average falls") as d:
        _, _, runs, _, _ = desk_runs
        ok, pairs = 0, []
        for r in runs:
            ma = ev.moving_average(ev.phi([(row.instance_id, row.best_return) for row in r.log]), 50)
            tenth = len(ma) // 10
            first, last = ma[:tenth].mean(), ma[-tenth:].mean()
            ok += last <= first
            pairs.append(f"{first:.3f}->{last:.3f}")
        d["text"] = f"falls={ok}/10 " + " ".join(pairs)
        assert ok >= 8


def test_c09_published_metrics():
    with criterion(9, "tau and rho on published means") as d:
        t = ev.tau(ev.RunRecord("30x25", "rl", 1.0, 2.47), ev.RunRecord("30x25", "cp", 1.0, 4.68))
        r = ev.rho(ev.RunRecord("30x25", "rl", 4785.2, 1.0), ev.RunRecord("30x25", "cp", 29505.2, 1.0))
        d["text"] = f"tau={t:.4f} rho={r:.4f}"
        assert abs(t + 0.472) <= 0.005 and abs(r + 0.838) <= 0.005


def test_c10_profile_properties():
    with criterion(10, "performance-profile properties") as d:
        recs = [ev.RunRecord(p, "A", 1.0, t) for p, t in zip("xyz", (1.0, 2.0, 3.0))] + \
               [ev.RunRecord(p, "B", 1.0, t) for p, t in zip("xyz", (2.0, 2.0, 3.0))]
        c = ev.performance_profile(recs, "time")
        assert c["A"].at(1.0) == 1.0 and c["B"].at(1.0) == 2 / 3
        rng = np.random.default_rng(3)
        checked = 0
        for _ in range(200):
            recs = [ev.RunRecord(f"p{p}", m, 1.0, float(rng.uniform(0.1, 10)))
                    for p in range(6) for m in "ABC" if rng.random() < 0.7]
            if not recs:
                continue
            problems = {r.instance_id for r in recs}
            for m, curve in ev.performance_profile(recs, "time").items():
                attempted = sum(r.method == m for r in recs) / len(problems)
                assert (np.diff(curve.gamma) >= 0).all()
                assert curve.gamma[-1] == pytest.approx(attempted)
                checked += 1
        d["text"] = f"worked example exact; random curves checked={checked}"


def test_c11_variable_sizes(desk_runs):
    with criterion(11, "one checkpoint on sizes 2x2 through 10x9") as d:
        _, _, _, ckpt_dir, _ = desk_runs
        actor, critic, _ = ppo.load_policy(ckpt_dir / "seed0.ckpt")
        sizes = [(n, m) for n in range(2, 11) for m in range(2, 10) if m <= n]
        for n, m in sizes:
            state = env.reset(generate(GeneratorSpec(n, m, Gaussian(100, 10), n * 10 + m)))
            feats = env.encode(state, actor.config.time_scale)
            p = np.exp(actor_forward(actor, feats, env.mask(state)).value)
            assert p.shape == (n,) and abs(p.sum() - 1) < 1e-9
            assert np.isfinite(critic_forward(critic, feats).item())
        d["text"] = f"sizes={len(sizes)}"


def test_c12_reproducibility(tmp_path):
    with criterion(12, "identical train runs are byte-identical") as d:
        data = tmp_path / "data"
        assert cli.main(["gen", "--jobs", "3", "--machines", "3", "--count", "2", "--seed", "5",
                         "--out", str(data)]) == 0
        args = ["train", "--data", str(data), "--episodes", "6", "--rollouts", "4", "--seed", "9",
                "--hidden1", "8", "--hidden2", "12", "--ffn", "16,8,4"]
        for run in ("a", "b"):
            assert cli.main(args + ["--out", str(tmp_path / run)]) == 0
        same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                for f in ("train_log.csv", "checkpoint.ckpt")]
        d["text"] = f"log_identical={same[0]} checkpoint_identical={same[1]}"
        assert all(same)


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
