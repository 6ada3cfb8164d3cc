import numpy as np
import pytest

from srm_lab import EMPTY, eps_consistent
from srm_lab.envs import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    EpisodeConfig,
    HarvestConfig,
    MiningConfig,
    MiningEnv,
    cross_product_optimum,
    env_from_config,
    episode_bound,
    harvest_ground_truth,
    mining_ground_truth,
    replay,
    rollout,
    run_episode,
)

# start cell, then E, an empty cell, P, two empty cells and the market
PLATINUM_ROUTE = [RIGHT, RIGHT, DOWN, DOWN, LEFT, LEFT]


def L(*names):
    return frozenset(names)


def test_free_move_and_wall():
    env = MiningEnv()
    rng = np.random.default_rng(0)
    s = env.cell(4, 4)
    assert env.step(s, RIGHT, rng) == (env.cell(4, 5), EMPTY)
    corner = env.cell(0, 0)
    assert env.step(corner, UP, rng) == (corner, EMPTY)
    assert env.step(corner, LEFT, rng) == (corner, EMPTY)


def test_entering_cells_emits_their_label():
    env = MiningEnv()
    rng = np.random.default_rng(0)
    assert env.step(env.cell(1, 4), DOWN, rng) == (env.cell(2, 4), L("P"))
    assert env.step(env.initial, RIGHT, rng)[1] == L("E")


def test_invalid_action():
    env = MiningEnv()
    with pytest.raises(ValueError):
        env.step(env.initial, 4, np.random.default_rng(0))


def test_platinum_route_labels_and_reward():
    env, truth = MiningEnv(), mining_ground_truth(deterministic=True)
    t = run_episode(env, truth, PLATINUM_ROUTE, EpisodeConfig(max_steps=50))
    assert t.labels == (L("E"), EMPTY, L("P"), EMPTY, EMPTY, L("M"))
    assert t.rewards == (0, 0, 0, 0, 0, 1.1)


def test_zero_steps_gives_empty_trace():
    env, truth = MiningEnv(), mining_ground_truth()
    assert len(run_episode(env, truth, PLATINUM_ROUTE, EpisodeConfig(max_steps=0))) == 0


def test_trap_ends_episode_with_zero():
    env, truth = MiningEnv(), mining_ground_truth()
    trace, _ = rollout(env, truth, [UP, DOWN, DOWN], 10, np.random.default_rng(0))
    assert trace.labels == (L("T"),)
    assert trace.rewards == (0.0,)


def test_market_ends_episode():
    env, truth = MiningEnv(), mining_ground_truth()
    trace, _ = rollout(env, truth, PLATINUM_ROUTE + [UP] * 5, 50, np.random.default_rng(0))
    assert len(trace) == len(PLATINUM_ROUTE)


def test_slip_model_moves_perpendicular():
    env = MiningEnv(MiningConfig(slip_prob=0.5))
    s = env.cell(3, 4)
    rng = np.random.default_rng(1)
    seen = {env.step(s, RIGHT, rng)[0] for _ in range(300)}
    assert seen == {env.cell(3, 5), env.cell(2, 4), env.cell(4, 4)}


def test_rows_sum_to_one():
    for env in (MiningEnv(MiningConfig(slip_prob=0.2)), env_from_config({"kind": "harvest"})[0]):
        for row in env.outcomes:
            for outs in row:
                assert abs(sum(p for p, _, _ in outs) - 1) < 1e-9


def test_bad_configs():
    with pytest.raises(ValueError):
        MiningConfig(slip_prob=1.0)
    with pytest.raises(ValueError):
        MiningConfig(grid=("..", "..."))
    with pytest.raises(ValueError):
        HarvestConfig(quality_dynamics={q: {"G": 0.5} for q in "GMB"})
    with pytest.raises(ValueError):
        env_from_config({"kind": "maze"})
    with pytest.raises(ValueError):
        EpisodeConfig(max_steps=-1)


def test_replay_deterministic_always_matches():
    env, truth = MiningEnv(), mining_ground_truth()
    rng = np.random.default_rng(0)
    original, actions = rollout(env, truth, PLATINUM_ROUTE, 50, rng)
    for _ in range(20):
        t, ok = replay(env, truth, actions, original.labels, rng)
        assert ok and t.labels == original.labels


def test_replay_empty_actions():
    env, truth = MiningEnv(), mining_ground_truth()
    t, ok = replay(env, truth, [], (), np.random.default_rng(0))
    assert ok and len(t) == 0


def test_replay_slip_match_rate_above_bound():
    env, truth = MiningEnv(MiningConfig(slip_prob=0.1)), mining_ground_truth()
    det_env = MiningEnv()
    original, _ = rollout(det_env, truth, PLATINUM_ROUTE, 50, np.random.default_rng(0))
    rng = np.random.default_rng(5)
    hits = sum(replay(env, truth, PLATINUM_ROUTE, original.labels, rng)[1] for _ in range(4000))
    rate = hits / 4000
    bound = 0.9 ** len(PLATINUM_ROUTE)
    # three standard errors of slack for the Monte Carlo estimate
    assert rate >= bound - 3 * np.sqrt(bound * (1 - bound) / 4000)


@pytest.mark.parametrize("kind", ["mining", "harvest"])
def test_traces_consistent_with_truth(kind):
    env, truth = env_from_config({"kind": kind, "slip_prob": 0.1} if kind == "mining" else {"kind": kind})
    eps = max(d.half_width for d in truth.outputs())
    rng = np.random.default_rng(0)
    for _ in range(50):
        policy = lambda s, r: int(r.integers(env.n_actions))
        trace, _ = rollout(env, truth, policy, 100, rng)
        assert eps_consistent(trace, truth, eps)
        v = truth.initial
        for i, lab in enumerate(trace.labels):
            v = truth.delta(v, lab)
            if v in truth.terminal:
                assert i == len(trace) - 1


def test_seeded_rollouts_repeat():
    env, truth = env_from_config({"kind": "harvest"})
    policy = lambda s, r: int(r.integers(env.n_actions))
    a = rollout(env, truth, policy, 60, np.random.default_rng(9))
    b = rollout(env, truth, policy, 60, np.random.default_rng(9))
    assert a == b


def test_harvest_cycle_rewards():
    env, truth = env_from_config({"kind": "harvest", "deterministic": True})
    P, W, H, S = range(4)
    trace, _ = rollout(env, truth, [P, W, H, S, S], 5, np.random.default_rng(0))
    quality = [next(iter(l))[0] for l in trace.labels]
    means = HarvestConfig().harvest_means
    assert trace.rewards[:4] == (0.0, 0.0, means[quality[2]], 0.0)
    assert trace.rewards[4] == HarvestConfig().penalty


def test_harvest_labels_are_transitions():
    env, _ = env_from_config({"kind": "harvest"})
    assert len(env.labels()) == 36
    rng = np.random.default_rng(0)
    s2, lab = env.step(0, 2, rng)
    assert lab == frozenset({f"GH{'GMB'[s2]}"})


def test_mining_optimum_is_platinum():
    env, truth = MiningEnv(), mining_ground_truth()
    value, pi = cross_product_optimum(env, truth, 0.95, 400)
    assert value == pytest.approx(1.1)
    assert pi.shape == (env.n_states, len(truth.states))


def test_optimum_by_enumeration_on_tiny_grid():
    # every 4-step action sequence on a 1x4 strip, against value iteration
    import itertools

    cfg = MiningConfig(grid=("AEPM",))
    env, truth = MiningEnv(cfg), mining_ground_truth(cfg, deterministic=True)
    best = 0.0
    for seq in itertools.product(range(4), repeat=4):
        t, _ = rollout(env, truth, list(seq), 4, np.random.default_rng(0))
        best = max(best, sum(t.rewards))
    assert cross_product_optimum(env, truth, 0.95, 4)[0] == pytest.approx(best)


def test_episode_bound_formula():
    assert episode_bound(1, 1) == 2 ** 2 * 2 - 1
    assert episode_bound(3, 2) == 47


def test_ground_truth_override(tmp_path):
    from srm_lab.formats import save_machine

    m = mining_ground_truth().replace_outputs({("v2", L("M")): 5.0})
    save_machine(m, tmp_path / "t.json")
    _, truth = env_from_config({"kind": "mining", "ground_truth": str(tmp_path / "t.json")})
    assert truth == m


def test_harvest_truth_size():
    assert len(harvest_ground_truth().states) == 4
