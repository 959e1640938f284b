from __future__ import annotations

import numpy as np

from swarmnav.observe import (
    ActionHistory,
    ObsConfig,
    ObservationAssembler,
    build_mdp_tokens,
    build_observation,
    nearest_neighbors,
    stack_tokens,
)
from swarmnav.scenario import ScenarioSpec, SceneType, generate_scenario
from swarmnav.world import UavState, World, WorldConfig


def _state(x=1.0):
    return UavState(position=(x, 2.0, 3.0), euler=(0.0, 0.0, 0.5), velocity=(0.1, 0.2, 0.3), angular_velocity=(0, 0, 0.0))


def test_observation_at_step_zero_is_state_plus_zeros():
    cfg = ObsConfig()
    hist = ActionHistory(cfg.history_len)
    obs = build_observation(_state(), hist, cfg)
    assert obs.shape == (72,)
    assert np.array_equal(obs[:12], _state().as_vector())
    assert np.all(obs[12:] == 0.0)


def test_observation_window_matches_action_log_slice():
    cfg = ObsConfig()
    hist = ActionHistory(cfg.history_len)
    rng = np.random.default_rng(0)
    log = []
    for _ in range(20):
        a = rng.uniform(-1, 1, 4)
        hist.append(a)
        log.append(a)
    obs = build_observation(_state(), hist, cfg)
    window = obs[12:].reshape(cfg.history_len, 4)
    # Last 15 actions, oldest first.
    assert np.array_equal(window, np.stack(log[-15:]))


def test_observation_window_exactly_full():
    cfg = ObsConfig()
    hist = ActionHistory(cfg.history_len)
    rng = np.random.default_rng(1)
    log = [rng.uniform(-1, 1, 4) for _ in range(15)]
    for a in log:
        hist.append(a)
    window = build_observation(_state(), hist, cfg)[12:].reshape(15, 4)
    assert np.array_equal(window, np.stack(log))
    assert not np.any(np.all(window == 0.0, axis=1))


def test_nearest_neighbors_line_arrangement():
    cfg = ObsConfig(n_neighbors=4, sensing_range=10.0)
    positions = [[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0], [20.0, 0, 0]]
    ns = nearest_neighbors(positions, 0, cfg)
    assert ns.ids == (1, 2, 3)
    assert ns.presence == (True, True, True, False)


def test_nearest_neighbors_single_agent():
    cfg = ObsConfig()
    ns = nearest_neighbors([[0.0, 0, 0]], 0, cfg)
    assert ns.ids == ()
    assert ns.presence == (False, False, False, False)


def test_nearest_neighbors_tie_break_by_id():
    cfg = ObsConfig(n_neighbors=2)
    # Agents 3 and 7 equidistant from agent 0.
    positions = np.zeros((8, 3))
    positions[3] = [2.0, 0.0, 0.0]
    positions[7] = [0.0, 2.0, 0.0]
    for j in (1, 2, 4, 5, 6):
        positions[j] = [50.0, 50.0, 0.0]
    ns = nearest_neighbors(positions, 0, cfg)
    assert ns.ids == (3, 7)


def test_nearest_neighbors_excludes_dead_agents():
    cfg = ObsConfig(n_neighbors=3)
    positions = [[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]
    ns = nearest_neighbors(positions, 0, cfg, alive=[True, False, True])
    assert ns.ids == (2,)


def test_tokens_lone_agent_padding():
    cfg = ObsConfig(n_neighbors=4)
    obs = [np.arange(72, dtype=float)]
    tokens = build_mdp_tokens(0, obs, [[0.0, 0, 0]], [True], [np.zeros(4)], [0.0], cfg)
    assert len(tokens) == 5
    self_tok = tokens[0]
    assert self_tok.obs_aug[-1] == 1.0
    assert self_tok.act_aug[-1] == 1.0
    for pad in tokens[1:]:
        assert np.all(pad.obs_aug == 0.0)
        assert np.all(pad.act_aug == 0.0)
        assert pad.rew == 0.0


def test_tokens_presence_flags_with_two_neighbors():
    cfg = ObsConfig(n_neighbors=4, sensing_range=10.0)
    positions = [[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]
    obs = [np.full(72, float(i)) for i in range(3)]
    tokens = build_mdp_tokens(0, obs, positions, [True] * 3, [np.zeros(4)] * 3, [0.0] * 3, cfg)
    flags = [t.obs_aug[-1] for t in tokens]
    assert flags == [1.0, 1.0, 1.0, 0.0, 0.0]
    # Neighbor tokens carry the neighbors' own observations.
    assert np.all(tokens[1].obs_aug[:-1] == 1.0)
    assert np.all(tokens[2].obs_aug[:-1] == 2.0)


def test_token_relabeling_invariance():
    # Permuting agent indices with consistent relabeling yields identical
    # token vectors for each logical agent.
    cfg = ObsConfig(n_neighbors=3, sensing_range=50.0)
    rng = np.random.default_rng(2)
    positions = rng.uniform(0, 10, size=(5, 3))
    obs = [rng.uniform(-1, 1, 72) for _ in range(5)]
    acts = [rng.uniform(-1, 1, 4) for _ in range(5)]
    rews = [float(v) for v in rng.uniform(-1, 1, 5)]

    perm = [3, 0, 4, 1, 2]  # new index of each old agent: old i -> position perm.index(i)
    inv = np.argsort(perm)
    p_positions = positions[perm]
    p_obs = [obs[i] for i in perm]
    p_acts = [acts[i] for i in perm]
    p_rews = [rews[i] for i in perm]

    for old_i in range(5):
        new_i = int(inv[old_i])
        base = stack_tokens(build_mdp_tokens(old_i, obs, positions, [True] * 5, acts, rews, cfg))
        relab = stack_tokens(build_mdp_tokens(new_i, p_obs, p_positions, [True] * 5, p_acts, p_rews, cfg))
        for key in ("obs", "act", "rew"):
            assert np.array_equal(base[key], relab[key])


def test_assembler_window_correctness_fuzz_rollout():
    scenario = generate_scenario(
        ScenarioSpec(scene_type=SceneType.PILLAR, density=0.05, seed=2, target_count=4)
    )
    cfg = ObsConfig(history_len=6, n_neighbors=2)
    world = World(scenario, world_cfg=WorldConfig(max_steps=500))
    ws = world.reset(4)
    asm = ObservationAssembler(4, cfg, world)
    rng = np.random.default_rng(3)
    logs = [[] for _ in range(4)]
    for _ in range(60):
        if ws.all_done:
            break
        obs = asm.observe_all(ws)
        for i in range(4):
            window = obs[i][12:].reshape(cfg.history_len, 4)
            expected = np.zeros((cfg.history_len, 4))
            tail = logs[i][-cfg.history_len :]
            if tail:
                expected[cfg.history_len - len(tail) :] = np.stack(tail)
            assert np.array_equal(window, expected)
        actions = rng.uniform(-1, 1, size=(4, 4))
        alive = [not d for d in ws.done_flags]
        ws, rewards, _ = world.step(ws, list(actions))
        asm.record_step(list(actions), [r.r_total for r in rewards])
        for i in range(4):
            if alive[i]:
                logs[i].append(actions[i])


def test_ray_sensor_extends_observation():
    cfg = ObsConfig(ray_sensor=True)
    assert cfg.obs_dim == 72 + 8
    scenario = generate_scenario(
        ScenarioSpec(scene_type=SceneType.PILLAR, density=0.2, seed=3, target_count=2)
    )
    world = World(scenario)
    ws = world.reset(2)
    asm = ObservationAssembler(2, cfg, world)
    obs = asm.observe_all(ws)
    rays = obs[0][-8:]
    assert np.all(rays > 0.0) and np.all(rays <= cfg.sensing_range)
