"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line with its runtime (run with ``pytest -s`` to see them live).

Numeric tolerances are asserted exactly as specified; runtime budgets are
asserted too. Desk-scale configurations are used throughout: the checks
verify exact math, invariants, determinism, and scaled learning evidence
rather than full-scale training results.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np
import torch
import yaml

from swarmnav import cli
from swarmnav.encoder import AblationFlags, EncoderConfig
from swarmnav.harness import (
    aggregate_step_records,
    evaluate,
    read_step_log,
    write_step_log,
)
from swarmnav.model import NavModel
from swarmnav.nn import finite_difference_gradients, grad, max_relative_error
from swarmnav.observe import ObsConfig
from swarmnav.policy import gaussian_entropy, gaussian_log_prob
from swarmnav.ppo import PpoConfig, Trainer, collect_rollouts, compute_gae, ppo_losses
from swarmnav.scenario import (
    ScenarioMap,
    ScenarioSpec,
    SceneType,
    ShapeKind,
    generate_scenario,
    occupancy_fraction,
    validate_scenario_map,
)
from swarmnav.world import RewardConfig, World, WorldConfig, WorldState, UavState

torch.set_num_threads(1)

LAMBDAS = (0.45, 0.30, 0.25)
R_COL = -1.0
R_FREE = 0.04


@contextmanager
def _criterion(num: int, desc: str, budget_s: float):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance {num}] FAIL ({time.perf_counter() - t0:.1f}s) {desc}")
        raise
    dt = time.perf_counter() - t0
    ok = dt < budget_s
    print(f"[acceptance {num}] {'PASS' if ok else 'FAIL (over budget)'} "
          f"({dt:.1f}s of {budget_s:.0f}s budget) {desc}")
    assert ok, f"criterion {num} exceeded its {budget_s}s budget ({dt:.1f}s)"


def _tiny_enc(d=16, horizon=4, n=2, layers=1, heads=2):
    return EncoderConfig(
        embed_dim=d, temporal_dim=d, spatial_layers=layers, spatial_heads=heads,
        temporal_layers=layers, temporal_heads=heads, horizon=horizon, n_neighbors=n,
    )


# ---- 1. reward oracle ------------------------------------------------------------------


class _ClearanceOracle:
    """Vectorized case-analysis nearest-surface distance, written
    independently of the geometry module (clip-projection for boxes,
    region cases for cylinders)."""

    def __init__(self, obstacles):
        boxes = [ob for ob in obstacles if ob.shape is ShapeKind.BOX]
        cyls = [ob for ob in obstacles if ob.shape is ShapeKind.CYLINDER]
        sphs = [ob for ob in obstacles if ob.shape is ShapeKind.SPHERE]
        self.box_lo = np.array([np.array(ob.center) - ob.half_extents for ob in boxes]).reshape(-1, 3)
        self.box_hi = np.array([np.array(ob.center) + ob.half_extents for ob in boxes]).reshape(-1, 3)
        self.cyl_c = np.array([ob.center for ob in cyls]).reshape(-1, 3)
        self.cyl_r = np.array([ob.radius for ob in cyls])
        self.cyl_hh = np.array([ob.height / 2.0 for ob in cyls])
        self.sph_c = np.array([ob.center for ob in sphs]).reshape(-1, 3)
        self.sph_r = np.array([ob.radius for ob in sphs])

    def __call__(self, p) -> float:
        best = np.inf
        if len(self.box_lo):
            proj = np.clip(p, self.box_lo, self.box_hi)
            outside = np.linalg.norm(p - proj, axis=1)
            inside_depth = np.minimum(p - self.box_lo, self.box_hi - p).min(axis=1)
            is_inside = np.all((p >= self.box_lo) & (p <= self.box_hi), axis=1)
            d = np.where(is_inside, -inside_depth, outside)
            best = min(best, d.min())
        if len(self.cyl_c):
            rho = np.hypot(p[0] - self.cyl_c[:, 0], p[1] - self.cyl_c[:, 1])
            dz = np.abs(p[2] - self.cyl_c[:, 2])
            in_r = rho <= self.cyl_r
            in_z = dz <= self.cyl_hh
            d = np.where(
                in_r & in_z,
                -np.minimum(self.cyl_r - rho, self.cyl_hh - dz),
                np.where(
                    in_z,
                    rho - self.cyl_r,
                    np.where(in_r, dz - self.cyl_hh, np.hypot(rho - self.cyl_r, dz - self.cyl_hh)),
                ),
            )
            best = min(best, d.min())
        if len(self.sph_c):
            best = min(best, (np.linalg.norm(p - self.sph_c, axis=1) - self.sph_r).min())
        return float(best)


def test_acceptance_1_reward_oracle():
    with _criterion(1, "reward assembly matches direct formula evaluation on 10k tuples", 5.0):
        scenario = generate_scenario(
            ScenarioSpec(scene_type=SceneType.PILLAR, density=0.10, seed=99, target_count=1)
        )
        rc = RewardConfig()
        wc = WorldConfig()
        world = World(scenario, rc, wc)
        rng = np.random.default_rng(2024)
        arena = np.array([scenario.spec.arena_x, scenario.spec.arena_y, scenario.spec.altitude_max])
        oracle_clearance = _ClearanceOracle(scenario.obstacles)
        obstacles = scenario.obstacles
        checked = collisions = bonus_cases = 0
        while checked < 10_000:
            if checked % 4 == 0 and obstacles:
                # Construct a point just off a pillar wall so the collision
                # branch is hit often.
                ob = obstacles[rng.integers(0, len(obstacles))]
                hx = ob.half_extents[0] if ob.shape is ShapeKind.BOX else ob.radius
                ang = rng.uniform(0.0, 2.0 * np.pi)
                direction = np.array([np.cos(ang), np.sin(ang)])
                if ob.shape is ShapeKind.BOX:
                    boundary = hx / np.abs(direction).max()
                else:
                    boundary = hx
                reach = boundary + rng.uniform(0.02, 0.22)
                x_prev = np.array(ob.center) + [reach * direction[0], reach * direction[1], 0.0]
                x_prev[2] = rng.uniform(0.5, arena[2] - 0.5)
                x_prev = np.clip(x_prev, 0.2, arena - 0.2)
                if not 1e-6 < world.clearance(x_prev) < 0.25:
                    continue
            else:
                x_prev = rng.uniform([0.2, 0.2, 0.2], arena - 0.2)
                if world.clearance(x_prev) <= 1e-6:
                    continue
            if rng.random() < 0.3:
                goal = x_prev + rng.uniform(-1.5, 1.5, 3)  # exercise the near-goal bonus
                goal = np.clip(goal, 0.0, arena)
            else:
                goal = rng.uniform(np.zeros(3), arena)
            action = rng.uniform(-1.0, 1.0, 4)
            ws = WorldState(
                scenario_id=scenario.scenario_id,
                uav_states=(UavState(tuple(x_prev), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),),
                goals=(tuple(goal),),
                step_index=0,
                done_flags=(False,),
                rng_state=0,
            )
            ws2, rewards, _ = world.step(ws, [action])
            bd = rewards[0]
            x_now = np.array(ws2.uav_states[0].position)

            # Independent oracle: intended endpoint from the action definition.
            raw = np.clip(action, -1.0, 1.0)
            direction = raw[:3]
            norm = np.linalg.norm(direction)
            speed = wc.v_max * (raw[3] + 1.0) / 2.0
            vel = direction / norm * speed if norm > 1e-12 else np.zeros(3)
            intended = np.clip(x_prev + vel * wc.dt, 0.0, arena)
            collided = bool(np.linalg.norm(x_now - intended) > 1e-9)
            d_prev = np.linalg.norm(goal - x_prev)
            d_now = np.linalg.norm(goal - x_now)
            r_trans = (d_prev - d_now) + max(0.0, 2.0 - d_now * d_now)
            clearance = oracle_clearance(x_now)
            r_col = R_COL if collided else 0.0
            r_free = R_FREE if clearance > 0.5 else 0.0
            r_total = LAMBDAS[0] * r_trans + LAMBDAS[1] * r_col + LAMBDAS[2] * r_free

            assert abs(bd.r_trans - r_trans) <= 1e-12
            assert abs(bd.r_col_applied - r_col) <= 1e-12
            assert abs(bd.r_free_applied - r_free) <= 1e-12
            assert abs(bd.r_total - r_total) <= 1e-12
            checked += 1
            collisions += collided
            bonus_cases += d_now * d_now < 2.0
        # Both reward branches must actually have been exercised.
        assert collisions > 100
        assert bonus_cases > 100


# ---- 2. full-pipeline gradient check ---------------------------------------------------


def test_acceptance_2_full_pipeline_gradient_check():
    with _criterion(2, "combined-loss gradients match central finite differences (<1e-4)", 120.0):
        model = NavModel(_tiny_enc(d=16, horizon=4, n=2), ObsConfig(history_len=2, n_neighbors=2), init_seed=1)
        maps = [
            generate_scenario(ScenarioSpec(scene_type=s, density=0.05, seed=k, target_count=3))
            for k, s in ((1, SceneType.PILLAR), (2, SceneType.CYLINDER))
        ]
        cfg = PpoConfig(rollout_horizon=4, minibatch_size=64)
        batch, _ = collect_rollouts(
            model, maps, 3, cfg, RewardConfig(), WorldConfig(max_steps=50), seed=0
        )
        adv = batch.advantages.copy()
        adv = (adv - adv.mean()) / max(adv.std(), 1e-12)
        # Short and full-length windows, both scenarios, all three agents.
        idx = np.concatenate([np.arange(6), np.arange(len(batch) - 6, len(batch))])
        assert set(batch.scenario_index[idx]) == {0, 1}
        assert set(batch.agent_index[idx]) == {0, 1, 2}

        w_obs, w_act, w_rew, w_len = batch.gather_windows(idx)
        actions = torch.as_tensor(batch.actions[idx])
        old_logp = torch.as_tensor(batch.log_probs[idx])
        adv_t = torch.as_tensor(adv[idx])
        rets = torch.as_tensor(batch.returns[idx])
        with torch.no_grad():
            _, h0 = model.features_from_windows(w_obs, w_act, w_rew, w_len, return_positions=True)
        frozen = h0[:, 1:, :].clone()

        def lean_loss():
            feats, h_pos = model.features_from_windows(w_obs, w_act, w_rew, w_len, return_positions=True)
            mean, log_std = model.action_distribution(feats)
            new_logp = gaussian_log_prob(actions, mean, log_std)
            ratio = torch.exp(new_logp - old_logp)
            clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
            l_actor = -torch.minimum(ratio * adv_t, clipped * adv_t).mean()
            values = model.value(feats)
            l_critic = ((values - rets) ** 2).mean()
            l_pred = model.prediction_loss_from_windows(
                h_pos, w_act, w_rew, w_len, target_override=frozen
            )
            return (
                cfg.delta_actor * l_actor
                + cfg.delta_critic * l_critic
                + cfg.delta_pred * l_pred
                - cfg.entropy_coef * gaussian_entropy(log_std)
            )

        # The lean closure is the training loss: they agree at the base point.
        _, train_loss = ppo_losses(batch, model, cfg, idx=idx, advantages=adv, pred_target_override=frozen)
        assert abs(float(train_loss.detach()) - float(lean_loss().detach())) < 1e-12

        auto = grad(train_loss, model.store)
        fd = finite_difference_gradients(lean_loss, model.store)
        worst = 0.0
        for name in model.store.names():
            err = max_relative_error(auto[name].numpy(), fd[name])
            worst = max(worst, err)
            assert err < 1e-4, f"{name}: max relative error {err:.2e}"
        print(f"    checked {model.store.num_parameters()} parameters, worst rel err {worst:.2e}")


# ---- 3. structural invariants ----------------------------------------------------------


def test_acceptance_3_structural_invariants():
    with _criterion(3, "token count, mask soundness, causality, ratio-one, GAE oracle", 60.0):
        # Token accounting: 1 + 3(n+1), asserted at construction scale.
        assert EncoderConfig().token_count == 1 + 3 * 5 == 16
        assert _tiny_enc(n=2).token_count == 10

        model = NavModel(_tiny_enc(d=12, horizon=4, n=2), ObsConfig(history_len=3, n_neighbors=2), init_seed=0)
        enc, store = model.encoder, model.store
        rng = np.random.default_rng(0)

        # Masked-slot invariance of the spatial output.
        presence = np.array([[1.0, 1.0, 0.0]])
        obs = rng.standard_normal((1, 3, model.obs_cfg.obs_dim + 1))
        act = rng.standard_normal((1, 3, 5))
        rew = rng.standard_normal((1, 3, 1))
        obs[..., -1] = presence
        act[..., -1] = presence
        obs[0, 2, :] = 0.0
        act[0, 2, :] = 0.0
        rew[0, 2, :] = 0.0
        base = enc.spatial_forward(store, torch.as_tensor(obs), torch.as_tensor(act), torch.as_tensor(rew))
        obs2, act2, rew2 = obs.copy(), act.copy(), rew.copy()
        obs2[0, 2, :-1] = rng.standard_normal(model.obs_cfg.obs_dim) * 1e3
        act2[0, 2, :-1] = rng.standard_normal(4) * 1e3
        rew2[0, 2, 0] = 1e3
        pert = enc.spatial_forward(store, torch.as_tensor(obs2), torch.as_tensor(act2), torch.as_tensor(rew2))
        assert np.array_equal(base.detach().numpy(), pert.detach().numpy())

        # Temporal causality: outputs for any prefix equal the prefix-only pass.
        h = torch.as_tensor(rng.standard_normal((1, 4, 12)))
        full = enc.temporal_forward(store, h, torch.as_tensor(np.array([4])))
        for w in range(1, 5):
            pre = enc.temporal_forward(store, h[:, :w], torch.as_tensor(np.array([w])))
            assert np.array_equal(full[:, :w].detach().numpy(), pre.detach().numpy())

        # Ratio-one property immediately after collection.
        maps = [
            generate_scenario(ScenarioSpec(scene_type=SceneType.PILLAR, density=0.05, seed=41, target_count=3))
        ]
        cfg = PpoConfig(rollout_horizon=8, minibatch_size=64)
        batch, _ = collect_rollouts(model, maps, 3, cfg, RewardConfig(), WorldConfig(max_steps=60), seed=3)
        w_obs, w_act, w_rew, w_len = batch.gather_windows(np.arange(len(batch)))
        feats = model.features_from_windows(w_obs, w_act, w_rew, w_len)
        mean, log_std = model.action_distribution(feats)
        logp = gaussian_log_prob(torch.as_tensor(batch.actions), mean, log_std)
        ratio = np.exp(logp.detach().numpy() - batch.log_probs)
        assert np.abs(ratio - 1.0).max() < 1e-12

        # GAE equals the O(T^2) brute force for every length up to 32.
        for t_len in range(1, 33):
            rewards = rng.standard_normal(t_len)
            values = rng.standard_normal(t_len)
            dones = rng.random(t_len) < 0.2
            boot = float(rng.standard_normal())
            adv, _ = compute_gae(rewards, values, dones, 0.99, 0.95, boot)
            brute = np.zeros(t_len)
            deltas = np.zeros(t_len)
            for t in range(t_len):
                nxt = boot if t == t_len - 1 else values[t + 1]
                nonterm = 0.0 if dones[t] else 1.0
                deltas[t] = rewards[t] + 0.99 * nxt * nonterm - values[t]
            for t in range(t_len):
                acc, scale = 0.0, 1.0
                for k in range(t, t_len):
                    acc += scale * deltas[k]
                    if dones[k]:
                        break
                    scale *= 0.99 * 0.95
                brute[t] = acc
            assert np.abs(adv - brute).max() < 1e-10


# ---- 4. training determinism -----------------------------------------------------------


def _determinism_config(tmp_path):
    maps_dir = tmp_path / "maps"
    assert cli.main([
        "--out-dir", str(maps_dir), "gen-scenarios", "--scene", "pillar", "cylinder",
        "--density", "0.05", "--map-seed", "17", "--target-count", "2",
    ]) == 0
    map_files = sorted(str(p) for p in maps_dir.glob("*.json"))
    doc = {
        "train_maps": map_files,
        "eval_maps": [],
        "num_agents": 2,
        "encoder": {"embed_dim": 12, "temporal_dim": 12, "spatial_layers": 1, "spatial_heads": 2,
                    "temporal_layers": 1, "temporal_heads": 2, "horizon": 4, "n_neighbors": 2},
        "observation": {"history_len": 3, "n_neighbors": 2},
        "ppo": {"updates": 20, "rollout_horizon": 16, "epochs_per_update": 2, "minibatch_size": 64},
        "world": {"max_steps": 12},
    }
    cfg_path = tmp_path / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(doc))
    return cfg_path


def test_acceptance_4_training_determinism(tmp_path):
    with _criterion(4, "two 20-update train runs produce bit-identical checkpoints and metrics", 300.0):
        cfg_path = _determinism_config(tmp_path)
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            rc = cli.main([
                "--config", str(cfg_path), "--seed", "7", "--deterministic",
                "--out-dir", str(out), "train",
            ])
            assert rc == 0
            outputs.append(
                ((out / "checkpoint_final.bin").read_bytes(), (out / "metrics.jsonl").read_bytes())
            )
        assert outputs[0][0] == outputs[1][0], "checkpoints differ"
        assert outputs[0][1] == outputs[1][1], "metrics files differ"


# ---- 5. learning smoke test ------------------------------------------------------------


def _smoke_map():
    spec = ScenarioSpec(scene_type=SceneType.PILLAR, density=0.0, seed=0, target_count=1)
    return ScenarioMap(
        spec=spec,
        obstacles=(),
        spawn_points=((10.0, 10.0, 5.0),),
        goal_points=((22.0, 14.0, 8.0),),
        scenario_id="smoke-empty",
    )


def test_acceptance_5_learning_smoke():
    with _criterion(5, "single-agent policy improvement over 500 episodes", 600.0):
        smoke = _smoke_map()
        wcfg = WorldConfig(max_steps=150)

        # Random-policy baseline measured through the same episode accounting:
        # actions drawn uniformly from the action space.
        world = World(smoke, world_cfg=wcfg)
        rng = np.random.default_rng(123)
        baseline = []
        for _ in range(10):
            ws = world.reset(1)
            total = 0.0
            while not ws.all_done:
                ws, rewards, _ = world.step(ws, [rng.uniform(-1.0, 1.0, 4)])
                total += rewards[0].r_trans
            baseline.append(total)
        baseline_mean = float(np.mean(baseline))

        enc = EncoderConfig(embed_dim=32, temporal_dim=32, spatial_layers=1, spatial_heads=2,
                            temporal_layers=1, temporal_heads=2, horizon=4, n_neighbors=0)
        model = NavModel(enc, ObsConfig(history_len=4, n_neighbors=0), init_seed=0)
        ppo = PpoConfig(rollout_horizon=450, epochs_per_update=6, minibatch_size=128,
                        total_episodes=500)
        result = Trainer(model, [smoke], 1, ppo_cfg=ppo, world_cfg=wcfg, seed=0,
                         deterministic=True).train()
        transfers = [r.transfer_reward for r in result.episode_records]
        assert len(transfers) >= 500
        first10 = float(np.mean(transfers[:10]))
        last10 = float(np.mean(transfers[-10:]))
        print(f"    first10={first10:.2f} last10={last10:.2f} random={baseline_mean:.2f}")
        assert last10 >= 1.5 * first10
        assert last10 >= 3.0 * baseline_mean


# ---- 6. multi-scenario zero-shot harness ----------------------------------------------


def test_acceptance_6_zero_shot_harness(tmp_path):
    with _criterion(6, "50-update co-training, unseen-map evaluation, exact log replay", 900.0):
        train_maps = [
            generate_scenario(ScenarioSpec(scene_type=SceneType.PILLAR, density=0.10, seed=61, target_count=3)),
            generate_scenario(ScenarioSpec(scene_type=SceneType.CYLINDER, density=0.10, seed=62, target_count=3)),
        ]
        eval_map = generate_scenario(
            ScenarioSpec(scene_type=SceneType.MIXED, density=0.10, seed=63, target_count=3)
        )
        model = NavModel(_tiny_enc(d=16, horizon=6, n=2), ObsConfig(history_len=3, n_neighbors=2), init_seed=0)
        ppo = PpoConfig(updates=50, rollout_horizon=48, epochs_per_update=3, minibatch_size=128)
        wcfg = WorldConfig(max_steps=200)
        trainer = Trainer(model, train_maps, 3, ppo_cfg=ppo, world_cfg=wcfg, seed=9,
                          deterministic=True, out_dir=tmp_path)
        result = trainer.train()
        assert result.updates == 50

        from swarmnav.checkpoint import load_checkpoint

        data = load_checkpoint(result.checkpoint_path)
        report = evaluate(data, [eval_map], episodes=3, require_zero_shot=True)
        assert report.zero_shot is True
        agg = report.per_map[eval_map.scenario_id]
        # All three metrics populated and internally consistent.
        assert np.isfinite([agg.transfer_mean, agg.collision_mean, agg.free_mean]).all()
        assert agg.free_mean > 0.0  # free-space grants occur on a 10% map
        assert agg.episodes == 3 and agg.agents == 3

        # Metric values exactly match an independent replay of the step logs.
        log_path = tmp_path / "steps.jsonl"
        write_step_log(report, log_path)
        replayed = aggregate_step_records(read_step_log(log_path), zero_shot=True)
        assert replayed.to_dict() == report.to_dict()


# ---- 7. ablation wiring ----------------------------------------------------------------


def test_acceptance_7_ablation_wiring(tmp_path):
    with _criterion(7, "all four ablations train five updates and expose expected manifests", 600.0):
        maps = [
            generate_scenario(ScenarioSpec(scene_type=SceneType.PILLAR, density=0.05, seed=71, target_count=2))
        ]
        enc = _tiny_enc(d=12, horizon=4, n=2)
        obs = ObsConfig(history_len=3, n_neighbors=2)
        ppo = PpoConfig(updates=5, rollout_horizon=12, epochs_per_update=2, minibatch_size=64)
        wcfg = WorldConfig(max_steps=40)
        manifests = {}
        for flag in ("no_spatial", "no_temporal_gru", "no_residual", "plain_ppo"):
            flags = AblationFlags(**{flag: True})
            model = NavModel(enc, obs, flags, init_seed=0)
            result = Trainer(model, maps, 2, ppo_cfg=ppo, world_cfg=wcfg, seed=1,
                             deterministic=True).train()
            assert result.updates == 5  # no numerical abort
            manifests[flag] = set(model.store.names())

        full = set(NavModel(enc, obs, AblationFlags(), init_seed=0).store.names())
        # Spatial replacement: mean-pool MLP present, attention stack gone.
        assert any(n.startswith("spatial_pool.") for n in manifests["no_spatial"])
        assert not any(n.startswith("spatial.block") for n in manifests["no_spatial"])
        assert len(manifests["no_spatial"]) < len(full)
        # GRU replacement: recurrent gates present, no temporal positional table.
        assert any(n.startswith("gru.") for n in manifests["no_temporal_gru"])
        assert "temporal.pos_emb" not in manifests["no_temporal_gru"]
        assert not any(n.startswith("temporal.block") for n in manifests["no_temporal_gru"])
        # Residual removal: no observation projection.
        assert "residual.P_o" not in manifests["no_residual"]
        assert "residual.P_o" in full
        # Plain baseline: only the observation projection and the heads.
        assert manifests["plain_ppo"] == {
            "residual.P_o", "actor.W1", "actor.b1", "actor.W2", "actor.b2", "actor.log_std",
            "critic.W1", "critic.b1", "critic.W2", "critic.b2",
        }


# ---- 8. scenario generation fidelity ---------------------------------------------------


def test_acceptance_8_scenario_generation_fidelity():
    with _criterion(8, "occupancy within 10% relative and clearance invariants over 20 seeds", 120.0):
        for scene in (SceneType.PILLAR, SceneType.CYLINDER, SceneType.MIXED):
            for density in (0.10, 0.25, 0.50):
                samples = 100_000 if density < 0.2 else 50_000
                for seed in range(20):
                    m = generate_scenario(
                        ScenarioSpec(scene_type=scene, density=density, seed=seed, target_count=8)
                    )
                    est = occupancy_fraction(m, samples, seed=seed)
                    rel = abs(est.fraction - density) / density
                    assert rel <= 0.10, (
                        f"{scene.value} d={density} seed={seed}: occupancy {est.fraction:.4f}"
                    )
                    validate_scenario_map(m)  # clearance and structure invariants
