"""On-policy training: windowed rollout collection, generalized advantage
estimation, the clipped surrogate objective, and the multi-scenario
co-training loop.

Collection and training share one forward path: every collected step's token
set goes into a flat bank, and temporal windows are index lists into that
bank. Minibatches gather the same rows the rollout used, so recomputed
log-probabilities match the stored ones bit for bit on the first epoch.

Determinism: all randomness comes from numpy generators keyed by
(seed, update, scenario); resuming from a checkpoint at an update boundary
therefore continues exactly as an uninterrupted run.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import EmptyBatch, LengthMismatch, NonFiniteLoss
from .model import NavModel
from .nn import adam_step, grad
from .observe import ACTION_DIM, ObservationAssembler, stack_tokens
from .policy import gaussian_entropy, gaussian_log_prob, sample_actions
from .scenario import ScenarioMap
from .world import RewardConfig, World, WorldConfig


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    entropy_coef: float = 1e-2
    learning_rate: float = 5e-4
    delta_actor: float = 1.0
    delta_critic: float = 1.0
    delta_pred: float = 1e-2
    gae_lambda: float = 0.95
    epochs_per_update: int = 10
    minibatch_size: int = 256
    rollout_horizon: int = 512
    total_episodes: int | None = None
    updates: int | None = None
    normalize_advantages: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.delta_pred < 0.0:
            raise ValueError("delta_pred must be >= 0")
        if self.rollout_horizon < 0:
            raise ValueError("rollout_horizon must be >= 0")


@dataclass
class LossReport:
    """Scalars of one loss evaluation.

    ``l_total`` equals delta_actor * l_actor + delta_critic * l_critic
    + delta_pred * l_pred - entropy_coef * entropy, combined in that order.
    """

    l_actor: float
    l_critic: float
    l_pred: float
    l_total: float
    entropy: float
    clip_fraction: float
    approx_kl: float


@dataclass
class EpisodeRecord:
    scenario_id: str
    episode: int
    length: int
    transfer_reward: float  # mean over agents of per-episode sums
    collision_penalty: float  # mean over agents of collision counts (x 1.0)
    free_space_reward: float
    per_agent_transfer: list[float]
    per_agent_collisions: list[float]
    per_agent_free: list[float]


@dataclass
class RolloutBatch:
    """Flat sample arrays plus the shared token bank windows index into."""

    bank_obs: np.ndarray  # (N, n+1, obs_dim+1)
    bank_act: np.ndarray  # (N, n+1, ACTION_DIM+1)
    bank_rew: np.ndarray  # (N, n+1, 1)
    window_ids: np.ndarray  # (N, L) indices into the bank, tail-padded with 0
    lengths: np.ndarray  # (N,)
    actions: np.ndarray  # (N, ACTION_DIM) raw policy samples
    log_probs: np.ndarray  # (N,)
    values: np.ndarray  # (N,)
    rewards: np.ndarray  # (N,) total reward
    dones: np.ndarray  # (N,) bool
    scenario_index: np.ndarray  # (N,)
    agent_index: np.ndarray  # (N,)
    episode_index: np.ndarray  # (N,)
    step_index: np.ndarray  # (N,) step within the episode
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.actions.shape[0]

    def gather_windows(self, idx: np.ndarray):
        """Torch window tensors (obs, act, rew, lengths) for sample rows ``idx``."""
        win = self.window_ids[idx]
        return (
            torch.as_tensor(self.bank_obs[win]),
            torch.as_tensor(self.bank_act[win]),
            torch.as_tensor(self.bank_rew[win]),
            torch.as_tensor(self.lengths[idx]),
        )


class PolicyRunner:
    """Steps a policy in one world while maintaining token windows.

    Owns the episode-scoped observation assembler, the flat token bank, and
    the per-agent window id deques; training minibatches later re-gather the
    exact rows collected here.
    """

    def __init__(self, model: NavModel, world: World, num_agents: int):
        self.model = model
        self.world = world
        self.num_agents = num_agents
        self.horizon = model.enc_cfg.horizon
        self.bank_obs: list[np.ndarray] = []
        self.bank_act: list[np.ndarray] = []
        self.bank_rew: list[np.ndarray] = []
        self.assembler: ObservationAssembler | None = None
        self.window_ids: list[deque] = []

    def begin_episode(self) -> None:
        self.assembler = ObservationAssembler(self.num_agents, self.model.obs_cfg, self.world)
        self.window_ids = [deque(maxlen=self.horizon) for _ in range(self.num_agents)]

    def _bank_append(self, tokens) -> int:
        arrays = stack_tokens(tokens)
        self.bank_obs.append(arrays["obs"])
        self.bank_act.append(arrays["act"])
        self.bank_rew.append(arrays["rew"])
        return len(self.bank_obs) - 1

    def _windows_tensor(self, agent_ids):
        n_slots = self.model.enc_cfg.n_neighbors + 1
        obs_dim = self.model.obs_cfg.obs_dim
        rows = np.zeros((len(agent_ids), self.horizon), dtype=np.int64)
        lengths = np.zeros(len(agent_ids), dtype=np.int64)
        w_obs = np.zeros((len(agent_ids), self.horizon, n_slots, obs_dim + 1))
        w_act = np.zeros((len(agent_ids), self.horizon, n_slots, ACTION_DIM + 1))
        w_rew = np.zeros((len(agent_ids), self.horizon, n_slots, 1))
        for k, i in enumerate(agent_ids):
            ids = list(self.window_ids[i])
            rows[k, : len(ids)] = ids
            lengths[k] = len(ids)
            for p, row in enumerate(ids):
                w_obs[k, p] = self.bank_obs[row]
                w_act[k, p] = self.bank_act[row]
                w_rew[k, p] = self.bank_rew[row]
        return (
            torch.as_tensor(w_obs),
            torch.as_tensor(w_act),
            torch.as_tensor(w_rew),
            torch.as_tensor(lengths),
            rows,
            lengths,
        )

    def act(self, ws, noise_rng: np.random.Generator | None, include_done: bool = False):
        """Advance the token windows and produce actions for live agents.

        Returns a dict with live agent ids, bank rows, window metadata,
        sampled raw actions, clamped actions, log-probs, values, and (when
        ``include_done``) per-agent policy embeddings.
        """
        obs = self.assembler.observe_all(ws)
        token_sets = self.assembler.tokens_for_all(ws, obs)
        agents = list(range(self.num_agents)) if include_done else [
            i for i in range(self.num_agents) if not ws.done_flags[i]
        ]
        bank_rows = {}
        for i in agents:
            row = self._bank_append(token_sets[i])
            self.window_ids[i].append(row)
            bank_rows[i] = row
        if not agents:
            return None

        w_obs, w_act, w_rew, w_len, rows, lengths = self._windows_tensor(agents)
        with torch.no_grad():
            feats, h_pos = self.model.features_from_windows(w_obs, w_act, w_rew, w_len, return_positions=True)
            mean, log_std = self.model.action_distribution(feats)
            values = self.model.value(feats)
            if noise_rng is None:
                raw = mean
            else:
                raw = sample_actions(mean, log_std, noise_rng.standard_normal((len(agents), ACTION_DIM)))
            logp = gaussian_log_prob(raw, mean, log_std)
            if h_pos is not None:
                idx = torch.as_tensor((lengths - 1).clip(min=0))
                h_out = h_pos[torch.arange(len(agents)), idx]
            else:
                h_out = feats
        raw_np = raw.numpy()
        return {
            "agents": agents,
            "bank_rows": bank_rows,
            "window_rows": rows,
            "lengths": lengths,
            "actions_raw": raw_np,
            "actions_clamped": np.clip(raw_np, -1.0, 1.0),
            "log_probs": logp.numpy(),
            "values": values.numpy(),
            "embeddings": h_out.numpy(),
        }

    def record(self, ws_before, decision, rewards) -> None:
        """Feed executed actions and total rewards back into the histories."""
        actions = [np.zeros(ACTION_DIM) for _ in range(self.num_agents)]
        totals = [0.0] * self.num_agents
        for k, i in enumerate(decision["agents"]):
            actions[i] = decision["actions_clamped"][k]
            totals[i] = rewards[i].r_total
        alive = [not d for d in ws_before.done_flags]
        for i in range(self.num_agents):
            if alive[i]:
                self.assembler.histories[i].append(actions[i])
                self.assembler.prev_actions[i] = np.asarray(actions[i], dtype=float)
                self.assembler.prev_rewards[i] = totals[i]

    def peek_values(self, ws) -> dict[int, float]:
        """Critic values for the state after the last recorded step.

        Used to bootstrap truncated trajectories; does not grow the bank.
        """
        live = [i for i in range(self.num_agents) if not ws.done_flags[i]]
        if not live:
            return {}
        obs = self.assembler.observe_all(ws)
        token_sets = self.assembler.tokens_for_all(ws, obs)
        n_slots = self.model.enc_cfg.n_neighbors + 1
        obs_dim = self.model.obs_cfg.obs_dim
        w_obs = np.zeros((len(live), self.horizon, n_slots, obs_dim + 1))
        w_act = np.zeros((len(live), self.horizon, n_slots, ACTION_DIM + 1))
        w_rew = np.zeros((len(live), self.horizon, n_slots, 1))
        lengths = np.zeros(len(live), dtype=np.int64)
        for k, i in enumerate(live):
            ids = list(self.window_ids[i])[-(self.horizon - 1) :] if self.horizon > 1 else []
            arrays = stack_tokens(token_sets[i])
            for p, row in enumerate(ids):
                w_obs[k, p] = self.bank_obs[row]
                w_act[k, p] = self.bank_act[row]
                w_rew[k, p] = self.bank_rew[row]
            w_obs[k, len(ids)] = arrays["obs"]
            w_act[k, len(ids)] = arrays["act"]
            w_rew[k, len(ids)] = arrays["rew"]
            lengths[k] = len(ids) + 1
        with torch.no_grad():
            feats = self.model.features_from_windows(
                torch.as_tensor(w_obs), torch.as_tensor(w_act), torch.as_tensor(w_rew), torch.as_tensor(lengths)
            )
            values = self.model.value(feats)
        return {i: float(values[k]) for k, i in enumerate(live)}


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float, bootstrap_value: float = 0.0):
    """Generalized advantage estimation over one trajectory.

    ``dones[t]`` marks a terminal transition; the bootstrap value stands in
    for the state value after the last step when the trajectory is truncated.
    Returns raw (unnormalized) advantages and returns-to-go.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise LengthMismatch(
            f"rewards {rewards.shape}, values {values.shape}, dones {dones.shape} must align"
        )
    t_len = rewards.shape[0]
    adv = np.zeros(t_len)
    last = 0.0
    for t in reversed(range(t_len)):
        next_value = bootstrap_value if t == t_len - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * gae_lambda * nonterminal * last
        adv[t] = last
    return adv, adv + values


@dataclass
class _Trajectory:
    sample_rows: list[int] = field(default_factory=list)


def collect_rollouts(
    model: NavModel,
    scenarios: list[ScenarioMap],
    num_agents: int,
    ppo_cfg: PpoConfig,
    reward_cfg: RewardConfig,
    world_cfg: WorldConfig,
    seed: int,
    update_index: int = 0,
    episode_offsets: dict[str, int] | None = None,
) -> tuple[RolloutBatch, list[EpisodeRecord]]:
    """Roll every scenario for the configured horizon under the frozen policy.

    Scenarios are processed sequentially in list order; each begins a fresh
    episode and resets whenever all drones finish. Returns the training batch
    (advantages already computed per trajectory) and completed-episode
    records.
    """
    n_slots = model.enc_cfg.n_neighbors + 1
    obs_dim = model.obs_cfg.obs_dim
    bank_obs: list[np.ndarray] = []
    bank_act: list[np.ndarray] = []
    bank_rew: list[np.ndarray] = []
    samples: dict[str, list] = {k: [] for k in (
        "window", "length", "action", "logp", "value", "reward", "done",
        "scenario", "agent", "episode", "step",
    )}
    episode_records: list[EpisodeRecord] = []
    traj_rows: list[tuple[list[int], float]] = []  # rows + bootstrap value

    episode_offsets = episode_offsets or {}

    for s_idx, scenario in enumerate(scenarios):
        world = World(scenario, reward_cfg, world_cfg)
        runner = PolicyRunner(model, world, num_agents)
        noise_rng = np.random.default_rng([seed, 0xAC7, update_index, s_idx])
        row_base = len(bank_obs)

        ws = world.reset(num_agents, seed=seed)
        runner.begin_episode()
        episode_idx = episode_offsets.get(scenario.scenario_id, 0)
        ep_step = 0
        sums = np.zeros((3, num_agents))  # transfer, collisions, free
        open_traj: dict[int, _Trajectory] = {i: _Trajectory() for i in range(num_agents)}

        def close_traj(i: int, bootstrap: float) -> None:
            tr = open_traj[i]
            if tr.sample_rows:
                traj_rows.append((tr.sample_rows, bootstrap))
            open_traj[i] = _Trajectory()

        for _ in range(ppo_cfg.rollout_horizon):
            decision = runner.act(ws, noise_rng)
            if decision is None:
                break
            acting = dict(zip(decision["agents"], decision["actions_clamped"]))
            ws_next, rewards, dones = world.step(
                ws, [acting.get(i, np.zeros(ACTION_DIM)) for i in range(num_agents)]
            )
            runner.record(ws, decision, rewards)
            for k, i in enumerate(decision["agents"]):
                row = len(samples["action"])
                samples["window"].append(decision["window_rows"][k] + row_base)
                samples["length"].append(decision["lengths"][k])
                samples["action"].append(decision["actions_raw"][k])
                samples["logp"].append(decision["log_probs"][k])
                samples["value"].append(decision["values"][k])
                samples["reward"].append(rewards[i].r_total)
                samples["done"].append(dones[i])
                samples["scenario"].append(s_idx)
                samples["agent"].append(i)
                samples["episode"].append(episode_idx)
                samples["step"].append(ep_step)
                open_traj[i].sample_rows.append(row)
                sums[0, i] += rewards[i].r_trans
                sums[1, i] += 1.0 if rewards[i].r_col_applied != 0.0 else 0.0
                sums[2, i] += rewards[i].r_free_applied
                if dones[i]:
                    close_traj(i, 0.0)
            ws = ws_next
            ep_step += 1
            if ws.all_done:
                episode_records.append(
                    EpisodeRecord(
                        scenario_id=scenario.scenario_id,
                        episode=episode_idx,
                        length=ep_step,
                        transfer_reward=float(sums[0].mean()),
                        collision_penalty=float(sums[1].mean()),
                        free_space_reward=float(sums[2].mean()),
                        per_agent_transfer=[float(v) for v in sums[0]],
                        per_agent_collisions=[float(v) for v in sums[1]],
                        per_agent_free=[float(v) for v in sums[2]],
                    )
                )
                episode_idx += 1
                ep_step = 0
                sums = np.zeros((3, num_agents))
                ws = world.reset(num_agents, seed=seed)
                runner.begin_episode()

        # Truncated trajectories bootstrap from the critic at the next state.
        if not ws.all_done and any(tr.sample_rows for tr in open_traj.values()):
            boot = runner.peek_values(ws)
            for i in range(num_agents):
                close_traj(i, boot.get(i, 0.0))
        else:
            for i in range(num_agents):
                close_traj(i, 0.0)

        bank_obs.extend(runner.bank_obs)
        bank_act.extend(runner.bank_act)
        bank_rew.extend(runner.bank_rew)

    n = len(samples["action"])
    if n:
        reward_arr = np.array(samples["reward"], dtype=float)
        value_arr = np.array(samples["value"], dtype=float)
        done_arr = np.array(samples["done"], dtype=bool)
        adv_arr = np.zeros(n)
        ret_arr = np.zeros(n)
        for rows, bootstrap in traj_rows:
            rr = np.array(rows)
            adv, ret = compute_gae(
                reward_arr[rr], value_arr[rr], done_arr[rr], ppo_cfg.gamma, ppo_cfg.gae_lambda, bootstrap
            )
            adv_arr[rr] = adv
            ret_arr[rr] = ret
    else:
        adv_arr = np.zeros(0)
        ret_arr = np.zeros(0)

    empty_obs = np.zeros((0, n_slots, obs_dim + 1))
    batch = RolloutBatch(
        bank_obs=np.stack(bank_obs) if bank_obs else empty_obs,
        bank_act=np.stack(bank_act) if bank_act else np.zeros((0, n_slots, ACTION_DIM + 1)),
        bank_rew=np.stack(bank_rew) if bank_rew else np.zeros((0, n_slots, 1)),
        window_ids=np.array(samples["window"], dtype=np.int64).reshape(n, -1)
        if n
        else np.zeros((0, model.enc_cfg.horizon), dtype=np.int64),
        lengths=np.array(samples["length"], dtype=np.int64),
        actions=np.array(samples["action"], dtype=float).reshape(n, ACTION_DIM),
        log_probs=np.array(samples["logp"], dtype=float),
        values=np.array(samples["value"], dtype=float),
        rewards=np.array(samples["reward"], dtype=float),
        dones=np.array(samples["done"], dtype=bool),
        scenario_index=np.array(samples["scenario"], dtype=np.int64),
        agent_index=np.array(samples["agent"], dtype=np.int64),
        episode_index=np.array(samples["episode"], dtype=np.int64),
        step_index=np.array(samples["step"], dtype=np.int64),
        advantages=adv_arr,
        returns=ret_arr,
    )
    return batch, episode_records


def ppo_losses(
    batch: RolloutBatch,
    model: NavModel,
    cfg: PpoConfig,
    idx: np.ndarray | None = None,
    advantages: np.ndarray | None = None,
    pred_target_override: torch.Tensor | None = None,
) -> tuple[LossReport, torch.Tensor]:
    """Clipped-objective losses on (a subset of) a batch.

    ``advantages`` defaults to the batch's stored (raw) values; the trainer
    passes per-update normalized ones. ``pred_target_override`` freezes the
    prediction-loss target (used by finite-difference gradient checks, since
    the live target is detached). Returns the report and the scalar
    total-loss tensor for backward.
    """
    if len(batch) == 0:
        raise EmptyBatch("cannot compute losses on an empty batch")
    if idx is None:
        idx = np.arange(len(batch))
    adv_source = batch.advantages if advantages is None else advantages
    w_obs, w_act, w_rew, w_len = batch.gather_windows(idx)
    actions = torch.as_tensor(batch.actions[idx])
    old_logp = torch.as_tensor(batch.log_probs[idx])
    adv = torch.as_tensor(adv_source[idx])
    rets = torch.as_tensor(batch.returns[idx])

    feats, h_pos = model.features_from_windows(w_obs, w_act, w_rew, w_len, return_positions=True)
    mean, log_std = model.action_distribution(feats)
    values = model.value(feats)
    new_logp = gaussian_log_prob(actions, mean, log_std)

    ratio = torch.exp(new_logp - old_logp)
    clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    l_actor = -torch.minimum(ratio * adv, clipped * adv).mean()
    l_critic = ((values - rets) ** 2).mean()
    l_pred = model.prediction_loss_from_windows(h_pos, w_act, w_rew, w_len, target_override=pred_target_override)
    entropy = gaussian_entropy(log_std)
    l_total = (
        cfg.delta_actor * l_actor
        + cfg.delta_critic * l_critic
        + cfg.delta_pred * l_pred
        - cfg.entropy_coef * entropy
    )
    with torch.no_grad():
        clip_fraction = float(((ratio - 1.0).abs() > cfg.clip_epsilon).double().mean())
        approx_kl = float(((ratio - 1.0) - torch.log(ratio)).mean())
    report = LossReport(
        l_actor=float(l_actor.detach()),
        l_critic=float(l_critic.detach()),
        l_pred=float(l_pred.detach()),
        l_total=float(l_total.detach()),
        entropy=float(entropy.detach()),
        clip_fraction=clip_fraction,
        approx_kl=approx_kl,
    )
    return report, l_total


class MetricsWriter:
    """Line-delimited JSON records; also kept in memory for direct use."""

    def __init__(self, path: Path | None, append: bool = False):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not append:
                self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    checkpoint_path: Path | None
    updates: int
    episodes: int
    episode_records: list[EpisodeRecord]
    update_reports: list[LossReport]
    model: "NavModel | None" = None


class Trainer:
    """Algorithm: repeat {collect from every scenario, then several epochs of
    minibatched updates on the shared parameters}."""

    def __init__(
        self,
        model: NavModel,
        scenarios: list[ScenarioMap],
        num_agents: int,
        ppo_cfg: PpoConfig | None = None,
        reward_cfg: RewardConfig | None = None,
        world_cfg: WorldConfig | None = None,
        seed: int = 0,
        deterministic: bool = True,
        out_dir=None,
        checkpoint_every: int = 0,
        start_update: int = 0,
        episode_offsets: dict[str, int] | None = None,
    ):
        if not scenarios:
            raise ValueError("at least one training scenario is required")
        self.model = model
        self.scenarios = scenarios
        self.num_agents = num_agents
        self.ppo_cfg = ppo_cfg or PpoConfig()
        self.ppo_cfg.validate()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.reward_cfg.validate()
        self.world_cfg = world_cfg or WorldConfig()
        self.seed = seed
        self.deterministic = deterministic
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.checkpoint_every = checkpoint_every
        self.update_index = start_update
        self.episode_counts: dict[str, int] = dict(episode_offsets or {})
        if deterministic:
            torch.set_num_threads(1)

    def _config_document(self) -> dict:
        from dataclasses import asdict

        return {
            "model": self.model.config_dict(),
            "ppo": asdict(self.ppo_cfg),
            "reward": asdict(self.reward_cfg),
            "world": asdict(self.world_cfg),
            "num_agents": self.num_agents,
            "seed": self.seed,
        }

    def _save_checkpoint(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            path,
            self.model.store,
            self._config_document(),
            meta={
                "training_scenario_ids": [s.scenario_id for s in self.scenarios],
                "update_index": self.update_index,
                "episode_counts": self.episode_counts,
            },
        )

    def _dump_diagnostics(self, batch: RolloutBatch, idx: np.ndarray, report: LossReport) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.out_dir / f"nonfinite_minibatch_update{self.update_index}.npz"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            rows=idx,
            actions=batch.actions[idx],
            log_probs=batch.log_probs[idx],
            advantages=batch.advantages[idx],
            returns=batch.returns[idx],
            lengths=batch.lengths[idx],
            losses=np.array([report.l_actor, report.l_critic, report.l_pred, report.l_total]),
        )
        return path

    def train(self) -> TrainResult:
        cfg = self.ppo_cfg
        if cfg.updates is None and cfg.total_episodes is None:
            raise ValueError("set ppo updates and/or total_episodes as a stop condition")
        metrics = MetricsWriter(
            self.out_dir / "metrics.jsonl" if self.out_dir else None,
            append=self.update_index > 0,
        )
        update_reports: list[LossReport] = []
        all_episodes: list[EpisodeRecord] = []

        while True:
            if cfg.updates is not None and self.update_index >= cfg.updates:
                break
            total_eps = sum(self.episode_counts.values())
            if cfg.total_episodes is not None and total_eps >= cfg.total_episodes:
                break

            batch, episodes = collect_rollouts(
                self.model,
                self.scenarios,
                self.num_agents,
                cfg,
                self.reward_cfg,
                self.world_cfg,
                seed=self.seed,
                update_index=self.update_index,
                episode_offsets=self.episode_counts,
            )
            for rec in episodes:
                self.episode_counts[rec.scenario_id] = rec.episode + 1
                metrics.write(
                    {
                        "type": "episode",
                        "scenario_id": rec.scenario_id,
                        "episode": rec.episode,
                        "update": self.update_index,
                        "length": rec.length,
                        "transfer_reward": rec.transfer_reward,
                        "collision_penalty": rec.collision_penalty,
                        "free_space_reward": rec.free_space_reward,
                    }
                )
            all_episodes.extend(episodes)

            if len(batch):
                adv = batch.advantages
                if cfg.normalize_advantages:
                    std = adv.std()
                    adv = (adv - adv.mean()) / (std if std > 1e-12 else 1.0)
                shuffle_rng = np.random.default_rng([self.seed, 0x5F0FF1E, self.update_index])
                last_report: LossReport | None = None
                for _epoch in range(cfg.epochs_per_update):
                    order = shuffle_rng.permutation(len(batch))
                    for start in range(0, len(batch), cfg.minibatch_size):
                        idx = order[start : start + cfg.minibatch_size]
                        report, loss = ppo_losses(batch, self.model, cfg, idx=idx, advantages=adv)
                        if not math.isfinite(report.l_total):
                            dump = self._dump_diagnostics(batch, idx, report)
                            raise NonFiniteLoss(
                                f"non-finite loss at update {self.update_index}"
                                + (f"; minibatch dumped to {dump}" if dump else "")
                            )
                        grads = grad(loss, self.model.store)
                        adam_step(
                            self.model.store,
                            grads,
                            cfg.learning_rate,
                            cfg.adam_beta1,
                            cfg.adam_beta2,
                            cfg.adam_eps,
                        )
                        last_report = report
                if last_report is not None:
                    update_reports.append(last_report)
                    metrics.write(
                        {
                            "type": "update",
                            "update": self.update_index,
                            "l_actor": last_report.l_actor,
                            "l_critic": last_report.l_critic,
                            "l_pred": last_report.l_pred,
                            "l_total": last_report.l_total,
                            "entropy": last_report.entropy,
                            "clip_fraction": last_report.clip_fraction,
                            "approx_kl": last_report.approx_kl,
                            "episodes_done": sum(self.episode_counts.values()),
                        }
                    )

            self.update_index += 1
            if (
                self.checkpoint_every
                and self.out_dir is not None
                and self.update_index % self.checkpoint_every == 0
            ):
                self._save_checkpoint(self.out_dir / f"checkpoint_{self.update_index:06d}.bin")

        final_path = None
        if self.out_dir is not None:
            final_path = self.out_dir / "checkpoint_final.bin"
            self._save_checkpoint(final_path)
        return TrainResult(
            checkpoint_path=final_path,
            updates=self.update_index,
            episodes=sum(self.episode_counts.values()),
            episode_records=all_episodes,
            update_reports=update_reports,
            model=self.model,
        )
