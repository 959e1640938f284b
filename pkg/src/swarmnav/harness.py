"""Experiment driver: evaluation metrics, ablation wiring, co-training-size
sweeps, and embedding export.

Evaluation is greedy (mean action, no sampling), so a frozen policy on a
fixed map reproduces its episodes exactly. Every evaluated step is logged as
one JSON record; the three reported metrics are per-episode, per-agent sums
of those records, and ``aggregate_step_records`` recomputes the report from
the raw log so serialized results can be audited exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointData, load_checkpoint
from .encoder import AblationFlags, EncoderConfig
from .errors import ConfigMismatch, InsufficientMaps
from .model import NavModel, model_from_checkpoint
from .observe import ACTION_DIM, ObsConfig
from .ppo import PolicyRunner, PpoConfig, Trainer
from .scenario import ScenarioMap, load_scenario
from .world import RewardConfig, World, WorldConfig


@dataclass
class RunConfig:
    train_maps: list[str] = field(default_factory=list)
    eval_maps: list[str] = field(default_factory=list)
    seed: int = 0
    num_agents: int = 8
    episodes_per_eval: int = 4
    zero_shot: bool = True
    deterministic: bool = True
    checkpoint_every: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    observation: ObsConfig = field(default_factory=ObsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "encoder": EncoderConfig,
    "observation": ObsConfig,
    "reward": RewardConfig,
    "world": WorldConfig,
    "ppo": PpoConfig,
    "ablation": AblationFlags,
}


def run_config_from_dict(doc: dict) -> RunConfig:
    doc = dict(doc)
    kwargs: dict = {}
    for key, cls in _SECTION_TYPES.items():
        if key in doc:
            section = doc.pop(key)
            try:
                kwargs[key] = cls(**section)
            except TypeError as exc:
                raise ConfigMismatch(f"bad keys in config section {key!r}: {exc}") from exc
    known = {"train_maps", "eval_maps", "seed", "num_agents", "episodes_per_eval",
             "zero_shot", "deterministic", "checkpoint_every"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigMismatch(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(doc)
    return RunConfig(**kwargs)


def apply_ablation(cfg: RunConfig, flag: str) -> RunConfig:
    """Return a copy of the config with one ablation flag switched on."""
    if not hasattr(AblationFlags(), flag):
        raise ConfigMismatch(f"unknown ablation flag {flag!r}")
    flags = replace(cfg.ablation, **{flag: True})
    flags.validate()
    return replace(cfg, ablation=flags)


# ---- evaluation -------------------------------------------------------------------


@dataclass
class MetricAggregate:
    """Mean and population std over (episode, agent) sums."""

    transfer_mean: float
    transfer_std: float
    collision_mean: float
    collision_std: float
    free_mean: float
    free_std: float
    episodes: int
    agents: int


@dataclass
class MetricsReport:
    per_map: dict[str, MetricAggregate]
    overall: MetricAggregate
    zero_shot: bool
    step_records: list[dict]

    def to_dict(self) -> dict:
        return {
            "zero_shot": self.zero_shot,
            "per_map": {k: asdict(v) for k, v in self.per_map.items()},
            "overall": asdict(self.overall),
        }


def _aggregate(sums: np.ndarray, episodes: int, agents: int) -> MetricAggregate:
    return MetricAggregate(
        transfer_mean=float(np.mean(sums[0])),
        transfer_std=float(np.std(sums[0])),
        collision_mean=float(np.mean(sums[1])),
        collision_std=float(np.std(sums[1])),
        free_mean=float(np.mean(sums[2])),
        free_std=float(np.std(sums[2])),
        episodes=episodes,
        agents=agents,
    )


def aggregate_step_records(step_records: list[dict], zero_shot: bool = False) -> MetricsReport:
    """Recompute the metrics report from raw per-step records.

    Sums are accumulated in record order per (map, episode, agent), then
    aggregated over the (episode, agent) population; this mirrors the order
    the evaluator produced them in, so results are exactly reproducible from
    a serialized log.
    """
    sums: dict[tuple[str, int, int], list[float]] = {}
    for rec in step_records:
        key = (rec["scenario_id"], rec["episode"], rec["agent"])
        entry = sums.setdefault(key, [0.0, 0.0, 0.0])
        entry[0] += rec["r_trans"]
        entry[1] += 1.0 if rec["collided"] else 0.0
        entry[2] += rec["r_free"]
    per_map: dict[str, MetricAggregate] = {}
    all_columns: list[list[float]] = []
    for sid in sorted({k[0] for k in sums}):
        keys = sorted(k for k in sums if k[0] == sid)
        columns = [sums[k] for k in keys]
        arr = np.array(columns).T  # (3, episodes*agents)
        episodes = len({k[1] for k in keys})
        agents = len({k[2] for k in keys})
        per_map[sid] = _aggregate(arr, episodes, agents)
        all_columns.extend(columns)
    overall_arr = np.array(all_columns).T if all_columns else np.zeros((3, 0))
    overall = _aggregate(
        overall_arr if overall_arr.size else np.zeros((3, 1)),
        episodes=len({(k[0], k[1]) for k in sums}),
        agents=len({(k[0], k[2]) for k in sums}),
    )
    return MetricsReport(per_map=per_map, overall=overall, zero_shot=zero_shot, step_records=step_records)


def evaluate(
    checkpoint: CheckpointData | NavModel,
    maps: list[ScenarioMap],
    episodes: int,
    seed: int = 0,
    require_zero_shot: bool = False,
    training_scenario_ids: list[str] | None = None,
    num_agents: int | None = None,
    reward_cfg: RewardConfig | None = None,
    world_cfg: WorldConfig | None = None,
) -> MetricsReport:
    """Greedy evaluation of a checkpoint on a set of maps.

    The zero-shot flag is computed from the checkpoint's training scenario
    ids; when ``require_zero_shot`` is set and any eval map was trained on,
    the report is refused with ConfigMismatch.
    """
    if isinstance(checkpoint, CheckpointData):
        model = model_from_checkpoint(checkpoint)
        training_ids = checkpoint.meta.get("training_scenario_ids", [])
        num_agents = num_agents or checkpoint.config.get("num_agents", 1)
        reward_cfg = reward_cfg or RewardConfig(**checkpoint.config["reward"])
        world_cfg = world_cfg or WorldConfig(**checkpoint.config["world"])
    else:
        model = checkpoint
        training_ids = training_scenario_ids or []
        num_agents = num_agents or 1
        reward_cfg = reward_cfg or RewardConfig()
        world_cfg = world_cfg or WorldConfig()

    eval_ids = {m.scenario_id for m in maps}
    seen = sorted(eval_ids & set(training_ids))
    if require_zero_shot and seen:
        raise ConfigMismatch(f"zero-shot evaluation refused: maps {seen} were used in training")
    zero_shot = not seen

    step_records: list[dict] = []
    torch.set_num_threads(1)
    for scenario in maps:
        if num_agents > len(scenario.spawn_points):
            raise ConfigMismatch(
                f"{num_agents} agents but map {scenario.scenario_id} has "
                f"{len(scenario.spawn_points)} spawn points"
            )
        world = World(scenario, reward_cfg, world_cfg)
        for ep in range(episodes):
            runner = PolicyRunner(model, world, num_agents)
            runner.begin_episode()
            ws = world.reset(num_agents, seed=seed)
            step = 0
            while not ws.all_done:
                decision = runner.act(ws, noise_rng=None)
                if decision is None:
                    break
                actions = [np.zeros(ACTION_DIM) for _ in range(num_agents)]
                for k, i in enumerate(decision["agents"]):
                    actions[i] = decision["actions_clamped"][k]
                ws_next, rewards, _dones = world.step(ws, actions)
                runner.record(ws, decision, rewards)
                for i in decision["agents"]:
                    step_records.append(
                        {
                            "type": "step",
                            "scenario_id": scenario.scenario_id,
                            "episode": ep,
                            "step": step,
                            "agent": i,
                            "r_trans": rewards[i].r_trans,
                            "collided": rewards[i].r_col_applied != 0.0,
                            "r_free": rewards[i].r_free_applied,
                            "r_total": rewards[i].r_total,
                        }
                    )
                ws = ws_next
                step += 1
    return aggregate_step_records(step_records, zero_shot=zero_shot)


def write_step_log(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in report.step_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_step_log(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_summary_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario_id", "zero_shot", "transfer_reward_mean", "transfer_reward_std",
             "collision_penalty_mean", "collision_penalty_std",
             "free_space_reward_mean", "free_space_reward_std", "episodes", "agents"]
        )
        for sid, agg in sorted(report.per_map.items()):
            writer.writerow(
                [sid, report.zero_shot, agg.transfer_mean, agg.transfer_std,
                 agg.collision_mean, agg.collision_std, agg.free_mean, agg.free_std,
                 agg.episodes, agg.agents]
            )
        o = report.overall
        writer.writerow(
            ["OVERALL", report.zero_shot, o.transfer_mean, o.transfer_std,
             o.collision_mean, o.collision_std, o.free_mean, o.free_std,
             o.episodes, o.agents]
        )


# ---- training entry points ---------------------------------------------------------


def load_maps(paths) -> list[ScenarioMap]:
    return [load_scenario(p) for p in paths]


def train_run(cfg: RunConfig, out_dir=None):
    """Train per the run config; returns the Trainer result."""
    maps = load_maps(cfg.train_maps)
    model = NavModel(cfg.encoder, cfg.observation, cfg.ablation, init_seed=cfg.seed)
    trainer = Trainer(
        model,
        maps,
        cfg.num_agents,
        ppo_cfg=cfg.ppo,
        reward_cfg=cfg.reward,
        world_cfg=cfg.world,
        seed=cfg.seed,
        deterministic=cfg.deterministic,
        out_dir=out_dir,
        checkpoint_every=cfg.checkpoint_every,
    )
    return trainer.train()


def resume_run(cfg: RunConfig, checkpoint_path, out_dir=None):
    """Continue training from a checkpoint written by an identical config."""
    data = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(data)
    maps = load_maps(cfg.train_maps)
    trainer = Trainer(
        model,
        maps,
        cfg.num_agents,
        ppo_cfg=cfg.ppo,
        reward_cfg=cfg.reward,
        world_cfg=cfg.world,
        seed=cfg.seed,
        deterministic=cfg.deterministic,
        out_dir=out_dir,
        checkpoint_every=cfg.checkpoint_every,
        start_update=data.meta.get("update_index", 0),
        episode_offsets=data.meta.get("episode_counts", {}),
    )
    return trainer.train()


def sweep_scenario_count(counts: list[int], cfg: RunConfig, out_dir=None) -> dict[int, MetricsReport]:
    """Train one model per co-training-set size and evaluate on shared maps."""
    pool = load_maps(cfg.train_maps)
    eval_maps = load_maps(cfg.eval_maps)
    results: dict[int, MetricsReport] = {}
    for count in counts:
        if count > len(pool):
            raise InsufficientMaps(f"sweep needs {count} maps, pool has {len(pool)}")
        sub_dir = Path(out_dir) / f"count_{count}" if out_dir else None
        sub_cfg = replace(cfg, train_maps=cfg.train_maps[:count])
        result = train_run(sub_cfg, out_dir=sub_dir)
        report = evaluate(
            result.model,
            eval_maps,
            cfg.episodes_per_eval,
            seed=cfg.seed,
            require_zero_shot=cfg.zero_shot,
            training_scenario_ids=[m.scenario_id for m in pool[:count]],
            num_agents=cfg.num_agents,
            reward_cfg=cfg.reward,
            world_cfg=cfg.world,
        )
        results[count] = report
    return results


def write_sweep_csv(results: dict[int, MetricsReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_count", "transfer_reward_mean", "collision_penalty_mean",
                         "free_space_reward_mean", "zero_shot"])
        for count in sorted(results):
            o = results[count].overall
            writer.writerow([count, o.transfer_mean, o.collision_mean, o.free_mean,
                             results[count].zero_shot])


# ---- embedding export ---------------------------------------------------------------


def _pca3(matrix: np.ndarray) -> np.ndarray:
    """Projections onto the top three principal components (sign-fixed)."""
    if matrix.shape[0] < 2:
        return np.zeros((matrix.shape[0], 3))
    centered = matrix - matrix.mean(axis=0)
    _u, _s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:3]
    for k in range(comps.shape[0]):
        pivot = np.argmax(np.abs(comps[k]))
        if comps[k, pivot] < 0:
            comps[k] = -comps[k]
    proj = centered @ comps.T
    if proj.shape[1] < 3:
        proj = np.hstack([proj, np.zeros((proj.shape[0], 3 - proj.shape[1]))])
    return proj


def export_embeddings(
    checkpoint: CheckpointData | NavModel,
    maps: list[ScenarioMap],
    steps: int,
    path,
    seed: int = 0,
    num_agents: int | None = None,
    reward_cfg: RewardConfig | None = None,
    world_cfg: WorldConfig | None = None,
) -> int:
    """Greedy-rollout temporal embeddings, one CSV row per (map, agent, step).

    Finished drones keep emitting rows from their frozen windows so the row
    count is exactly len(maps) * num_agents * steps. Three principal-component
    columns are appended for quick visualization.
    """
    if isinstance(checkpoint, CheckpointData):
        model = model_from_checkpoint(checkpoint)
        num_agents = num_agents or checkpoint.config.get("num_agents", 1)
        reward_cfg = reward_cfg or RewardConfig(**checkpoint.config["reward"])
        world_cfg = world_cfg or WorldConfig(**checkpoint.config["world"])
    else:
        model = checkpoint
        num_agents = num_agents or 1
        reward_cfg = reward_cfg or RewardConfig()
        world_cfg = world_cfg or WorldConfig()

    torch.set_num_threads(1)
    labels: list[tuple[str, int, int]] = []
    rows: list[np.ndarray] = []
    for scenario in maps:
        world = World(scenario, reward_cfg, world_cfg)
        runner = PolicyRunner(model, world, num_agents)
        runner.begin_episode()
        ws = world.reset(num_agents, seed=seed)
        for step in range(steps):
            decision = runner.act(ws, noise_rng=None, include_done=True)
            for k in range(num_agents):
                labels.append((scenario.scenario_id, k, step))
                rows.append(decision["embeddings"][k])
            if not ws.all_done:
                actions = [np.zeros(ACTION_DIM) for _ in range(num_agents)]
                live = [i for i in range(num_agents) if not ws.done_flags[i]]
                for i in live:
                    actions[i] = decision["actions_clamped"][i]
                ws_next, rewards, _ = world.step(ws, actions)
                runner.record(ws, {"agents": live, "actions_clamped": np.array([actions[i] for i in live])}, rewards)
                ws = ws_next

    matrix = np.stack(rows) if rows else np.zeros((0, model.enc_cfg.temporal_dim))
    pca = _pca3(matrix)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario_id", "agent", "step"]
            + [f"h{k}" for k in range(matrix.shape[1])]
            + ["pca0", "pca1", "pca2"]
        )
        for (sid, agent, step), vec, p3 in zip(labels, matrix, pca):
            writer.writerow([sid, agent, step] + [repr(float(v)) for v in vec] + [repr(float(v)) for v in p3])
    return len(labels)
