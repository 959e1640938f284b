"""Local observations and encoder input tokens.

An observation is the drone's 12-entry kinematic state concatenated with its
own action history over a fixed window (zero-filled before the episode
start). Each drone also selects its nearest live neighbors inside a sensing
radius; the per-drone token triple (observation, previous action, previous
reward) for the drone and each neighbor slot feeds the spatial encoder.
Missing neighbor slots are zero-padded and tagged with a 0 presence flag
appended to both the observation and action vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import WorldState

STATE_DIM = 12
ACTION_DIM = 4


@dataclass(frozen=True)
class ObsConfig:
    history_len: int = 15  # action-history window
    n_neighbors: int = 4
    sensing_range: float = 10.0
    # Optional horizontal range sensor appended to the observation
    # (experimental; off by default and excluded from acceptance checks).
    ray_sensor: bool = False
    ray_count: int = 8

    def validate(self) -> None:
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.n_neighbors < 0:
            raise ValueError("n_neighbors must be >= 0")

    @property
    def obs_dim(self) -> int:
        extra = self.ray_count if self.ray_sensor else 0
        return STATE_DIM + ACTION_DIM * self.history_len + extra


@dataclass(frozen=True)
class NeighborSet:
    ids: tuple[int, ...]
    presence: tuple[bool, ...]


@dataclass(frozen=True)
class MdpFeature:
    """One token triple: augmented observation, augmented action, reward."""

    obs_aug: np.ndarray  # obs_dim + 1 (presence flag appended)
    act_aug: np.ndarray  # ACTION_DIM + 1
    rew: float


class ActionHistory:
    """Fixed-length action window for one agent, oldest first."""

    def __init__(self, history_len: int):
        self.history_len = history_len
        self._log: list[np.ndarray] = []

    def append(self, action: np.ndarray) -> None:
        self._log.append(np.asarray(action, dtype=float).copy())

    def window(self) -> np.ndarray:
        """(history_len, ACTION_DIM) block, zero rows before episode start."""
        out = np.zeros((self.history_len, ACTION_DIM))
        tail = self._log[-self.history_len :]
        if tail:
            out[self.history_len - len(tail) :] = np.stack(tail)
        return out

    def log(self) -> list[np.ndarray]:
        return list(self._log)


def nearest_neighbors(
    positions, agent_index: int, cfg: ObsConfig, alive=None
) -> NeighborSet:
    """Up to n nearest live agents within sensing range, ties by lower id."""
    positions = np.asarray(positions, dtype=float)
    me = positions[agent_index]
    candidates: list[tuple[float, int]] = []
    for j in range(positions.shape[0]):
        if j == agent_index:
            continue
        if alive is not None and not alive[j]:
            continue
        d = float(np.linalg.norm(positions[j] - me))
        if d <= cfg.sensing_range:
            candidates.append((d, j))
    candidates.sort()
    ids = tuple(j for _, j in candidates[: cfg.n_neighbors])
    presence = tuple(k < len(ids) for k in range(cfg.n_neighbors))
    return NeighborSet(ids=ids, presence=presence)


def build_observation(state, history: ActionHistory, cfg: ObsConfig, ray_distances=None) -> np.ndarray:
    """State vector plus action-history block (plus optional ray readings)."""
    parts = [state.as_vector(), history.window().reshape(-1)]
    if cfg.ray_sensor:
        if ray_distances is None:
            ray_distances = np.full(cfg.ray_count, cfg.sensing_range)
        parts.append(np.asarray(ray_distances, dtype=float))
    return np.concatenate(parts)


def ray_readings(world, position, cfg: ObsConfig) -> np.ndarray:
    """Horizontal ray distances to the nearest obstacle, capped at range."""
    out = np.full(cfg.ray_count, cfg.sensing_range)
    p = np.asarray(position, dtype=float)
    for k in range(cfg.ray_count):
        ang = 2.0 * np.pi * k / cfg.ray_count
        end = p + cfg.sensing_range * np.array([np.cos(ang), np.sin(ang), 0.0])
        t = world.field.segment_entry(p, end)
        if t is not None:
            out[k] = t * cfg.sensing_range
    return out


def build_mdp_tokens(
    agent_index: int,
    observations,
    positions,
    alive,
    prev_actions,
    prev_rewards,
    cfg: ObsConfig,
) -> list[MdpFeature]:
    """Token triples for the agent (slot 0) and its neighbor slots (1..n).

    ``observations`` holds each agent's already-built observation vector;
    ``prev_actions``/``prev_rewards`` are the previous step's per-agent action
    vectors and total rewards (zeros at the first step). Padded slots are
    all-zero with presence flag 0.
    """
    neigh = nearest_neighbors(positions, agent_index, cfg, alive)
    obs_dim = len(observations[agent_index])
    tokens: list[MdpFeature] = []

    def _token(j: int) -> MdpFeature:
        return MdpFeature(
            obs_aug=np.concatenate([observations[j], [1.0]]),
            act_aug=np.concatenate([np.asarray(prev_actions[j], dtype=float), [1.0]]),
            rew=float(prev_rewards[j]),
        )

    tokens.append(_token(agent_index))
    for j in neigh.ids:
        tokens.append(_token(j))
    for _ in range(cfg.n_neighbors - len(neigh.ids)):
        tokens.append(
            MdpFeature(
                obs_aug=np.zeros(obs_dim + 1),
                act_aug=np.zeros(ACTION_DIM + 1),
                rew=0.0,
            )
        )
    return tokens


def stack_tokens(tokens: list[MdpFeature]) -> dict[str, np.ndarray]:
    """Dense arrays for one token set: obs (n+1, D+1), act (n+1, 5), rew (n+1, 1)."""
    return {
        "obs": np.stack([t.obs_aug for t in tokens]),
        "act": np.stack([t.act_aug for t in tokens]),
        "rew": np.array([[t.rew] for t in tokens]),
    }


class ObservationAssembler:
    """Tracks per-agent histories and produces observations and token sets.

    One assembler serves one episode of one world; call ``observe_all`` each
    step before acting, then ``record_step`` with the executed actions and
    rewards.
    """

    def __init__(self, num_agents: int, cfg: ObsConfig, world=None):
        cfg.validate()
        self.cfg = cfg
        self.num_agents = num_agents
        self.world = world
        self.histories = [ActionHistory(cfg.history_len) for _ in range(num_agents)]
        self.prev_actions = [np.zeros(ACTION_DIM) for _ in range(num_agents)]
        self.prev_rewards = [0.0 for _ in range(num_agents)]

    def observe_all(self, ws: WorldState) -> list[np.ndarray]:
        obs = []
        for i, st in enumerate(ws.uav_states):
            rays = None
            if self.cfg.ray_sensor and self.world is not None:
                rays = ray_readings(self.world, st.position, self.cfg)
            obs.append(build_observation(st, self.histories[i], self.cfg, rays))
        return obs

    def tokens_for_all(self, ws: WorldState, observations) -> list[list[MdpFeature]]:
        positions = [st.position for st in ws.uav_states]
        alive = [not d for d in ws.done_flags]
        return [
            build_mdp_tokens(
                i, observations, positions, alive, self.prev_actions, self.prev_rewards, self.cfg
            )
            for i in range(self.num_agents)
        ]

    def record_step(self, actions, rewards) -> None:
        """Store executed actions and total rewards for the next step's tokens."""
        for i in range(self.num_agents):
            a = np.asarray(actions[i], dtype=float)
            self.histories[i].append(a)
            self.prev_actions[i] = a.copy()
            self.prev_rewards[i] = float(rewards[i])
