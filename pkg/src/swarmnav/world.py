"""Deterministic kinematic multi-UAV world.

Each drone integrates a commanded velocity (direction plus normalized
magnitude) with a fixed timestep, is stopped at obstacle surfaces, and
collects a three-part reward: progress toward its goal, a collision penalty,
and a free-space bonus. Attitude (Euler angles, angular rates) is carried in
the state for observation purposes only; translation is point-mass.

Collisions do not terminate an episode: the drone is stopped at the surface,
its velocity is zeroed, and the penalty applies on every colliding step. A
drone that reaches its goal freezes and emits zero reward afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, NonFiniteAction, TooManyAgents
from .geometry import ObstacleField
from .scenario import ScenarioMap

# Pull-back along the motion direction after stopping at a surface, so the
# resting point sits just outside the obstacle.
_SURFACE_EPS = 1e-7


@dataclass(frozen=True)
class UavState:
    position: tuple[float, float, float]
    euler: tuple[float, float, float]
    velocity: tuple[float, float, float]
    angular_velocity: tuple[float, float, float]

    def as_vector(self) -> np.ndarray:
        """12-entry state: position, Euler angles, velocity, angular velocity."""
        return np.array(self.position + self.euler + self.velocity + self.angular_velocity)


@dataclass(frozen=True)
class ControlAction:
    """Direction components plus a normalized speed magnitude, all in [-1, 1]."""

    direction: tuple[float, float, float]
    magnitude: float

    @classmethod
    def from_array(cls, a) -> "ControlAction":
        a = np.asarray(a, dtype=float)
        if a.shape != (4,):
            raise DimensionMismatch(f"action must have 4 channels, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise NonFiniteAction(f"action contains non-finite values: {a}")
        c = np.clip(a, -1.0, 1.0)
        return cls(direction=(float(c[0]), float(c[1]), float(c[2])), magnitude=float(c[3]))

    def as_array(self) -> np.ndarray:
        return np.array(self.direction + (self.magnitude,))


@dataclass(frozen=True)
class RewardConfig:
    lambda_transfer: float = 0.45
    lambda_collision: float = 0.30
    lambda_free: float = 0.25
    r_collision: float = -1.0
    r_free: float = 0.04
    clearance_free: float = 0.5
    # Alternative sign convention: the progress term becomes the raw distance
    # change d_now - d_prev (negative when approaching). Default rewards
    # approach.
    literal_distance_sign: bool = False

    def validate(self) -> None:
        if self.r_collision >= 0:
            raise ValueError("r_collision must be negative")
        if self.r_free <= 0:
            raise ValueError("r_free must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    r_trans: float
    r_col_applied: float
    r_free_applied: float
    r_total: float


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    v_max: float = 3.0
    d_success: float = 1.0
    max_steps: int = 400
    uav_collisions: bool = False
    uav_radius: float = 0.3


@dataclass(frozen=True)
class WorldState:
    scenario_id: str
    uav_states: tuple[UavState, ...]
    goals: tuple[tuple[float, float, float], ...]
    step_index: int
    done_flags: tuple[bool, ...]
    rng_state: int

    @property
    def all_done(self) -> bool:
        return all(self.done_flags)


def clearance(position, scenario: ScenarioMap) -> float:
    """Distance from a point to the nearest obstacle surface of a map.

    Negative inside an obstacle; +inf for an empty map. Prefer
    ``World.clearance`` in loops (it reuses the compiled obstacle field).
    """
    return scenario.obstacle_field().signed_distance(position)


def transfer_reward(x_prev, x_now, x_target, literal_distance_sign: bool = False) -> float:
    """Progress-toward-goal reward with a near-goal bonus.

    Default sign: positive when the distance to the target shrinks. The bonus
    term max(0, 2 - d^2) activates when the drone is within sqrt(2) of the
    target.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    x_now = np.asarray(x_now, dtype=float)
    x_target = np.asarray(x_target, dtype=float)
    d_prev = float(np.linalg.norm(x_target - x_prev))
    d_now = float(np.linalg.norm(x_target - x_now))
    change = d_now - d_prev if literal_distance_sign else d_prev - d_now
    return change + max(0.0, 2.0 - d_now * d_now)


class World:
    """Steps all drones of one scenario; states are immutable snapshots."""

    def __init__(
        self,
        scenario: ScenarioMap,
        reward_cfg: RewardConfig | None = None,
        world_cfg: WorldConfig | None = None,
    ):
        self.scenario = scenario
        self.reward_cfg = reward_cfg or RewardConfig()
        self.world_cfg = world_cfg or WorldConfig()
        self.field: ObstacleField = scenario.obstacle_field()
        self.arena = np.array([scenario.spec.arena_x, scenario.spec.arena_y, scenario.spec.altitude_max])

    def clearance(self, position) -> float:
        """Distance to the nearest obstacle surface; +inf on an empty map."""
        return self.field.signed_distance(position)

    def reset(self, num_agents: int, seed: int = 0) -> WorldState:
        if num_agents > len(self.scenario.spawn_points):
            raise TooManyAgents(
                f"{num_agents} agents requested, map has {len(self.scenario.spawn_points)} spawn points"
            )
        zeros = (0.0, 0.0, 0.0)
        states = tuple(
            UavState(position=self.scenario.spawn_points[i], euler=zeros, velocity=zeros, angular_velocity=zeros)
            for i in range(num_agents)
        )
        return WorldState(
            scenario_id=self.scenario.scenario_id,
            uav_states=states,
            goals=self.scenario.goal_points[:num_agents],
            step_index=0,
            done_flags=(False,) * num_agents,
            rng_state=seed,
        )

    def _advance(self, pos: np.ndarray, vel: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        """Move one drone for one timestep; returns (position, velocity, collided)."""
        target = pos + vel * self.world_cfg.dt
        target = np.clip(target, 0.0, self.arena)
        t_hit = self.field.segment_entry(pos, target) if not self.field.empty else None
        if t_hit is None:
            effective = (target - pos) / self.world_cfg.dt
            return target, effective, False
        seg = target - pos
        length = float(np.linalg.norm(seg))
        if length > 0.0:
            t_stop = max(t_hit - _SURFACE_EPS / length, 0.0)
        else:
            t_stop = 0.0
        stopped = pos + t_stop * seg
        return stopped, np.zeros(3), True

    def step(
        self, ws: WorldState, actions
    ) -> tuple[WorldState, list[RewardBreakdown], list[bool]]:
        m = len(ws.uav_states)
        if len(actions) != m:
            raise DimensionMismatch(f"{len(actions)} actions for {m} agents")
        cfg = self.world_cfg
        rc = self.reward_cfg

        new_states: list[UavState] = []
        new_done: list[bool] = []
        rewards: list[RewardBreakdown] = []
        positions: list[np.ndarray] = []
        collided_flags: list[bool] = []

        for i in range(m):
            st = ws.uav_states[i]
            if ws.done_flags[i]:
                new_states.append(st)
                new_done.append(True)
                rewards.append(RewardBreakdown(0.0, 0.0, 0.0, 0.0))
                positions.append(np.array(st.position))
                collided_flags.append(False)
                continue

            act = actions[i]
            if not isinstance(act, ControlAction):
                act = ControlAction.from_array(act)
            direction = np.array(act.direction)
            norm = float(np.linalg.norm(direction))
            speed = cfg.v_max * (act.magnitude + 1.0) / 2.0
            vel = direction / norm * speed if norm > 1e-12 else np.zeros(3)

            pos = np.array(st.position)
            new_pos, eff_vel, collided = self._advance(pos, vel)
            positions.append(new_pos)
            collided_flags.append(collided)

            r_trans = transfer_reward(pos, new_pos, ws.goals[i], rc.literal_distance_sign)
            r_col = rc.r_collision if collided else 0.0
            clear = self.field.signed_distance(new_pos)
            r_free = rc.r_free if clear > rc.clearance_free else 0.0
            r_total = rc.lambda_transfer * r_trans + rc.lambda_collision * r_col + rc.lambda_free * r_free
            rewards.append(RewardBreakdown(r_trans, r_col, r_free, r_total))

            speed_now = float(np.linalg.norm(eff_vel))
            if speed_now > 1e-12:
                yaw = math.atan2(eff_vel[1], eff_vel[0])
            else:
                yaw = st.euler[2]
            d_yaw = math.remainder(yaw - st.euler[2], 2.0 * math.pi)
            new_states.append(
                UavState(
                    position=tuple(float(v) for v in new_pos),
                    euler=(0.0, 0.0, yaw),
                    velocity=tuple(float(v) for v in eff_vel),
                    angular_velocity=(0.0, 0.0, d_yaw / cfg.dt),
                )
            )
            dist_goal = float(np.linalg.norm(new_pos - np.array(ws.goals[i])))
            new_done.append(dist_goal < cfg.d_success)

        if cfg.uav_collisions:
            self._resolve_uav_collisions(ws, positions, collided_flags, new_states, new_done, rewards)

        step_index = ws.step_index + 1
        if step_index >= cfg.max_steps:
            new_done = [True] * m
        next_state = WorldState(
            scenario_id=ws.scenario_id,
            uav_states=tuple(new_states),
            goals=ws.goals,
            step_index=step_index,
            done_flags=tuple(new_done),
            rng_state=ws.rng_state,
        )
        return next_state, rewards, list(new_done)

    def _resolve_uav_collisions(self, ws, positions, collided_flags, new_states, new_done, rewards):
        """Optional pairwise separation; both drones take the collision penalty."""
        m = len(positions)
        rc = self.reward_cfg
        min_sep = 2.0 * self.world_cfg.uav_radius
        for i in range(m):
            for j in range(i + 1, m):
                if ws.done_flags[i] or ws.done_flags[j]:
                    continue
                delta = positions[j] - positions[i]
                dist = float(np.linalg.norm(delta))
                if dist >= min_sep:
                    continue
                push = delta / dist * (min_sep - dist) / 2.0 if dist > 1e-12 else np.array([min_sep / 2, 0.0, 0.0])
                positions[i] = np.clip(positions[i] - push, 0.0, self.arena)
                positions[j] = np.clip(positions[j] + push, 0.0, self.arena)
                for k in (i, j):
                    old = rewards[k]
                    if old.r_col_applied == 0.0:
                        r_total = (
                            rc.lambda_transfer * old.r_trans
                            + rc.lambda_collision * rc.r_collision
                            + rc.lambda_free * old.r_free_applied
                        )
                        rewards[k] = RewardBreakdown(old.r_trans, rc.r_collision, old.r_free_applied, r_total)
                    new_states[k] = replace(
                        new_states[k],
                        position=tuple(float(v) for v in positions[k]),
                        velocity=(0.0, 0.0, 0.0),
                    )
                    dist_goal = float(np.linalg.norm(positions[k] - np.array(ws.goals[k])))
                    new_done[k] = dist_goal < self.world_cfg.d_success
