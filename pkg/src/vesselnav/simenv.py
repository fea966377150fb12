"""Vessel navigation environment over a georeferenced water grid.

A *plan* is one origin-to-destination run: endpoints are sampled, the planner
path between their cells is simplified into waypoints, obstacles are placed,
and the agent then chases a chain of intermediate goals. Each *episode* inside
a plan targets one goal chosen from the remaining waypoints; arriving at a
non-final goal immediately starts the next episode. A plan succeeds only when
the agent enters the destination circle.

The observation is a square local view centered on the agent, one pixel per
map cell, rendered north-up with four binary channels: land, water, obstacle,
goal. Pixels beyond the map edge render as land.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .gridmap import (Cell, DestinationCircle, GeoMap, ObstacleSet, Position,
                      place_obstacles, sample_endpoints)
from .planner import ApspTables, lardp, path_cells, rdp, select_goal

CH_LAND = 0
CH_WATER = 1
CH_OBSTACLE = 2
CH_GOAL = 3

# discrete headings, order fixed: N S E W NE NW SE SW
ACTION_NAMES_8 = ("N", "S", "E", "W", "NE", "NW", "SE", "SW")
ACTION_DELTAS_8 = ((0, 1), (0, -1), (1, 0), (-1, 0),
                   (1, 1), (-1, 1), (1, -1), (-1, -1))


class Outcome(enum.Enum):
    HIT_LAND = "HitLand"
    HIT_OBSTACLE = "HitObstacle"
    ARRIVE_AT_TARGET = "ArriveAtTarget"
    VANISH_TARGET = "VanishTarget"
    NORMAL_MOVEMENT = "NormalMovement"


class StepAfterTerminalError(RuntimeError):
    """step() called on a plan that already ended."""


def make_local_view(geomap: GeoMap, agent: Position, obstacles: ObstacleSet,
                    goal: DestinationCircle, view_cells: int = 51) -> np.ndarray:
    """Render the local view around the agent.

    Returns float32 (view_cells, view_cells, 4). Row 0 is the northernmost
    pixel row; the agent sits in the center pixel's cell.
    """
    if view_cells % 2 != 1:
        raise ValueError("view must have odd side length")
    half = view_cells // 2
    ax, ay = geomap.cell_of(agent)
    view = np.zeros((view_cells, view_cells, 4), dtype=np.float32)

    # land channel: grid window flipped north-up, off-map pixels land
    land = np.ones((view_cells, view_cells), dtype=np.float32)
    x_lo, x_hi = ax - half, ax + half + 1
    y_lo, y_hi = ay - half, ay + half + 1
    gx_lo, gx_hi = max(0, x_lo), min(geomap.width, x_hi)
    gy_lo, gy_hi = max(0, y_lo), min(geomap.height, y_hi)
    if gx_lo < gx_hi and gy_lo < gy_hi:
        block = geomap.cells[gy_lo:gy_hi, gx_lo:gx_hi].astype(np.float32)
        rows = slice(y_hi - gy_hi, y_hi - gy_lo)   # after north-up flip
        cols = slice(gx_lo - x_lo, gx_hi - x_lo)
        land[rows, cols] = block[::-1, :]
    view[:, :, CH_LAND] = land
    view[:, :, CH_WATER] = 1.0 - land

    for ox, oy in obstacles.cells:
        r = half - (oy - ay)
        c = half + (ox - ax)
        if 0 <= r < view_cells and 0 <= c < view_cells:
            view[r, c, CH_OBSTACLE] = 1.0

    # goal disc: pixels whose cell center lies within the goal radius
    gx, gy = goal.center
    span = int(np.ceil(goal.radius / geomap.cell_size)) + 1
    cgx = int(np.floor((gx - geomap.origin_lon) / geomap.cell_size))
    cgy = int(np.floor((gy - geomap.origin_lat) / geomap.cell_size))
    for iy in range(cgy - span, cgy + span + 1):
        cy = geomap.origin_lat + (iy + 0.5) * geomap.cell_size
        for ix in range(cgx - span, cgx + span + 1):
            cx = geomap.origin_lon + (ix + 0.5) * geomap.cell_size
            if (cx - gx) ** 2 + (cy - gy) ** 2 <= goal.radius ** 2:
                r = half - (iy - ay)
                c = half + (ix - ax)
                if 0 <= r < view_cells and 0 <= c < view_cells:
                    view[r, c, CH_GOAL] = 1.0
    return view


@dataclass
class EnvConfig:
    action_mode: str = "discrete"        # "discrete" or "continuous"
    step_size: float = 0.001             # per-axis step, or max velocity
    view_cells: int = 51
    goal_radius: float = 0.002
    max_dist: float = 0.01
    n_obstacles: int = 30
    simplify: str = "rdp"                # "rdp" or "lardp"
    simplify_threshold: float = 0.0025
    step_cap: int = 200                  # per-episode, cap-out fails the plan
    max_episodes: int = 50               # safety bound on episode chaining
    kappa: Optional[float] = None        # shaping gain, default 1/(sqrt(2)*step)
    sample_attempts: int = 10_000

    def __post_init__(self) -> None:
        if self.action_mode not in ("discrete", "continuous"):
            raise ValueError(f"unknown action mode {self.action_mode!r}")
        if self.simplify not in ("rdp", "lardp"):
            raise ValueError(f"unknown simplifier {self.simplify!r}")
        if self.kappa is None:
            # largest per-step displacement, so shaping stays within [-1, 1]
            self.kappa = 1.0 / (np.sqrt(2.0) * self.step_size)


@dataclass
class StepLog:
    t: int
    position: Position
    outcome: Outcome


class VesselEnv:
    """Plan/episode/step lifecycle around one map and one planner table."""

    def __init__(self, geomap: GeoMap, apsp: ApspTables, config: EnvConfig,
                 fixed_obstacles: Optional[ObstacleSet] = None):
        if apsp.map_digest != geomap.digest():
            raise ValueError("planner tables were built for a different map")
        self.geomap = geomap
        self.apsp = apsp
        self.config = config
        self.fixed_obstacles = fixed_obstacles
        self.view_half = (config.view_cells // 2) * geomap.cell_size
        self._active = False

    # -- plan lifecycle ----------------------------------------------------

    def reset_plan(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.config
        origin, dest = sample_endpoints(
            self.geomap, cfg.max_dist, rng, radius=cfg.goal_radius,
            reachable=lambda a, b: np.isfinite(self.apsp.distance(a, b)),
            attempts=cfg.sample_attempts)
        origin_cell = self.geomap.cell_of(origin)
        dest_cell = self.geomap.cell_of(dest.center)
        cells = path_cells(self.apsp, origin_cell, dest_cell)
        polyline = [self.apsp.cell_center(c) for c in cells]
        if len(polyline) == 1:
            polyline = polyline * 2
        if cfg.simplify == "lardp":
            waypoints = lardp(polyline, self.geomap, cfg.simplify_threshold)
        else:
            waypoints = rdp(polyline, cfg.simplify_threshold)
        # pin exact endpoints so success is judged against the true circle
        waypoints[0] = origin
        waypoints[-1] = dest.center

        if self.fixed_obstacles is not None:
            obstacles = self.fixed_obstacles
        else:
            obstacles = place_obstacles(self.geomap, cfg.n_obstacles,
                                        {origin_cell, dest_cell}, rng)

        self.origin = origin
        self.destination = dest
        self.waypoints = waypoints
        self.obstacles = obstacles
        self.agent = origin
        self._remaining = list(waypoints[1:])  # agent already stands on [0]
        self.episode_index = 0
        self.steps_in_episode = 0
        self.plan_steps = 0
        self.trajectory: List[StepLog] = []
        self._active = True
        self._succeeded = False
        self._capped = False
        self.episode_ended = False
        self.episode_terminal = False
        self._choose_goal()
        return self._render()

    def _choose_goal(self) -> None:
        choice = select_goal(self.agent, self.view_half, self._remaining)
        self._goal_index = choice.waypoint_index
        self.goal = DestinationCircle(choice.position, self.config.goal_radius)

    @property
    def goal_is_final(self) -> bool:
        return (self._goal_index is not None
                and self._goal_index == len(self._remaining) - 1)

    @property
    def plan_done(self) -> bool:
        return not self._active

    @property
    def plan_succeeded(self) -> bool:
        return self._succeeded

    @property
    def plan_capped(self) -> bool:
        return self._capped

    # -- stepping ----------------------------------------------------------

    def _decode(self, action) -> Tuple[float, float]:
        step = self.config.step_size
        if self.config.action_mode == "discrete":
            idx = int(action)
            if not 0 <= idx < len(ACTION_DELTAS_8):
                raise ValueError(f"discrete action index {idx} out of range")
            dx, dy = ACTION_DELTAS_8[idx]
            return dx * step, dy * step
        vel = np.clip(np.asarray(action, dtype=np.float64), -step, step)
        if vel.shape != (2,):
            raise ValueError("continuous action must have two components")
        return float(vel[0]), float(vel[1])

    def step(self, action) -> Tuple[np.ndarray, float, Outcome]:
        if not self._active:
            raise StepAfterTerminalError("plan already ended")
        dx, dy = self._decode(action)
        prev = self.agent
        new = (prev[0] + dx, prev[1] + dy)
        goal = self.goal

        if not self.geomap.in_box(new) or self.geomap.is_land_cell(
                self._cell_clamped(new)):
            outcome = Outcome.HIT_LAND
        elif self.geomap.in_box(new) and self.geomap.cell_of(new) in self.obstacles.cell_set:
            outcome = Outcome.HIT_OBSTACLE
        elif np.hypot(new[0] - goal.center[0], new[1] - goal.center[1]) <= goal.radius:
            outcome = Outcome.ARRIVE_AT_TARGET
        elif (abs(goal.center[0] - new[0]) > self.view_half
              or abs(goal.center[1] - new[1]) > self.view_half):
            outcome = Outcome.VANISH_TARGET
        else:
            outcome = Outcome.NORMAL_MOVEMENT

        if outcome == Outcome.ARRIVE_AT_TARGET:
            reward = 1.0
        elif outcome == Outcome.NORMAL_MOVEMENT:
            d_prev = np.hypot(prev[0] - goal.center[0], prev[1] - goal.center[1])
            d_new = np.hypot(new[0] - goal.center[0], new[1] - goal.center[1])
            reward = float(self.config.kappa * (d_prev - d_new))
        else:
            reward = -1.0

        self.agent = new
        self.plan_steps += 1
        self.steps_in_episode += 1
        self.trajectory.append(StepLog(self.plan_steps, new, outcome))
        # terminal = a real environment outcome; a step-cap truncation ends
        # the episode too but learners must keep bootstrapping through it
        self.episode_terminal = outcome != Outcome.NORMAL_MOVEMENT
        self.episode_ended = self.episode_terminal

        if outcome in (Outcome.HIT_LAND, Outcome.HIT_OBSTACLE, Outcome.VANISH_TARGET):
            self._active = False
        elif outcome == Outcome.ARRIVE_AT_TARGET:
            if self.goal_is_final:
                self._active = False
                self._succeeded = True
            else:
                if self._goal_index is not None:
                    del self._remaining[:self._goal_index + 1]
                self.episode_index += 1
                self.steps_in_episode = 0
                if self.episode_index >= self.config.max_episodes:
                    self._active = False  # runaway chaining guard
                else:
                    self._choose_goal()
        elif self.steps_in_episode >= self.config.step_cap:
            self._active = False  # capped-out episode fails the plan
            self._capped = True
            self.episode_ended = True

        return self._render(), reward, outcome

    def _cell_clamped(self, pos: Position) -> Cell:
        return self.geomap.cell_of(pos)

    def _render(self) -> np.ndarray:
        # a plan that ended off-map still returns a final (unused) view
        g = self.geomap
        lon = min(max(self.agent[0], g.origin_lon),
                  g.origin_lon + g.width * g.cell_size)
        lat = min(max(self.agent[1], g.origin_lat),
                  g.origin_lat + g.height * g.cell_size)
        return make_local_view(g, (lon, lat), self.obstacles, self.goal,
                               self.config.view_cells)

    def write_trajectory(self, path) -> None:
        """Write the current plan's step log as "t,lon,lat,outcome" rows."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("t,lon,lat,outcome\n")
            for log in self.trajectory:
                fh.write(f"{log.t},{log.position[0]!r},{log.position[1]!r},"
                         f"{log.outcome.value}\n")
