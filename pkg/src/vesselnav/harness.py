"""Experiment harness: training, evaluation, density studies, toy ablation.

All randomness descends from one integer seed through named sub-streams, so
repeated runs with the same configuration produce byte-identical CSV output.
Training runs in batches: each batch is a block of exploratory training plans
followed by a block of greedy test plans, one metrics row and one checkpoint
per batch. The best agent is the checkpoint of the batch with the highest test
success rate, earliest batch on ties.
"""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import neural, toy
from .agents import (CONTINUOUS, DISCRETE_4, DISCRETE_8, DdpgAgent, DdpgConfig,
                     DqnAgent, DqnConfig, Transition)
from .gridmap import GeoMap, ObstacleSet, load_map
from .planner import MODES, PLAIN, ApspTables, build_apsp, path_cells
from .simenv import EnvConfig, Outcome, VesselEnv
from .gridmap import sample_endpoints

AGENT_KINDS = ("a1", "a2", "b1", "b2", "c1", "c2")

# column order mirrors the outcome precedence order
OUTCOME_COLUMNS = (Outcome.HIT_LAND, Outcome.HIT_OBSTACLE,
                   Outcome.ARRIVE_AT_TARGET, Outcome.VANISH_TARGET,
                   Outcome.NORMAL_MOVEMENT)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent deterministic generator for one named role of a run."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), zlib.crc32(name.encode("ascii"))]))


def ratd(successes: int, total: int) -> float:
    """Success percentage: 100 * successes / total."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= successes <= total:
        raise ValueError("successes must lie in [0, total]")
    return 100.0 * successes / total


@dataclass
class MetricsRow:
    batch: int
    ratd: float
    mean_plan_steps: float
    outcome_counts: Dict[Outcome, int]

    def csv_line(self) -> str:
        counts = ",".join(str(self.outcome_counts.get(o, 0))
                          for o in OUTCOME_COLUMNS)
        return f"{self.batch},{self.ratd:.6f},{self.mean_plan_steps:.6f},{counts}"


METRICS_HEADER = ("batch,ratd,mean_plan_steps,hit_land,hit_obstacle,"
                  "arrive_at_target,vanish_target,normal_movement")


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


@dataclass
class TrainConfig:
    agent: str = "a1"
    map_path: Optional[str] = None
    seed: int = 0
    batches: int = 4
    train_plans: int = 200
    test_plans: int = 100
    max_dist: float = 0.01
    planner_mode: str = PLAIN
    simplify: str = "rdp"
    n_obstacles: int = 30
    goal_radius: float = 0.002
    view_cells: int = 51
    step_cap: int = 200
    max_episodes: int = 50
    gamma: float = 0.99
    batch_size: int = 32
    sync_every: int = 200
    buffer_capacity: int = 100_000
    explore_horizon: int = 20_000
    noise_kind: str = "ou"
    net_dtype: str = "float32"
    out_dir: Optional[str] = None
    cache_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.agent!r}")
        if self.planner_mode not in MODES:
            raise ValueError(f"unknown planner mode {self.planner_mode!r}")


def agent_action_setup(kind: str) -> Tuple[str, float, bool]:
    """(action_mode, step_size, sar) for one of the six named agents."""
    mode = "continuous" if kind.startswith("c") else "discrete"
    step = 0.0005 if kind.startswith("b") else 0.001
    sar = kind.endswith("2")
    return mode, step, sar


def build_agent(kind: str, config: TrainConfig, rng: np.random.Generator):
    mode, step, sar = agent_action_setup(kind)
    dtype = np.dtype(config.net_dtype)
    shape = (config.view_cells, config.view_cells, 4)
    if mode == "discrete":
        net = neural.q_network(config.view_cells, 4, 8, rng=rng, dtype=dtype)
        return DqnAgent(DqnConfig(
            n_actions=8, state_shape=shape, space=DISCRETE_8, sar=sar,
            gamma=config.gamma, batch_size=config.batch_size,
            sync_every=config.sync_every, buffer_capacity=config.buffer_capacity,
            explore_horizon=config.explore_horizon), net)
    actor = neural.actor_network(config.view_cells, 4, step, rng=rng, dtype=dtype)
    critic = neural.critic_network(config.view_cells, 4, rng=rng, dtype=dtype)
    return DdpgAgent(DdpgConfig(
        state_shape=shape, max_velocity=step, sar=sar, gamma=config.gamma,
        batch_size=config.batch_size, sync_every=config.sync_every,
        buffer_capacity=config.buffer_capacity,
        noise_kind=config.noise_kind), actor, critic)


def build_env(geomap: GeoMap, apsp: ApspTables, config: TrainConfig,
              fixed_obstacles: Optional[ObstacleSet] = None) -> VesselEnv:
    mode, step, _ = agent_action_setup(config.agent)
    env_cfg = EnvConfig(
        action_mode=mode, step_size=step, view_cells=config.view_cells,
        goal_radius=config.goal_radius, max_dist=config.max_dist,
        n_obstacles=config.n_obstacles, simplify=config.simplify,
        step_cap=config.step_cap, max_episodes=config.max_episodes)
    return VesselEnv(geomap, apsp, env_cfg, fixed_obstacles)


def _select(agent, view, plan_number: int, rng: np.random.Generator,
            greedy: bool):
    if isinstance(agent, DqnAgent):
        return agent.select(view, plan_number, rng, greedy=greedy)
    return agent.select(view, rng, greedy=greedy)


@dataclass
class PlanOutcome:
    success: bool
    steps: int
    final: Outcome


def run_plan(env: VesselEnv, agent, rng: np.random.Generator,
             plan_number: int = 0, train: bool = False) -> PlanOutcome:
    """Execute one full plan; when training, learn after every step."""
    view = env.reset_plan(rng)
    if isinstance(agent, DdpgAgent):
        agent.reset_noise()
    batch_size = agent.config.batch_size
    while not env.plan_done:
        action = _select(agent, view, plan_number, rng, greedy=not train)
        next_view, reward, outcome = env.step(action)
        if train:
            agent.observe(Transition(view, action, reward, next_view,
                                     env.episode_terminal))
            if len(agent.buffer) >= batch_size:
                agent.train_step(rng)
        view = next_view
    return PlanOutcome(env.plan_succeeded, env.plan_steps,
                       env.trajectory[-1].outcome)


def _test_block(env: VesselEnv, agent, seed: int, label: str,
                n_plans: int) -> Tuple[List[PlanOutcome], MetricsRow]:
    outcomes = []
    for p in range(n_plans):
        rng = rng_stream(seed, f"{label}.plan{p}")
        outcomes.append(run_plan(env, agent, rng, train=False))
    counts = {o: 0 for o in OUTCOME_COLUMNS}
    for po in outcomes:
        counts[po.final] += 1
    successes = sum(1 for po in outcomes if po.success)
    row = MetricsRow(0, ratd(successes, n_plans),
                     float(np.mean([po.steps for po in outcomes])), counts)
    return outcomes, row


@dataclass
class TrainResult:
    rows: List[MetricsRow]
    best_batch: int
    checkpoint_paths: List[str]
    metrics_path: Optional[str]


def train(config: TrainConfig, geomap: Optional[GeoMap] = None) -> TrainResult:
    if geomap is None:
        if config.map_path is None:
            raise ValueError("need a map path or a GeoMap")
        geomap = load_map(config.map_path)
    apsp = build_apsp(geomap, config.planner_mode, cache_dir=config.cache_dir)
    env = build_env(geomap, apsp, config)
    agent = build_agent(config.agent, config, rng_stream(config.seed, "init"))

    if config.out_dir is not None:
        os.makedirs(config.out_dir, exist_ok=True)
    rows: List[MetricsRow] = []
    checkpoint_paths: List[str] = []
    plan_counter = 0
    for b in range(1, config.batches + 1):
        train_rng = rng_stream(config.seed, f"train.batch{b}")
        for _ in range(config.train_plans):
            run_plan(env, agent, train_rng, plan_counter, train=True)
            plan_counter += 1
        _, row = _test_block(env, agent, config.seed, f"test.batch{b}",
                             config.test_plans)
        row.batch = b
        rows.append(row)
        if config.out_dir is not None:
            path = os.path.join(config.out_dir, f"checkpoint_{b}.bin")
            mode, step, sar = agent_action_setup(config.agent)
            neural.save_checkpoint(path, agent.checkpoint_networks(), meta={
                "agent": config.agent, "action_mode": mode,
                "step_size": repr(step), "sar": "1" if sar else "0",
                "batch": str(b), "seed": str(config.seed),
                "view_cells": str(config.view_cells),
                "net_dtype": config.net_dtype,
            })
            checkpoint_paths.append(path)

    best = best_batch(rows)
    metrics_path = None
    if config.out_dir is not None:
        metrics_path = os.path.join(config.out_dir, "metrics.csv")
        write_metrics_csv(rows, metrics_path)
        with open(os.path.join(config.out_dir, "best.txt"), "w",
                  encoding="ascii") as fh:
            fh.write(f"{best}\n")
    return TrainResult(rows, best, checkpoint_paths, metrics_path)


def best_batch(rows: Sequence[MetricsRow]) -> int:
    """Batch number with the highest test success rate, earliest on ties."""
    if not rows:
        raise ValueError("no metrics rows")
    best = rows[0]
    for row in rows[1:]:
        if row.ratd > best.ratd:
            best = row
    return best.batch


def load_agent_from_checkpoint(path, config: TrainConfig):
    """Rebuild the right agent kind from checkpoint metadata and restore it."""
    meta, nets = neural.load_checkpoint(path)
    kind = meta.get("agent")
    if kind not in AGENT_KINDS:
        raise neural.CheckpointMismatchError(f"checkpoint has no agent kind: {path}")
    cfg_kind = TrainConfig(**{**config.__dict__, "agent": kind})
    agent = build_agent(kind, cfg_kind, rng_stream(config.seed, "eval.init"))
    agent.restore(nets)
    return kind, agent


def evaluate(checkpoint_path, config: TrainConfig,
             geomap: Optional[GeoMap] = None,
             agent=None) -> Tuple[MetricsRow, List[PlanOutcome]]:
    """Greedy test plans for a stored (or given) agent on a map."""
    if geomap is None:
        if config.map_path is None:
            raise ValueError("need a map path or a GeoMap")
        geomap = load_map(config.map_path)
    if agent is None:
        kind, agent = load_agent_from_checkpoint(checkpoint_path, config)
        config = TrainConfig(**{**config.__dict__, "agent": kind})
    apsp = build_apsp(geomap, config.planner_mode, cache_dir=config.cache_dir)
    env = build_env(geomap, apsp, config)
    outcomes, row = _test_block(env, agent, config.seed, "eval",
                                config.test_plans)
    if config.out_dir is not None:
        os.makedirs(config.out_dir, exist_ok=True)
        write_metrics_csv([row], os.path.join(config.out_dir, "eval_metrics.csv"))
        with open(os.path.join(config.out_dir, "eval_plans.csv"), "w",
                  encoding="ascii") as fh:
            fh.write("plan,outcome,steps,success\n")
            for i, po in enumerate(outcomes):
                fh.write(f"{i},{po.final.value},{po.steps},{int(po.success)}\n")
    return row, outcomes


def density_map(geomap: GeoMap, apsp: ApspTables, n_pairs: int,
                max_dist: float, seed: int) -> np.ndarray:
    """Per-cell visit counts over planner paths between sampled endpoints."""
    counts = np.zeros((geomap.height, geomap.width), dtype=np.int64)
    for p in range(n_pairs):
        rng = rng_stream(seed, f"density.pair{p}")
        origin, dest = sample_endpoints(
            geomap, max_dist, rng,
            reachable=lambda a, b: np.isfinite(apsp.distance(a, b)))
        src = geomap.cell_of(origin)
        dst = geomap.cell_of(dest.center)
        for (ix, iy) in path_cells(apsp, src, dst):
            counts[iy, ix] += 1
    return counts


def write_pgm(counts: np.ndarray, path) -> None:
    """8-bit binary PGM of the counts grid, normalized to the max count."""
    peak = int(counts.max())
    if peak > 0:
        img = (counts.astype(np.float64) / peak * 255.0).round().astype(np.uint8)
    else:
        img = np.zeros_like(counts, dtype=np.uint8)
    img = img[::-1, :]  # grid row 0 is the southern edge; images go north-up
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


@dataclass
class ToyRow:
    epoch: int
    variant: str
    kind: str
    ratd: float

    def csv_line(self) -> str:
        return f"{self.epoch},{self.variant},{self.kind},{self.ratd:.6f}"


TOY_HEADER = "epoch,variant,map_kind,ratd"
TOY_VARIANTS = ("plain", "sar")


def write_toy_csv(rows: Sequence[ToyRow], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(TOY_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def toy_experiment(epochs: int = 20, train_eps: int = 200, test_eps: int = 100,
                   variants: Sequence[str] = TOY_VARIANTS,
                   seed: int = 0) -> List[ToyRow]:
    """Train on horizontal maps only; test greedily on all three kinds.

    Returns one row per (epoch, variant, map kind). The exploration schedule
    decays linearly across all training episodes: at gridworld scale, state
    coverage limits learning, and stretching the decay measurably beats
    reaching the exploration floor early. The discount is 0.9 here: bootstrap
    noise compounds too fast at 0.99 for runs this short (values inflate well
    past the feasible return and the greedy policy degenerates).
    """
    rows: List[ToyRow] = []
    horizon = max(1, epochs * train_eps)
    for variant in variants:
        if variant not in TOY_VARIANTS:
            raise ValueError(f"unknown toy variant {variant!r}")
        net = neural.toy_q_network(rng=rng_stream(seed, f"toy.init.{variant}"),
                                   dtype=np.float64)
        agent = DqnAgent(DqnConfig(
            n_actions=4, state_shape=(10, 10, 3), space=DISCRETE_4,
            sar=(variant == "sar"), gamma=0.9, explore_horizon=horizon), net)
        episode = 0
        for epoch in range(1, epochs + 1):
            rng_tr = rng_stream(seed, f"toy.train.{variant}.epoch{epoch}")
            for _ in range(train_eps):
                m = toy.render_toy(toy.HORIZONTAL, rng_tr)
                state = toy.toy_state(m)
                while not m.done:
                    action = agent.select(state, episode, rng_tr)
                    next_state, reward, terminal = toy.toy_step(m, action)
                    agent.observe(Transition(state, action, reward,
                                             next_state, terminal))
                    if len(agent.buffer) >= agent.config.batch_size:
                        agent.train_step(rng_tr)
                    state = next_state
                episode += 1
            for kind in toy.KINDS:
                rng_te = rng_stream(seed,
                                    f"toy.test.{variant}.epoch{epoch}.{kind}")
                successes = 0
                for _ in range(test_eps):
                    m = toy.render_toy(kind, rng_te)
                    state = toy.toy_state(m)
                    while not m.done:
                        action = agent.select(state, 0, rng_te, greedy=True)
                        state, _, _ = toy.toy_step(m, action)
                    successes += int(m.reached)
                rows.append(ToyRow(epoch, variant, kind,
                                   ratd(successes, test_eps)))
    return rows
