"""Small wall-and-gap gridworld for augmentation ablations.

A 10x10 grid holds one wall with a single gap; agent and target spawn on
random free cells. Three wall layouts exist: horizontal (a wall row),
vertical (a wall column, the exact transpose construction), and diagonal (the
main diagonal). Reaching the target pays +1, stepping into a wall or off the
grid pays -1, any other move pays 0.1 times the Manhattan-distance decrease
toward the target, and an episode is hard-capped at 50 steps.

Grid coordinates are image-style (row 0 on top); "up" decreases the row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .simenv import StepAfterTerminalError

SIZE = 10
STEP_CAP = 50

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
DIAGONAL = "diagonal"
KINDS = (HORIZONTAL, VERTICAL, DIAGONAL)

ACTION_NAMES_4 = ("up", "down", "left", "right")
ACTION_DELTAS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))  # (dr, dc)

CH_WALL = 0
CH_AGENT = 1
CH_TARGET = 2

RC = Tuple[int, int]


@dataclass
class ToyMap:
    kind: str
    walls: np.ndarray  # uint8 (10, 10), 1 = wall
    agent: RC
    target: RC
    steps: int = 0
    done: bool = False
    reached: bool = False


def _wall_array(kind: str, wall_index: int, gap_index: int) -> np.ndarray:
    walls = np.zeros((SIZE, SIZE), dtype=np.uint8)
    if kind == HORIZONTAL:
        walls[wall_index, :] = 1
        walls[wall_index, gap_index] = 0
    elif kind == VERTICAL:
        walls[:, wall_index] = 1
        walls[gap_index, wall_index] = 0
    else:
        for i in range(SIZE):
            walls[i, i] = 1
        walls[gap_index, gap_index] = 0
    return walls


def build_toy(kind: str, wall_index: int, gap_index: int,
              agent: RC, target: RC) -> ToyMap:
    """Deterministic construction from explicit wall/gap/placement indices."""
    if kind not in KINDS:
        raise ValueError(f"unknown toy map kind {kind!r}")
    walls = _wall_array(kind, wall_index, gap_index)
    for name, cell in (("agent", agent), ("target", target)):
        r, c = cell
        if not (0 <= r < SIZE and 0 <= c < SIZE) or walls[r, c]:
            raise ValueError(f"{name} cell {cell} is not a free grid cell")
    if agent == target:
        raise ValueError("agent and target must differ")
    return ToyMap(kind, walls, agent, target)


def bfs_connected(walls: np.ndarray, a: RC, b: RC) -> bool:
    """4-connected reachability between two free cells."""
    seen = {a}
    stack = [a]
    while stack:
        r, c = stack.pop()
        if (r, c) == b:
            return True
        for dr, dc in ACTION_DELTAS_4:
            nr, nc = r + dr, c + dc
            if (0 <= nr < SIZE and 0 <= nc < SIZE and not walls[nr, nc]
                    and (nr, nc) not in seen):
                seen.add((nr, nc))
                stack.append((nr, nc))
    return False


def render_toy(kind: str, rng: np.random.Generator) -> ToyMap:
    """Sample a fresh map: wall with one gap, two random free endpoints.

    Agent and target are drawn uniformly over all free cells (distinct,
    connectivity verified), so episodes range from short same-side hops to
    full traversals through the gap.
    """
    for _ in range(1000):
        if kind == DIAGONAL:
            wall = 0  # unused for diagonal
            gap = int(rng.integers(1, SIZE - 1))
        else:
            wall = int(rng.integers(1, SIZE - 1))
            gap = int(rng.integers(0, SIZE))
        free = np.argwhere(_wall_array(kind, wall, gap) == 0)
        agent = tuple(int(v) for v in free[rng.integers(len(free))])
        target = tuple(int(v) for v in free[rng.integers(len(free))])
        if agent == target:
            continue
        m = build_toy(kind, wall, gap, agent, target)
        if bfs_connected(m.walls, agent, target):
            return m
    raise RuntimeError(f"could not sample a connected {kind} map")


def toy_state(m: ToyMap) -> np.ndarray:
    """One-hot channels (walls, agent, target), float32 (10, 10, 3)."""
    state = np.zeros((SIZE, SIZE, 3), dtype=np.float32)
    state[:, :, CH_WALL] = m.walls
    state[m.agent[0], m.agent[1], CH_AGENT] = 1.0
    state[m.target[0], m.target[1], CH_TARGET] = 1.0
    return state


def toy_step(m: ToyMap, action: int) -> Tuple[np.ndarray, float, bool]:
    """Apply one move; returns (state, reward, terminal).

    The 50-step cap closes the episode (further steps raise), but it is a
    truncation, not an environment terminal: the returned flag stays False so
    learners keep bootstrapping through the final transition.
    """
    if m.done:
        raise StepAfterTerminalError("episode already ended")
    dr, dc = ACTION_DELTAS_4[int(action)]
    nr, nc = m.agent[0] + dr, m.agent[1] + dc
    m.steps += 1
    terminal = False
    if not (0 <= nr < SIZE and 0 <= nc < SIZE) or m.walls[nr, nc]:
        reward = -1.0
        terminal = True
        if 0 <= nr < SIZE and 0 <= nc < SIZE:
            m.agent = (nr, nc)
    elif (nr, nc) == m.target:
        reward = 1.0
        m.agent = (nr, nc)
        m.reached = True
        terminal = True
    else:
        before = abs(m.agent[0] - m.target[0]) + abs(m.agent[1] - m.target[1])
        after = abs(nr - m.target[0]) + abs(nc - m.target[1])
        reward = 0.1 * (before - after)
        m.agent = (nr, nc)
    if terminal or m.steps >= STEP_CAP:
        m.done = True
    return toy_state(m), reward, terminal
