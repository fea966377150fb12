import numpy as np
import pytest

from vesselnav.simenv import StepAfterTerminalError
from vesselnav.toy import (ACTION_DELTAS_4, CH_AGENT, CH_TARGET, CH_WALL,
                           DIAGONAL, HORIZONTAL, KINDS, SIZE, STEP_CAP,
                           VERTICAL, bfs_connected, build_toy, render_toy,
                           toy_state, toy_step)


def test_build_horizontal_geometry():
    m = build_toy(HORIZONTAL, 4, 7, agent=(2, 3), target=(8, 1))
    assert m.walls[4].sum() == SIZE - 1
    assert m.walls[4, 7] == 0
    assert m.walls.sum() == SIZE - 1
    assert not m.done and m.steps == 0


def test_vertical_is_the_transposed_horizontal():
    h = build_toy(HORIZONTAL, 4, 7, agent=(2, 3), target=(8, 1))
    v = build_toy(VERTICAL, 4, 7, agent=(3, 2), target=(1, 8))
    assert np.array_equal(v.walls, h.walls.T)


def test_build_diagonal_geometry():
    m = build_toy(DIAGONAL, 0, 5, agent=(1, 7), target=(7, 1))
    diag = np.diag(m.walls)
    assert diag.sum() == SIZE - 1 and diag[5] == 0
    assert m.walls.sum() == SIZE - 1


@pytest.mark.parametrize("agent,target", [
    ((4, 0), (8, 8)),    # agent on the wall
    ((-1, 3), (8, 8)),   # off grid
    ((2, 2), (2, 2)),    # coincident (after moving target onto agent)
])
def test_build_rejects_bad_placements(agent, target):
    with pytest.raises(ValueError):
        build_toy(HORIZONTAL, 4, 6, agent, target)


def test_build_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_toy("spiral", 4, 6, (0, 0), (9, 9))


def test_render_samples_valid_connected_maps():
    rng = np.random.default_rng(11)
    for kind in KINDS:
        crossings = 0
        for _ in range(40):
            m = render_toy(kind, rng)
            assert m.kind == kind
            assert m.agent != m.target
            assert m.walls[m.agent] == 0 and m.walls[m.target] == 0
            assert bfs_connected(m.walls, m.agent, m.target)
            if kind == HORIZONTAL:
                assert len(np.flatnonzero(m.walls.sum(axis=1))) == 1
                w = np.flatnonzero(m.walls.sum(axis=1))[0]
                crossings += (m.agent[0] - w) * (m.target[0] - w) < 0
            elif kind == VERTICAL:
                assert len(np.flatnonzero(m.walls.sum(axis=0))) == 1
                w = np.flatnonzero(m.walls.sum(axis=0))[0]
                crossings += (m.agent[1] - w) * (m.target[1] - w) < 0
            else:
                crossings += (m.agent[0] < m.agent[1]) != (m.target[0] < m.target[1])
        # placement is uniform over free cells: both same-side and
        # cross-wall episodes must occur
        assert 0 < crossings < 40


def test_render_is_seed_deterministic():
    a = render_toy(HORIZONTAL, np.random.default_rng(3))
    b = render_toy(HORIZONTAL, np.random.default_rng(3))
    assert np.array_equal(a.walls, b.walls)
    assert (a.agent, a.target) == (b.agent, b.target)


def test_toy_state_one_hot():
    m = build_toy(HORIZONTAL, 4, 7, agent=(2, 3), target=(8, 1))
    s = toy_state(m)
    assert s.shape == (SIZE, SIZE, 3) and s.dtype == np.float32
    assert np.array_equal(s[:, :, CH_WALL], m.walls)
    assert s[:, :, CH_AGENT].sum() == 1.0 and s[2, 3, CH_AGENT] == 1.0
    assert s[:, :, CH_TARGET].sum() == 1.0 and s[8, 1, CH_TARGET] == 1.0


def test_step_rewards_and_shaping():
    m = build_toy(HORIZONTAL, 4, 7, agent=(2, 3), target=(6, 7))
    s, r, done = toy_step(m, 3)          # right, toward the target column
    assert (r, done) == (pytest.approx(0.1), False)
    assert m.agent == (2, 4)
    assert s[2, 4, CH_AGENT] == 1.0 and s[2, 3, CH_AGENT] == 0.0
    _, r, done = toy_step(m, 2)          # left, away again
    assert (r, done) == (pytest.approx(-0.1), False)


def test_step_into_wall_moves_and_ends():
    m = build_toy(HORIZONTAL, 4, 7, agent=(3, 3), target=(6, 7))
    _, r, done = toy_step(m, 1)          # down, into the wall row
    assert (r, done) == (-1.0, True)
    assert m.agent == (4, 3)             # ends up on the wall cell
    with pytest.raises(StepAfterTerminalError):
        toy_step(m, 0)


def test_step_off_grid_stays_and_ends():
    m = build_toy(HORIZONTAL, 4, 7, agent=(0, 3), target=(6, 7))
    _, r, done = toy_step(m, 0)          # up, off the grid
    assert (r, done) == (-1.0, True)
    assert m.agent == (0, 3)


def test_step_reaches_target():
    m = build_toy(HORIZONTAL, 4, 7, agent=(6, 6), target=(6, 7))
    _, r, done = toy_step(m, 3)
    assert (r, done) == (1.0, True)
    assert m.reached and m.agent == (6, 7)


def test_step_cap_truncates_without_terminal():
    m = build_toy(HORIZONTAL, 4, 7, agent=(8, 0), target=(6, 7))
    for i in range(STEP_CAP):
        action = 3 if i % 2 == 0 else 2  # shuffle right/left, never arriving
        _, _, terminal = toy_step(m, action)
    assert m.done and m.steps == STEP_CAP and not m.reached
    assert not terminal              # timeout truncates, env did not terminate
    with pytest.raises(StepAfterTerminalError):
        toy_step(m, 0)


def test_gapless_wall_disconnects():
    walls = np.zeros((SIZE, SIZE), dtype=np.uint8)
    walls[4, :] = 1
    assert not bfs_connected(walls, (0, 0), (9, 9))
    walls[4, 2] = 0
    assert bfs_connected(walls, (0, 0), (9, 9))


def test_action_deltas_orientation():
    assert ACTION_DELTAS_4[0] == (-1, 0)   # up decreases the row index
    assert ACTION_DELTAS_4[3] == (0, 1)    # right increases the column
