import math

import numpy as np
import pytest

import oracles
from conftest import random_map
from vesselnav import planner
from vesselnav.gridmap import GeoMap
from vesselnav.planner import (MODIFIED, PLAIN, UnreachableError, build_apsp,
                               lardp, path_cells, rdp, segment_crosses_land,
                               select_goal, shortest_path, supercover_cells)

S = 0.0005


def test_plain_costs_on_open_3x3():
    m = GeoMap(0.0, 0.0, S, np.zeros((3, 3), dtype=np.uint8))
    t = build_apsp(m, PLAIN)
    assert t.distance((0, 0), (0, 0)) == 0.0
    assert t.distance((0, 0), (1, 0)) == pytest.approx(S)
    assert t.distance((0, 0), (1, 1)) == pytest.approx(S * math.sqrt(2))
    assert t.distance((0, 0), (2, 2)) == pytest.approx(2 * S * math.sqrt(2))
    assert t.distance((0, 0), (2, 0)) == pytest.approx(2 * S)


def test_corner_detour_around_center_land():
    cells = np.zeros((3, 3), dtype=np.uint8)
    cells[1, 1] = 1
    m = GeoMap(0.0, 0.0, S, cells)
    t = build_apsp(m, PLAIN)
    # straight through the middle is blocked; detour is edge + diagonal
    assert t.distance((0, 0), (2, 2)) == pytest.approx(S * (2 + math.sqrt(2)))
    cellseq = path_cells(t, (0, 0), (2, 2))
    assert cellseq[0] == (0, 0) and cellseq[-1] == (2, 2)
    assert all(m.is_water_cell(c) for c in cellseq)


@pytest.mark.parametrize("mode", [PLAIN, MODIFIED])
def test_apsp_matches_dijkstra_oracle(mode):
    rng = np.random.default_rng(17)
    for _ in range(12):
        m = random_map(rng, int(rng.integers(3, 13)), int(rng.integers(3, 13)))
        t = build_apsp(m, mode)
        water = m.water_cells()
        src = water[int(rng.integers(len(water)))]
        oracle = oracles.dijkstra(m.cells, m.cell_size, src, mode)
        for dst in water:
            got = t.distance(src, dst)
            want = oracle.get(dst, math.inf)
            if math.isinf(want):
                assert math.isinf(got)
            else:
                assert oracles.rel_err(got, want) <= 1e-9


@pytest.mark.parametrize("mode", [PLAIN, MODIFIED])
def test_path_cells_cost_adds_up(mode):
    rng = np.random.default_rng(23)
    for _ in range(8):
        m = random_map(rng, 10, 10)
        t = build_apsp(m, mode)
        water = m.water_cells()
        a = water[int(rng.integers(len(water)))]
        b = water[int(rng.integers(len(water)))]
        if not np.isfinite(t.distance(a, b)):
            continue
        cells = path_cells(t, a, b)
        assert cells[0] == a and cells[-1] == b
        total = 0.0
        for u, v in zip(cells, cells[1:]):
            assert max(abs(u[0] - v[0]), abs(u[1] - v[1])) == 1
            total += oracles.edge_weight(m.cells, m.cell_size, u, v,
                                         mode, t.alpha, t.beta)
        assert oracles.rel_err(total, t.distance(a, b)) <= 1e-9


def test_unreachable_and_non_water_errors():
    cells = np.zeros((5, 7), dtype=np.uint8)
    cells[:, 3] = 1
    m = GeoMap(0.0, 0.0, S, cells)
    t = build_apsp(m, PLAIN)
    assert math.isinf(t.distance((0, 0), (6, 0)))
    with pytest.raises(UnreachableError):
        path_cells(t, (0, 0), (6, 0))
    with pytest.raises(UnreachableError):
        t.distance((3, 0), (0, 0))  # (3, 0) is land


def test_shortest_path_returns_cell_centers(open_map):
    t = build_apsp(open_map, PLAIN)
    pts = shortest_path(t, (0, 0), (2, 2))
    assert pts == [open_map.cell_center((i, i)) for i in range(3)]


def test_cache_roundtrip_and_rejection(tmp_path, bay_map):
    cache = str(tmp_path)
    built = build_apsp(bay_map, MODIFIED, cache_dir=cache)
    path = tmp_path / f"{bay_map.digest()}.modified.apsp"
    assert path.exists()

    loaded = build_apsp(bay_map, MODIFIED, cache_dir=cache)
    assert np.array_equal(loaded.dist, built.dist)
    assert np.array_equal(loaded.next_hop, built.next_hop)
    assert loaded.cells == built.cells

    # different hyperparameters must miss the cache, not reuse it
    other = build_apsp(bay_map, MODIFIED, alpha=1.0, cache_dir=cache)
    assert not np.array_equal(other.dist, built.dist)

    # corruption is detected and the table rebuilt
    raw = bytearray(path.read_bytes())
    raw[50] ^= 0xFF
    path.write_bytes(bytes(raw))
    rebuilt = build_apsp(bay_map, MODIFIED, cache_dir=cache)
    assert np.array_equal(rebuilt.dist, built.dist)


def test_cache_modes_do_not_collide(tmp_path, bay_map):
    cache = str(tmp_path)
    plain = build_apsp(bay_map, PLAIN, cache_dir=cache)
    modified = build_apsp(bay_map, MODIFIED, cache_dir=cache)
    again_plain = build_apsp(bay_map, PLAIN, cache_dir=cache)
    assert np.array_equal(again_plain.dist, plain.dist)
    assert not np.array_equal(plain.dist, modified.dist)


# -- simplification -----------------------------------------------------------

def test_rdp_collapses_straight_line():
    pts = [(float(i), 2.0 * i) for i in range(20)]
    assert rdp(pts, 1e-6) == [pts[0], pts[-1]]


def test_rdp_keeps_corners():
    pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (2.0, 1.0)]
    assert rdp(pts, 0.1) == pts


def test_rdp_needs_two_points():
    with pytest.raises(ValueError):
        rdp([(0.0, 0.0)])


def _random_polyline(rng, n):
    steps = rng.normal(scale=0.002, size=(n - 1, 2))
    pts = np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)])
    return [tuple(map(float, p)) for p in pts]


def test_rdp_deviation_subsequence_idempotence():
    rng = np.random.default_rng(31)
    for _ in range(60):
        pts = _random_polyline(rng, int(rng.integers(2, 40)))
        out = rdp(pts, 0.0025)
        assert out[0] == pts[0] and out[-1] == pts[-1]
        assert oracles.max_chord_deviation(pts, out) <= 0.0025
        assert rdp(out, 0.0025) == out


def test_lardp_splits_on_land(bay_map):
    # route hugging the island's south-east corner; the straight chord cuts it
    pts = [bay_map.cell_center(c)
           for c in [(4, 2), (5, 3), (7, 4), (7, 5), (8, 6)]]
    straight = rdp(pts, 1.0)
    assert len(straight) == 2
    aware = lardp(pts, bay_map, 1.0)
    assert len(aware) > 2
    assert set(straight) <= set(aware)
    kept_idx = [pts.index(p) for p in aware]
    for lo, hi in zip(kept_idx, kept_idx[1:]):
        if hi - lo >= 2:
            assert not segment_crosses_land(bay_map, pts[lo], pts[hi])


# -- supercover rasterization -------------------------------------------------

def test_supercover_covers_sampled_points():
    rng = np.random.default_rng(41)
    for _ in range(80):
        p0 = tuple(rng.uniform(0.0, 0.005, 2))
        p1 = tuple(rng.uniform(0.0, 0.005, 2))
        cover = set(supercover_cells(p0, p1, 0.0, 0.0, S))
        for t in np.linspace(0.0, 1.0, 33):
            q = (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))
            cell = (int(q[0] // S), int(q[1] // S))
            assert cell in cover


def test_supercover_exact_corner_includes_both_flanks():
    cover = supercover_cells((0.5 * S, 0.5 * S), (2.5 * S, 2.5 * S), 0.0, 0.0, S)
    assert {(1, 0), (0, 1)} <= set(cover)
    assert {(2, 1), (1, 2)} <= set(cover)
    assert cover[0] == (0, 0) and cover[-1] == (2, 2)


def test_segment_crosses_land_cases(bay_map):
    a = bay_map.cell_center((3, 5))
    b = bay_map.cell_center((8, 5))
    assert segment_crosses_land(bay_map, a, b)          # straight over the island
    c = bay_map.cell_center((3, 9))
    d = bay_map.cell_center((8, 9))
    assert not segment_crosses_land(bay_map, c, d)      # open water lane
    assert segment_crosses_land(bay_map, (-0.01, 0.001), a)  # leaves the map


def test_diagonal_corner_squeeze_counts_as_land():
    cells = np.zeros((4, 4), dtype=np.uint8)
    cells[1, 2] = 1   # land at (2, 1)
    cells[2, 1] = 1   # land at (1, 2)
    m = GeoMap(0.0, 0.0, S, cells)
    a = m.cell_center((1, 1))
    b = m.cell_center((2, 2))
    assert segment_crosses_land(m, a, b)


# -- goal selection -----------------------------------------------------------

def test_select_goal_single_inside():
    agent = (0.0, 0.0)
    wps = [(0.004, 0.0), (0.02, 0.0)]
    choice = select_goal(agent, 0.005, wps)
    assert choice.position == wps[0]
    assert choice.waypoint_index == 0


def test_select_goal_farthest_with_later_tiebreak():
    agent = (0.0, 0.0)
    wps = [(0.001, 0.0), (0.0, 0.003), (0.003, 0.0), (0.05, 0.05)]
    choice = select_goal(agent, 0.005, wps)
    assert choice.position == (0.003, 0.0)
    assert choice.waypoint_index == 2
    # exact distance tie: keep the later waypoint
    tie = select_goal(agent, 0.005, [(0.003, 0.0), (0.0, 0.003)])
    assert tie.waypoint_index == 1


def test_select_goal_boundary_projection():
    agent = (0.001, 0.001)
    wps = [(0.021, 0.011)]
    choice = select_goal(agent, 0.005, wps)
    assert choice.waypoint_index is None
    dx = choice.position[0] - agent[0]
    dy = choice.position[1] - agent[1]
    assert max(abs(dx), abs(dy)) == pytest.approx(0.005)
    # stays on the ray toward the nearest waypoint
    assert dy / dx == pytest.approx(0.010 / 0.020)


def test_select_goal_empty_raises():
    with pytest.raises(ValueError):
        select_goal((0.0, 0.0), 0.005, [])
