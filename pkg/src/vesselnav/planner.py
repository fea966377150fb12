"""Route planning over water grids.

Builds all-pairs shortest-path tables over the 8-connected water graph with a
Floyd-Warshall sweep, reconstructs cell paths via next-hop tables, simplifies
paths into sparse waypoint lists, and selects the intermediate goal the agent
should chase inside its local view.

Two edge-weight modes exist. "floyd" weighs an edge by the Euclidean distance
between cell centers. "modified" additionally penalizes moving toward cells
hugging the coast: the edge (A, B) costs

    dist(A, B) * (1 + alpha * l/8 + beta * mean_n(lan_n / 8))

where l counts B's land 8-neighbors, n ranges over B's water 8-neighbors, and
lan_n counts n's land 8-neighbors. Cells beyond the map edge count as land, so
every cell has exactly 8 neighbors and the denominators are constant.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .gridmap import Cell, GeoMap, Position, WATER

PLAIN = "floyd"
MODIFIED = "modified"
MODES = (PLAIN, MODIFIED)

_CACHE_MAGIC = b"VNAPSP01"


class UnreachableError(RuntimeError):
    """No water path exists between the requested cells."""


@dataclass
class ApspTables:
    """Dense all-pairs tables over the map's water cells."""

    mode: str
    map_digest: str
    origin_lon: float
    origin_lat: float
    cell_size: float
    alpha: float
    beta: float
    cells: List[Cell]                 # graph index -> cell
    dist: np.ndarray                  # (n, n) float64, np.inf if unreachable
    next_hop: np.ndarray              # (n, n) int32, -1 if no hop

    def __post_init__(self) -> None:
        self.index_of = {c: i for i, c in enumerate(self.cells)}

    def distance(self, a: Cell, b: Cell) -> float:
        try:
            return float(self.dist[self.index_of[a], self.index_of[b]])
        except KeyError as exc:
            raise UnreachableError(f"cell {exc.args[0]} is not a water cell") from exc

    def cell_center(self, cell: Cell) -> Position:
        ix, iy = cell
        return (self.origin_lon + (ix + 0.5) * self.cell_size,
                self.origin_lat + (iy + 0.5) * self.cell_size)


_NEIGHBOR_OFFSETS = [(-1, -1), (0, -1), (1, -1),
                     (-1, 0), (1, 0),
                     (-1, 1), (0, 1), (1, 1)]


def _land_neighbor_counts(geomap: GeoMap) -> np.ndarray:
    """Per-cell count of land 8-neighbors, map edge counting as land."""
    padded = np.ones((geomap.height + 2, geomap.width + 2), dtype=np.int32)
    padded[1:-1, 1:-1] = geomap.cells
    counts = np.zeros((geomap.height, geomap.width), dtype=np.int32)
    for dx, dy in _NEIGHBOR_OFFSETS:
        counts += padded[1 + dy: 1 + dy + geomap.height, 1 + dx: 1 + dx + geomap.width]
    return counts


def _edge_weights(geomap: GeoMap, mode: str, alpha: float, beta: float):
    """Yield (i, j, weight) over directed water-to-water edges.

    Returns (cells, edges) where cells is the water-cell order used for graph
    indices.
    """
    cells = geomap.water_cells()
    index_of = {c: i for i, c in enumerate(cells)}
    size = geomap.cell_size
    if mode == MODIFIED:
        land8 = _land_neighbor_counts(geomap)
        water_mask = geomap.cells == WATER
        # mean of neighbors' land fraction over each cell's water neighbors
        frac = land8.astype(np.float64) / 8.0
        acc = np.zeros_like(frac)
        cnt = np.zeros_like(frac)
        padded_f = np.zeros((geomap.height + 2, geomap.width + 2))
        padded_w = np.zeros((geomap.height + 2, geomap.width + 2))
        padded_f[1:-1, 1:-1] = frac
        padded_w[1:-1, 1:-1] = water_mask
        for dx, dy in _NEIGHBOR_OFFSETS:
            w = padded_w[1 + dy: 1 + dy + geomap.height, 1 + dx: 1 + dx + geomap.width]
            f = padded_f[1 + dy: 1 + dy + geomap.height, 1 + dx: 1 + dx + geomap.width]
            acc += w * f
            cnt += w
        with np.errstate(invalid="ignore"):
            nbr_frac = np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)
        factor = 1.0 + alpha * frac + beta * nbr_frac

    edges = []
    for (ax, ay) in cells:
        i = index_of[(ax, ay)]
        for dx, dy in _NEIGHBOR_OFFSETS:
            b = (ax + dx, ay + dy)
            j = index_of.get(b)
            if j is None:
                continue
            d = size * (np.sqrt(2.0) if dx != 0 and dy != 0 else 1.0)
            if mode == MODIFIED:
                d *= factor[b[1], b[0]]
            edges.append((i, j, d))
    return cells, edges


def build_apsp(
    geomap: GeoMap,
    mode: str = PLAIN,
    alpha: float = 2.0,
    beta: float = 2.0,
    cache_dir: Optional[str] = None,
) -> ApspTables:
    """Build (or load from cache) the all-pairs tables for a map."""
    if mode not in MODES:
        raise ValueError(f"unknown planner mode {mode!r}")
    digest = geomap.digest()
    if cache_dir is not None:
        cached = _load_cache(cache_dir, geomap, digest, mode, alpha, beta)
        if cached is not None:
            return cached

    cells, edges = _edge_weights(geomap, mode, alpha, beta)
    n = len(cells)
    dist = np.full((n, n), np.inf)
    next_hop = np.full((n, n), -1, dtype=np.int32)
    np.fill_diagonal(dist, 0.0)
    next_hop[np.diag_indices(n)] = np.arange(n)
    for i, j, w in edges:
        if w < dist[i, j]:
            dist[i, j] = w
            next_hop[i, j] = j

    # Floyd-Warshall, one vectorized relaxation per pivot
    for k in range(n):
        alt = dist[:, k, None] + dist[None, k, :]
        mask = alt < dist
        if mask.any():
            dist = np.where(mask, alt, dist)
            next_hop = np.where(mask, next_hop[:, k, None], next_hop)

    tables = ApspTables(mode, digest, geomap.origin_lon, geomap.origin_lat,
                        geomap.cell_size, alpha, beta, cells, dist, next_hop)
    if cache_dir is not None:
        _save_cache(cache_dir, tables)
    return tables


def _cache_path(cache_dir: str, digest: str, mode: str) -> str:
    return os.path.join(cache_dir, f"{digest}.{mode}.apsp")


def _save_cache(cache_dir: str, t: ApspTables) -> None:
    os.makedirs(cache_dir, exist_ok=True)
    path = _cache_path(cache_dir, t.map_digest, t.mode)
    n = len(t.cells)
    cells_arr = np.asarray(t.cells, dtype=np.int32)
    mode_b = t.mode.encode("ascii")
    payload = b"".join([
        t.map_digest.encode("ascii"),
        struct.pack("<B", len(mode_b)),
        mode_b,
        struct.pack("<5d", t.origin_lon, t.origin_lat, t.cell_size, t.alpha, t.beta),
        struct.pack("<I", n),
        cells_arr.tobytes(),
        t.dist.astype(np.float64).tobytes(),
        t.next_hop.astype(np.int32).tobytes(),
    ])
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)


def _load_cache(cache_dir: str, geomap: GeoMap, digest: str, mode: str,
                alpha: float, beta: float) -> Optional[ApspTables]:
    path = _cache_path(cache_dir, digest, mode)
    if not os.path.exists(path):
        return None
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_CACHE_MAGIC)) != _CACHE_MAGIC:
                return None
            (crc,) = struct.unpack("<I", fh.read(4))
            payload = fh.read()
        if zlib.crc32(payload) != crc:
            return None
        off = 0
        file_digest = payload[off:off + 64].decode("ascii"); off += 64
        (mode_len,) = struct.unpack_from("<B", payload, off); off += 1
        file_mode = payload[off:off + mode_len].decode("ascii"); off += mode_len
        lon, lat, size, a, b = struct.unpack_from("<5d", payload, off); off += 40
        (n,) = struct.unpack_from("<I", payload, off); off += 4
        cells_arr = np.frombuffer(payload, dtype=np.int32, count=n * 2,
                                  offset=off).reshape(n, 2)
        off += n * 2 * 4
        dist = np.frombuffer(payload, dtype=np.float64, count=n * n,
                             offset=off).reshape(n, n)
        off += n * n * 8
        next_hop = np.frombuffer(payload, dtype=np.int32, count=n * n,
                                 offset=off).reshape(n, n)
        off += n * n * 4
        if off != len(payload):
            return None
    except (OSError, ValueError, struct.error, UnicodeDecodeError):
        return None
    if (file_digest != digest or file_mode != mode or a != alpha or b != beta
            or lon != geomap.origin_lon or lat != geomap.origin_lat
            or size != geomap.cell_size):
        return None
    cells = [(int(x), int(y)) for x, y in cells_arr]
    return ApspTables(mode, digest, lon, lat, size, a, b, cells,
                      dist.copy(), next_hop.copy())


def path_cells(tables: ApspTables, src: Cell, dst: Cell) -> List[Cell]:
    """Cell sequence from src to dst inclusive, following next hops."""
    try:
        i = tables.index_of[src]
        j = tables.index_of[dst]
    except KeyError as exc:
        raise UnreachableError(f"cell {exc.args[0]} is not a water cell") from exc
    if tables.next_hop[i, j] < 0:
        raise UnreachableError(f"no path from {src} to {dst}")
    path = [src]
    guard = len(tables.cells) + 1
    while i != j:
        i = int(tables.next_hop[i, j])
        path.append(tables.cells[i])
        guard -= 1
        if guard < 0:
            raise RuntimeError("next-hop walk did not terminate")
    return path


def shortest_path(tables: ApspTables, src: Cell, dst: Cell) -> List[Position]:
    """Cell-center positions along the shortest path from src to dst."""
    return [tables.cell_center(c) for c in path_cells(tables, src, dst)]


def _point_segment_distance(p: Position, a: Position, b: Position) -> float:
    px, py = p[0] - a[0], p[1] - a[1]
    vx, vy = b[0] - a[0], b[1] - a[1]
    vv = vx * vx + vy * vy
    if vv == 0.0:
        return float(np.hypot(px, py))
    t = min(1.0, max(0.0, (px * vx + py * vy) / vv))
    return float(np.hypot(px - t * vx, py - t * vy))


def _farthest_interior(points: Sequence[Position], lo: int, hi: int) -> Tuple[float, int]:
    a, b = points[lo], points[hi]
    best_d, best_i = -1.0, -1
    for i in range(lo + 1, hi):
        d = _point_segment_distance(points[i], a, b)
        if d > best_d:
            best_d, best_i = d, i
    return best_d, best_i


def rdp(points: Sequence[Position], threshold: float = 0.0025) -> List[Position]:
    """Ramer-Douglas-Peucker polyline simplification.

    Keeps both endpoints; recursively keeps the point farthest from the
    current chord whenever its distance exceeds the threshold.
    """
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("polyline needs at least two points")
    keep = [False] * len(pts)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d, i = _farthest_interior(pts, lo, hi)
        if d > threshold:
            keep[i] = True
            stack.append((lo, i))
            stack.append((i, hi))
    return [p for p, k in zip(pts, keep) if k]


def supercover_cells(p0: Position, p1: Position, origin_lon: float,
                     origin_lat: float, cell_size: float) -> List[Cell]:
    """All cells a segment passes through, corner contacts included.

    When the segment crosses a cell corner exactly, both flanking cells are
    included, so the cover never lets a segment slip diagonally between two
    land cells.
    """
    u0 = (p0[0] - origin_lon) / cell_size
    v0 = (p0[1] - origin_lat) / cell_size
    u1 = (p1[0] - origin_lon) / cell_size
    v1 = (p1[1] - origin_lat) / cell_size
    x, y = int(np.floor(u0)), int(np.floor(v0))
    xe, ye = int(np.floor(u1)), int(np.floor(v1))
    cells = [(x, y)]
    seen = {(x, y)}

    def add(c: Cell) -> None:
        if c not in seen:
            seen.add(c)
            cells.append(c)

    du, dv = u1 - u0, v1 - v0
    sx = 1 if du > 0 else -1
    sy = 1 if dv > 0 else -1
    t_dx = abs(1.0 / du) if du != 0 else np.inf
    t_dy = abs(1.0 / dv) if dv != 0 else np.inf
    if du > 0:
        t_mx = (np.floor(u0) + 1.0 - u0) * t_dx
    elif du < 0:
        t_mx = (u0 - np.floor(u0)) * t_dx
    else:
        t_mx = np.inf
    t_my = ((np.floor(v0) + 1.0 - v0) * t_dy if dv > 0
            else (v0 - np.floor(v0)) * t_dy if dv < 0 else np.inf)

    eps = 1e-12
    guard = 2 * (abs(xe - x) + abs(ye - y)) + 8
    while (x, y) != (xe, ye) and guard > 0:
        guard -= 1
        if min(t_mx, t_my) > 1.0 + eps:
            break
        if abs(t_mx - t_my) <= eps:
            # exact corner crossing: cover both side cells, step diagonally
            add((x + sx, y))
            add((x, y + sy))
            x += sx
            y += sy
            t_mx += t_dx
            t_my += t_dy
        elif t_mx < t_my:
            x += sx
            t_mx += t_dx
        else:
            y += sy
            t_my += t_dy
        add((x, y))
    add((xe, ye))
    return cells


def segment_crosses_land(geomap: GeoMap, p0: Position, p1: Position) -> bool:
    """True when the straight segment touches any land cell (edge counts)."""
    for cell in supercover_cells(p0, p1, geomap.origin_lon, geomap.origin_lat,
                                 geomap.cell_size):
        if geomap.is_land_cell(cell):
            return True
    return False


def lardp(points: Sequence[Position], geomap: GeoMap,
          threshold: float = 0.0025) -> List[Position]:
    """Land-aware simplification: split like rdp, and also split whenever the
    current chord crosses land, so every collapsed span stays on open water."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("polyline needs at least two points")
    keep = [False] * len(pts)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d, i = _farthest_interior(pts, lo, hi)
        if d > threshold or segment_crosses_land(geomap, pts[lo], pts[hi]):
            keep[i] = True
            stack.append((lo, i))
            stack.append((i, hi))
    return [p for p, k in zip(pts, keep) if k]


class GoalChoice(NamedTuple):
    position: Position
    waypoint_index: Optional[int]  # index into the remaining waypoints, None if synthetic


def select_goal(agent: Position, view_half: float,
                waypoints: Sequence[Position]) -> GoalChoice:
    """Pick the goal for the next episode from the remaining waypoints.

    Exactly one waypoint inside the closed view square: that point. Two or
    more: the one farthest from the agent (ties -> later waypoint). None: the
    point where the segment toward the nearest waypoint exits the view square.
    """
    if not waypoints:
        raise ValueError("no remaining waypoints")
    ax, ay = agent
    inside = [i for i, (wx, wy) in enumerate(waypoints)
              if max(abs(wx - ax), abs(wy - ay)) <= view_half]
    if len(inside) == 1:
        i = inside[0]
        return GoalChoice(waypoints[i], i)
    if len(inside) >= 2:
        best = max(inside, key=lambda i: (np.hypot(waypoints[i][0] - ax,
                                                   waypoints[i][1] - ay), i))
        return GoalChoice(waypoints[best], best)
    dists = [np.hypot(wx - ax, wy - ay) for wx, wy in waypoints]
    j = int(np.argmin(dists))
    dx, dy = waypoints[j][0] - ax, waypoints[j][1] - ay
    t = view_half / max(abs(dx), abs(dy))
    return GoalChoice((ax + t * dx, ay + t * dy), None)
