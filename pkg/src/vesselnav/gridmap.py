"""Georeferenced occupancy grids and endpoint/obstacle sampling.

A map is a rectangular grid of square cells, each either water (0) or land (1).
The grid is georeferenced in plain degrees: the header of a map file gives the
longitude/latitude of the southwest corner and the cell edge length. Cells are
indexed (ix, iy) with ix increasing eastward and iy increasing northward, and
``cells[iy, ix]`` holds the occupancy byte. Map files store one text row per
grid row starting from the southern edge, so line k of the body is row iy=k.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

WATER = 0
LAND = 1

Position = Tuple[float, float]  # (lon, lat) in degrees
Cell = Tuple[int, int]          # (ix, iy) grid indices


class MapFormatError(ValueError):
    """Map text that cannot be parsed (bad header, illegal cell character)."""


class RaggedGridError(MapFormatError):
    """Map rows of unequal length."""


class OutOfBoundsError(ValueError):
    """Position outside the map's bounding box."""


class InfeasibleMapError(RuntimeError):
    """Sampling could not satisfy its constraints on this map."""


@dataclass(frozen=True)
class DestinationCircle:
    """Target disc: the run succeeds when the agent enters it."""

    center: Position
    radius: float


@dataclass(frozen=True)
class ObstacleSet:
    """Obstacles pinned to whole cells, one per cell."""

    cells: Tuple[Cell, ...]
    positions: Tuple[Position, ...]  # cell centers, same order as cells

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def cell_set(self) -> Set[Cell]:
        return set(self.cells)


@dataclass
class GeoMap:
    origin_lon: float
    origin_lat: float
    cell_size: float
    cells: np.ndarray  # uint8, shape (height, width), [iy, ix]

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2:
            raise MapFormatError("cell grid must be two-dimensional")
        if self.height < 3 or self.width < 3:
            raise MapFormatError("map must be at least 3x3 cells")
        if self.cell_size <= 0:
            raise MapFormatError("cell size must be positive")

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    def in_box(self, pos: Position) -> bool:
        lon, lat = pos
        return (self.origin_lon <= lon <= self.origin_lon + self.width * self.cell_size
                and self.origin_lat <= lat <= self.origin_lat + self.height * self.cell_size)

    def cell_of(self, pos: Position) -> Cell:
        """Cell containing a position.

        Positions exactly on the north/east boundary clamp into the last
        row/column; anything outside the box raises OutOfBoundsError.
        """
        if not self.in_box(pos):
            raise OutOfBoundsError(f"position {pos} outside map box")
        lon, lat = pos
        ix = int((lon - self.origin_lon) / self.cell_size)
        iy = int((lat - self.origin_lat) / self.cell_size)
        ix = min(ix, self.width - 1)
        iy = min(iy, self.height - 1)
        return ix, iy

    def cell_center(self, cell: Cell) -> Position:
        ix, iy = cell
        return (self.origin_lon + (ix + 0.5) * self.cell_size,
                self.origin_lat + (iy + 0.5) * self.cell_size)

    def in_grid(self, cell: Cell) -> bool:
        ix, iy = cell
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_water_cell(self, cell: Cell) -> bool:
        ix, iy = cell
        return self.in_grid(cell) and self.cells[iy, ix] == WATER

    def is_land_cell(self, cell: Cell) -> bool:
        """Land test with the boundary counting as land."""
        ix, iy = cell
        if not self.in_grid(cell):
            return True
        return self.cells[iy, ix] == LAND

    def water_cells(self) -> List[Cell]:
        """All water cells in row-major (iy, ix) order."""
        ys, xs = np.nonzero(self.cells == WATER)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def digest(self) -> str:
        """Stable content hash used to key planner caches."""
        return hashlib.sha256(save_map_text(self).encode("ascii")).hexdigest()


def load_map_text(text: str) -> GeoMap:
    """Parse map text: header "lon lat cell_size", then '0'/'1' rows."""
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    if len(lines) < 2:
        raise MapFormatError("map text needs a header and at least one row")
    parts = lines[0].split()
    if len(parts) != 3:
        raise MapFormatError(f"bad header {lines[0]!r}, want 'lon lat cell_size'")
    try:
        lon, lat, size = (float(p) for p in parts)
    except ValueError as exc:
        raise MapFormatError(f"non-numeric header {lines[0]!r}") from exc
    rows = lines[1:]
    width = len(rows[0])
    grid = np.empty((len(rows), width), dtype=np.uint8)
    for iy, row in enumerate(rows):
        if len(row) != width:
            raise RaggedGridError(f"row {iy} has length {len(row)}, want {width}")
        for ix, ch in enumerate(row):
            if ch == "0":
                grid[iy, ix] = WATER
            elif ch == "1":
                grid[iy, ix] = LAND
            else:
                raise MapFormatError(f"illegal cell character {ch!r} at row {iy}")
    return GeoMap(lon, lat, size, grid)


def load_map(path) -> GeoMap:
    with open(path, "r", encoding="ascii") as fh:
        return load_map_text(fh.read())


def save_map_text(geomap: GeoMap) -> str:
    header = f"{geomap.origin_lon!r} {geomap.origin_lat!r} {geomap.cell_size!r}"
    rows = ["".join("1" if v else "0" for v in geomap.cells[iy])
            for iy in range(geomap.height)]
    return "\n".join([header] + rows) + "\n"


def save_map(geomap: GeoMap, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(save_map_text(geomap))


def _bfs_reachable(geomap: GeoMap, start: Cell) -> Set[Cell]:
    """8-connected water flood fill from start."""
    seen = {start}
    stack = [start]
    while stack:
        x, y = stack.pop()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nxt = (x + dx, y + dy)
                if nxt not in seen and geomap.is_water_cell(nxt):
                    seen.add(nxt)
                    stack.append(nxt)
    return seen


def sample_endpoints(
    geomap: GeoMap,
    max_dist: float,
    rng: np.random.Generator,
    radius: float = 0.002,
    reachable: Optional[Callable[[Cell, Cell], bool]] = None,
    attempts: int = 10_000,
) -> Tuple[Position, DestinationCircle]:
    """Draw an origin position and a destination circle.

    Both endpoints sit on water-cell centers, their Euclidean separation is at
    most ``max_dist`` degrees, and the destination is reachable from the origin.
    ``reachable`` defaults to an 8-connected BFS test; the environment passes a
    planner-backed check instead so endpoints always have a finite path cost.
    Raises InfeasibleMapError after ``attempts`` failed origin draws.
    """
    water = geomap.water_cells()
    if len(water) < 2:
        raise InfeasibleMapError("fewer than two water cells")
    if reachable is None:
        component: dict[Cell, Set[Cell]] = {}

        def reachable(a: Cell, b: Cell) -> bool:
            if a not in component:
                component[a] = _bfs_reachable(geomap, a)
            return b in component[a]

    span = int(np.ceil(max_dist / geomap.cell_size)) + 1
    for _ in range(attempts):
        origin_cell = water[int(rng.integers(len(water)))]
        ox, oy = origin_cell
        origin_pos = geomap.cell_center(origin_cell)
        candidates: List[Cell] = []
        for iy in range(max(0, oy - span), min(geomap.height, oy + span + 1)):
            for ix in range(max(0, ox - span), min(geomap.width, ox + span + 1)):
                cell = (ix, iy)
                if cell == origin_cell or geomap.cells[iy, ix] != WATER:
                    continue
                cx, cy = geomap.cell_center(cell)
                if np.hypot(cx - origin_pos[0], cy - origin_pos[1]) > max_dist:
                    continue
                candidates.append(cell)
        candidates = [c for c in candidates if reachable(origin_cell, c)]
        if candidates:
            dest_cell = candidates[int(rng.integers(len(candidates)))]
            return origin_pos, DestinationCircle(geomap.cell_center(dest_cell), radius)
    raise InfeasibleMapError(
        f"no reachable endpoint pair within {max_dist} deg after {attempts} attempts")


def place_obstacles(
    geomap: GeoMap,
    n: int,
    forbidden: Iterable[Cell],
    rng: np.random.Generator,
) -> ObstacleSet:
    """Pick n distinct water cells avoiding the forbidden cells."""
    banned = set(forbidden)
    allowed = [c for c in geomap.water_cells() if c not in banned]
    if len(allowed) < n:
        raise InfeasibleMapError(f"need {n} obstacle cells, only {len(allowed)} available")
    if n == 0:
        return ObstacleSet(cells=(), positions=())
    idx = rng.choice(len(allowed), size=n, replace=False)
    cells = tuple(allowed[int(i)] for i in idx)
    return ObstacleSet(cells=cells, positions=tuple(geomap.cell_center(c) for c in cells))


def load_obstacles(path, geomap: GeoMap) -> ObstacleSet:
    """Read "lon,lat" lines into an ObstacleSet, snapping to cells."""
    cells: List[Cell] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise MapFormatError(f"obstacle line {lineno}: want 'lon,lat'")
            pos = (float(parts[0]), float(parts[1]))
            cell = geomap.cell_of(pos)
            if not geomap.is_water_cell(cell):
                raise MapFormatError(f"obstacle line {lineno}: {pos} is not on water")
            cells.append(cell)
    return ObstacleSet(cells=tuple(cells),
                       positions=tuple(geomap.cell_center(c) for c in cells))
