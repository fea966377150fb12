import numpy as np
import pytest

from vesselnav.gridmap import GeoMap


@pytest.fixture
def open_map():
    """9x9 all-water map, origin (0, 0), cell 0.0005 deg."""
    return GeoMap(0.0, 0.0, 0.0005, np.zeros((9, 9), dtype=np.uint8))


@pytest.fixture
def bay_map():
    """11x11 map with a land block in the middle and a west coast."""
    cells = np.zeros((11, 11), dtype=np.uint8)
    cells[:, 0] = 1            # west coast column
    cells[4:7, 4:7] = 1        # central island
    return GeoMap(0.0, 0.0, 0.0005, cells)


def random_map(rng: np.random.Generator, width: int, height: int,
               p_land: float = 0.3, cell_size: float = 0.0005) -> GeoMap:
    """Random occupancy map guaranteed to contain at least two water cells."""
    while True:
        cells = (rng.random((height, width)) < p_land).astype(np.uint8)
        if (cells == 0).sum() >= 2:
            return GeoMap(0.0, 0.0, cell_size, cells)
