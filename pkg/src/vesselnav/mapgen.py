"""Procedural water maps: smoothed-noise land blobs with connected water."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .gridmap import GeoMap, InfeasibleMapError


def generate_map(width: int, height: int, cell_size: float,
                 origin: tuple = (0.0, 0.0), land_fraction: float = 0.2,
                 smooth_sigma: float = 2.0,
                 rng: np.random.Generator | None = None) -> GeoMap:
    """Sample a map whose water cells form a single 8-connected body.

    Gaussian-smoothed noise is thresholded at the requested land quantile;
    every water pocket except the largest is then filled in, so the final land
    fraction can exceed the requested one slightly.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not 0.0 <= land_fraction < 1.0:
        raise ValueError("land_fraction must be in [0, 1)")
    noise = rng.standard_normal((height, width))
    smooth = ndimage.gaussian_filter(noise, sigma=smooth_sigma, mode="reflect")
    if land_fraction == 0.0:
        land = np.zeros((height, width), dtype=bool)
    else:
        land = smooth > np.quantile(smooth, 1.0 - land_fraction)
    water = ~land
    labels, n_components = ndimage.label(water, structure=np.ones((3, 3)))
    if n_components == 0:
        raise InfeasibleMapError("generated map has no water at all")
    sizes = ndimage.sum(water, labels, index=range(1, n_components + 1))
    main = int(np.argmax(sizes)) + 1
    cells = (labels != main).astype(np.uint8)
    if int((cells == 0).sum()) < 2:
        raise InfeasibleMapError("largest water body is smaller than two cells")
    return GeoMap(origin[0], origin[1], cell_size, cells)
