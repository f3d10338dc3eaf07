"""Patch grids over large tiles, heatmap stitching and normalization.

Analysis uses non-overlapping grids (overlap 0); visualization uses
one-tenth overlapping, locally normalized patches. The final row/column
of a grid is clamped so patches never run past the tile edge.
"""

from dataclasses import dataclass, field

import numpy as np

from .lrp import Heatmap


@dataclass
class PatchGrid:
    tile_height: int
    tile_width: int
    patch_size: int
    stride: int
    origins: list  # [(y, x), ...] row-major

    def __len__(self):
        return len(self.origins)


@dataclass
class TileHeatmap:
    """Stitched full-tile relevance raster with per-pixel coverage."""

    values: np.ndarray       # (h, w) float32
    coverage: np.ndarray     # (h, w) int32, >= 1 everywhere for legal grids
    normalization: str = "raw"
    divisor: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.coverage = np.asarray(self.coverage, dtype=np.int32)

    @property
    def shape(self):
        return self.values.shape


def _axis_origins(extent: int, patch: int, stride: int) -> list:
    xs = list(range(0, extent - patch + 1, stride))
    if xs[-1] != extent - patch:
        xs.append(extent - patch)  # clamp the last origin to the edge
    return xs


def plan_grid(tile_dims, patch_size: int = 200,
              overlap_fraction: float = 0.0) -> PatchGrid:
    """Patch origins covering a tile.

    stride = round(patch_size * (1 - overlap_fraction)); the final origin
    per axis is clamped so the grid reaches the tile edge exactly.
    """
    th, tw = int(tile_dims[0]), int(tile_dims[1])
    if not 0.0 <= overlap_fraction <= 0.95:
        raise ValueError(
            f"overlap_fraction must be within [0, 0.95], got {overlap_fraction}"
        )
    if th < patch_size or tw < patch_size:
        raise ValueError(
            f"tile {th}x{tw} is smaller than patch size {patch_size}"
        )
    stride = max(1, round(patch_size * (1.0 - overlap_fraction)))
    origins = [(y, x)
               for y in _axis_origins(th, patch_size, stride)
               for x in _axis_origins(tw, patch_size, stride)]
    return PatchGrid(tile_height=th, tile_width=tw, patch_size=patch_size,
                     stride=stride, origins=origins)


def stitch(patch_heatmaps, grid: PatchGrid) -> TileHeatmap:
    """Aggregate per-patch heatmaps onto the tile canvas.

    Overlapping pixels take the mean of all contributing patches, joined
    in grid order.
    """
    if len(patch_heatmaps) != len(grid.origins):
        raise ValueError(
            f"got {len(patch_heatmaps)} heatmaps for {len(grid.origins)} "
            f"grid origins"
        )
    p = grid.patch_size
    acc = np.zeros((grid.tile_height, grid.tile_width), dtype=np.float64)
    cov = np.zeros((grid.tile_height, grid.tile_width), dtype=np.int32)
    for hm, (y, x) in zip(patch_heatmaps, grid.origins):
        values = hm.values if isinstance(hm, Heatmap) else np.asarray(hm)
        if values.shape != (p, p):
            raise ValueError(
                f"patch heatmap at origin ({y},{x}) has shape {values.shape}, "
                f"expected ({p},{p})"
            )
        acc[y : y + p, x : x + p] += values
        cov[y : y + p, x : x + p] += 1
    return TileHeatmap(values=(acc / cov).astype(np.float32), coverage=cov)


def _values_of(m):
    return m.values if hasattr(m, "values") else np.asarray(m)


def _with_values(m, values, policy, divisor):
    if isinstance(m, TileHeatmap):
        return TileHeatmap(values=values, coverage=m.coverage.copy(),
                           normalization=policy, divisor=divisor,
                           provenance=dict(m.provenance))
    if isinstance(m, Heatmap):
        return Heatmap(values=values, normalization=policy, divisor=divisor,
                       provenance=dict(m.provenance))
    return values


def normalize(maps, policy: str = "global"):
    """Scale heatmaps into [-1, 1].

    global: one shared divisor, the max absolute value over the whole set;
    local: each map divided by its own max absolute value. All-zero maps
    (or sets) are returned unchanged with divisor recorded as 1.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("normalize needs a non-empty set of maps")
    if policy not in ("global", "local"):
        raise ValueError(f"unknown normalization policy '{policy}'")
    arrays = [_values_of(m) for m in maps]
    if policy == "global":
        divisor = max(float(np.abs(a).max()) for a in arrays)
        divisors = [divisor if divisor > 0 else 1.0] * len(maps)
    else:
        divisors = [float(np.abs(a).max()) or 1.0 for a in arrays]
    return [
        _with_values(m, (a / d).astype(np.float32), policy, d)
        for m, a, d in zip(maps, arrays, divisors)
    ]
