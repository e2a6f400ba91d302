"""Occupancy map with an explored mask (fog of war) and obstacle inflation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .geometry import TWO_PI, supercover, wrap_angles
from .sensor import ClassifiedPoints, save_pgm
from .world import EIGHT, Pose2D, WorldSpec, target_components

UNKNOWN, FREE, OBSTACLE, TARGET = 0, 1, 2, 3
STATE_NAMES = ("unknown", "free", "obstacle", "target")

# frozen palette for the planner-facing render (RGB)
PALETTE = {
    "unexplored": (255, 255, 255),
    "explored": (128, 128, 128),
    "target": (0, 160, 0),
    "obstacle": (0, 0, 0),
    "robot": (220, 20, 20),
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class RayCastParams:
    fov: float = math.pi / 2
    d_max: float = 10.0

    def __post_init__(self):
        if not 0 < self.fov <= TWO_PI + 1e-12:
            raise ValueError("fov must lie in (0, 2*pi]")
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")


@dataclass
class OccupancyGrid:
    """Per-cell state plus explored and inflated layers, indexed ``[iy, ix]``.

    ``solid_targets`` marks missions whose target is itself a structure the
    vehicle must keep clear of (a wreck); target cells are then inflated like
    obstacles. They still do not occlude the explored-mask ray cast.
    """

    nx: int
    ny: int
    cell_size: float
    origin: Tuple[float, float] = (0.0, 0.0)
    solid_targets: bool = False
    state: np.ndarray = field(default=None)
    explored: np.ndarray = field(default=None)
    inflated: np.ndarray = field(default=None)
    dropped_points: int = 0

    def __post_init__(self):
        shape = (self.ny, self.nx)
        if self.state is None:
            self.state = np.zeros(shape, dtype=np.uint8)
        if self.explored is None:
            self.explored = np.zeros(shape, dtype=bool)
        if self.inflated is None:
            self.inflated = np.zeros(shape, dtype=bool)

    @classmethod
    def for_world(cls, world: WorldSpec) -> "OccupancyGrid":
        return cls(world.nx, world.ny, world.cell_size_m, solid_targets=world.kind == "shipwreck")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(
            self.nx,
            self.ny,
            self.cell_size,
            self.origin,
            self.solid_targets,
            self.state.copy(),
            self.explored.copy(),
            self.inflated.copy(),
            self.dropped_points,
        )

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.cell_size)),
            int(math.floor((y - self.origin[1]) / self.cell_size)),
        )

    def cell_centre(self, ix: int, iy: int) -> Tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size,
            self.origin[1] + (iy + 0.5) * self.cell_size,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.nx and 0 <= iy < self.ny

    def occluders(self) -> np.ndarray:
        return self.state == OBSTACLE

    def blocking(self) -> np.ndarray:
        b = self.state == OBSTACLE
        if self.solid_targets:
            b = b | (self.state == TARGET)
        return b

    def targets(self) -> np.ndarray:
        return self.state == TARGET

    def clusters(self) -> List[np.ndarray]:
        """Boolean masks of the 8-connected target components, in label order."""
        lab, n = target_components(self.targets())
        return [lab == i for i in range(1, n + 1)]


# ---------------------------------------------------------------- point fusion


def integrate_points(grid: OccupancyGrid, classified: ClassifiedPoints) -> OccupancyGrid:
    """Fuse classified points into cell states, in place.

    States only move up the ladder unknown < free < obstacle < target, so a
    confirmed structure is never demoted by later free-space returns.
    Out-of-bounds points are dropped and counted in ``grid.dropped_points``.
    """
    update = np.zeros(grid.shape, dtype=np.uint8)
    for pts, code in ((classified.empty, FREE), (classified.obs, OBSTACLE), (classified.obj, TARGET)):
        if len(pts) == 0:
            continue
        ix = np.floor((pts[:, 0] - grid.origin[0]) / grid.cell_size).astype(np.int64)
        iy = np.floor((pts[:, 1] - grid.origin[1]) / grid.cell_size).astype(np.int64)
        ok = (ix >= 0) & (ix < grid.nx) & (iy >= 0) & (iy < grid.ny)
        grid.dropped_points += int((~ok).sum())
        update[iy[ok], ix[ok]] = code  # later codes rank higher
    np.maximum(grid.state, update, out=grid.state)
    return grid


# ---------------------------------------------------------------- ray casting


class _RayTable:
    """Supercover interiors for every offset within a radius, sorted by range.

    Row ``i`` describes the segment from the origin cell centre to offset
    ``(dx[i], dy[i])``; ``interior`` lists the cells strictly between the
    two end cells, padded with ``valid == False``.
    """

    def __init__(self):
        self.radius = -1

    def ensure(self, radius: int) -> None:
        if radius <= self.radius:
            return
        r = max(radius, self.radius + 16, 24)
        ys, xs = np.mgrid[-r : r + 1, -r : r + 1]
        d2 = xs * xs + ys * ys
        keep = d2 <= r * r
        dx, dy, d2 = xs[keep], ys[keep], d2[keep]
        order = np.lexsort((dx, dy, d2))
        dx, dy, d2 = dx[order], dy[order], d2[order]
        paths = [supercover(int(a), int(b))[1:-1] for a, b in zip(dx, dy)]
        width = max(1, max(len(p) for p in paths))
        interior = np.zeros((len(paths), width, 2), dtype=np.int64)
        valid = np.zeros((len(paths), width), dtype=bool)
        lengths = np.zeros(len(paths), dtype=np.int64)
        for i, p in enumerate(paths):
            if p:
                interior[i, : len(p)] = p
                valid[i, : len(p)] = True
            lengths[i] = len(p)
        self.radius = r
        self.dx, self.dy, self.d2 = dx, dy, d2
        self.bearing = np.arctan2(dy, dx).astype(np.float64)
        self.interior, self.valid, self.lengths = interior, valid, lengths
        # prefix maxima let a query slice the padded path width to what it needs
        self.max_len_prefix = np.maximum.accumulate(lengths)


_TABLE = _RayTable()


def raycast_visible(
    grid: OccupancyGrid,
    cell: Tuple[int, int],
    yaw: float,
    params: RayCastParams,
    occluders: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Cells visible from ``cell`` within the heading sector and range.

    A cell is visible when its centre lies within ``d_max`` and within
    ``fov/2`` of ``yaw`` (ties included), and no occluding cell other than
    the origin and the cell itself is touched by the supercover of the
    segment joining the two cell centres. The first occluder on a line of
    sight is therefore visible and everything it shadows is not.
    """
    ox, oy = cell
    if not grid.in_bounds(ox, oy):
        raise GridError(f"pose cell {cell} outside grid")
    occ = grid.occluders() if occluders is None else occluders
    r_cells = params.d_max / grid.cell_size
    R = int(math.floor(r_cells + 1e-9))
    _TABLE.ensure(max(R, 1))
    t = _TABLE
    n = int(np.searchsorted(t.d2, r_cells * r_cells + 1e-9, side="right"))
    dx, dy = t.dx[:n], t.dy[:n]
    tx, ty = ox + dx, oy + dy
    cand = (tx >= 0) & (tx < grid.nx) & (ty >= 0) & (ty < grid.ny)
    if params.fov < TWO_PI - 1e-12:
        diff = np.abs(wrap_angles(t.bearing[:n] - yaw))
        in_sector = diff <= params.fov / 2.0 + 1e-9
        in_sector[(dx == 0) & (dy == 0)] = True
        cand &= in_sector
    idx = np.nonzero(cand)[0]
    visible = np.zeros(grid.shape, dtype=bool)
    if len(idx) == 0:
        return visible
    width = max(int(t.max_len_prefix[n - 1]), 1)
    pad = R + 1
    occ_p = np.pad(occ, pad, mode="constant", constant_values=False)
    inter = t.interior[idx, :width]
    hit = occ_p[oy + pad + inter[..., 1], ox + pad + inter[..., 0]] & t.valid[idx, :width]
    seen = idx[~hit.any(axis=1)]
    visible[ty[seen], tx[seen]] = True
    return visible


def update_explored(grid: OccupancyGrid, visible: np.ndarray) -> OccupancyGrid:
    """Union the visible set into the explored mask, in place."""
    np.logical_or(grid.explored, visible, out=grid.explored)
    return grid


def inflate_obstacles(grid: OccupancyGrid, robot_radius: float) -> OccupancyGrid:
    """Chebyshev dilation of blocking cells by ceil(radius / cell) cells, in place."""
    if robot_radius < 0:
        raise ValueError("robot_radius must be non-negative")
    k = int(math.ceil(robot_radius / grid.cell_size - 1e-9))
    blocking = grid.blocking()
    if k == 0:
        grid.inflated = blocking.copy()
    else:
        grid.inflated = ndimage.maximum_filter(blocking, size=2 * k + 1, mode="constant", cval=False)
    return grid


# ---------------------------------------------------------------- metrics


@dataclass
class CoverageReport:
    target_cells_total: int
    target_cells_explored: int
    coverage_rate: float
    completion_per_cluster: List[Tuple[int, bool]]


def completion_check(grid: OccupancyGrid, cluster: np.ndarray) -> bool:
    """A cluster is done when it and every cell 8-adjacent to it are explored."""
    ring = ndimage.binary_dilation(cluster, structure=EIGHT)
    return bool(grid.explored[ring].all())


def coverage(grid: OccupancyGrid, world: WorldSpec) -> CoverageReport:
    """Fraction of ground-truth target cells inside the explored mask."""
    if grid.shape != world.shape:
        raise GridError("grid and world geometry differ")
    target = world.target_mask()
    total = int(target.sum())
    if total == 0:
        raise GridError("world has no target cells; coverage undefined")
    explored = int((target & grid.explored).sum())
    lab, n = target_components(target)
    per = [(i, completion_check(grid, lab == i)) for i in range(1, n + 1)]
    return CoverageReport(total, explored, 100.0 * explored / total, per)


# ---------------------------------------------------------------- rendering


def render_map_image(grid: OccupancyGrid, pose: Optional[Pose2D] = None, scale: int = 4) -> np.ndarray:
    """North-up RGB render, ``scale`` pixels per cell, with an optional robot glyph."""
    img = np.empty(grid.shape + (3,), dtype=np.uint8)
    img[:] = PALETTE["unexplored"]
    img[grid.explored] = PALETTE["explored"]
    img[grid.state == OBSTACLE] = PALETTE["obstacle"]
    img[grid.state == TARGET] = PALETTE["target"]
    img = np.repeat(np.repeat(img[::-1], scale, axis=0), scale, axis=1)
    if pose is not None:
        _draw_robot(img, grid, pose, scale)
    return img


def _draw_robot(img: np.ndarray, grid: OccupancyGrid, pose: Pose2D, scale: int) -> None:
    h, w = img.shape[:2]
    px = (pose.x - grid.origin[0]) / grid.cell_size * scale
    py = h - (pose.y - grid.origin[1]) / grid.cell_size * scale
    rad = max(scale * 0.75, 1.5)
    ys, xs = np.mgrid[0:h, 0:w]
    dot = (xs + 0.5 - px) ** 2 + (ys + 0.5 - py) ** 2 <= rad * rad
    img[dot] = PALETTE["robot"]
    length = 4 * scale
    for k in range(int(length) + 1):
        x = int(math.floor(px + k * math.cos(pose.yaw)))
        y = int(math.floor(py - k * math.sin(pose.yaw)))
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = PALETTE["robot"]


def state_layer(grid: OccupancyGrid) -> np.ndarray:
    """Lossless byte layer: state code + 4 * explored, north-up."""
    return (grid.state + 4 * grid.explored.astype(np.uint8))[::-1].copy()


def save_state_pgm(grid: OccupancyGrid, path) -> None:
    save_pgm(state_layer(grid), path, maxval=7)


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(image).save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def write_map_snapshot(grid: OccupancyGrid, pose: Optional[Pose2D], directory, stem: str) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_state_pgm(grid, d / f"{stem}.pgm")
    save_png(render_map_image(grid, pose), d / f"{stem}.png")
    return d / f"{stem}.png"
