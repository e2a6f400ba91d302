"""Small geometric kernels shared by the sensor, mapping and control layers."""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    a = np.fmod(angles, TWO_PI)
    a = np.where(a <= -math.pi, a + TWO_PI, a)
    return np.where(a > math.pi, a - TWO_PI, a)


def supercover(dx: int, dy: int) -> List[Tuple[int, int]]:
    """Cells touched by the segment joining cell centres (0, 0) and (dx, dy).

    A cell is touched when its closed square intersects the segment, so a
    segment passing exactly through a grid corner picks up both side cells
    as well as the diagonal one. The list runs from the start cell to the
    end cell; side cells at a corner are emitted before the diagonal cell.
    """
    nx, ny = abs(dx), abs(dy)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    x = y = 0
    ix = iy = 0
    cells = [(0, 0)]
    while ix < nx or iy < ny:
        # sign of (t_x - t_y), the parameters of the next vertical/horizontal crossing
        d = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if d == 0:
            cells.append((x + sx, y))
            cells.append((x, y + sy))
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif d < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        cells.append((x, y))
    return cells


def segment_cells(x0: float, y0: float, x1: float, y1: float, cell_size: float) -> List[Tuple[int, int]]:
    """Cells (ix, iy) crossed by a metric segment, walked with an Amanatides-Woo DDA.

    Used for swept-path checks where the end points are arbitrary positions,
    not cell centres. Corner crossings include both side cells.
    """
    gx0, gy0 = x0 / cell_size, y0 / cell_size
    gx1, gy1 = x1 / cell_size, y1 / cell_size
    ix, iy = int(math.floor(gx0)), int(math.floor(gy0))
    ex, ey = int(math.floor(gx1)), int(math.floor(gy1))
    cells = [(ix, iy)]
    ddx, ddy = gx1 - gx0, gy1 - gy0
    sx = 1 if ddx > 0 else -1
    sy = 1 if ddy > 0 else -1
    t_dx = abs(1.0 / ddx) if ddx != 0 else math.inf
    t_dy = abs(1.0 / ddy) if ddy != 0 else math.inf
    if ddx > 0:
        t_x = (ix + 1 - gx0) * t_dx
    elif ddx < 0:
        t_x = (gx0 - ix) * t_dx
    else:
        t_x = math.inf
    if ddy > 0:
        t_y = (iy + 1 - gy0) * t_dy
    elif ddy < 0:
        t_y = (gy0 - iy) * t_dy
    else:
        t_y = math.inf
    n = abs(ex - ix) + abs(ey - iy)
    while n > 0 and min(t_x, t_y) <= 1.0:
        if abs(t_x - t_y) <= 1e-9:  # corner, up to rounding
            cells.append((ix + sx, iy))
            cells.append((ix, iy + sy))
            ix += sx
            iy += sy
            t_x += t_dx
            t_y += t_dy
            n -= 2
        elif t_x < t_y:
            ix += sx
            t_x += t_dx
            n -= 1
        else:
            iy += sy
            t_y += t_dy
            n -= 1
        cells.append((ix, iy))
    return cells


def rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])
