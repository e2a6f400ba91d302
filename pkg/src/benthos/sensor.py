"""Simulated forward camera: depth and segmentation rendering, back-projection
to world points and height/semantic classification of those points.

Camera frame convention: x right, y down, z forward (optical axis). The
camera sits at the vehicle position at altitude ``pose.z`` and looks along
the vehicle heading with no pitch.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .world import OYSTER, WRECK, Pose2D, WorldSpec

# pushes a rendered hit just inside the struck cell so back-projected points
# never land exactly on a cell boundary
SURFACE_BIAS = 1e-4


class OutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def hfov(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    @classmethod
    def from_fov(cls, width: int = 128, height: int = 96, hfov: float = math.pi / 2) -> "CameraIntrinsics":
        f = round(width / (2.0 * math.tan(hfov / 2.0)), 9)  # 90 deg gives exactly width / 2
        return cls(f, f, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class DepthLimits:
    z_min: float = 0.1
    z_max: float = 20.0

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")


@dataclass
class SensorFrame:
    depth: np.ndarray  # (height, width) metres along the optical axis, NaN = no return
    segmentation: np.ndarray  # (height, width) uint8 in {0, 1}
    pose: Pose2D
    intrinsics: CameraIntrinsics
    limits: DepthLimits = field(default_factory=DepthLimits)
    hit_labels: Optional[np.ndarray] = None  # world label struck by each pixel, -1 where none

    def __post_init__(self):
        if self.depth.shape != self.segmentation.shape:
            raise ValueError("depth and segmentation shapes differ")

    def rgb_proxy(self) -> np.ndarray:
        """Label-coloured stand-in for the RGB image, darkened with range."""
        palette = np.array(
            [[194, 178, 128], [40, 170, 60], [150, 90, 40], [90, 90, 100], [20, 40, 80]], dtype=np.float64
        )
        labels = self.hit_labels if self.hit_labels is not None else np.where(np.isfinite(self.depth), 0, -1)
        idx = np.where(labels < 0, 4, labels)
        rgb = palette[idx]
        shade = np.where(np.isfinite(self.depth), 1.0 - 0.6 * np.nan_to_num(self.depth) / self.limits.z_max, 1.0)
        return np.clip(rgb * shade[..., None], 0, 255).astype(np.uint8)

    def depth_image(self) -> np.ndarray:
        """8-bit depth visualisation: near is bright, no return is black."""
        d = np.nan_to_num(self.depth, nan=np.inf)
        g = np.where(np.isfinite(d), 255.0 * (1.0 - np.clip(d / self.limits.z_max, 0, 1)), 0.0)
        return np.round(g).astype(np.uint8)


@dataclass
class ClassifiedPoints:
    obj: np.ndarray
    obs: np.ndarray
    empty: np.ndarray

    @property
    def total(self) -> int:
        return len(self.obj) + len(self.obs) + len(self.empty)

    @classmethod
    def empty_set(cls) -> "ClassifiedPoints":
        z = np.zeros((0, 3))
        return cls(z, z.copy(), z.copy())


@dataclass
class BackProjection:
    points: np.ndarray  # (N, 3) world frame
    pixels: np.ndarray  # (N, 2) integer (u, v)


# ---------------------------------------------------------------- transforms


def camera_to_world(pose: Pose2D) -> np.ndarray:
    """Homogeneous camera-to-world transform for a level forward camera."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    T = np.eye(4)
    T[:3, 0] = (s, -c, 0.0)  # camera x: starboard
    T[:3, 1] = (0.0, 0.0, -1.0)  # camera y: down
    T[:3, 2] = (c, s, 0.0)  # camera z: heading
    T[:3, 3] = (pose.x, pose.y, pose.z)
    return T


def backproject_pixels(u, v, z, intr: CameraIntrinsics, T: np.ndarray) -> np.ndarray:
    """Pinhole back-projection of pixels with depth, then homogeneous divide."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    cam = np.stack([(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z, np.ones_like(z)], axis=-1)
    hom = cam @ T.T
    return hom[..., :3] / hom[..., 3:4]


def project_points(points: np.ndarray, intr: CameraIntrinsics, T: np.ndarray) -> np.ndarray:
    """Inverse of :func:`backproject_pixels`: world points to (u, v, z)."""
    R, t = T[:3, :3], T[:3, 3]
    cam = (np.asarray(points) - t) @ R  # R^T (p - t) for each row
    z = cam[..., 2]
    u = intr.fx * cam[..., 0] / z + intr.cx
    v = intr.fy * cam[..., 1] / z + intr.cy
    return np.stack([u, v, z], axis=-1)


def backproject(frame: SensorFrame, T: Optional[np.ndarray] = None, limits: Optional[DepthLimits] = None) -> BackProjection:
    """World points for every pixel whose depth passes the validity window."""
    if T is None:
        T = camera_to_world(frame.pose)
    lim = limits or frame.limits
    d = frame.depth
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(d) & (d >= lim.z_min) & (d <= lim.z_max)
    vv, uu = np.nonzero(valid)
    pts = backproject_pixels(uu, vv, d[vv, uu], frame.intrinsics, T)
    return BackProjection(pts, np.stack([uu, vv], axis=1))


def classify_points(bp: BackProjection, frame: SensorFrame, h_min: float = 1.0, h_max: float = 10.0) -> ClassifiedPoints:
    """Split valid points into object / obstacle / free sets.

    The object test (segmentation mask) takes precedence; remaining points
    with elevation in ``[h_min, h_max]`` are obstacles; the rest are free.
    Elevations are measured from the seafloor datum.
    """
    if not h_min < h_max:
        raise ValueError("need h_min < h_max")
    if len(bp.points) == 0:
        return ClassifiedPoints.empty_set()
    m = frame.segmentation[bp.pixels[:, 1], bp.pixels[:, 0]] == 1
    zw = bp.points[:, 2]
    obs = ~m & (zw >= h_min) & (zw <= h_max)
    free = ~m & ~obs
    return ClassifiedPoints(bp.points[m], bp.points[obs], bp.points[free])


# ---------------------------------------------------------------- rendering


def render_frame(
    world: WorldSpec,
    pose: Pose2D,
    intrinsics: Optional[CameraIntrinsics] = None,
    limits: Optional[DepthLimits] = None,
    target_label: Optional[int] = None,
    flip_prob: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> SensorFrame:
    """Ray-march every pixel against the extruded heightfield.

    Each cell is a prism from the datum up to its elevation; cells outside
    the world behave as bare seafloor. Rays are traced per image column in
    the horizontal plane (exact cell-boundary crossings), and the first
    prism struck on each pixel ray gives its depth and label.
    """
    intr = intrinsics or CameraIntrinsics.from_fov()
    lim = limits or DepthLimits()
    if not world.contains(pose.x, pose.y):
        raise OutOfBoundsError(f"pose ({pose.x}, {pose.y}) outside world")
    if target_label is None:
        target_label = WRECK if world.kind == "shipwreck" else OYSTER
    cs = world.cell_size_m
    W, H = intr.width, intr.height
    a = (np.arange(W) - intr.cx) / intr.fx
    b = (np.arange(H) - intr.cy) / intr.fy
    L = np.sqrt(1.0 + a * a)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = (c + a * s) / L
    dy = (s - a * c) / L
    s_lim = lim.z_max * L
    gx, gy = pose.x / cs, pose.y / cs

    k = np.arange(int(math.ceil(s_lim.max() / cs)) + 2)
    sx = _crossings(gx, dx, k, cs)
    sy = _crossings(gy, dy, k, cs)
    S = np.sort(np.concatenate([np.zeros((W, 1)), sx, sy], axis=1), axis=1)
    s_in, s_out = S[:, :-1], S[:, 1:]
    valid = (s_out > s_in) & (s_in < s_lim[:, None]) & np.isfinite(s_out)
    mid = np.where(valid, 0.5 * (s_in + s_out), 0.0)
    ix = np.floor((pose.x + mid * dx[:, None]) / cs).astype(np.int64)
    iy = np.floor((pose.y + mid * dy[:, None]) / cs).astype(np.int64)
    inside = (ix >= 0) & (ix < world.nx) & (iy >= 0) & (iy < world.ny)
    ixc, iyc = np.clip(ix, 0, world.nx - 1), np.clip(iy, 0, world.ny - 1)
    elev = np.where(inside, world.heightfield[iyc, ixc], 0.0)
    lab = np.where(inside, world.labels[iyc, ixc].astype(np.int64), 0)

    z_in = s_in / L[:, None]
    z_out = np.where(valid, s_out / L[:, None], np.inf)
    dh = pose.z - elev
    with np.errstate(divide="ignore", invalid="ignore"):
        thr = np.where(dh > 0, dh / z_out, np.where(z_in > 0, dh / z_in, -np.inf))
    thr = np.where(valid, thr, np.inf)
    cm = np.minimum.accumulate(thr, axis=1)

    hits = cm[:, :, None] <= b[None, None, :]  # (W, N, H)
    any_hit = hits.any(axis=1)
    kk = hits.argmax(axis=1)  # (W, H)
    cols = np.arange(W)[:, None]
    dh_k = dh[cols, kk]
    zin_k = z_in[cols, kk]
    zout_k = z_out[cols, kk]
    bb = np.broadcast_to(b[None, :], kk.shape)
    wall = dh_k <= bb * zin_k
    with np.errstate(divide="ignore", invalid="ignore"):
        z_hit = np.where(wall, zin_k, dh_k / bb)
        z_hit = z_hit + np.minimum(SURFACE_BIAS, 0.5 * (zout_k - z_hit))
    ok = any_hit & (z_hit <= lim.z_max)
    depth = np.where(ok, z_hit, np.nan).T.copy()
    hit_lab = np.where(ok, lab[cols, kk], -1).T.copy()
    seg = (hit_lab == target_label).astype(np.uint8)
    if flip_prob > 0:
        rng = rng or np.random.default_rng(0)
        flips = (rng.random(seg.shape) < flip_prob) & ok.T
        seg = np.where(flips, 1 - seg, seg).astype(np.uint8)
    return SensorFrame(depth, seg, pose, intr, lim, hit_lab)


def _crossings(g0: float, d: np.ndarray, k: np.ndarray, cs: float) -> np.ndarray:
    """Ray parameters (metres) at successive grid-line crossings along one axis."""
    base = math.floor(g0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (base + 1 + k[None, :] - g0) * cs / d[:, None]
        neg = (base - k[None, :] - g0) * cs / d[:, None]
    out = np.where(d[:, None] > 0, pos, np.where(d[:, None] < 0, neg, np.inf))
    return np.where(out >= 0, out, np.inf)


# ---------------------------------------------------------------- frame dumps


def save_depth_pfm(depth: np.ndarray, path) -> None:
    """Portable float map, little-endian, rows stored bottom-up."""
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(depth[::-1], dtype="<f4").tobytes())


def load_depth_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"Pf":
        raise ValueError("not a greyscale PFM file")
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)
    return arr[::-1].astype(np.float32)


def save_pgm(image: np.ndarray, path, maxval: int = 255) -> None:
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def load_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM file")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w).copy()


def dump_frame(frame: SensorFrame, directory, stem: str = "frame") -> None:
    """Depth as PFM, segmentation as PGM (0/255)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_depth_pfm(frame.depth, d / f"{stem}_depth.pfm")
    save_pgm(frame.segmentation * 255, d / f"{stem}_seg.pgm")
