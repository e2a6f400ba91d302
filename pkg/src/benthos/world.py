"""Procedural benthic worlds: oyster reefs, shipwrecks and rock obstacles.

A world is a metric grid with one semantic label and one elevation per
cell. Arrays are indexed ``[iy, ix]``; cell ``(ix, iy)`` covers
``[ix*cs, (ix+1)*cs) x [iy*cs, (iy+1)*cs)`` in world metres, with the
seafloor datum at elevation 0.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from .geometry import wrap_angle

SEAFLOOR, OYSTER, WRECK, OBSTACLE = 0, 1, 2, 3
LABEL_NAMES = {SEAFLOOR: "seafloor", OYSTER: "oyster", WRECK: "wreck", OBSTACLE: "obstacle"}
LABEL_TOKENS = {SEAFLOOR: ".", OYSTER: "o", WRECK: "w", OBSTACLE: "#"}
TOKEN_LABELS = {v: k for k, v in LABEL_TOKENS.items()}
# labels the vehicle cannot pass through
BLOCKING_LABELS = (WRECK, OBSTACLE)

OYSTER_KINDS = ("oyster-fringing", "oyster-string", "oyster-patch", "oyster-mixed")
WORLD_KINDS = OYSTER_KINDS + ("shipwreck",)
WRECK_MODELS = ("ellipse", "ship", "barge", "broken", "tug")

MAGIC = "BENTHOS-WORLD"
FORMAT_VERSION = 1

EIGHT = np.ones((3, 3), dtype=bool)


class ConfigError(ValueError):
    """Invalid generation or run configuration; ``field`` names the offender."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class WorldFormatError(ValueError):
    """Malformed world file."""

    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class WorldVersionError(WorldFormatError):
    pass


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; ``z`` is the camera altitude above the seafloor datum."""

    x: float
    y: float
    yaw: float = 0.0
    z: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(eq=False)
class WorldSpec:
    width_m: float
    length_m: float
    cell_size_m: float
    heightfield: np.ndarray
    labels: np.ndarray
    spawn: Pose2D
    seed: int
    kind: str = "custom"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.heightfield = np.asarray(self.heightfield, dtype=np.float64)
        if self.labels.shape != self.heightfield.shape:
            raise ConfigError("heightfield", "shape differs from labels")
        self.labels.setflags(write=False)
        self.heightfield.setflags(write=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @property
    def nx(self) -> int:
        return self.labels.shape[1]

    @property
    def ny(self) -> int:
        return self.labels.shape[0]

    @property
    def target_label(self) -> int:
        return WRECK if self.kind == "shipwreck" else OYSTER

    def target_mask(self) -> np.ndarray:
        return self.labels == self.target_label

    def blocking_mask(self) -> np.ndarray:
        return np.isin(self.labels, BLOCKING_LABELS)

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        return int(math.floor(x / self.cell_size_m)), int(math.floor(y / self.cell_size_m))

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width_m and 0.0 <= y < self.length_m

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldSpec):
            return NotImplemented
        return (
            self.width_m == other.width_m
            and self.length_m == other.length_m
            and self.cell_size_m == other.cell_size_m
            and self.spawn == other.spawn
            and self.seed == other.seed
            and self.kind == other.kind
            and np.array_equal(self.labels, other.labels)
            and self.heightfield.tobytes() == other.heightfield.tobytes()
        )


# ---------------------------------------------------------------- config


@dataclass
class FringingParams:
    band_width_m: Tuple[float, float] = (2.0, 3.5)
    side_fraction: Tuple[float, float] = (0.45, 0.7)
    gap_count: Tuple[int, int] = (1, 3)


@dataclass
class StringParams:
    vertices: Tuple[int, int] = (3, 4)
    spacing_m: float = 2.5
    blob_radius_m: Tuple[float, float] = (0.6, 1.3)
    length_m: Tuple[float, float] = (18.0, 28.0)


@dataclass
class PatchParams:
    count: Tuple[int, int] = (4, 6)
    radius_m: Tuple[float, float] = (1.0, 2.5)
    min_separation_m: float = 7.0


@dataclass
class ObstacleParams:
    count: Tuple[int, int] = (5, 8)
    radius_m: Tuple[float, float] = (0.5, 1.2)
    height_m: Tuple[float, float] = (1.5, 3.0)
    clearance_m: float = 1.5


@dataclass
class WreckParams:
    model: Optional[str] = None
    length_m: Tuple[float, float] = (12.0, 18.0)
    beam_m: Tuple[float, float] = (3.0, 5.5)
    height_m: Tuple[float, float] = (2.0, 5.0)
    offset_m: Tuple[float, float] = (7.0, 10.0)


@dataclass
class GenerationConfig:
    kind: str = "oyster-patch"
    seed: int = 0
    width_m: float = 45.0
    length_m: float = 45.0
    cell_size_m: float = 0.5
    robot_radius_m: float = 0.5
    altitude_m: float = 2.0
    extent_range_m: Optional[Tuple[float, float]] = (40.0, 50.0)
    oyster_height_m: Tuple[float, float] = (0.2, 0.5)
    fringing: FringingParams = field(default_factory=FringingParams)
    string: StringParams = field(default_factory=StringParams)
    patch: PatchParams = field(default_factory=PatchParams)
    obstacles: ObstacleParams = field(default_factory=ObstacleParams)
    wreck: WreckParams = field(default_factory=WreckParams)

    def validate(self) -> None:
        if self.kind not in WORLD_KINDS:
            raise ConfigError("kind", f"unknown world kind {self.kind!r}")
        if not self.cell_size_m > 0:
            raise ConfigError("cell_size_m", "must be positive")
        for name in ("width_m", "length_m"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigError(name, "must be positive")
            if self.extent_range_m is not None:
                lo, hi = self.extent_range_m
                if not lo <= value <= hi:
                    raise ConfigError(name, f"{value} outside [{lo}, {hi}] m")
            n = value / self.cell_size_m
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(name, "not a whole number of cells")
        if self.robot_radius_m < 0:
            raise ConfigError("robot_radius_m", "must be non-negative")
        _check_range("oyster_height_m", self.oyster_height_m, positive=True)
        _check_range("fringing.band_width_m", self.fringing.band_width_m, positive=True)
        _check_range("fringing.side_fraction", self.fringing.side_fraction, positive=True, upper=1.0)
        _check_range("fringing.gap_count", self.fringing.gap_count)
        _check_range("string.vertices", self.string.vertices, positive=True)
        _check_range("string.blob_radius_m", self.string.blob_radius_m, positive=True)
        _check_range("string.length_m", self.string.length_m, positive=True)
        if not self.string.spacing_m > 0:
            raise ConfigError("string.spacing_m", "must be positive")
        _check_range("patch.count", self.patch.count, positive=True)
        _check_range("patch.radius_m", self.patch.radius_m, positive=True)
        if self.patch.min_separation_m < 0:
            raise ConfigError("patch.min_separation_m", "must be non-negative")
        _check_range("obstacles.count", self.obstacles.count)
        _check_range("obstacles.radius_m", self.obstacles.radius_m, positive=True)
        _check_range("obstacles.height_m", self.obstacles.height_m, positive=True)
        _check_range("wreck.length_m", self.wreck.length_m, positive=True)
        _check_range("wreck.beam_m", self.wreck.beam_m, positive=True)
        _check_range("wreck.height_m", self.wreck.height_m, positive=True)
        _check_range("wreck.offset_m", self.wreck.offset_m)
        if self.wreck.model is not None and self.wreck.model not in WRECK_MODELS:
            raise ConfigError("wreck.model", f"unknown wreck model {self.wreck.model!r}")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GenerationConfig":
        sub = {
            "fringing": FringingParams,
            "string": StringParams,
            "patch": PatchParams,
            "obstacles": ObstacleParams,
            "wreck": WreckParams,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(key, "unknown generation key")
            if key in sub:
                if not isinstance(value, dict):
                    raise ConfigError(key, "expected a mapping")
                sub_known = {f.name for f in dataclasses.fields(sub[key])}
                for k in value:
                    if k not in sub_known:
                        raise ConfigError(f"{key}.{k}", "unknown generation key")
                value = sub[key](**{k: _tuplify(v) for k, v in value.items()})
            else:
                value = _tuplify(value)
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _tuplify(value):
    return tuple(value) if isinstance(value, list) else value


def _check_range(name: str, pair, positive: bool = False, upper: Optional[float] = None) -> None:
    try:
        lo, hi = pair
    except (TypeError, ValueError):
        raise ConfigError(name, "expected a (low, high) pair") from None
    if lo > hi:
        raise ConfigError(name, f"low {lo} exceeds high {hi}")
    if lo < 0 or (positive and lo <= 0):
        raise ConfigError(name, "must be positive" if positive else "must be non-negative")
    if upper is not None and hi > upper:
        raise ConfigError(name, f"must not exceed {upper}")


def load_generation_config(path) -> GenerationConfig:
    """Read a generation config from JSON or YAML."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return GenerationConfig.from_dict(data)


# ---------------------------------------------------------------- generation


class _Canvas:
    """Mutable label/height rasters plus metric helpers used while generating."""

    def __init__(self, cfg: GenerationConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.cs = cfg.cell_size_m
        self.nx = int(round(cfg.width_m / self.cs))
        self.ny = int(round(cfg.length_m / self.cs))
        self.labels = np.full((self.ny, self.nx), SEAFLOOR, dtype=np.uint8)
        self.heights = np.zeros((self.ny, self.nx))
        ys, xs = np.mgrid[0 : self.ny, 0 : self.nx]
        self.xc = (xs + 0.5) * self.cs
        self.yc = (ys + 0.5) * self.cs

    def blob(self, cx: float, cy: float, radius: float) -> np.ndarray:
        """Irregular star-shaped blob: radius modulated by a few low harmonics."""
        dx, dy = self.xc - cx, self.yc - cy
        ang = np.arctan2(dy, dx)
        r = np.full_like(ang, radius)
        for k in (2, 3, 5):
            amp = self.rng.uniform(0.0, 0.12)
            ph = self.rng.uniform(0.0, 2 * math.pi)
            r = r * (1.0 + amp * np.cos(k * ang + ph))
        mask = dx * dx + dy * dy <= r * r
        # never degenerate to nothing on coarse grids
        ix, iy = int(cx // self.cs), int(cy // self.cs)
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            mask[iy, ix] = True
        return mask

    def paint_oysters(self, mask: np.ndarray) -> None:
        mask = mask & (self.labels == SEAFLOOR)
        lo, hi = self.cfg.oyster_height_m
        self.labels[mask] = OYSTER
        self.heights[mask] = self.rng.uniform(lo, hi, size=int(mask.sum()))

    def centre(self) -> Tuple[float, float]:
        return self.cfg.width_m / 2.0, self.cfg.length_m / 2.0


def _fringing(c: _Canvas) -> None:
    p = c.cfg.fringing
    rng = c.rng
    side = int(rng.integers(0, 4))
    along_len = c.cfg.length_m if side in (0, 1) else c.cfg.width_m
    frac = rng.uniform(*p.side_fraction)
    seg = frac * along_len
    start = rng.uniform(0.0, along_len - seg)
    width = rng.uniform(*p.band_width_m)
    # s: coordinate along the boundary, d: distance in from it
    if side == 0:
        s, d = c.yc, c.xc
    elif side == 1:
        s, d = c.yc, c.cfg.width_m - c.xc
    elif side == 2:
        s, d = c.xc, c.yc
    else:
        s, d = c.xc, c.cfg.length_m - c.yc
    wav = width * (1.0 + 0.25 * np.sin(2 * math.pi * s / rng.uniform(6.0, 12.0) + rng.uniform(0, 6.3)))
    band = (s >= start) & (s <= start + seg) & (d <= wav) & (d >= 0.5)
    n_gaps = int(rng.integers(p.gap_count[0], p.gap_count[1] + 1))
    for _ in range(n_gaps):
        g = rng.uniform(start + 2.0, start + seg - 2.0) if seg > 4.0 else start
        band &= ~((s > g - 0.75) & (s < g + 0.75))
    c.paint_oysters(band)


def _string(c: _Canvas) -> None:
    p = c.cfg.string
    rng = c.rng
    n_vert = int(rng.integers(p.vertices[0], p.vertices[1] + 1))
    total = rng.uniform(*p.length_m)
    inset = 5.0
    seg_len = total / max(n_vert - 1, 1)
    cx, cy = c.centre()
    x = rng.uniform(inset, c.cfg.width_m - inset)
    y = rng.uniform(inset, c.cfg.length_m - inset)
    heading = rng.uniform(-math.pi, math.pi)
    pts = [(x, y)]
    for _ in range(n_vert - 1):
        for _attempt in range(20):
            h = heading + rng.uniform(-0.8, 0.8)
            nx_, ny_ = x + seg_len * math.cos(h), y + seg_len * math.sin(h)
            if inset <= nx_ <= c.cfg.width_m - inset and inset <= ny_ <= c.cfg.length_m - inset:
                break
            # steer back toward the centre when leaving the interior
            heading = math.atan2(cy - y, cx - x)
        else:
            nx_, ny_ = x, y
        heading = h
        x, y = nx_, ny_
        pts.append((x, y))
    mask = np.zeros_like(c.labels, dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        length = math.hypot(x1 - x0, y1 - y0)
        n = max(int(length // p.spacing_m), 1)
        for k in range(n + 1):
            t = k / n
            mask |= c.blob(x0 + t * (x1 - x0), y0 + t * (y1 - y0), rng.uniform(*p.blob_radius_m))
    c.paint_oysters(mask)


def _patch(c: _Canvas, count: Optional[int] = None) -> None:
    p = c.cfg.patch
    rng = c.rng
    n = count if count is not None else int(rng.integers(p.count[0], p.count[1] + 1))
    inset = 3.0 + p.radius_m[1]
    centres = []
    attempts = 0
    while len(centres) < n and attempts < 2000:
        attempts += 1
        x = rng.uniform(inset, c.cfg.width_m - inset)
        y = rng.uniform(inset, c.cfg.length_m - inset)
        if all(math.hypot(x - a, y - b) >= p.min_separation_m for a, b in centres):
            centres.append((x, y))
    mask = np.zeros_like(c.labels, dtype=bool)
    for x, y in centres:
        mask |= c.blob(x, y, rng.uniform(*p.radius_m))
    c.paint_oysters(mask)


def _mixed(c: _Canvas) -> None:
    combo = int(c.rng.integers(0, 3))
    if combo == 0:
        _fringing(c)
        _patch(c, count=2)
    elif combo == 1:
        _string(c)
        _patch(c, count=2)
    else:
        _fringing(c)
        _string(c)


def _wreck_footprint(model: str, u: np.ndarray, v: np.ndarray, length: float, beam: float) -> np.ndarray:
    """Footprint in hull coordinates (u along the keel, v athwartships)."""
    hl, hb = length / 2.0, beam / 2.0
    if model == "ellipse":
        return (u / hl) ** 2 + (v / hb) ** 2 <= 1.0
    if model == "ship":
        body = (u >= -hl) & (u <= hl / 2) & (np.abs(v) <= hb)
        bow = (u > hl / 2) & (u <= hl) & (np.abs(v) <= hb * (hl - u) / (hl / 2))
        return body | bow
    if model == "barge":
        box = (np.abs(u) <= hl) & (np.abs(v) <= hb)
        chamfer = np.abs(u) + np.abs(v) <= hl + hb - min(hb, 1.5)
        return box & chamfer
    if model == "broken":
        aft = (u >= -hl) & (u <= 0.5) & (np.abs(v) <= hb)
        ang = math.radians(25.0)
        ur = u * math.cos(ang) + v * math.sin(ang)
        vr = -u * math.sin(ang) + v * math.cos(ang)
        fore = (ur >= -0.5) & (ur <= hl * 0.9) & (np.abs(vr) <= hb * 0.85)
        return aft | fore
    if model == "tug":
        hl2, hb2 = hl * 0.6, hb * 1.3
        stern = ((u + hl2 * 0.3) / (hl2 * 0.7)) ** 2 + (v / hb2) ** 2 <= 1.0
        fore = (u >= -hl2 * 0.3) & (u <= hl2) & (np.abs(v) <= hb2 * (1.0 - 0.5 * np.clip(u / hl2, 0, 1)))
        return stern | fore
    raise ConfigError("wreck.model", f"unknown wreck model {model!r}")


def _wreck(c: _Canvas, model_index: int) -> None:
    p = c.cfg.wreck
    rng = c.rng
    model = p.model or WRECK_MODELS[model_index % len(WRECK_MODELS)]
    length = rng.uniform(*p.length_m)
    beam = rng.uniform(*p.beam_m)
    cx, cy = c.centre()
    direction = rng.uniform(-math.pi, math.pi)
    offset = rng.uniform(*p.offset_m)
    wx, wy = cx + offset * math.cos(direction), cy + offset * math.sin(direction)
    orient = rng.uniform(-math.pi, math.pi)
    dx, dy = c.xc - wx, c.yc - wy
    u = dx * math.cos(orient) + dy * math.sin(orient)
    v = -dx * math.sin(orient) + dy * math.cos(orient)
    mask = _wreck_footprint(model, u, v, length, beam)
    mask &= (c.xc > 1.0) & (c.xc < c.cfg.width_m - 1.0) & (c.yc > 1.0) & (c.yc < c.cfg.length_m - 1.0)
    lab, n = ndimage.label(mask, structure=EIGHT)
    if n > 1:
        sizes = ndimage.sum(mask, lab, index=range(1, n + 1))
        mask = lab == (int(np.argmax(sizes)) + 1)
    base = rng.uniform(p.height_m[0], (p.height_m[0] + p.height_m[1]) / 2.0)
    # superstructure rises toward mid-ships
    rise = (p.height_m[1] - base) * np.clip(1.0 - np.abs(u) / (length / 2.0), 0.0, 1.0)
    c.labels[mask] = WRECK
    c.heights[mask] = np.minimum(base + rise[mask], p.height_m[1])


def _obstacles(c: _Canvas) -> None:
    p = c.cfg.obstacles
    rng = c.rng
    n = int(rng.integers(p.count[0], p.count[1] + 1))
    if n == 0:
        return
    occupied = c.labels != SEAFLOOR
    if occupied.any():
        dist = ndimage.distance_transform_edt(~occupied) * c.cs
    else:
        dist = np.full(c.labels.shape, np.inf)
    cx, cy = c.centre()
    placed = 0
    attempts = 0
    while placed < n and attempts < 500:
        attempts += 1
        r = rng.uniform(*p.radius_m)
        x = rng.uniform(r + 1.0, c.cfg.width_m - r - 1.0)
        y = rng.uniform(r + 1.0, c.cfg.length_m - r - 1.0)
        if math.hypot(x - cx, y - cy) < r + 4.0:
            continue
        mask = c.blob(x, y, r)
        if dist[mask].min() < p.clearance_m:
            continue
        c.labels[mask] = OBSTACLE
        c.heights[mask] = rng.uniform(*p.height_m)
        dist = np.minimum(dist, ndimage.distance_transform_edt(~mask) * c.cs)
        placed += 1


def _spawn(c: _Canvas) -> Pose2D:
    blocking = np.isin(c.labels, BLOCKING_LABELS)
    if blocking.any():
        clearance = ndimage.distance_transform_edt(~blocking) * c.cs
    else:
        clearance = np.full(c.labels.shape, np.inf)
    need = c.cfg.robot_radius_m + 2.0 * c.cs
    ok = (c.labels == SEAFLOOR) & (clearance >= need)
    if not ok.any():
        raise ConfigError("obstacles", "no spawn cell with enough clearance")
    cx, cy = c.centre()
    d2 = (c.xc - cx) ** 2 + (c.yc - cy) ** 2
    d2 = np.where(ok, d2, np.inf)
    iy, ix = np.unravel_index(int(np.argmin(d2)), d2.shape)
    yaw = float(c.rng.uniform(-math.pi, math.pi))
    return Pose2D(float(c.xc[iy, ix]), float(c.yc[iy, ix]), yaw, c.cfg.altitude_m)


def generate_world(cfg: GenerationConfig, wreck_model_index: int = 0) -> WorldSpec:
    """Build a world as a pure function of the config (including its seed)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    c = _Canvas(cfg, rng)
    if cfg.kind == "oyster-fringing":
        _fringing(c)
    elif cfg.kind == "oyster-string":
        _string(c)
    elif cfg.kind == "oyster-patch":
        _patch(c)
    elif cfg.kind == "oyster-mixed":
        _mixed(c)
    else:
        _wreck(c, wreck_model_index)
    if not (c.labels == (WRECK if cfg.kind == "shipwreck" else OYSTER)).any():
        raise ConfigError("kind", "generated layout has no target cells")
    _obstacles(c)
    spawn = _spawn(c)
    return WorldSpec(
        width_m=float(cfg.width_m),
        length_m=float(cfg.length_m),
        cell_size_m=float(cfg.cell_size_m),
        heightfield=c.heights,
        labels=c.labels,
        spawn=spawn,
        seed=int(cfg.seed),
        kind=cfg.kind,
    )


def target_components(labels_mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """8-connected components of a boolean mask."""
    return ndimage.label(labels_mask, structure=EIGHT)


# ---------------------------------------------------------------- file format


def save_world(spec: WorldSpec, path) -> None:
    """Write the versioned text format (floats as repr, so round trips are exact)."""
    lines = [
        MAGIC,
        f"version {FORMAT_VERSION}",
        f"kind {spec.kind}",
        f"dims {spec.nx} {spec.ny}",
        f"extent {spec.width_m!r} {spec.length_m!r}",
        f"cell_size {spec.cell_size_m!r}",
        f"seed {spec.seed}",
        f"spawn {spec.spawn.x!r} {spec.spawn.y!r} {spec.spawn.yaw!r} {spec.spawn.z!r}",
        "labels",
    ]
    for row in spec.labels:
        lines.append("".join(LABEL_TOKENS[int(v)] for v in row))
    lines.append("heights")
    for row in spec.heightfield:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_world(path) -> WorldSpec:
    text = Path(path).read_text()
    return parse_world(text)


def parse_world(text: str) -> WorldSpec:
    lines = text.split("\n")
    pos = 0

    def take(expect: Optional[str] = None) -> Tuple[int, list]:
        nonlocal pos
        if pos >= len(lines) or (lines[pos] == "" and pos == len(lines) - 1):
            raise WorldFormatError("unexpected end of file (truncated)", pos + 1)
        lineno, parts = pos + 1, lines[pos].split()
        pos += 1
        if expect is not None and (not parts or parts[0] != expect):
            raise WorldFormatError(f"expected {expect!r}, got {lines[lineno - 1]!r}", lineno)
        return lineno, parts

    def number(lineno: int, token: str, conv):
        try:
            return conv(token)
        except ValueError:
            raise WorldFormatError(f"bad number {token!r}", lineno) from None

    lineno, parts = take()
    if parts != [MAGIC]:
        raise WorldFormatError("missing magic header", lineno)
    lineno, parts = take("version")
    if len(parts) != 2:
        raise WorldFormatError("bad version line", lineno)
    version = number(lineno, parts[1], int)
    if version != FORMAT_VERSION:
        raise WorldVersionError(f"unsupported world format version {version} (expected {FORMAT_VERSION})", lineno)
    lineno, parts = take("kind")
    if len(parts) != 2:
        raise WorldFormatError("bad kind line", lineno)
    kind = parts[1]
    lineno, parts = take("dims")
    if len(parts) != 3:
        raise WorldFormatError("bad dims line", lineno)
    nx, ny = number(lineno, parts[1], int), number(lineno, parts[2], int)
    if nx <= 0 or ny <= 0:
        raise WorldFormatError("dims must be positive", lineno)
    lineno, parts = take("extent")
    if len(parts) != 3:
        raise WorldFormatError("bad extent line", lineno)
    width, length = number(lineno, parts[1], float), number(lineno, parts[2], float)
    lineno, parts = take("cell_size")
    if len(parts) != 2:
        raise WorldFormatError("bad cell_size line", lineno)
    cs = number(lineno, parts[1], float)
    if not cs > 0:
        raise WorldFormatError("cell_size must be positive", lineno)
    lineno, parts = take("seed")
    if len(parts) != 2:
        raise WorldFormatError("bad seed line", lineno)
    seed = number(lineno, parts[1], int)
    lineno, parts = take("spawn")
    if len(parts) != 5:
        raise WorldFormatError("bad spawn line", lineno)
    sx, sy, syaw, sz = (number(lineno, t, float) for t in parts[1:])
    take("labels")
    labels = np.empty((ny, nx), dtype=np.uint8)
    for r in range(ny):
        lineno, _ = take()
        row = lines[lineno - 1]
        if len(row) != nx:
            raise WorldFormatError(f"label row has {len(row)} cells, expected {nx}", lineno)
        for col, tok in enumerate(row):
            if tok not in TOKEN_LABELS:
                raise WorldFormatError(f"unknown label token {tok!r} at column {col + 1}", lineno)
            labels[r, col] = TOKEN_LABELS[tok]
    take("heights")
    heights = np.empty((ny, nx))
    for r in range(ny):
        lineno, parts = take()
        if len(parts) != nx:
            raise WorldFormatError(f"height row has {len(parts)} values, expected {nx}", lineno)
        heights[r] = [number(lineno, t, float) for t in parts]
    take("end")
    if abs(width / cs - nx) > 1e-9 or abs(length / cs - ny) > 1e-9:
        raise WorldFormatError("extent does not match dims x cell_size")
    spawn = Pose2D(sx, sy, syaw, sz)
    if spawn.yaw != syaw:
        raise WorldFormatError("spawn yaw not normalised")
    return WorldSpec(width, length, cs, heights, labels, spawn, seed, kind)
