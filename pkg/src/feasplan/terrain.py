"""Elevation maps, synthetic terrain families and rotated patch sampling.

Maps store heights as a ``(height, width)`` array indexed ``data[y, x]``.
Cell ``(x, y)`` has its center at ``origin + (x, y) * resolution``.
Headings are measured from the +x axis towards +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RESOLUTION = 0.05
PATCH_SIDE = 16

FAMILIES = ("Flat", "Steps", "Gaps", "Bridge", "Valley", "Mixed")


class TerrainError(ValueError):
    """Invalid terrain specification."""


class OutOfBounds(ValueError):
    """Patch footprint leaves the map."""


class MapFormatError(ValueError):
    """Malformed map file."""


@dataclass(frozen=True, eq=False)
class ElevationMap:
    data: np.ndarray
    resolution: float = RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise TerrainError(f"map data must be a non-empty 2-D grid, got shape {data.shape}")
        if not self.resolution > 0:
            raise TerrainError(f"resolution must be positive, got {self.resolution}")
        if not np.all(np.isfinite(data)):
            raise TerrainError("map heights must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ElevationMap):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class HeightPatch:
    values: np.ndarray
    heading: float = 0.0
    resolution: float = RESOLUTION

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise TerrainError(f"patch must be square, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def side(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TerrainSpec:
    """Parameters for :func:`generate`.

    ``params`` holds family-specific geometry; missing keys fall back to the
    defaults in ``DEFAULT_PARAMS``. ``jitter`` is the half-width (meters) of
    seeded uniform per-cell height noise and is off by default.
    """

    family: str
    extent: tuple[float, float]
    params: dict = field(default_factory=dict)
    seed: int = 0

    def param(self, key):
        if key in self.params:
            return self.params[key]
        return DEFAULT_PARAMS[self.family][key]


_COMMON = {"resolution": RESOLUTION, "jitter": 0.0, "lead": 0.0}

DEFAULT_PARAMS = {
    "Flat": dict(_COMMON),
    "Steps": dict(
        _COMMON,
        layout="staircase",
        step_height=0.10,
        tread=0.4,
        # barrier layout: heights from the lateral center outwards
        heights=(0.14, 0.09, 0.04),
        segment_edges=(0.4, 0.9),
        band_start=1.6,
        band_length=0.8,
    ),
    "Gaps": dict(_COMMON, gap_width=0.15, platform=0.4, depth=0.5),
    "Bridge": dict(_COMMON, bridge_width=0.35, depth=0.5),
    "Valley": dict(_COMMON, incline_deg=50.0, entry=0.6),
    "Mixed": dict(_COMMON, buffer=1.0, order=("Steps", "Gaps", "Bridge", "Valley")),
}

_KNOWN_KEYS = {fam: set(p) for fam, p in DEFAULT_PARAMS.items()}
# Mixed forwards per-family geometry to its sections.
_KNOWN_KEYS["Mixed"] |= set().union(*(_KNOWN_KEYS[f] for f in FAMILIES if f != "Mixed"))


def check_spec(spec: TerrainSpec):
    if spec.family not in FAMILIES:
        raise TerrainError(f"unknown terrain family {spec.family!r}; expected one of {FAMILIES}")
    w, h = spec.extent
    if not (w > 0 and h > 0):
        raise TerrainError(f"extent must be positive, got {spec.extent}")
    unknown = set(spec.params) - _KNOWN_KEYS[spec.family]
    if unknown:
        raise TerrainError(f"unknown parameters for {spec.family}: {sorted(unknown)}")
    if spec.param("resolution") <= 0:
        raise TerrainError("resolution must be positive")
    if not 0 <= spec.param("jitter") <= 0.05:
        raise TerrainError("jitter must lie in [0, 0.05] m")
    if spec.param("lead") < 0:
        raise TerrainError("lead must be non-negative")
    if spec.family == "Steps":
        if not 0.05 - 1e-12 <= spec.param("step_height") <= 0.15 + 1e-12:
            raise TerrainError("step_height must lie in [0.05, 0.15] m")
        if spec.param("tread") <= 0:
            raise TerrainError("tread must be positive")
        if spec.param("layout") not in ("staircase", "barrier"):
            raise TerrainError(f"unknown Steps layout {spec.param('layout')!r}")
        heights = spec.param("heights")
        edges = spec.param("segment_edges")
        if len(heights) != len(edges) + 1 or any(not 0 <= z <= 0.5 for z in heights):
            raise TerrainError("barrier needs len(heights) == len(segment_edges) + 1, heights in [0, 0.5] m")
    elif spec.family == "Gaps":
        if spec.param("gap_width") <= 0 or spec.param("platform") <= 0:
            raise TerrainError("gap_width and platform must be positive")
        if spec.param("depth") <= 0.3:
            raise TerrainError("gap depth must exceed 0.3 m")
    elif spec.family == "Bridge":
        if spec.param("bridge_width") <= 0 or spec.param("depth") <= 0.3:
            raise TerrainError("bridge_width must be positive and depth must exceed 0.3 m")
    elif spec.family == "Valley":
        if not 0 < spec.param("incline_deg") < 80:
            raise TerrainError("incline_deg must lie in (0, 80)")
        if spec.param("entry") < 0:
            raise TerrainError("entry must be non-negative")


def _cells(length_m, res):
    return int(round(length_m / res))


def _feature_length(spec):
    """Along-axis extent left for the feature once the lead strips are removed."""
    return spec.extent[0] - 2 * spec.param("lead")


def _period(spec):
    fam = spec.family
    if fam == "Steps":
        if spec.param("layout") == "barrier":
            return spec.param("band_start") + spec.param("band_length")
        return spec.param("tread")
    if fam == "Gaps":
        return spec.param("platform") + spec.param("gap_width")
    if fam == "Valley":
        return 2 * spec.param("entry")
    if fam == "Bridge":
        return 2 * spec.param("resolution")
    return 0.0


def _flat(spec, nx, ny, res):
    return np.zeros((ny, nx))


def _steps(spec, nx, ny, res):
    lead = spec.param("lead")
    xs = np.arange(nx) * res
    if spec.param("layout") == "barrier":
        heights = spec.param("heights")
        edges = spec.param("segment_edges")
        ys = np.arange(ny) * res
        dy = np.abs(ys - (ny - 1) * res / 2)
        seg = np.searchsorted(np.asarray(edges) - 1e-9, dy, side="right")
        lateral = np.asarray(heights, dtype=float)[seg]
        start = spec.param("band_start")
        stop = start + spec.param("band_length")
        inside = (xs >= start - 1e-9) & (xs < stop - 1e-9)
        return np.outer(lateral, inside.astype(float))
    tread = spec.param("tread")
    n_treads = max(1, int(math.floor(_feature_length(spec) / tread + 1e-9)))
    band = np.floor((xs - lead) / tread + 1e-9).astype(int)
    level = np.where(
        (band >= 0) & (band < n_treads),
        np.minimum(band, n_treads - 1 - band),
        0,
    )
    profile = level * spec.param("step_height")
    return np.tile(profile, (ny, 1))


def _gaps(spec, nx, ny, res):
    lead = spec.param("lead")
    platform = _cells(spec.param("platform"), res)
    gap = _cells(spec.param("gap_width"), res)
    start = _cells(lead, res)
    stop = nx - start
    profile = np.zeros(nx)
    i = start + platform
    while i + gap + platform <= stop:
        profile[i : i + gap] = -spec.param("depth")
        i += gap + platform
    return np.tile(profile, (ny, 1))


def _bridge(spec, nx, ny, res):
    start = _cells(spec.param("lead"), res)
    stop = nx - start
    half = _cells(spec.param("bridge_width"), res)
    lo = (ny - half) // 2
    data = np.zeros((ny, nx))
    data[:, start:stop] = -spec.param("depth")
    data[lo : lo + half, start:stop] = 0.0
    return data


def _valley(spec, nx, ny, res):
    start = _cells(spec.param("lead"), res)
    stop = nx - start
    slope = math.tan(math.radians(spec.param("incline_deg")))
    # bottom row sits exactly on the lateral center (row ny // 2)
    dy = np.abs(np.arange(ny) - ny // 2) * res
    # the V deepens linearly over ``entry`` at both ends so it can be walked into
    xs = np.arange(nx)
    entry = max(1, _cells(spec.param("entry"), res))
    ramp = np.clip(np.minimum(xs - start + 1, stop - xs) / entry, 0.0, 1.0)
    ramp[(xs < start) | (xs >= stop)] = 0.0
    return np.outer(dy * slope, ramp)


def _mixed(spec, nx, ny, res):
    buffer = spec.param("buffer")
    order = spec.param("order")
    section = (spec.extent[0] - buffer * (len(order) + 1)) / len(order)
    if section <= 0:
        raise TerrainError(
            f"Mixed extent {spec.extent[0]} m leaves no room for {len(order)} sections "
            f"with {buffer} m buffers"
        )
    sec_cells = _cells(section, res)
    buf_cells = _cells(buffer, res)
    data = np.zeros((ny, nx))
    col = buf_cells
    for fam in order:
        params = {k: v for k, v in spec.params.items() if k in _KNOWN_KEYS[fam] and k != "lead"}
        params["lead"] = 0.0
        params["jitter"] = 0.0
        sub = TerrainSpec(fam, (sec_cells * res, spec.extent[1]), params, spec.seed)
        check_spec(sub)
        if section < _period(sub) - 1e-9:
            raise TerrainError(f"Mixed section of {section:.3f} m is shorter than one {fam} period")
        block = _BUILDERS[fam](sub, sec_cells, ny, res)
        data[:, col : col + sec_cells] = block
        col += sec_cells + buf_cells
    return data


_BUILDERS = {
    "Flat": _flat,
    "Steps": _steps,
    "Gaps": _gaps,
    "Bridge": _bridge,
    "Valley": _valley,
    "Mixed": _mixed,
}


def generate(spec: TerrainSpec) -> ElevationMap:
    """Build the elevation map described by ``spec``.

    Raises :class:`TerrainError` when the spec is invalid or the extent is
    too short to hold one feature period.
    """
    check_spec(spec)
    res = spec.param("resolution")
    nx = _cells(spec.extent[0], res)
    ny = _cells(spec.extent[1], res)
    if nx < 1 or ny < 1:
        raise TerrainError(f"extent {spec.extent} is smaller than one {res} m cell")
    if spec.family not in ("Flat", "Mixed"):
        if _feature_length(spec) < _period(spec) - 1e-9:
            raise TerrainError(
                f"{spec.family} extent {spec.extent[0]} m (lead {spec.param('lead')} m) "
                f"is shorter than one feature period of {_period(spec):.3f} m"
            )
        if spec.family == "Bridge" and spec.extent[1] < spec.param("bridge_width"):
            raise TerrainError("lateral extent narrower than the bridge")
    data = _BUILDERS[spec.family](spec, nx, ny, res)
    jitter = spec.param("jitter")
    if jitter > 0:
        rng = np.random.default_rng(spec.seed)
        data = data + rng.uniform(-jitter, jitter, size=data.shape)
    return ElevationMap(data, res)


def footprint_radius(side: int = PATCH_SIDE) -> float:
    return side / 2 * math.sqrt(2.0)


def valid_mask(width: int, height: int, side: int = PATCH_SIDE) -> np.ndarray:
    """Boolean ``(height, width)`` grid of cells whose rotated footprint fits."""
    r = footprint_radius(side)
    xs = np.arange(width)
    ys = np.arange(height)
    okx = (xs - r >= 0) & (xs + r <= width - 1)
    oky = (ys - r >= 0) & (ys + r <= height - 1)
    return oky[:, None] & okx[None, :]


def patch_offsets(side: int = PATCH_SIDE):
    """Forward (u) and lateral (v) cell offsets of the patch sample grid.

    ``values[r, c]`` samples offset ``u = c - side // 2`` along the heading and
    ``v = r - side // 2`` to its left; ``values[side // 2, side // 2]`` is the
    patch center.
    """
    k = np.arange(side) - side // 2
    u, v = np.meshgrid(k, k)
    return u.astype(float), v.astype(float)


def _snap(a):
    r = np.round(a)
    return np.where(np.abs(a - r) < 1e-9, r, a)


def sample_patches(data: np.ndarray, xs, ys, headings, side: int = PATCH_SIDE) -> np.ndarray:
    """Bilinear rotated patches around many cells at once.

    Returns an ``(n, side, side)`` array of center-normalized heights.
    Bounds are the caller's responsibility (see :func:`valid_mask`).
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, 1, 1)
    ys = np.asarray(ys, dtype=float).reshape(-1, 1, 1)
    th = np.asarray(headings, dtype=float).reshape(-1, 1, 1)
    u, v = patch_offsets(side)
    c, s = np.cos(th), np.sin(th)
    px = _snap(xs + u * c - v * s)
    py = _snap(ys + u * s + v * c)
    h, w = data.shape
    x0 = np.clip(np.floor(px).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(py).astype(np.int64), 0, max(h - 2, 0))
    fx = px - x0
    fy = py - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    center = side // 2
    return out - out[:, center : center + 1, center : center + 1]


def extract_patch(emap: ElevationMap, x: int, y: int, heading: float, side: int = PATCH_SIDE) -> HeightPatch:
    r = footprint_radius(side)
    if not (x - r >= 0 and x + r <= emap.width - 1 and y - r >= 0 and y + r <= emap.height - 1):
        raise OutOfBounds(
            f"patch footprint of radius {r:.2f} cells around ({x}, {y}) leaves the "
            f"{emap.width}x{emap.height} map"
        )
    values = sample_patches(emap.data, [x], [y], [heading], side)[0]
    return HeightPatch(values, float(heading), emap.resolution)


# -- file formats -------------------------------------------------------------

MAP_MAGIC = "FEASMAP 1"


def save_map(emap: ElevationMap, path) -> None:
    lines = [MAP_MAGIC, f"{emap.width} {emap.height} {emap.resolution!r} {emap.origin[0]!r} {emap.origin[1]!r}"]
    for row in emap.data:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_map(path) -> ElevationMap:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MAP_MAGIC:
        raise MapFormatError(f"{path}: line 1: expected header {MAP_MAGIC!r}")
    if len(lines) < 2:
        raise MapFormatError(f"{path}: line 2: missing dimension line")
    fields = lines[1].split()
    if len(fields) != 5:
        raise MapFormatError(f"{path}: line 2: expected 'W H resolution origin_x origin_y'")
    try:
        w, h = int(fields[0]), int(fields[1])
        res, ox, oy = (float(f) for f in fields[2:])
    except ValueError as exc:
        raise MapFormatError(f"{path}: line 2: {exc}") from None
    if w < 1 or h < 1 or not res > 0:
        raise MapFormatError(f"{path}: line 2: invalid dimensions {w}x{h} at resolution {res}")
    values = []
    for lineno, line in enumerate(lines[2:], start=3):
        for tok in line.split():
            try:
                val = float(tok)
            except ValueError:
                raise MapFormatError(f"{path}: line {lineno}: bad number {tok!r}") from None
            if not math.isfinite(val):
                raise MapFormatError(f"{path}: line {lineno}: non-finite value {tok!r}")
            values.append(val)
    if len(values) != w * h:
        raise MapFormatError(f"{path}: expected {w * h} heights (W*H = {w}*{h}), found {len(values)}")
    return ElevationMap(np.array(values).reshape(h, w), res, (ox, oy))


def write_pgm(path, grid: np.ndarray, lo=None, hi=None) -> None:
    """Write an 8-bit plain (P2) PGM, min-max scaled. Row 0 is written first."""
    grid = np.asarray(grid, dtype=float)
    lo = float(np.min(grid)) if lo is None else lo
    hi = float(np.max(grid)) if hi is None else hi
    if hi > lo:
        scaled = np.round((grid - lo) / (hi - lo) * 255)
    else:
        scaled = np.zeros_like(grid)
    pix = np.clip(scaled, 0, 255).astype(int)
    h, w = pix.shape
    rows = [" ".join(str(p) for p in row) for row in pix]
    Path(path).write_text(f"P2\n{w} {h}\n255\n" + "\n".join(rows) + "\n")
