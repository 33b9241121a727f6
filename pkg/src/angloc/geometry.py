"""Sparse planar array layouts on an integer grid and their difference co-arrays.

All layouts live on a master grid (8x8 by default, coordinates 0..7 on each
axis). Element lists for the named sparse families are fixed here so that the
same geometry can be masked out of a full URA recording:

    URA        every grid point (64 elements on 8x8)
    URA-5x5    the 5x5 corner block, coordinates 0..4
    Nested     Cartesian product of the 1D two-level nested set {0, 1, 2, 5}
    Open-Box   bottom row y=0 plus side columns x=0 and x=7 for y=1..4
    Billboard  full board row y=4 on two posts x=1 and x=6, y=0..3
    Coprime    Cartesian product of the 1D coprime set for the pair (2, 3),
               i.e. 3*{0, 1} U 2*{0, 1, 2} = {0, 2, 3, 4}
    Random     ``count`` distinct cells drawn uniformly with a seeded RNG
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MASTER_GRID = (8, 8)

GEOMETRY_KINDS = (
    "URA",
    "URA-5x5",
    "Nested",
    "Open-Box",
    "Billboard",
    "Coprime",
    "Random",
)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridArray:
    """Sensor layout on an integer grid with physical pitch ``pitch`` in meters."""

    elements: tuple[tuple[int, int], ...]
    pitch: float
    name: str = "custom"
    grid: tuple[int, int] = MASTER_GRID

    def __post_init__(self):
        elements = tuple((int(x), int(y)) for x, y in self.elements)
        object.__setattr__(self, "elements", elements)
        if not elements:
            raise GeometryError("array needs at least one element")
        if len(set(elements)) != len(elements):
            raise GeometryError("duplicate element coordinates")
        if not self.pitch > 0:
            raise GeometryError("pitch must be positive")
        gx, gy = self.grid
        for x, y in elements:
            if not (0 <= x < gx and 0 <= y < gy):
                raise GeometryError(f"element {(x, y)} outside {gx}x{gy} grid")

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def indices(self) -> np.ndarray:
        """(M, 2) integer coordinates."""
        return np.asarray(self.elements, dtype=int)

    @property
    def positions(self) -> np.ndarray:
        """(M, 3) physical sensor positions in meters, array plane z = 0."""
        p = np.zeros((self.size, 3))
        p[:, :2] = self.indices * self.pitch
        return p

    def subset(self, mask_elements, name: str | None = None) -> "GridArray":
        """Return the array restricted to ``mask_elements`` (kept in this array's order)."""
        keep = set(map(tuple, mask_elements))
        missing = keep - set(self.elements)
        if missing:
            raise GeometryError(f"mask elements not in array: {sorted(missing)}")
        return GridArray(
            tuple(e for e in self.elements if e in keep),
            self.pitch,
            name or self.name,
            self.grid,
        )

    def mask_indices(self, other: "GridArray") -> np.ndarray:
        """Row indices of ``other``'s elements inside this array."""
        lookup = {e: i for i, e in enumerate(self.elements)}
        try:
            return np.array([lookup[e] for e in other.elements], dtype=int)
        except KeyError as exc:
            raise GeometryError(f"element {exc.args[0]} not part of {self.name}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pitch_m": self.pitch,
            "elements": [list(e) for e in self.elements],
        }

    @classmethod
    def from_dict(cls, data: dict, grid: tuple[int, int] = MASTER_GRID) -> "GridArray":
        return cls(
            tuple(tuple(e) for e in data["elements"]),
            float(data["pitch_m"]),
            data.get("name", "custom"),
            grid,
        )


def default_pitch(carrier: float = 18e3, sound_speed: float = 343.0) -> float:
    """Half-wavelength pitch at ``carrier`` (about 9.53 mm at 18 kHz)."""
    return sound_speed / carrier / 2


def _product(xs, ys):
    return tuple((x, y) for y in ys for x in xs)


def _coprime_1d(m: int, n: int) -> list[int]:
    return sorted(set(range(0, n * m, n)) | set(range(0, m * n, m)))


def make_geometry(kind: str, pitch: float | None = None, *, grid=MASTER_GRID, **params) -> GridArray:
    """Construct one of the named layouts.

    Parameters
    ----------
    kind : str
        One of :data:`GEOMETRY_KINDS`.
    pitch : float, optional
        Grid spacing in meters. Defaults to half a wavelength at 18 kHz.
    grid : (int, int)
        Master grid size.
    **params
        ``URA``: ``shape=(nx, ny)``; ``Coprime``: ``pair=(m, n)``;
        ``Nested``: ``levels=(n1, n2)``; ``Random``: ``count``, ``seed``.
    """
    pitch = default_pitch() if pitch is None else pitch
    gx, gy = grid
    if kind == "URA":
        nx, ny = params.get("shape", grid)
        elements = _product(range(nx), range(ny))
    elif kind == "URA-5x5":
        elements = _product(range(5), range(5))
    elif kind == "Nested":
        line = _nested_1d(*params.get("levels", (2, 2)))
        if line[-1] >= min(gx, gy):
            raise GeometryError(f"nested levels span {line[-1] + 1} cells, grid is {grid}")
        elements = _product(line, line)
    elif kind == "Open-Box":
        height = params.get("height", 4)
        elements = tuple((x, 0) for x in range(gx))
        elements += tuple((0, y) for y in range(1, height + 1))
        elements += tuple((gx - 1, y) for y in range(1, height + 1))
    elif kind == "Billboard":
        board = params.get("board_row", 4)
        posts = params.get("posts", (1, gx - 2))
        elements = tuple((x, board) for x in range(gx))
        elements += tuple((px, y) for px in posts for y in range(board))
    elif kind == "Coprime":
        m, n = params.get("pair", (2, 3))
        if math.gcd(m, n) != 1:
            raise GeometryError(f"pair {(m, n)} is not coprime")
        line = _coprime_1d(m, n)
        elements = _product(line, line)
    elif kind == "Random":
        count = int(params.get("count", 16))
        if not 1 <= count <= gx * gy:
            raise GeometryError(f"count {count} does not fit a {gx}x{gy} grid")
        rng = np.random.default_rng(params.get("seed", 0))
        cells = np.sort(rng.choice(gx * gy, size=count, replace=False))
        elements = tuple((int(c % gx), int(c // gx)) for c in cells)
    else:
        raise GeometryError(f"unknown geometry kind {kind!r}")
    return GridArray(tuple(elements), pitch, kind, grid)


def _nested_1d(n1: int, n2: int) -> list[int]:
    # Pal-Vaidyanathan two-level nested set shifted to start at 0:
    # inner 1..n1, outer (n1+1)*k for k = 1..n2
    line = list(range(1, n1 + 1)) + [(n1 + 1) * k for k in range(1, n2 + 1)]
    return [v - 1 for v in sorted(set(line))]


@dataclass(frozen=True)
class CoArray:
    """Difference co-array with its origin-centred hole-free rectangle."""

    differences: frozenset
    half_extent: tuple[int, int]
    bounds: tuple[tuple[int, int], tuple[int, int]]
    weights: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def extent(self) -> tuple[int, int]:
        """(M_x, M_y) of the virtual URA inscribed in the hole-free set."""
        ax, ay = self.half_extent
        return 2 * ax + 1, 2 * ay + 1

    @property
    def hole_free(self) -> frozenset:
        ax, ay = self.half_extent
        return frozenset((x, y) for x in range(-ax, ax + 1) for y in range(-ay, ay + 1))


def coarray_bruteforce(array: GridArray) -> set:
    """Pairwise difference set by a plain double loop."""
    out = set()
    for p1 in array.elements:
        for p2 in array.elements:
            out.add((p1[0] - p2[0], p1[1] - p2[1]))
    return out


def difference_coarray(array: GridArray) -> CoArray:
    """Difference set, multiplicities and the largest origin-centred hole-free rectangle.

    Among rectangles [-a, a] x [-b, b] fully contained in the difference set the
    one with the most points wins; ties go to the more square one, then to the
    wider one.
    """
    idx = array.indices
    d = (idx[:, None, :] - idx[None, :, :]).reshape(-1, 2)
    uniq, counts = np.unique(d, axis=0, return_counts=True)
    diffs = frozenset(map(tuple, uniq.tolist()))
    weights = {tuple(u): int(c) for u, c in zip(uniq.tolist(), counts.tolist())}

    lo = tuple(int(v) for v in uniq.min(axis=0))
    hi = tuple(int(v) for v in uniq.max(axis=0))
    # occupancy grid over the bounding box; contiguity checked via cumulative sums
    ox, oy = -lo[0], -lo[1]
    occ = np.zeros((hi[0] - lo[0] + 1, hi[1] - lo[1] + 1), dtype=int)
    occ[uniq[:, 0] + ox, uniq[:, 1] + oy] = 1
    csum = np.zeros((occ.shape[0] + 1, occ.shape[1] + 1), dtype=int)
    csum[1:, 1:] = occ.cumsum(0).cumsum(1)

    def full(a, b):
        x0, x1 = ox - a, ox + a + 1
        y0, y1 = oy - b, oy + b + 1
        if x0 < 0 or y0 < 0 or x1 > occ.shape[0] or y1 > occ.shape[1]:
            return False
        total = csum[x1, y1] - csum[x0, y1] - csum[x1, y0] + csum[x0, y0]
        return total == (2 * a + 1) * (2 * b + 1)

    best = (0, 0)
    best_key = (1, 1, 0)
    b_max = hi[1]
    for a in range(0, hi[0] + 1):
        if not full(a, 0):
            break
        b = 0
        while b + 1 <= b_max and full(a, b + 1):
            b += 1
        b_max = b  # wider rectangles can only be shorter
        key = ((2 * a + 1) * (2 * b + 1), min(a, b), a)
        if key > best_key:
            best_key, best = key, (a, b)
    return CoArray(diffs, best, (lo, hi), weights)


@dataclass(frozen=True)
class SmoothingPlan:
    virtual_extent: tuple[int, int]
    window: tuple[int, int]
    offsets: tuple[tuple[int, int], ...]

    @property
    def window_size(self) -> int:
        return self.window[0] * self.window[1]

    def window_array(self, pitch: float, name: str = "virtual") -> GridArray:
        """Virtual URA of the smoothing window, element order matches the smoothed covariance."""
        lx, ly = self.window
        return GridArray(_product(range(lx), range(ly)), pitch, name, (lx, ly))


def default_window(extent: tuple[int, int]) -> tuple[int, int]:
    return tuple(int(math.ceil(m / 2)) for m in extent)


def smoothing_plan(coarray: CoArray | tuple[int, int], window: tuple[int, int] | None = None) -> SmoothingPlan:
    """Enumerate the window offsets for 2D spatial smoothing over the virtual URA."""
    extent = coarray.extent if isinstance(coarray, CoArray) else tuple(coarray)
    mx, my = extent
    lx, ly = default_window(extent) if window is None else window
    if not (1 <= lx <= mx and 1 <= ly <= my):
        raise GeometryError(f"window {(lx, ly)} does not fit virtual extent {(mx, my)}")
    offsets = tuple((p, q) for q in range(my - ly + 1) for p in range(mx - lx + 1))
    return SmoothingPlan((mx, my), (lx, ly), offsets)


def save_geometry(array: GridArray, path) -> None:
    Path(path).write_text(json.dumps(array.to_dict(), indent=2) + "\n")


def load_geometry(path, grid=MASTER_GRID) -> GridArray:
    return GridArray.from_dict(json.loads(Path(path).read_text()), grid)
