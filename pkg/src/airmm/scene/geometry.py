"""2D scenes: rectangular buildings, one base station, one user."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import rng as rngmod

GRID_SIZE = 16
SIDE_RANGE = (100.0, 200.0)
BUILDING_COUNT = (3, 8)
# building edge length as a fraction of the area side
BUILDING_FRACTION = (0.20, 0.40)
MAX_ATTEMPTS = 1000
MIN_UE_BS_DISTANCE = 5.0

Rect = tuple  # (x_min, y_min, x_max, y_max)


@dataclass(frozen=True)
class Scene:
    side_length: float
    buildings: tuple
    bs_pos: tuple
    bs_boresight: float
    ue_pos: tuple | None = None

    def with_ue(self, ue_pos) -> "Scene":
        return replace(self, ue_pos=(float(ue_pos[0]), float(ue_pos[1])))

    def occupancy_grid(self, n: int = GRID_SIZE) -> np.ndarray:
        """n x n bytes, row i covering y in [i, i+1) * side/n; 1 where a cell centre is inside a building."""
        centers = (np.arange(n) + 0.5) * self.side_length / n
        xs, ys = np.meshgrid(centers, centers)
        grid = np.zeros((n, n), dtype=np.uint8)
        for x0, y0, x1, y1 in self.buildings:
            grid[(xs > x0) & (xs < x1) & (ys > y0) & (ys < y1)] = 1
        return grid

    def environment_vector(self) -> np.ndarray:
        """Occupancy grid followed by BS and UE coordinates normalised by the side length (260 values)."""
        s = self.side_length
        return np.concatenate([
            self.occupancy_grid().reshape(-1).astype(np.float64),
            np.array(self.bs_pos) / s,
            np.array(self.ue_pos) / s,
        ])


def point_in_rect(p, rect, margin: float = 0.0) -> bool:
    x0, y0, x1, y1 = rect
    return x0 - margin < p[0] < x1 + margin and y0 - margin < p[1] < y1 + margin


def rects_overlap(a: Rect, b: Rect, gap: float = 0.0) -> bool:
    return not (a[2] + gap <= b[0] or b[2] + gap <= a[0] or a[3] + gap <= b[1] or b[3] + gap <= a[1])


def segment_hits_rect(p, q, rect, eps: float = 1e-9) -> bool:
    """True when segment p-q passes through the interior of ``rect`` (slab clipping).

    Touching a boundary at a single point does not count, so a reflected
    ray ending on a wall is not blocked by that wall.
    """
    t0, t1 = 0.0, 1.0
    for axis in (0, 1):
        lo, hi = rect[axis], rect[axis + 2]
        d = q[axis] - p[axis]
        if abs(d) < 1e-15:
            if not lo < p[axis] < hi:
                return False
            continue
        ta = (lo - p[axis]) / d
        tb = (hi - p[axis]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t1 - t0 <= eps:
            return False
    return t1 - t0 > eps


def segment_blocked(p, q, buildings) -> bool:
    return any(segment_hits_rect(p, q, r) for r in buildings)


def generate_scene(seed: int, area_index: int) -> Scene:
    """Deterministic random area: side in [100, 200] m, 3-8 disjoint buildings, BS in free space."""
    attempt = 0
    while True:
        scene = _try_scene(rngmod.stream(seed, area_index, attempt, rngmod.SCENE))
        if scene is not None:
            return scene
        attempt += 1


def _try_scene(gen: np.random.Generator) -> Scene | None:
    side = float(gen.uniform(*SIDE_RANGE))
    count = int(gen.integers(BUILDING_COUNT[0], BUILDING_COUNT[1] + 1))
    rects: list[Rect] = []
    tries = 0
    while len(rects) < count:
        tries += 1
        if tries > MAX_ATTEMPTS:
            return None
        w, h = gen.uniform(*BUILDING_FRACTION, size=2) * side
        x0 = gen.uniform(0.02 * side, 0.98 * side - w)
        y0 = gen.uniform(0.02 * side, 0.98 * side - h)
        cand = (float(x0), float(y0), float(x0 + w), float(y0 + h))
        if any(rects_overlap(cand, r, gap=2.0) for r in rects):
            continue
        rects.append(cand)
    for _ in range(MAX_ATTEMPTS):
        bs = gen.uniform(0.05 * side, 0.95 * side, size=2)
        if not any(point_in_rect(bs, r, margin=1.0) for r in rects):
            break
    else:
        return None
    boresight = float(gen.uniform(0.0, math.pi))
    return Scene(side, tuple(rects), (float(bs[0]), float(bs[1])), boresight)


def sample_ue_position(scene: Scene, gen: np.random.Generator):
    """Uniform free-space UE position at least MIN_UE_BS_DISTANCE from the BS (None after MAX_ATTEMPTS)."""
    s = scene.side_length
    for _ in range(MAX_ATTEMPTS):
        p = gen.uniform(0.01 * s, 0.99 * s, size=2)
        if any(point_in_rect(p, r, margin=0.5) for r in scene.buildings):
            continue
        if math.dist(p, scene.bs_pos) < MIN_UE_BS_DISTANCE:
            continue
        return float(p[0]), float(p[1])
    return None
