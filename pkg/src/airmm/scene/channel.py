"""Multipath tracing and the wideband ULA channel.

h(f) = sum_i alpha_i exp(-j 2 pi f tau_i) a(theta_i), with
a(theta)_m = exp(-j beta m cos theta) and beta = 2 pi d f / c.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, PreconditionError
from .geometry import Scene, point_in_rect, segment_blocked

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class ChannelConfig:
    n_t: int = 16
    n_c: int = 16
    f_center: float = 28e9
    bandwidth: float = 50e6
    antenna_spacing: float | None = None  # None -> half wavelength at f_center
    c: float = SPEED_OF_LIGHT
    max_paths: int = 5
    reflection_coeff: float = 0.3

    def __post_init__(self):
        if self.n_t < 2 or self.n_c < 2:
            raise ConfigError(f"need n_t >= 2 and n_c >= 2, got {self.n_t}, {self.n_c}")
        if not 0 < self.bandwidth < self.f_center:
            raise ConfigError("need 0 < bandwidth < f_center")
        if self.max_paths < 1:
            raise ConfigError("max_paths must be positive")
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", self.c / self.f_center / 2.0)

    @property
    def frequencies(self) -> np.ndarray:
        k = np.arange(self.n_c)
        return self.f_center + (k - (self.n_c - 1) / 2.0) * self.bandwidth / (self.n_c - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(**d)


@dataclass(frozen=True)
class Path:
    alpha: complex
    tau: float
    theta: float
    bounces: int


@dataclass(frozen=True)
class PathSet:
    paths: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def has_direct(self) -> bool:
        return any(p.bounces == 0 for p in self.paths)


def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def _make_path(length: float, direction, bounces: int, scene: Scene, cfg: ChannelConfig) -> Path:
    tau = length / cfg.c
    amp = cfg.c / (4 * math.pi * cfg.f_center * length) * cfg.reflection_coeff ** bounces
    phase = -2 * math.pi * cfg.f_center * tau
    theta = _wrap(math.atan2(direction[1], direction[0]) - scene.bs_boresight)
    return Path(complex(amp * math.cos(phase), amp * math.sin(phase)), tau, theta, bounces)


def _edges(rect):
    """(axis, coordinate, outward sign, lo, hi) for the four walls of a rectangle."""
    x0, y0, x1, y1 = rect
    return (
        (0, x0, -1, y0, y1),
        (0, x1, +1, y0, y1),
        (1, y0, -1, x0, x1),
        (1, y1, +1, x0, x1),
    )


def reflection_point(bs, ue, edge):
    """Specular point on ``edge`` for bs -> wall -> ue, or None when the geometry does not allow one."""
    axis, coord, sign, lo, hi = edge
    other = 1 - axis
    # both endpoints must face the reflecting side of the wall
    if (bs[axis] - coord) * sign <= 0 or (ue[axis] - coord) * sign <= 0:
        return None
    image = list(bs)
    image[axis] = 2 * coord - bs[axis]
    t = (coord - image[axis]) / (ue[axis] - image[axis])
    along = image[other] + t * (ue[other] - image[other])
    if not lo <= along <= hi:
        return None
    p = [0.0, 0.0]
    p[axis] = coord
    p[other] = along
    return tuple(p), tuple(image)


def trace_paths(scene: Scene, config: ChannelConfig) -> PathSet:
    """Direct path plus first-order wall reflections (image method), strongest ``max_paths`` kept."""
    if scene.ue_pos is None:
        raise PreconditionError("scene has no UE position")
    bs, ue = scene.bs_pos, scene.ue_pos
    for r in scene.buildings:
        if point_in_rect(ue, r):
            raise PreconditionError(f"UE {ue} lies inside building {r}")
    paths = []
    if not segment_blocked(bs, ue, scene.buildings):
        paths.append(_make_path(math.dist(bs, ue), (ue[0] - bs[0], ue[1] - bs[1]), 0, scene, config))
    for rect in scene.buildings:
        for edge in _edges(rect):
            hit = reflection_point(bs, ue, edge)
            if hit is None:
                continue
            p, image = hit
            if segment_blocked(bs, p, scene.buildings) or segment_blocked(p, ue, scene.buildings):
                continue
            paths.append(_make_path(math.dist(image, ue), (p[0] - bs[0], p[1] - bs[1]), 1, scene, config))
    paths.sort(key=lambda q: (-abs(q.alpha), q.tau))
    return PathSet(tuple(paths[: config.max_paths]))


def steering_vector(theta: float, f: float, config: ChannelConfig) -> np.ndarray:
    beta = 2 * math.pi * config.antenna_spacing * f / config.c
    return np.exp(-1j * beta * np.arange(config.n_t) * math.cos(theta))


def channel_response(paths: PathSet, f: float, config: ChannelConfig) -> np.ndarray:
    h = np.zeros(config.n_t, dtype=np.complex128)
    for p in paths:
        h += p.alpha * np.exp(-2j * math.pi * f * p.tau) * steering_vector(p.theta, f, config)
    return h


def csi_matrix(paths: PathSet, config: ChannelConfig) -> np.ndarray:
    """n_t x n_c complex matrix; column k is the response at subcarrier k."""
    return np.stack([channel_response(paths, f, config) for f in config.frequencies], axis=1)
