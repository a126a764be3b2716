"""Shared domain types and the uniform time grid.

Positions are in feet, times in seconds. Every timestamp is snapped to a
global grid ``k * dt`` anchored at t = 0, so data from different cameras
share frame indices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_DT = 0.04


class GridError(ValueError):
    pass


class Point(NamedTuple):
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class FrameConfig:
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Fragment:
    """A time-ordered run of positions for one tracked object.

    ``t``, ``x`` and ``y`` are read-only float arrays of equal length.
    ``gt_id`` is optional provenance written by the benchmark generator.
    """

    id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    length: float = 15.0
    width: float = 6.0
    direction: int = 1
    gt_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "y", _frozen(self.y))
        n = self.t.size
        if n == 0:
            raise ValueError(f"fragment {self.id!r} has no points")
        if self.x.size != n or self.y.size != n:
            raise ValueError(f"fragment {self.id!r}: t/x/y lengths differ")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError(f"fragment {self.id!r}: timestamps not strictly increasing")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError(f"fragment {self.id!r}: non-finite position")
        if self.direction not in (1, -1):
            raise ValueError(f"fragment {self.id!r}: direction must be +1 or -1")
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"fragment {self.id!r}: dimensions must be positive")

    @classmethod
    def from_points(cls, id: str, points: Iterable[Point], **kw) -> "Fragment":
        pts = list(points)
        return cls(id, [p.t for p in pts], [p.x for p in pts], [p.y for p in pts], **kw)

    @property
    def points(self) -> list[Point]:
        return [Point(float(a), float(b), float(c)) for a, b, c in zip(self.t, self.x, self.y)]

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def n_points(self) -> int:
        return int(self.t.size)

    def __len__(self):
        return self.n_points

    def __eq__(self, other):
        if not isinstance(other, Fragment):
            return NotImplemented
        return (
            self.id == other.id
            and self.length == other.length
            and self.width == other.width
            and self.direction == other.direction
            and self.gt_id == other.gt_id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = object.__hash__


@dataclass(eq=False)
class Trajectory:
    """A rectified vehicle trajectory on a uniform grid.

    Derivative series follow the finite-difference length decrements:
    v has N-1 entries, a has N-2 and j has N-3. ``ex``/``ey`` are the
    recovered outliers on the observed frames only. ``rectified`` is False
    when the grid was too short to solve and the raw positions were passed
    through.
    """

    id: str
    fragment_ids: list[str]
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    theta: np.ndarray
    ex: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ey: np.ndarray = field(default_factory=lambda: np.zeros(0))
    length: float = 15.0
    width: float = 6.0
    direction: int = 1
    rectified: bool = True

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])


def frame_index(t, dt: float = DEFAULT_DT) -> np.ndarray:
    """Nearest global frame index for each timestamp."""
    return np.rint(np.asarray(t, dtype=np.float64) / dt).astype(np.int64)


def resample_to_grid(t: Sequence[float], x: Sequence[float], y: Sequence[float], dt: float = DEFAULT_DT):
    """Snap points onto the global grid.

    Returns ``(t_grid, xs, ys, mask)``. Unobserved grid entries are NaN in
    ``xs``/``ys`` and False in ``mask``. Two points landing on the same
    frame raise ``GridError("duplicate frame")``.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        empty = np.zeros(0)
        return empty, empty.copy(), empty.copy(), np.zeros(0, dtype=bool)
    if np.any(np.diff(t) < 0):
        raise GridError("points are not time-ordered")
    k = frame_index(t, dt)
    if np.any(np.diff(k) == 0):
        raise GridError("duplicate frame")
    k0 = int(k[0])
    n = int(k[-1]) - k0 + 1
    idx = k - k0
    xs = np.full(n, np.nan)
    ys = np.full(n, np.nan)
    mask = np.zeros(n, dtype=bool)
    xs[idx] = np.asarray(x, dtype=np.float64)
    ys[idx] = np.asarray(y, dtype=np.float64)
    mask[idx] = True
    t_grid = (k0 + np.arange(n)) * dt
    return t_grid, xs, ys, mask


def footprint(x, y, length, width, direction):
    """Axis-aligned roadway footprint ``(x0, x1, y0, y1)``.

    The reference point is the rear bottom-center; the box extends
    ``length`` ahead of it along the travel direction.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    front = x + np.asarray(length) * np.asarray(direction)
    return np.minimum(x, front), np.maximum(x, front), y - np.asarray(width) / 2, y + np.asarray(width) / 2
