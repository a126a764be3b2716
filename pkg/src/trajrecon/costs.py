"""Edge costs for the tracklet circulation graph.

Transition costs come from a cone-shaped motion prior: the predecessor is
extrapolated with a straight-line fit and the positional variance grows
linearly with elapsed time, ``alpha + beta * dt``. The cost of linking is
the mean negative log-likelihood of the successor's points under that
prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DEFAULT_DT, Fragment, frame_index


@dataclass(frozen=True)
class CostModelParams:
    alpha: float = 4.0
    beta: float = 2.0
    p_enter: float = 0.1
    p_exit: float = 0.1
    fp_prob: float = 1e-3
    max_gap: float = 15.0
    max_transition_cost: float | None = None
    nominal_speed: float = 60.0
    # Opt-in: link camera hand-off duplicates that overlap in time by at
    # most this many seconds. 0 keeps strictly sequential linking.
    max_overlap: float = 0.0
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        for name in ("p_enter", "p_exit", "fp_prob"):
            p = getattr(self, name)
            if not 0 < p < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.max_gap > 0:
            raise ValueError("max_gap must be positive")
        if self.max_overlap < 0:
            raise ValueError("max_overlap must be non-negative")

    @property
    def cost_threshold(self) -> float:
        # A transition dearer than exit + entry never improves a circulation.
        if self.max_transition_cost is not None:
            return self.max_transition_cost
        c_en, c_ex, _ = node_costs(self)
        return c_en + c_ex


class MotionEstimate(NamedTuple):
    vx: float
    vy: float
    x0: float
    y0: float

    @property
    def slope(self):
        return (self.vx, self.vy)

    @property
    def intercept(self):
        return (self.x0, self.y0)


def node_costs(params: CostModelParams, fp_prob: float | None = None):
    """Return ``(c_en, c_ex, c_incl)``."""
    b = params.fp_prob if fp_prob is None else fp_prob
    return -math.log(params.p_enter), -math.log(params.p_exit), -math.log((1.0 - b) / b)


def _line_fit(t: np.ndarray, v: np.ndarray):
    tm = t.mean()
    dt = t - tm
    slope = float(np.dot(dt, v - v.mean()) / np.dot(dt, dt))
    return slope, float(v.mean() - slope * tm)


def fit_motion(fragment: Fragment, nominal_speed: float = 60.0) -> MotionEstimate:
    """Least-squares constant-velocity fit ``p(t) = v t + p0``.

    A single-point fragment gets ``direction * nominal_speed`` along x and
    zero lateral speed, with the line passing through that point.
    """
    t = fragment.t
    if t.size == 1:
        vx = fragment.direction * nominal_speed
        return MotionEstimate(vx, 0.0, float(fragment.x[0] - vx * t[0]), float(fragment.y[0]))
    vx, x0 = _line_fit(t, fragment.x)
    vy, y0 = _line_fit(t, fragment.y)
    return MotionEstimate(vx, vy, x0, y0)


def fit_motion_tail(fragment: Fragment, window: float, nominal_speed: float = 60.0) -> MotionEstimate:
    """Fit over the last ``window`` seconds only."""
    keep = fragment.t >= fragment.t[-1] - window
    sub = Fragment(fragment.id, fragment.t[keep], fragment.x[keep], fragment.y[keep],
                   fragment.length, fragment.width, fragment.direction)
    return fit_motion(sub, nominal_speed)


def project_position(est: MotionEstimate, t):
    t = np.asarray(t, dtype=np.float64)
    return est.vx * t + est.x0, est.vy * t + est.y0


def _cone_cost(est: MotionEstimate, t_end: float, tj, xj, yj, alpha, beta) -> float:
    var = alpha + beta * (tj - t_end)
    px, py = project_position(est, tj)
    res2 = (xj - px) ** 2 + (yj - py) ** 2
    return 0.5 * float(np.mean(np.log(var))) + 0.5 * float(np.mean(res2 / var))


def overlap_cost(fi: Fragment, fj: Fragment, params: CostModelParams) -> float | None:
    """Co-location cost of two fragments over their shared frames.

    Uses the zero-gap variance ``alpha``; ``None`` when no frame is shared.
    """
    ki = frame_index(fi.t, params.dt)
    kj = frame_index(fj.t, params.dt)
    common, ii, jj = np.intersect1d(ki, kj, assume_unique=True, return_indices=True)
    if common.size == 0:
        return None
    d2 = (fj.x[jj] - fi.x[ii]) ** 2 + (fj.y[jj] - fi.y[ii]) ** 2
    return 0.5 * math.log(params.alpha) + 0.5 * float(np.mean(d2)) / params.alpha


def transition_cost(fi: Fragment, fj: Fragment, params: CostModelParams,
                    est: MotionEstimate | None = None) -> float | None:
    """Cost of ``fj`` directly following ``fi``; ``None`` if infeasible."""
    if fi.direction != fj.direction:
        return None
    gap = fj.t_start - fi.t_end
    if gap > params.max_gap:
        return None
    if gap > 0:
        if est is None:
            est = fit_motion(fi, params.nominal_speed)
        cost = _cone_cost(est, fi.t_end, fj.t, fj.x, fj.y, params.alpha, params.beta)
    else:
        if not (params.max_overlap > 0 and -gap <= params.max_overlap
                and fj.t_start >= fi.t_start and fj.t_end > fi.t_end):
            return None
        cost = overlap_cost(fi, fj, params)
        if cost is None:
            return None
    if cost > params.cost_threshold:
        return None
    return cost


def transition_costs_from(ests: np.ndarray, t_ends: np.ndarray, fj: Fragment, params: CostModelParams) -> np.ndarray:
    """Vectorised gap-transition costs from many predecessors into ``fj``.

    ``ests`` is a ``(C, 4)`` array of ``(vx, vy, x0, y0)`` rows and
    ``t_ends`` the predecessors' last timestamps. Entries that are not
    strictly earlier, exceed ``max_gap`` or the cost threshold are NaN.
    """
    c = t_ends.size
    out = np.full(c, np.nan)
    if c == 0:
        return out
    gap = fj.t_start - t_ends
    ok = (gap > 0) & (gap <= params.max_gap)
    if not ok.any():
        return out
    e = ests[ok]
    te = t_ends[ok][:, None]
    tj = fj.t[None, :]
    var = params.alpha + params.beta * (tj - te)
    rx = fj.x[None, :] - (e[:, 0:1] * tj + e[:, 2:3])
    ry = fj.y[None, :] - (e[:, 1:2] * tj + e[:, 3:4])
    cost = 0.5 * np.log(var).mean(axis=1) + 0.5 * ((rx * rx + ry * ry) / var).mean(axis=1)
    cost[cost > params.cost_threshold] = np.nan
    out[ok] = cost
    return out
