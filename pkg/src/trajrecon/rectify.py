"""Trajectory rectification by constrained elastic-net regression.

Per axis we solve

    min  |z - Hx - e|^2 + lam2 |D2 x|^2 + lam3 |D3 x|^2 + lam1 |e|_1
    s.t. direction * D1 x >= 0            (longitudinal axis only)
         |D2 x| <= a_max,  |D3 x| <= j_max

where ``H`` picks the observed frames and ``Dk`` is the k-th finite
difference divided by ``dt**k``. The l1 term is split as ``e = u - w`` with
``u, w >= 0`` and the QP is solved with a Mehrotra predictor-corrector
interior point method. Each Newton step eliminates the per-frame ``(u, w)``
pairs in closed form, leaving a symmetric positive definite system in
``x`` with three off-diagonals, which is factored with a banded Cholesky.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import cho_solve_banded, cholesky_banded, LinAlgError

from . import _kernels
from .core import DEFAULT_DT, Fragment, Trajectory, frame_index

log = logging.getLogger(__name__)

_STENCILS = {1: (-1.0, 1.0), 2: (1.0, -2.0, 1.0), 3: (-1.0, 3.0, -3.0, 1.0)}


class RectificationError(RuntimeError):
    """Solver failed to reach the requested KKT tolerance."""


@dataclass(frozen=True)
class DifferenceOperator:
    """k-th order forward difference scaled by ``dt**-k``; shape ``(n-k, n)``."""

    k: int
    n: int
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.k not in _STENCILS:
            raise ValueError("order must be 1, 2 or 3")
        if self.n <= self.k:
            raise ValueError("series too short")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def shape(self):
        return (self.n - self.k, self.n)

    @property
    def stencil(self) -> np.ndarray:
        return np.array(_STENCILS[self.k]) / self.dt ** self.k

    def apply(self, x) -> np.ndarray:
        return np.diff(np.asarray(x, dtype=np.float64), self.k) / self.dt ** self.k

    __call__ = apply

    def rmatvec(self, y) -> np.ndarray:
        return _diff_t(np.asarray(y, dtype=np.float64), self.k) / self.dt ** self.k

    def matrix(self) -> sparse.csr_matrix:
        st = _STENCILS[self.k]
        m = self.n - self.k
        diags = [np.full(m, c) for c in st]
        mat = sparse.diags(diags, list(range(self.k + 1)), shape=(m, self.n), format="csr")
        return mat / self.dt ** self.k


def difference_operator(k: int, n: int, dt: float = DEFAULT_DT) -> DifferenceOperator:
    return DifferenceOperator(k, n, dt)


def _diff_t(y: np.ndarray, k: int) -> np.ndarray:
    # transpose of np.diff(., k) (unscaled)
    for _ in range(k):
        y = -np.diff(np.concatenate(([0.0], y, [0.0])))
    return y


@dataclass(frozen=True)
class RectifierConfig:
    lam1: float = 1.2e-3
    lam2: float = 1.67e-2
    lam3: float = 1.67e-7
    a_max: float = 10.0
    j_max: float = 10.0
    dt: float = DEFAULT_DT
    tol: float = 1e-6
    max_iter: int = 200
    # lateral overrides; None means "same as longitudinal"
    lam1_y: float | None = None
    lam2_y: float | None = None
    lam3_y: float | None = None
    # "step": the smoothness weights multiply plain finite differences of
    # the sampled series; "physical": they multiply derivatives in ft/s^k
    weight_scale: str = "step"

    def __post_init__(self):
        if self.weight_scale not in ("step", "physical"):
            raise ValueError("weight_scale must be 'step' or 'physical'")
        for name in ("lam1", "lam2", "lam3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (self.a_max > 0 and self.j_max > 0 and self.dt > 0 and self.tol > 0):
            raise ValueError("a_max, j_max, dt and tol must be positive")

    def weights(self, lateral: bool = False):
        if not lateral:
            return self.lam1, self.lam2, self.lam3
        pick = lambda a, b: b if a is None else a  # noqa: E731
        return pick(self.lam1_y, self.lam1), pick(self.lam2_y, self.lam2), pick(self.lam3_y, self.lam3)


@dataclass
class RectificationProblem:
    """One axis of the rectification QP.

    ``observed`` holds the strictly increasing grid indices of ``z``.
    ``direction`` is +1/-1 to impose monotone motion, or None for no sign
    constraint (lateral axis).
    """

    z: np.ndarray
    observed: np.ndarray
    n: int
    dt: float = DEFAULT_DT
    lam1: float = 1.2e-3
    lam2: float = 1.67e-2
    lam3: float = 1.67e-7
    a_max: float = 10.0
    j_max: float = 10.0
    direction: int | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        self.observed = np.asarray(self.observed, dtype=np.int64).reshape(-1)
        if self.z.size != self.observed.size:
            raise ValueError("z and observed differ in length")
        if self.z.size > self.n:
            raise ValueError("more observations than grid points")
        if self.observed.size and (self.observed[0] < 0 or self.observed[-1] >= self.n
                                   or np.any(np.diff(self.observed) <= 0)):
            raise ValueError("observed indices must be strictly increasing and on the grid")
        if min(self.lam1, self.lam2, self.lam3) < 0:
            raise ValueError("weights must be non-negative")
        if not (self.a_max > 0 and self.j_max > 0):
            raise ValueError("bounds must be positive")
        if self.direction not in (None, 1, -1):
            raise ValueError("direction must be +1, -1 or None")
        if not np.all(np.isfinite(self.z)):
            raise ValueError("z must be finite")

    @classmethod
    def from_config(cls, z, observed, n, config: RectifierConfig, direction=None, lateral=False):
        l1, l2, l3 = config.weights(lateral)
        if config.weight_scale == "step":
            # the problem always stores weights on physical derivatives
            l2 = l2 * config.dt ** 4
            l3 = l3 * config.dt ** 6
        return cls(z, observed, n, config.dt, l1, l2, l3, config.a_max, config.j_max, direction)

    def objective(self, x, e) -> float:
        x = np.asarray(x, dtype=np.float64)
        e = np.asarray(e, dtype=np.float64)
        r = self.z - x[self.observed] - e
        d2 = np.diff(x, 2) / self.dt ** 2
        d3 = np.diff(x, 3) / self.dt ** 3
        return float(r @ r + self.lam2 * (d2 @ d2) + self.lam3 * (d3 @ d3) + self.lam1 * np.abs(e).sum())

    def constraint_violation(self, x) -> float:
        """Largest violation over all inequality constraints, in physical units."""
        x = np.asarray(x, dtype=np.float64)
        worst = 0.0
        if self.direction is not None:
            worst = max(worst, float(np.max(-self.direction * np.diff(x) / self.dt, initial=0.0)))
        a = np.abs(np.diff(x, 2)) / self.dt ** 2
        j = np.abs(np.diff(x, 3)) / self.dt ** 3
        worst = max(worst, float(np.max(a - self.a_max, initial=0.0)), float(np.max(j - self.j_max, initial=0.0)))
        return worst


class AxisSolution(NamedTuple):
    x: np.ndarray
    e: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float


class _Blocks:
    """Inequality rows ``sign * diff_k(x) / dt**k <= bound``, stored with unit-norm stencils."""

    def __init__(self, n, dt, direction, a_max, j_max):
        spec = []
        if direction is not None:
            spec.append((1, -float(direction), 0.0))
        spec += [(2, 1.0, a_max), (2, -1.0, a_max), (3, 1.0, j_max), (3, -1.0, j_max)]
        self.spec = []
        off = 0
        for k, sign, bound in spec:
            m = n - k
            sc = 1.0 / math.sqrt(sum(c * c for c in _STENCILS[k]))
            self.spec.append((k, sign, bound * dt ** k * sc, slice(off, off + m), sc))
            off += m
        self.m = off
        self.n = n

    def apply(self, x):
        out = np.empty(self.m)
        for k, sign, _, sl, sc in self.spec:
            out[sl] = sign * sc * np.diff(x, k)
        return out

    def rmatvec(self, y):
        out = np.zeros(self.n)
        for k, sign, _, sl, sc in self.spec:
            out += sign * sc * _diff_t(y[sl], k)
        return out

    def bounds(self):
        h = np.empty(self.m)
        for _, _, bound, sl, _ in self.spec:
            h[sl] = bound
        return h


def _add_band(ab, k, weight):
    """Add ``diff_k.T @ diag(weight) @ diff_k`` into upper banded storage."""
    st = _STENCILS[k]
    m = weight.size
    for a in range(k + 1):
        for b in range(a, k + 1):
            ab[3 - (b - a), b : b + m] += weight * (st[a] * st[b])


def _ipm_numpy(zr, obs, n, w2, w3, lam1, h, blocks, max_iter):
    """Mehrotra predictor-corrector on the shifted problem (numpy path)."""
    M = obs.size

    def objective(xi, u, w):
        r = zr - xi[obs] - u + w
        d2 = np.diff(xi, 2)
        d3 = np.diff(xi, 3)
        return float(r @ r + 0.5 * w2 * (d2 @ d2) + 0.5 * w3 * (d3 @ d3) + lam1 * np.abs(u - w).sum())

    def quad_grad(xi):
        # 2 Q xi
        return w2 * _diff_t(np.diff(xi, 2), 2) + w3 * _diff_t(np.diff(xi, 3), 3)

    mc = blocks.m
    xi = np.zeros(n)
    u = np.full(M, 1.0)
    w = np.full(M, 1.0)
    yu = np.full(M, 1.0)
    yw = np.full(M, 1.0)
    s = np.maximum(h - blocks.apply(xi), 1.0)
    y = np.ones(mc)
    hscale = 1.0 + float(np.max(np.abs(h), initial=0.0))
    ntot = mc + 2 * M

    def residuals(xi, u, w, s, y, yu, yw):
        r = zr - xi[obs] - u + w
        gq = quad_grad(xi)
        gc = blocks.rmatvec(y)
        g = gq + gc
        g[obs] -= 2.0 * r
        r_u = -2.0 * r + lam1 - yu
        r_w = 2.0 * r + lam1 - yw
        r_c = blocks.apply(xi) + s - h
        # scale for the relative dual residual
        dnorm = 1.0 + max(float(np.max(np.abs(gq))), float(np.max(np.abs(gc))), 2.0 * float(np.max(np.abs(r))), lam1)
        return g, r_u, r_w, r_c, dnorm

    def measures(g, r_u, r_w, r_c, dnorm):
        pres = float(np.max(np.abs(r_c), initial=0.0)) / hscale
        dres = float(max(np.max(np.abs(g)), np.max(np.abs(r_u)), np.max(np.abs(r_w)))) / dnorm
        gap = float(s @ y + u @ yu + w @ yw)
        return pres, dres, gap

    def step_len(v, dv):
        neg = dv < 0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(-v[neg] / dv[neg])))

    it = 0
    best = None
    for it in range(1, max_iter + 1):
        g, r_u, r_w, r_c, dnorm = residuals(xi, u, w, s, y, yu, yw)
        pres, dres, gap = measures(g, r_u, r_w, r_c, dnorm)
        mu = gap / ntot
        rgap = gap / (1.0 + abs(objective(xi, u, w)))
        merit = max(pres, dres, rgap)
        # near the end round-off can push the iterates back out, so keep the best one
        if best is None or merit < best[0]:
            best = (merit, it - 1, xi, u, w, pres, dres, rgap)
        if merit <= 1e-9 or (mu <= 1e-16 * (1.0 + abs(h).max()) and merit > 10.0 * best[0]):
            break

        dc = y / s
        du = yu / u
        dw = yw / w
        det = 2.0 * du + 2.0 * dw + du * dw
        omega = 2.0 * du * dw / det

        ab = np.zeros((4, n))
        _add_band(ab, 2, np.full(n - 2, w2))
        _add_band(ab, 3, np.full(n - 3, w3))
        for k, _, _, sl, sc in blocks.spec:
            _add_band(ab, k, dc[sl] * sc * sc)
        ab[3, obs] += omega
        try:
            cf = cholesky_banded(ab, lower=False, check_finite=False)
        except LinAlgError:
            ab[3] += 1e-12 * (1.0 + np.abs(ab[3]).max())
            cf = cholesky_banded(ab, lower=False, check_finite=False)

        def solve(rg, ru, rw, rc, r_sc, r_su, r_sw):
            b_u = -ru - r_su / u
            b_w = -rw - r_sw / w
            rhs = -rg - blocks.rmatvec(-r_sc / s + dc * rc)
            rhs[obs] -= 2.0 * (dw * b_u - du * b_w) / det
            dxi = cho_solve_banded((cf, False), rhs, check_finite=False)
            a = dxi[obs]
            dU = ((2.0 + dw) * (b_u - 2.0 * a) + 2.0 * (b_w + 2.0 * a)) / det
            dW = (2.0 * (b_u - 2.0 * a) + (2.0 + du) * (b_w + 2.0 * a)) / det
            dyu = -r_su / u - du * dU
            dyw = -r_sw / w - dw * dW
            ds = -rc - blocks.apply(dxi)
            dy = -r_sc / s - dc * ds
            return [dxi, dU, dW, ds, dy, dyu, dyw]

        def newton(r_sc, r_su, r_sw):
            d = solve(g, r_u, r_w, r_c, r_sc, r_su, r_sw)
            # one round of iterative refinement against the unreduced system;
            # the elimination loses digits once some slacks approach zero
            dxi, dU, dW, ds, dy, dyu, dyw = d
            dr = dxi[obs] + dU - dW
            eg = quad_grad(dxi) + blocks.rmatvec(dy) + g
            eg[obs] += 2.0 * dr
            eu = 2.0 * dr - dyu + r_u
            ew = -2.0 * dr - dyw + r_w
            ec = blocks.apply(dxi) + ds + r_c
            esc = y * ds + s * dy + r_sc
            esu = yu * dU + u * dyu + r_su
            esw = yw * dW + w * dyw + r_sw
            corr = solve(eg, eu, ew, ec, esc, esu, esw)
            return [a + b for a, b in zip(d, corr)]

        # predictor
        aff = newton(s * y, u * yu, w * yw)
        _, dU, dW, ds, dy, dyu, dyw = aff
        ap = min(step_len(s, ds), step_len(u, dU), step_len(w, dW))
        ad = min(step_len(y, dy), step_len(yu, dyu), step_len(yw, dyw))
        mu_aff = float(((s + ap * ds) @ (y + ad * dy) + (u + ap * dU) @ (yu + ad * dyu)
                        + (w + ap * dW) @ (yw + ad * dyw)) / ntot)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dxi, dU, dW, ds, dy, dyu, dyw = newton(s * y + ds * dy - sigma * mu,
                                               u * yu + dU * dyu - sigma * mu,
                                               w * yw + dW * dyw - sigma * mu)
        # one step length for primal and dual: the QP's dual residual couples both
        alpha = min(1.0, 0.99 * min(step_len(s, ds), step_len(u, dU), step_len(w, dW),
                                    step_len(y, dy), step_len(yu, dyu), step_len(yw, dyw)))
        xi = xi + alpha * dxi
        u = u + alpha * dU
        w = w + alpha * dW
        s = s + alpha * ds
        y = y + alpha * dy
        yu = yu + alpha * dyu
        yw = yw + alpha * dyw
    else:
        g, r_u, r_w, r_c, dnorm = residuals(xi, u, w, s, y, yu, yw)
        pres, dres, gap = measures(g, r_u, r_w, r_c, dnorm)
        rgap = gap / (1.0 + abs(objective(xi, u, w)))
        if max(pres, dres, rgap) < best[0]:
            best = (max(pres, dres, rgap), it, xi, u, w, pres, dres, rgap)

    _, it, xi, u, w, pres, dres, rgap = best
    return xi, u, w, it, (pres, dres, rgap)


def solve_axis(problem: RectificationProblem, tol: float = 1e-6, max_iter: int = 200) -> AxisSolution:
    p = problem
    n, dt = p.n, p.dt
    if n < 4:
        raise ValueError("series too short")
    obs = p.observed
    M = obs.size
    if M < 2:
        raise ValueError("need at least two observed points")

    # Work relative to a least-squares line through the data: it is free for
    # every smoothness term, which keeps the iterates well scaled.
    tt = obs.astype(np.float64)
    slope, icpt = np.polyfit(tt, p.z, 1)
    if p.direction is not None and slope * p.direction < 0:
        slope = 0.0
        icpt = float(np.mean(p.z))
    base = icpt + slope * np.arange(n, dtype=np.float64)
    zr = p.z - base[obs]

    blocks = _Blocks(n, dt, p.direction, p.a_max, p.j_max)
    h = blocks.bounds() - blocks.apply(base)
    w2 = 2.0 * p.lam2 / dt ** 4
    w3 = 2.0 * p.lam3 / dt ** 6
    lam1 = p.lam1

    if _kernels.qp_ipm is not None:
        bk = np.array([b[0] for b in blocks.spec], dtype=np.int64)
        bsign = np.array([b[1] for b in blocks.spec], dtype=np.float64)
        bsc = np.array([b[4] for b in blocks.spec], dtype=np.float64)
        boff = np.array([b[3].start for b in blocks.spec], dtype=np.int64)
        xi, u, w, it, st = _kernels.qp_ipm(zr, obs, n, w2, w3, lam1, h, bk, bsign, bsc, boff, max_iter)
        pres, dres, rgap = (float(v) for v in st)
    else:
        xi, u, w, it, (pres, dres, rgap) = _ipm_numpy(zr, obs, n, w2, w3, lam1, h, blocks, max_iter)
    x = base + xi
    e = u - w
    obj = p.objective(x, e)
    viol = p.constraint_violation(x)
    if not (viol <= tol and dres <= tol and rgap <= tol):
        raise RectificationError(
            f"rectification did not converge after {it} iterations: "
            f"constraint violation {viol:.3g}, relative dual residual {dres:.3g}, relative gap {rgap:.3g}")
    return AxisSolution(x, e, obj, it, max(pres, viol), dres, rgap)


def rectify_axis(problem: RectificationProblem, tol: float = 1e-6, max_iter: int = 200):
    """Return ``(x_hat, e_hat)`` for one axis."""
    sol = solve_axis(problem, tol, max_iter)
    return sol.x, sol.e


def steering_angles(x, y, dt: float = DEFAULT_DT) -> np.ndarray:
    """Heading ``atan2(dy, dx)`` per step, in (-pi, pi].

    A step with no motion on either axis repeats the previous heading
    (0 at the start).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two positions")
    vx = np.diff(x) / dt
    vy = np.diff(y) / dt
    theta = np.arctan2(vy, vx)
    theta[theta <= -np.pi] = np.pi
    still = (vx == 0) & (vy == 0)
    if still.any():
        idx = np.maximum.accumulate(np.where(still, -1, np.arange(theta.size)))
        theta = np.where(idx >= 0, theta[np.maximum(idx, 0)], 0.0)
    return theta


def merge_chain(fragments: Sequence[Fragment], dt: float = DEFAULT_DT):
    """Pool a chain's points on the global grid.

    Returns ``(t_grid, observed_idx, zx, zy)``. Frames covered by more than
    one fragment (camera overlap) are averaged.
    """
    k = np.concatenate([frame_index(f.t, dt) for f in fragments])
    xs = np.concatenate([f.x for f in fragments])
    ys = np.concatenate([f.y for f in fragments])
    uniq, inv, cnt = np.unique(k, return_inverse=True, return_counts=True)
    zx = np.bincount(inv, weights=xs) / cnt
    zy = np.bincount(inv, weights=ys) / cnt
    k0 = int(uniq[0])
    n = int(uniq[-1]) - k0 + 1
    t_grid = (k0 + np.arange(n)) * dt
    return t_grid, uniq - k0, zx, zy


def _derivatives(x, dt):
    v = np.diff(x) / dt
    a = np.diff(x, 2) / dt ** 2
    j = np.diff(x, 3) / dt ** 3
    return v, a, j


def rectify_trajectory(fragments: Sequence[Fragment], config: RectifierConfig | None = None,
                       traj_id: str | None = None, on_error: str = "raise") -> Trajectory:
    """Rectify one associated chain into a uniform-grid trajectory.

    With ``on_error="passthrough"`` a solver failure is logged and the
    chain is returned interpolated but unrectified instead of raising.
    """
    config = config or RectifierConfig()
    if not fragments:
        raise ValueError("empty chain")
    fragments = sorted(fragments, key=lambda f: (f.t_start, f.t_end))
    dt = config.dt
    direction = fragments[0].direction
    t_grid, obs, zx, zy = merge_chain(fragments, dt)
    n = t_grid.size
    length = float(np.median([f.length for f in fragments]))
    width = float(np.median([f.width for f in fragments]))
    ids = [f.id for f in fragments]
    tid = traj_id if traj_id is not None else ids[0]
    rectified = n >= 4
    if not rectified:
        log.warning("trajectory %s spans %d frames; passed through unrectified", tid, n)
    else:
        px = RectificationProblem.from_config(zx, obs, n, config, direction=direction)
        py = RectificationProblem.from_config(zy, obs, n, config, direction=None, lateral=True)
        try:
            x, ex = rectify_axis(px, config.tol, config.max_iter)
            y, ey = rectify_axis(py, config.tol, config.max_iter)
        except RectificationError as err:
            if on_error != "passthrough":
                raise
            log.error("trajectory %s: %s; passed through unrectified", tid, err)
            rectified = False
    if not rectified:
        grid = np.arange(n)
        x = np.interp(grid, obs, zx)
        y = np.interp(grid, obs, zy)
        ex = np.zeros(obs.size)
        ey = np.zeros(obs.size)
    vx, ax, jx = _derivatives(x, dt)
    vy, ay, jy = _derivatives(y, dt)
    theta = steering_angles(x, y, dt) if n >= 2 else np.zeros(0)
    return Trajectory(tid, ids, t_grid, x, y, vx, vy, ax, ay, jx, jy, theta, ex, ey,
                      length, width, direction, rectified)
