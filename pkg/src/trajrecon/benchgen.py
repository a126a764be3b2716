"""Synthetic ground truth and the corruption protocol.

Ground truth comes from a small intelligent-driver-model simulation: one
vehicle queue per lane, no lane changes, Poisson arrivals at the entry and
an optional slow zone on one lane to induce upstream congestion. The
corruption step slices each trajectory by camera field of view and
space-time masks, re-labels every piece and adds noise and isolated
outliers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DEFAULT_DT, Fragment, Trajectory
from .costs import CostModelParams
from .io import load_external  # noqa: F401  (re-exported for dataset loading)
from .rectify import steering_angles

LANE_WIDTH = 12.0


@dataclass(frozen=True)
class SpaceTimeMask:
    x0: float
    x1: float
    t0: float = 0.0
    t1: float = math.inf

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.t1 > self.t0):
            raise ValueError("mask ranges must be nonempty")

    def contains(self, t, x):
        t = np.asarray(t)
        x = np.asarray(x)
        return (x >= self.x0) & (x <= self.x1) & (t >= self.t0) & (t <= self.t1)


@dataclass(frozen=True)
class CameraLayout:
    ranges: tuple = ((0.0, math.inf),)

    def __post_init__(self):
        r = [tuple(map(float, c)) for c in self.ranges]
        if not r:
            raise ValueError("layout needs at least one camera")
        for a, b in r:
            if not b > a:
                raise ValueError("camera range must be nonempty")
        for (a0, b0), (a1, b1) in zip(r[:-1], r[1:]):
            if a1 > b0:
                raise ValueError("adjacent cameras must overlap or touch")
        object.__setattr__(self, "ranges", tuple(r))

    @classmethod
    def single(cls):
        return cls(((-math.inf, math.inf),))


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 1.0
    outlier_rate: float = 0.0
    outlier_range: tuple = (10.0, 50.0)
    seed: int = 0
    dim_sigma: float = 0.0  # spread of per-fragment length/width estimates

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= self.outlier_rate <= 1:
            raise ValueError("outlier_rate must lie in [0, 1]")


@dataclass(frozen=True)
class ScenarioSpec:
    length: float = 2000.0
    duration: float = 900.0
    lanes: int = 4
    # (t_start, t_end, veh/hr/lane) pieces; uncovered times have no demand
    demand: tuple = ((0.0, 900.0, 1200.0),)
    # (lane, t_start, t_end, x_start, x_end, speed) slow zone
    bottleneck: tuple | None = None
    direction: int = 1
    dt: float = DEFAULT_DT
    desired_speed: float = 80.0
    desired_speed_sd: float = 6.0
    idm_accel: float = 3.3
    idm_decel: float = 5.0
    idm_headway: float = 1.2
    idm_min_gap: float = 6.5
    vehicle_length: tuple = (14.0, 18.0)
    vehicle_width: tuple = (5.5, 6.5)

    def __post_init__(self):
        if not (self.length > 0 and self.duration > 0 and self.lanes > 0 and self.dt > 0):
            raise ValueError("scenario extents must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

    def demand_at(self, t: float) -> float:
        for a, b, q in self.demand:
            if a <= t < b:
                return q
        return 0.0


def trajectory_from_positions(tid, t, x, y, length=15.0, width=6.0, direction=1, fragment_ids=None,
                              dt=DEFAULT_DT) -> Trajectory:
    """Wrap grid positions as a Trajectory with finite-difference derivatives."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = steering_angles(x, y, dt) if x.size >= 2 else np.zeros(0)
    return Trajectory(
        tid, list(fragment_ids or [tid]), t, x, y,
        np.diff(x) / dt, np.diff(y) / dt, np.diff(x, 2) / dt ** 2, np.diff(y, 2) / dt ** 2,
        np.diff(x, 3) / dt ** 3, np.diff(y, 3) / dt ** 3, theta,
        length=float(length), width=float(width), direction=int(direction))


def _arrivals(spec: ScenarioSpec, rng) -> list[np.ndarray]:
    out = []
    for _ in range(spec.lanes):
        times = []
        for a, b, q in spec.demand:
            rate = q / 3600.0
            if rate <= 0:
                continue
            n = rng.poisson(rate * (b - a))
            times.append(np.sort(rng.uniform(a, b, n)))
        arr = np.sort(np.concatenate(times)) if times else np.zeros(0)
        out.append(arr[arr < spec.duration])
    return out


def generate_ground_truth(spec: ScenarioSpec, seed: int = 0) -> list[Trajectory]:
    """Simulate the corridor and return fully observed trajectories.

    Vehicles wait at the entry until the gap to the last vehicle in their
    lane is safe, then enter at the largest safe speed up to their desired
    speed. Each trajectory runs from entry until the vehicle leaves the
    corridor or the simulation ends.
    """
    rng = np.random.default_rng(seed)
    arrivals = _arrivals(spec, rng)
    total = sum(a.size for a in arrivals)
    if total == 0:
        return []
    dt = spec.dt
    L = spec.length
    runout = 600.0  # keep simulating past the exit so leaders still exist

    v0 = np.clip(rng.normal(spec.desired_speed, spec.desired_speed_sd, total), 30.0, None)
    lens = rng.uniform(*spec.vehicle_length, total)
    wids = rng.uniform(*spec.vehicle_width, total)
    lane_of = np.concatenate([np.full(a.size, k) for k, a in enumerate(arrivals)])
    arr_t = np.concatenate(arrivals)

    x = np.zeros(total)
    v = np.zeros(total)
    leader = np.full(total, -1, dtype=np.int64)
    active = np.zeros(total, dtype=bool)
    done = np.zeros(total, dtype=bool)
    queue_pos = [0] * spec.lanes
    lane_members = [np.flatnonzero(lane_of == k) for k in range(spec.lanes)]
    last_in_lane = [-1] * spec.lanes

    a, b, T, s0 = spec.idm_accel, spec.idm_decel, spec.idm_headway, spec.idm_min_gap
    sqab = 2.0 * math.sqrt(a * b)
    bn = spec.bottleneck
    ramp = 300.0

    rec_idx, rec_x, rec_step = [], [], []
    n_steps = int(round(spec.duration / dt))
    for step in range(n_steps + 1):
        t = step * dt
        # admit queued vehicles
        for lane in range(spec.lanes):
            members = lane_members[lane]
            qp = queue_pos[lane]
            if qp >= members.size or arr_t[members[qp]] > t:
                continue
            i = members[qp]
            j = last_in_lane[lane]
            if j >= 0:
                gap = x[j] - lens[j]
                # enter at the desired speed on open road, otherwise at the
                # leader's speed, and only once that speed is safe
                vin = v0[i] if gap >= s0 + 2.0 * v0[i] * T else min(v0[i], v[j])
                if gap < s0 + vin * T:
                    continue
            else:
                vin = v0[i]
            x[i] = 0.0
            v[i] = max(vin, 0.0)
            leader[i] = j
            active[i] = True
            last_in_lane[lane] = i
            queue_pos[lane] = qp + 1

        idx = np.flatnonzero(active)
        if idx.size == 0:
            continue
        rec_idx.append(idx)
        rec_x.append(x[idx].copy())
        rec_step.append(np.full(idx.size, step, dtype=np.int64))
        if step == n_steps:
            break

        xi, vi = x[idx], v[idx]
        des = v0[idx].copy()
        if bn is not None:
            blane, bt0, bt1, bx0, bx1, bspeed = bn
            if bt0 <= t < bt1:
                on = lane_of[idx] == blane
                frac = np.clip((xi - (bx0 - ramp)) / ramp, 0.0, 1.0)
                zone = on & (xi < bx1)
                slowed = des - frac * (des - bspeed)
                des = np.where(zone, np.minimum(des, slowed), des)
        free = np.maximum(a * (1.0 - (vi / des) ** 4), -b)
        ld = leader[idx]
        has = ld >= 0
        acc = free.copy()
        if has.any():
            lj = ld[has]
            gap = np.maximum(x[lj] - lens[lj] - xi[has], 0.1)
            dv = vi[has] - v[lj]
            sstar = s0 + np.maximum(0.0, vi[has] * T + vi[has] * dv / sqab)
            acc[has] = free[has] - a * (sstar / gap) ** 2
        acc = np.maximum(acc, -30.0)
        vn = np.maximum(vi + acc * dt, 0.0)
        xn = xi + 0.5 * (vi + vn) * dt
        if has.any():
            lj = ld[has]
            # hard floor on spacing guards against integration overshoot
            cap = x[lj] - lens[lj] - 0.1
            over = xn[has] > cap
            if over.any():
                sub = np.flatnonzero(has)[over]
                xn[sub] = np.maximum(cap[over], xi[sub])
                vn[sub] = np.minimum(vn[sub], v[lj[over]])
        x[idx] = xn
        v[idx] = vn
        gone = idx[xn > L + runout]
        if gone.size:
            active[gone] = False
            done[gone] = True
            # followers now see open road
            leader[np.isin(leader, gone)] = -1

    all_idx = np.concatenate(rec_idx)
    all_x = np.concatenate(rec_x)
    all_s = np.concatenate(rec_step)
    order = np.lexsort((all_s, all_idx))
    all_idx, all_x, all_s = all_idx[order], all_x[order], all_s[order]
    bounds = np.flatnonzero(np.diff(all_idx)) + 1
    out = []
    for seg_i, seg_x, seg_s in zip(np.split(all_idx, bounds), np.split(all_x, bounds), np.split(all_s, bounds)):
        keep = seg_x <= L
        if keep.sum() < 2:
            continue
        i = int(seg_i[0])
        xs = seg_x[keep]
        ts = seg_s[keep] * dt
        ys = np.full(xs.size, (lane_of[i] + 0.5) * LANE_WIDTH)
        if spec.direction == -1:
            xs = L - xs
        out.append((ts[0], i, ts, xs, ys))
    out.sort(key=lambda r: (r[0], r[1]))
    return [trajectory_from_positions(f"gt{k:05d}", ts, xs, ys, lens[i], wids[i], spec.direction, dt=dt)
            for k, (_, i, ts, xs, ys) in enumerate(out)]


def _runs(keep: np.ndarray) -> list[np.ndarray]:
    """Index arrays of maximal runs of True."""
    if not keep.any():
        return []
    k = keep.astype(np.int8)
    edges = np.diff(np.concatenate(([0], k, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [np.arange(s, e) for s, e in zip(starts, ends)]


def perturb(gt: Sequence, masks: Sequence[SpaceTimeMask] = (), layout: CameraLayout | None = None,
            noise: NoiseSpec | None = None, id_prefix: str = "f"):
    """Corrupt ground truth into RAW fragments.

    Returns ``(fragments, provenance)`` where ``provenance`` maps each new
    fragment id to its source ground-truth id. Each trajectory draws from
    its own random stream spawned from ``noise.seed``, so output does not
    depend on processing order.
    """
    layout = layout or CameraLayout.single()
    noise = noise or NoiseSpec(sigma=0.0)
    streams = np.random.SeedSequence(noise.seed).spawn(len(gt))
    frags: list[Fragment] = []
    prov: dict[str, str] = {}
    counter = 0
    lo, hi = noise.outlier_range
    for traj, ss in zip(gt, streams):
        rng = np.random.default_rng(ss)
        t = np.asarray(traj.t, dtype=np.float64)
        x = np.asarray(traj.x, dtype=np.float64)
        y = np.asarray(traj.y, dtype=np.float64)
        visible = np.ones(t.size, dtype=bool)
        for m in masks:
            visible &= ~m.contains(t, x)
        for a, b in layout.ranges:
            in_cam = visible & (x >= a) & (x <= b)
            for run in _runs(in_cam):
                n = run.size
                px = x[run] + rng.normal(0.0, noise.sigma, n) if noise.sigma > 0 else x[run].copy()
                py = y[run] + rng.normal(0.0, noise.sigma, n) if noise.sigma > 0 else y[run].copy()
                if noise.outlier_rate > 0:
                    hit = rng.random(n) < noise.outlier_rate
                    hit[1:] &= ~hit[:-1]  # keep outliers isolated
                    k = int(hit.sum())
                    if k:
                        px[hit] += rng.uniform(lo, hi, k) * rng.choice((-1.0, 1.0), k)
                ln, wd = traj.length, traj.width
                if noise.dim_sigma > 0:
                    ln = max(1.0, ln + rng.normal(0, noise.dim_sigma))
                    wd = max(1.0, wd + rng.normal(0, noise.dim_sigma / 4))
                fid = f"{id_prefix}{counter:06d}"
                counter += 1
                frags.append(Fragment(fid, t[run], px, py, ln, wd, traj.direction, gt_id=traj.id))
                prov[fid] = traj.id
    return frags, prov


# ---------------------------------------------------------------------------
# canned scenarios


def appendix_a_scenario(demand_scale: float = 0.5) -> ScenarioSpec:
    """Four-lane 2000 ft corridor, 15 minutes, demand peaking mid-run.

    Lane 0 runs a slow zone near 800 ft for the first 10 minutes.
    ``demand_scale`` multiplies the per-lane demand profile.
    """
    prof = ((0, 180, 1200), (180, 360, 2400), (360, 540, 3600), (540, 720, 2400), (720, 900, 1200))
    demand = tuple((float(a), float(b), q * demand_scale) for a, b, q in prof)
    return ScenarioSpec(length=2000.0, duration=900.0, lanes=4, demand=demand,
                        bottleneck=(0, 0.0, 600.0, 750.0, 850.0, 12.0))


def appendix_a_layout() -> CameraLayout:
    return CameraLayout(((0.0, 700.0), (600.0, 1400.0), (1300.0, 2000.0)))


def appendix_a_masks(seed: int = 0, n_dropouts: int = 10, length: float = 2000.0,
                     duration: float = 900.0) -> list[SpaceTimeMask]:
    """Upstream outage, bridge, and random 50 ft packet-loss strips."""
    rng = np.random.default_rng(seed)
    masks = [SpaceTimeMask(100.0, 300.0, 300.0, 600.0), SpaceTimeMask(1550.0, 1700.0, 0.0, math.inf)]
    for _ in range(n_dropouts):
        x0 = float(rng.uniform(0.0, length - 50.0))
        t0 = float(rng.uniform(0.0, max(duration - 60.0, 0.0)))
        masks.append(SpaceTimeMask(x0, x0 + 50.0, t0, t0 + float(rng.uniform(30.0, 120.0))))
    return masks


def appendix_a_cost_params():
    """Association settings for the replica benchmark.

    The defaults of :class:`CostModelParams` assume clean hand-offs. Here
    the 1 ft noise and the outliers inflate the residuals, vehicles leaving
    the slow zone accelerate through the bridge gap, and the camera
    overlaps produce duplicate fragments that must be linked while they
    still overlap in time.
    """
    return CostModelParams(alpha=40.0, beta=200.0, max_overlap=15.0)


@dataclass
class Benchmark:
    gt: list
    raw: list
    provenance: dict
    masks: list = field(default_factory=list)
    layout: CameraLayout | None = None


def appendix_a_benchmark(seed: int = 0, demand_scale: float = 0.5, sigma: float = 1.0,
                         outlier_rate: float = 0.003, n_dropouts: int = 10) -> Benchmark:
    spec = appendix_a_scenario(demand_scale)
    gt = generate_ground_truth(spec, seed)
    masks = appendix_a_masks(seed + 1, n_dropouts, spec.length, spec.duration)
    layout = appendix_a_layout()
    raw, prov = perturb(gt, masks, layout, NoiseSpec(sigma=sigma, outlier_rate=outlier_rate, seed=seed + 2))
    return Benchmark(gt, raw, prov, masks, layout)


def synthetic_stream(n_fragments: int, seed: int = 0, vehicle_rate: float = 4.0, lanes: int = 4,
                     dt: float = DEFAULT_DT, hz: float | None = None) -> list[Fragment]:
    """Cheap constant-speed fragment stream for throughput runs.

    Vehicles enter at ``vehicle_rate`` per second and are cut into pieces
    of 2-6 s separated by 0.5-3 s gaps. ``hz`` subsamples points to keep
    arrays short. Returned sorted by last timestamp.
    """
    rng = np.random.default_rng(seed)
    step = dt if hz is None else max(dt, round(1.0 / hz / dt) * dt)
    out: list[Fragment] = []
    t_in = 0.0
    vid = 0
    while len(out) < n_fragments:
        t_in += rng.exponential(1.0 / vehicle_rate)
        speed = rng.uniform(50.0, 80.0)
        lane = int(rng.integers(lanes))
        t = t_in
        x0 = 0.0
        for _ in range(int(rng.integers(3, 8))):
            dur = rng.uniform(2.0, 6.0)
            k0 = int(round(t / dt))
            kk = np.arange(k0, k0 + int(dur / dt), int(round(step / dt)))
            tt = kk * dt
            xx = x0 + speed * (tt - t_in) + rng.normal(0, 0.5, tt.size)
            yy = (lane + 0.5) * LANE_WIDTH + rng.normal(0, 0.3, tt.size)
            out.append(Fragment(f"s{len(out):07d}", tt, xx, yy, gt_id=f"v{vid}"))
            t = tt[-1] + rng.uniform(0.5, 3.0)
            if len(out) >= n_fragments:
                break
        vid += 1
    out.sort(key=lambda f: (f.t_end, f.id))
    return out
