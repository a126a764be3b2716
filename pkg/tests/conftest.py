import math

import numpy as np
import pytest

from trajrecon.core import Fragment
from trajrecon.benchgen import trajectory_from_positions


def line_fragment(fid, t0, t1, x0=0.0, speed=50.0, y=0.0, dt=0.04, direction=1, noise=0.0, rng=None, **kw):
    """Constant-speed fragment on frames t0..t1 inclusive; x0 is the position at t = 0."""
    k = np.arange(int(round(t0 / dt)), int(round(t1 / dt)) + 1)
    t = k * dt
    x = x0 + direction * speed * t
    yy = np.full(t.size, float(y))
    if noise:
        rng = rng or np.random.default_rng(0)
        x = x + rng.normal(0, noise, t.size)
        yy = yy + rng.normal(0, noise, t.size)
    return Fragment(fid, t, x, yy, direction=direction, **kw)


def random_instance(rng, n_frag, n_veh=3, t_span=12.0):
    """A few vehicles cut into pieces plus the odd stray fragment."""
    frags = []
    speeds = rng.uniform(40, 70, n_veh)
    lanes = rng.integers(0, 2, n_veh) * 12.0
    offs = rng.uniform(-60, 60, n_veh)
    for k in range(n_frag):
        dur = rng.uniform(0.3, 1.5)
        t0 = rng.uniform(0, t_span)
        kk = np.arange(int(round(t0 / 0.04)), int(round((t0 + dur) / 0.04)) + 1, 3)
        t = kk * 0.04
        if rng.random() < 0.15:
            x = rng.uniform(0, 800) + rng.uniform(30, 80) * t
            y = np.full(t.size, rng.uniform(0, 24))
        else:
            v = int(rng.integers(n_veh))
            x = offs[v] + speeds[v] * t
            y = np.full(t.size, lanes[v])
        x = x + rng.normal(0, 1.0, t.size)
        y = y + rng.normal(0, 0.5, t.size)
        frags.append(Fragment(f"f{k}", t, x, y))
    return frags


@pytest.fixture
def fig4_fragments():
    """Two vehicles, each seen as two pieces.

    A travels in lane y=0 and B in lane y=12, both near 50 ft/s; the
    correct association is {1, 3} and {2, 4}.
    """
    return [
        line_fragment("1", 0.0, 2.0, x0=0.0, y=0.0),
        line_fragment("2", 0.0, 3.0, x0=40.0, speed=48.0, y=12.0),
        line_fragment("3", 4.0, 6.0, x0=0.0, y=0.0),
        line_fragment("4", 5.0, 8.0, x0=40.0, speed=48.0, y=12.0),
    ]


def swap_fixture():
    """Two gt vehicles over 3 frames whose identities differ at frame 2.

    gt a (x = 0) is tracked by pred p throughout. gt b (x = 100) is
    tracked by q on frames 0-1 and by r on frame 2, so b's identity swaps
    once: 6 gt detections, 6 matches, 1 switch.
    """
    dt = 0.04
    t = np.arange(3) * dt
    gt = [trajectory_from_positions("a", t, np.zeros(3), np.zeros(3)),
          trajectory_from_positions("b", t, np.full(3, 100.0), np.zeros(3))]
    pred = [Fragment("p", t, np.zeros(3), np.zeros(3)),
            Fragment("q", t[:2], [100.0, 100.0], np.zeros(2)),
            Fragment("r", t[2:], [100.0], np.zeros(1))]
    return gt, pred


def cross_swap_fixture():
    """Preds p and q trade targets at frame 2: both gt identities change."""
    dt = 0.04
    t = np.arange(3) * dt
    gt = [trajectory_from_positions("a", t, np.zeros(3), np.zeros(3)),
          trajectory_from_positions("b", t, np.full(3, 100.0), np.zeros(3))]
    pred = [Fragment("p", t, [0.0, 0.0, 100.0], np.zeros(3)), Fragment("q", t, [100.0, 100.0, 0.0], np.zeros(3))]
    return gt, pred


def cone_cost_scalar(ti, xi, yi, tj, xj, yj, alpha, beta):
    """Straight-from-definition link cost, one point at a time."""
    n = len(ti)
    if n == 1:
        raise ValueError("scalar oracle needs two or more points")
    tm = sum(ti) / n
    sxx = sum((a - tm) ** 2 for a in ti)
    vx = sum((a - tm) * b for a, b in zip(ti, xi)) / sxx
    vy = sum((a - tm) * b for a, b in zip(ti, yi)) / sxx
    bx = sum(xi) / n - vx * tm
    by = sum(yi) / n - vy * tm
    te = ti[-1]
    s = 0.0
    for t, x, y in zip(tj, xj, yj):
        var = alpha + beta * (t - te)
        s += 0.5 * math.log(var) + 0.5 * ((x - (vx * t + bx)) ** 2 + (y - (vy * t + by)) ** 2) / var
    return s / len(tj)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""
    def record(num, ok, detail):
        ACCEPTANCE.append((num, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {num}: {detail}")
