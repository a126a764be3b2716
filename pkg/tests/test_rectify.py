import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajrecon import _kernels
from trajrecon.core import Fragment
from trajrecon.rectify import (RectificationError, RectificationProblem, RectifierConfig, _Blocks, _ipm_numpy,
                               difference_operator, merge_chain, rectify_axis, rectify_trajectory, solve_axis,
                               steering_angles)

from conftest import line_fragment
from oracles import cvx_rectify

DT = 0.04


def test_first_difference_kills_constants():
    D = difference_operator(1, 6)
    np.testing.assert_allclose(D(np.full(6, 3.0)), 0.0)


def test_second_difference_shape():
    D = difference_operator(2, 10)
    assert D.shape == (8, 10)
    assert D(np.arange(10.0)).size == 8


def test_third_difference_of_cubic():
    t = np.arange(8.0)
    D = difference_operator(3, 8, dt=1.0)
    np.testing.assert_allclose(D(t ** 3), 6.0)


def test_difference_stencils_and_matrix():
    D = difference_operator(1, 5)
    np.testing.assert_allclose(D.stencil, np.array([-1.0, 1.0]) / DT)
    rng = np.random.default_rng(0)
    for k in (1, 2, 3):
        D = difference_operator(k, 12)
        x = rng.normal(size=12)
        y = rng.normal(size=12 - k)
        np.testing.assert_allclose(D.matrix() @ x, D(x), rtol=1e-12)
        np.testing.assert_allclose(D.matrix().T @ y, D.rmatvec(y), rtol=1e-12)


def test_series_too_short():
    with pytest.raises(ValueError, match="series too short"):
        difference_operator(3, 3)


def test_constant_speed_is_recovered_exactly():
    n = 60
    t = np.arange(n) * DT
    z = 10.0 * t
    p = RectificationProblem(z, np.arange(n), n, direction=1)
    x, e = rectify_axis(p)
    assert np.max(np.abs(x - z)) <= 1e-6
    assert np.max(np.abs(e)) <= 1e-6


def test_single_spike_goes_into_outliers():
    n = 50
    t = np.arange(n) * DT
    line = 30.0 * t + 5.0
    z = line.copy()
    z[20] += 50.0
    p = RectificationProblem(z, np.arange(n), n, direction=1)
    sol = solve_axis(p)
    assert np.max(np.abs(sol.x - line)) < 0.5
    assert sol.e[20] == pytest.approx(50.0, abs=0.5)
    ox, oe, oobj = cvx_rectify(p)
    assert sol.objective == pytest.approx(oobj, rel=1e-5)


def test_missing_frames_are_imputed_on_the_line():
    rng = np.random.default_rng(4)
    n = 80
    t = np.arange(n) * DT
    line = 45.0 * t - 3.0
    keep = np.sort(rng.choice(np.arange(1, n - 1), size=int(0.8 * n) - 2, replace=False))
    obs = np.concatenate(([0], keep, [n - 1]))
    p = RectificationProblem(line[obs], obs, n, direction=1)
    x, _ = rectify_axis(p)
    miss = np.setdiff1d(np.arange(n), obs)
    assert miss.size >= 0.19 * n
    assert np.max(np.abs(x[miss] - line[miss])) <= 1e-4


def test_problem_validation():
    with pytest.raises(ValueError):
        RectificationProblem([1.0, 2.0], [0], 5)
    with pytest.raises(ValueError):
        RectificationProblem([1.0, 2.0], [2, 1], 5)
    with pytest.raises(ValueError):
        RectificationProblem([1.0], [0], 5, lam1=-1)
    with pytest.raises(ValueError):
        RectifierConfig(weight_scale="other")


@pytest.mark.parametrize("seed", range(8))
def test_matches_generic_solver(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 41))
    mask = rng.random(n) < 0.8
    mask[0] = mask[-1] = True
    obs = np.flatnonzero(mask)
    t = np.arange(n) * DT
    z = 40 * t + rng.normal(0, 1, n) + (rng.random(n) < 0.1) * rng.uniform(10, 50, n)
    cfg = RectifierConfig(weight_scale=("step", "physical")[seed % 2])
    p = RectificationProblem.from_config(z[obs], obs, n, cfg, direction=(1, None)[seed % 2])
    sol = solve_axis(p)
    _, _, oobj = cvx_rectify(p)
    assert sol.objective == pytest.approx(oobj, rel=1e-5)
    assert p.constraint_violation(sol.x) <= 1e-6


def test_step_weights_are_rescaled():
    cfg = RectifierConfig()
    p = RectificationProblem.from_config(np.zeros(5), np.arange(5), 5, cfg)
    assert p.lam2 == pytest.approx(cfg.lam2 * DT ** 4)
    assert p.lam3 == pytest.approx(cfg.lam3 * DT ** 6)
    q = RectificationProblem.from_config(np.zeros(5), np.arange(5), 5, RectifierConfig(weight_scale="physical"))
    assert q.lam2 == cfg.lam2


def test_non_convergence_reports_residuals():
    rng = np.random.default_rng(1)
    n = 40
    z = np.cumsum(rng.normal(0, 5, n))
    p = RectificationProblem(z, np.arange(n), n, direction=1)
    with pytest.raises(RectificationError, match="did not converge after 1 iterations"):
        solve_axis(p, max_iter=1)


# ---------------------------------------------------------------------------
# numba kernel against the numpy path


@pytest.mark.skipif(_kernels.qp_ipm is None, reason="numba kernels disabled")
@pytest.mark.parametrize("seed", range(4))
def test_compiled_solver_agrees_with_numpy(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(20, 120))
    obs = np.flatnonzero(rng.random(n) < 0.85)
    t = np.arange(n) * DT
    z = (55 * t + rng.normal(0, 1, n))[obs]
    p = RectificationProblem.from_config(z, obs, n, RectifierConfig(), direction=1)
    base = np.polyval(np.polyfit(obs.astype(float), z, 1), np.arange(n))
    zr = z - base[obs]
    blocks = _Blocks(n, DT, 1, p.a_max, p.j_max)
    h = blocks.bounds() - blocks.apply(base)
    w2, w3 = 2 * p.lam2 / DT ** 4, 2 * p.lam3 / DT ** 6
    xi_np, u_np, w_np, _, _ = _ipm_numpy(zr, obs, n, w2, w3, p.lam1, h, blocks, 80)
    bk = np.array([b[0] for b in blocks.spec], dtype=np.int64)
    bsign = np.array([b[1] for b in blocks.spec], dtype=np.float64)
    bsc = np.array([b[4] for b in blocks.spec], dtype=np.float64)
    boff = np.array([b[3].start for b in blocks.spec], dtype=np.int64)
    xi_nb, u_nb, w_nb, _, _ = _kernels.qp_ipm(zr, obs, n, w2, w3, p.lam1, h, bk, bsign, bsc, boff, 80)
    obj_np = p.objective(base + xi_np, u_np - w_np)
    obj_nb = p.objective(base + xi_nb, u_nb - w_nb)
    assert obj_nb == pytest.approx(obj_np, rel=1e-7)
    np.testing.assert_allclose(xi_nb, xi_np, atol=1e-4)


# ---------------------------------------------------------------------------
# whole trajectories


def test_clean_fragment_is_left_alone():
    f = line_fragment("a", 0.0, 3.0, x0=10.0, speed=50.0, y=6.0)
    tr = rectify_trajectory([f])
    assert tr.rectified
    np.testing.assert_allclose(tr.x, f.x, atol=1e-6)
    np.testing.assert_allclose(tr.y, f.y, atol=1e-6)


def test_gap_between_fragments_is_imputed():
    a = line_fragment("a", 0.0, 2.0, speed=50.0)
    b = line_fragment("b", 4.0, 6.0, speed=50.0)
    tr = rectify_trajectory([b, a])
    assert tr.fragment_ids == ["a", "b"]
    assert tr.t.size == round(6.0 / DT) + 1
    np.testing.assert_allclose(np.diff(tr.t), DT)
    np.testing.assert_allclose(tr.x, 50.0 * tr.t, atol=1e-6)
    assert tr.ex.size == a.n_points + b.n_points


def test_fig4_chain_spans_both_fragments(fig4_fragments):
    f1, _, f3, _ = fig4_fragments
    tr = rectify_trajectory([f1, f3])
    assert tr.t[0] == pytest.approx(0.0)
    assert tr.t[-1] == pytest.approx(6.0)
    assert tr.t.size == 151


def test_derivatives_are_internally_consistent():
    rng = np.random.default_rng(8)
    f = line_fragment("a", 0.0, 4.0, speed=60.0, noise=1.0, rng=rng)
    tr = rectify_trajectory([f])
    assert np.array_equal(tr.vx, np.diff(tr.x) / DT)
    assert np.array_equal(tr.ax, np.diff(tr.x, 2) / DT ** 2)
    assert np.array_equal(tr.jx, np.diff(tr.x, 3) / DT ** 3)
    # forward Euler on v reproduces x
    xe = tr.x[0] + np.concatenate(([0.0], np.cumsum(tr.vx * DT)))
    np.testing.assert_allclose(xe, tr.x, atol=1e-9)
    assert tr.vx.size == tr.t.size - 1 and tr.ax.size == tr.t.size - 2 and tr.jx.size == tr.t.size - 3
    assert tr.theta.size == tr.t.size - 1


def test_constraints_hold_on_noisy_input():
    rng = np.random.default_rng(12)
    for k in range(5):
        f = line_fragment("a", 0.0, 6.0, speed=float(rng.uniform(5, 80)), noise=2.0, rng=rng,
                          direction=(1, -1)[k % 2])
        tr = rectify_trajectory([f])
        assert np.min(tr.vx * tr.direction) >= -1e-6
        assert np.max(np.abs(tr.ax)) <= 10 + 1e-6
        assert np.max(np.abs(tr.jx)) <= 10 + 1e-6
        assert np.max(np.abs(tr.ay)) <= 10 + 1e-6


def test_dimensions_are_medians():
    a = line_fragment("a", 0.0, 1.0, length=14.0, width=5.0)
    b = line_fragment("b", 2.0, 3.0, length=16.0, width=6.0)
    c = line_fragment("c", 4.0, 5.0, length=20.0, width=7.0)
    tr = rectify_trajectory([a, b, c])
    assert (tr.length, tr.width) == (16.0, 6.0)


def test_short_grid_passes_through():
    f = Fragment("a", [0.0, 0.04, 0.08], [0.0, 2.0, 4.0], [0.0, 0.0, 0.0])
    tr = rectify_trajectory([f])
    assert not tr.rectified
    np.testing.assert_allclose(tr.x, f.x)


def test_camera_overlap_frames_are_averaged():
    a = Fragment("a", [0.0, 0.04, 0.08], [0.0, 2.0, 4.0], [0.0, 0.0, 0.0])
    b = Fragment("b", [0.08, 0.12], [6.0, 6.0], [1.0, 1.0])
    _, obs, zx, zy = merge_chain([a, b])
    assert obs.tolist() == [0, 1, 2, 3]
    assert zx[2] == 5.0 and zy[2] == 0.5


def test_steering_angles():
    np.testing.assert_allclose(steering_angles(np.arange(5.0), np.zeros(5)), 0.0)
    np.testing.assert_allclose(steering_angles(np.arange(5.0), np.arange(5.0)), math.pi / 4)
    th = steering_angles([0.0, 25.0 * DT], [0.0, -1.0 * DT])
    assert th[0] == pytest.approx(math.atan(-1 / 25))
    assert th[0] == pytest.approx(-0.03998, abs=1e-5)
    # standing still repeats the previous heading, 0 at the start
    th = steering_angles([0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0])
    np.testing.assert_allclose(th, [0.0, math.pi / 4, math.pi / 4])
    # straight backwards is +pi, never -pi
    assert steering_angles([1.0, 0.0], [0.0, -0.0])[0] == pytest.approx(math.pi)


def test_denoising_beats_raw_noise():
    rng = np.random.default_rng(30)
    wins = 0
    trials = 100
    n = 75
    t = np.arange(n) * DT
    for _ in range(trials):
        v = rng.uniform(20, 80)
        line = v * t + rng.uniform(0, 500)
        z = line + rng.normal(0, 1, n)
        p = RectificationProblem.from_config(z, np.arange(n), n, RectifierConfig(), direction=1)
        x, _ = rectify_axis(p)
        wins += np.sqrt(np.mean((x - line) ** 2)) < np.sqrt(np.mean((z - line) ** 2))
    assert wins >= 95


@pytest.mark.parametrize("lam1", [1.2e-3, 1.0, 6.0])
def test_outliers_are_soft_thresholded_residuals(lam1):
    # optimality in e alone: e = sign(r) * max(|r| - lam1/2, 0) with r = z - x
    rng = np.random.default_rng(31)
    n = 150
    t = np.arange(n) * DT
    z = 60 * t + rng.normal(0, 1, n)
    p = RectificationProblem.from_config(z, np.arange(n), n, RectifierConfig(lam1=lam1), direction=1)
    x, e = rectify_axis(p)
    r = z - x
    np.testing.assert_allclose(e, np.sign(r) * np.maximum(np.abs(r) - lam1 / 2, 0.0), atol=1e-6)


def test_outliers_stay_sparse_when_threshold_exceeds_noise():
    rng = np.random.default_rng(32)
    n = 150
    t = np.arange(n) * DT
    z = 60 * t + rng.normal(0, 1, n)
    # lam1 / 2 = 3 sigma
    p = RectificationProblem.from_config(z, np.arange(n), n, RectifierConfig(lam1=6.0), direction=1)
    _, e = rectify_axis(p)
    assert np.mean(np.abs(e) > 0.01) < 0.05


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(6, 50), st.sampled_from([1, -1, None]))
def test_random_instances_are_certified(seed, n, direction):
    rng = np.random.default_rng(seed)
    obs = np.flatnonzero(rng.random(n) < 0.75)
    if obs.size < 2:
        obs = np.array([0, n - 1])
    t = np.arange(n) * DT
    sign = 1 if direction is None else direction
    z = (sign * 50 * t + rng.normal(0, 1.5, n) + (rng.random(n) < 0.05) * 30)[obs]
    p = RectificationProblem.from_config(z, obs, n, RectifierConfig(), direction=direction)
    sol = solve_axis(p)
    assert p.constraint_violation(sol.x) <= 1e-6
    assert sol.dual_residual <= 1e-6 and sol.gap <= 1e-6
