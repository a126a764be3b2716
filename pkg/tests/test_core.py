import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajrecon.core import Fragment, FrameConfig, GridError, Point, footprint, resample_to_grid


def test_uniform_points_fill_the_grid():
    t, x, y, mask = resample_to_grid([0.0, 0.04, 0.08], [1, 2, 3], [0, 0, 0])
    assert t.size == 3
    assert mask.all()
    np.testing.assert_allclose(t, [0.0, 0.04, 0.08])


def test_gap_leaves_unobserved_frames():
    t, x, y, mask = resample_to_grid([0.0, 0.12], [0, 3], [0, 0])
    assert mask.tolist() == [True, False, False, True]
    assert np.isnan(x[1]) and np.isnan(x[2])


def test_near_boundary_snaps_to_next_frame():
    t, _, _, mask = resample_to_grid([0.0, 0.039], [0, 1], [0, 0])
    assert mask.tolist() == [True, True]


def test_two_points_in_one_frame_is_an_error():
    with pytest.raises(GridError, match="duplicate frame"):
        resample_to_grid([0.0, 0.01], [0, 1], [0, 0])


def test_empty_input():
    t, x, y, mask = resample_to_grid([], [], [])
    assert t.size == 0 and mask.size == 0


def test_grid_is_anchored_at_zero():
    t, _, _, _ = resample_to_grid([1.001, 1.079], [0, 1], [0, 0])
    np.testing.assert_allclose(t, [1.0, 1.04, 1.08])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=40, unique=True),
       st.floats(-0.019, 0.019))
def test_resample_roundtrip(frames, jitter):
    k = np.sort(np.array(frames))
    t = k * 0.04 + jitter
    t = t[t >= 0] if (t >= 0).any() else k * 0.04
    x = np.arange(t.size) * 1.5
    y = -np.arange(t.size) * 0.5
    tg, xs, ys, mask = resample_to_grid(t, x, y)
    kk = np.rint(t / 0.04).astype(int)
    assert tg.size == kk[-1] - kk[0] + 1
    assert tg.size == round((t[-1] - t[0]) / 0.04) + 1
    np.testing.assert_array_equal(xs[mask], x)
    np.testing.assert_array_equal(ys[mask], y)
    assert mask.sum() == t.size


def test_fragment_validation():
    with pytest.raises(ValueError):
        Fragment("a", [], [], [])
    with pytest.raises(ValueError):
        Fragment("a", [0.0, 0.0], [1, 2], [0, 0])
    with pytest.raises(ValueError):
        Fragment("a", [0.0], [np.nan], [0])
    with pytest.raises(ValueError):
        Fragment("a", [0.0], [0], [0], length=0)
    with pytest.raises(ValueError):
        Fragment("a", [0.0], [0], [0], direction=0)


def test_fragment_is_immutable_and_reports_extent():
    f = Fragment.from_points("a", [Point(0.0, 1.0, 2.0), Point(0.08, 3.0, 2.0)])
    assert f.t_start == 0.0 and f.t_end == 0.08 and f.n_points == 2
    with pytest.raises(ValueError):
        f.x[0] = 5.0
    assert f.points[1] == Point(0.08, 3.0, 2.0)


def test_frame_config():
    assert FrameConfig().dt == 0.04
    with pytest.raises(ValueError):
        FrameConfig(0.0)


def test_footprint_follows_direction():
    assert footprint(10.0, 0.0, 15.0, 6.0, 1) == (10.0, 25.0, -3.0, 3.0)
    x0, x1, _, _ = footprint(10.0, 0.0, 15.0, 6.0, -1)
    assert (x0, x1) == (-5.0, 10.0)
