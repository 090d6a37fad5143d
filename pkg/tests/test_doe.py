import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from preform_fusion.doe import DesignMatrix, ParameterSpace, lhs_sample, verify_stratification


def brute_force_strata_ok(points, lower, upper):
    """Independent check: count points per stratum with plain loops."""
    n, d = points.shape
    for j in range(d):
        counts = [0] * n
        width = (upper[j] - lower[j]) / n
        for v in points[:, j]:
            k = min(int((v - lower[j]) // width), n - 1)
            counts[k] += 1
        if counts != [1] * n:
            return False
    return True


def test_one_dim_four_strata():
    space = ParameterSpace((("x", 0.0, 1.0),))
    pts = lhs_sample(space, 4, seed=7).points[:, 0]
    assert sorted(int(v // 0.25) for v in pts) == [0, 1, 2, 3]


def test_single_point_inside_box():
    space = ParameterSpace((("a", -1.0, 2.0), ("b", 10.0, 11.0)))
    p = lhs_sample(space, 1, seed=3).points[0]
    assert np.all(p > space.lower) and np.all(p < space.upper)


def test_two_thousand_slab_design():
    space = ParameterSpace((("s1", 5.0, 112.5), ("s2", 5.0, 112.5)))
    dm = lhs_sample(space, 2000, seed=11)
    assert dm.points.shape == (2000, 2)
    assert verify_stratification(dm)
    assert brute_force_strata_ok(dm.points, space.lower, space.upper)


def test_verify_detects_collision():
    space = ParameterSpace((("x", 0.0, 1.0), ("y", 0.0, 1.0)))
    pts = np.array(lhs_sample(space, 5, seed=0).points)
    order = np.argsort(pts[:, 0])
    pts[order[1], 0] = pts[order[0], 0] + 1e-3  # two points in stratum 0 of column 0
    assert not verify_stratification(DesignMatrix(space, pts, 0))


def test_verify_rejects_empty():
    space = ParameterSpace((("x", 0.0, 1.0),))
    with pytest.raises(ValueError):
        verify_stratification(DesignMatrix(space, np.empty((0, 1)), 0))


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_bad_counts_rejected(n):
    with pytest.raises(ValueError):
        lhs_sample(ParameterSpace((("x", 0.0, 1.0),)), n, seed=0)


@pytest.mark.parametrize("dims", [
    (("x", 1.0, 1.0),),
    (("x", 2.0, 1.0),),
    (("x", 0.0, 1.0), ("x", 0.0, 2.0)),
    (),
])
def test_invalid_spaces(dims):
    with pytest.raises(ValueError):
        ParameterSpace(dims)


def test_deterministic():
    space = ParameterSpace((("a", 0.0, 3.0), ("b", -2.0, 2.0), ("c", 5.0, 6.0)))
    a = lhs_sample(space, 50, seed=99).points
    b = lhs_sample(space, 50, seed=99).points
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, lhs_sample(space, 50, seed=100).points)


def test_csv_export(tmp_path):
    space = ParameterSpace((("s1", 5.0, 112.5), ("s2", 5.0, 112.5)))
    dm = lhs_sample(space, 10, seed=1)
    path = tmp_path / "design.csv"
    dm.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["s1", "s2"]
    back = np.array([[float(v) for v in r] for r in rows[1:]])
    assert np.array_equal(back, dm.points)


space_strategy = st.lists(
    st.tuples(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3)), min_size=1, max_size=5
).map(lambda b: ParameterSpace(tuple((f"d{i}", lo, lo + w) for i, (lo, w) in enumerate(b))))


@settings(max_examples=60, deadline=None)
@given(space=space_strategy, n=st.integers(1, 300), seed=st.integers(0, 2**32))
def test_stratification_property(space, n, seed):
    dm = lhs_sample(space, n, seed)
    assert verify_stratification(dm)
    assert np.all(dm.points >= space.lower) and np.all(dm.points <= space.upper)


@settings(max_examples=30, deadline=None)
@given(space=space_strategy, n=st.integers(100, 600), seed=st.integers(0, 2**32))
def test_column_means_near_midpoint(space, n, seed):
    pts = lhs_sample(space, n, seed).points
    mid = (space.lower + space.upper) / 2
    assert np.all(np.abs(pts.mean(axis=0) - mid) <= 0.05 * (space.upper - space.lower))
