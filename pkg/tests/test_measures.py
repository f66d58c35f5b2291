import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singhyp.errors import EmptyInput, GridMismatch, OrbitTerminated
from singhyp.maps import level_box, make_stacked_lorenz
from singhyp.measures import (EmpiricalMeasure, Fingerprint, birkhoff_average, bin_points,
                              count_components, ensemble_fingerprints, fingerprint, histogram,
                              level_fingerprints, measure_distance, trig3_values)
from singhyp.trajectory import ensemble

from conftest import STANDARD_GL, record_from_points


def test_pinned_orbit_is_a_point_mass():
    m = histogram([record_from_points([(0.3, -0.2)] * 50)], grid_res=16)
    assert m.weights.sum() == 1.0
    assert np.count_nonzero(m.weights) == 1
    i, j = np.argwhere(m.weights)[0]
    assert (i, j) == (int((-0.2 + 1) * 8), int((0.3 + 1) * 8))


def test_two_disjoint_orbits_split_mass():
    recs = [record_from_points([(0.5, 0.5)] * 30), record_from_points([(-0.5, -0.5)] * 30)]
    m = histogram(recs, grid_res=8)
    assert sorted(m.weights[m.weights > 0]) == [0.5, 0.5]


def test_histogram_needs_points():
    with pytest.raises(EmptyInput):
        histogram([])


def test_kernel_histogram_matches_binned_points(gl):
    (a,) = ensemble(gl, 1, 3, 5000, burn_in=0, thin=1, grid_res=64)
    binned = bin_points(a.points, 64)
    np.testing.assert_array_equal(a.histogram, binned)
    np.testing.assert_array_equal(histogram([a], 32).weights,
                                  EmpiricalMeasure.from_counts(bin_points(a.points, 32)).weights)


def test_distance_trivial_cases():
    a = EmpiricalMeasure.from_counts(np.eye(4)[:, :1] @ np.eye(4)[:1])
    b = EmpiricalMeasure.from_counts(np.eye(4)[:, 3:] @ np.eye(4)[3:])
    assert measure_distance(a, a) == 0.0
    assert measure_distance(a, b) == 2.0
    with pytest.raises(GridMismatch):
        measure_distance(a, EmpiricalMeasure.from_counts(np.ones((8, 8))))


@given(st.lists(st.tuples(st.floats(-0.999, 0.999), st.floats(-0.999, 0.999)),
                min_size=1, max_size=40))
def test_distance_is_bounded_and_coarsening_contracts(points):
    a = histogram([record_from_points(points)], 32)
    b = histogram([record_from_points([(0.1, 0.1)])], 32)
    d = measure_distance(a, b)
    assert 0.0 <= d <= 2.0 + 1e-12
    assert measure_distance(a.coarsen(8), b.coarsen(8)) <= d + 1e-12
    assert a.coarsen(8).weights.sum() == pytest.approx(1.0)


def test_csv_and_pgm(tmp_path):
    counts = np.zeros((4, 4))
    counts[0, 1] = 3
    counts[3, 2] = 1
    m = EmpiricalMeasure.from_counts(counts)
    m.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines == ["row,col,weight", "0,1,0.75", "3,2,0.25"]
    back = EmpiricalMeasure.from_csv(tmp_path / "h.csv", 4)
    np.testing.assert_array_equal(back.weights, m.weights)
    m.to_pgm(tmp_path / "h.pgm")
    raw = (tmp_path / "h.pgm").read_bytes()
    header = b"P5\n4 4\n255\n"
    assert raw.startswith(header)
    img = np.frombuffer(raw[len(header):], np.uint8).reshape(4, 4)
    # row 0 of the image is the top of the square
    assert img[3, 1] == 255 and img[0, 2] > 0 and img[0, 0] == 0


def test_constant_function_averages_to_one(gl):
    fp = fingerprint(gl, (0.3, 0.4), 1000, basis="trig3+const", burn_in=10)
    assert fp.values[-1] == 1.0
    fp2 = fingerprint(gl, (0.3, 0.4), 1000, basis=[lambda x, y: np.ones_like(x)], burn_in=10)
    assert fp2.values[0] == 1.0


def test_fixed_point_average_is_pointwise_value(belykh13):
    avg = birkhoff_average([(1.0, 1.0)] * 25)
    np.testing.assert_allclose(avg, trig3_values(1.0, 1.0), rtol=0, atol=1e-15)
    # the fixed point sits on the boundary, so iterating from it stops at once
    with pytest.raises(OrbitTerminated) as err:
        fingerprint(belykh13, (1.0, 1.0), 10, burn_in=0)
    assert err.value.partial.usable is False


def test_trig3_entries():
    v = trig3_values(0.0, 0.0)
    assert v.shape == (9,)
    assert (v == 1.0).all()


def test_kernel_fingerprint_matches_points(gl):
    fast = fingerprint(gl, (0.2, 0.3), 4000, burn_in=100)
    funcs = [lambda x, y, i=i, j=j: np.cos(np.pi * i * x) * np.cos(np.pi * j * y)
             for i, j in [(i, j) for i in range(4) for j in range(4) if 0 < i + j <= 3]]
    slow = fingerprint(gl, (0.2, 0.3), 4000, basis=funcs, burn_in=100)
    assert sorted(np.round(fast.values, 10)) == sorted(np.round(slow.values, 10))


@given(st.integers(0, 50))
def test_shift_invariance(shift):
    from singhyp.maps import make_geometric_lorenz
    from singhyp.trajectory import iterate
    m = make_geometric_lorenz(**STANDARD_GL)
    n = 2000
    x0 = (0.2, 0.31)
    xs = iterate(m, x0, shift, thin=1).points[-1] if shift else x0
    a = fingerprint(m, x0, n, burn_in=0).values
    b = fingerprint(m, tuple(xs), n, burn_in=0).values
    # |f| <= 1, so a shift by s changes the average by at most 2 s / n
    assert np.abs(a - b).max() <= 2 * shift / n + 1e-12


def test_stacked_y_averages_separate_levels():
    m = make_stacked_lorenz(base=STANDARD_GL, levels=3)
    ranges = []
    for k in range(3):
        box = level_box(3, k)
        (xl, xh), (lo, hi) = box
        recs = ensemble(m, 5, 11, 2000, burn_in=100, thin=1, box=box)
        ys = [birkhoff_average(r.points, [lambda x, y: y])[0] for r in recs]
        assert all(lo <= v <= hi for v in ys)
        ranges.append((lo, hi))
    ranges.sort()
    assert all(a[1] <= b[0] for a, b in zip(ranges, ranges[1:]))


# -- clustering ----------------------------------------------------------------

def fp(values, n=100):
    return Fingerprint(np.asarray(values, float), n, "trig3")


def test_identical_fingerprints_one_cluster():
    rep = count_components([fp([0.1, 0.2])] * 10)
    assert rep.cluster_count == 1 and rep.well_separated


def test_two_blobs():
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(0, 1e-3, (20, 3)), rng.normal(1, 1e-3, (20, 3))])
    rep = count_components([fp(p) for p in pts])
    assert rep.cluster_count == 2
    assert sorted(rep.cluster_sizes) == [20, 20]
    assert rep.separation_ratio > 3 and rep.well_separated
    assert rep.min_inter_distance > rep.max_intra_distance


def test_fixed_threshold_and_edge_cases():
    rep = count_components([fp([0.0]), fp([0.5]), fp([2.0])], threshold=1.0)
    assert rep.cluster_count == 2 and rep.labels == [0, 0, 1]
    assert count_components([]).cluster_count == 0
    assert count_components([fp([1.0])]).cluster_count == 1
    with pytest.raises(ValueError):
        count_components([fp([1.0], 10), fp([1.0], 20)])


def test_stacked_three_levels_three_clusters():
    m = make_stacked_lorenz(base=STANDARD_GL, levels=3)
    fps = level_fingerprints(m, 100, 1, 20000, burn_in=1000)
    rep = count_components(fps)
    assert rep.cluster_count == 3 and rep.well_separated
    assert rep.cluster_sizes == [100, 100, 100]


def test_level_fingerprints_reuse_ensemble_streams():
    m = make_stacked_lorenz(base=STANDARD_GL, levels=2)
    fps = level_fingerprints(m, 3, 4, 500, burn_in=10)
    again = ensemble_fingerprints(m, 3, 4, 500, burn_in=10, box=level_box(2, 1), first_index=3)
    for a, b in zip(fps[3:], again):
        np.testing.assert_array_equal(a.values, b.values)
