import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from membrane_lab.lattice import (
    BudgetError,
    EmptyRegionError,
    ball,
    box_region,
    build_box,
    double_boundary,
    full_region,
    inner_region,
    partition_subboxes,
)


@pytest.mark.parametrize("N,d,sites", [(1, 2, 9), (2, 4, 625), (8, 4, 83521)])
def test_site_counts(N, d, sites):
    assert build_box(N, d).n_sites == sites


def test_budget_and_bad_arguments():
    with pytest.raises(BudgetError):
        build_box(20, 4, budget=10_000)
    with pytest.raises(ValueError):
        build_box(0, 2)
    with pytest.raises(ValueError):
        build_box(3, 5)


@settings(derandomize=True, max_examples=40)
@given(st.integers(1, 4), st.integers(1, 5))
def test_site_index_round_trip(d, N):
    box = build_box(N, d)
    coords = box.coords()
    assert np.abs(coords).max() == N
    assert np.array_equal(box.site_index(coords), np.arange(box.n_sites))


def test_site_index_outside():
    with pytest.raises(IndexError):
        build_box(2, 2).site_index((3, 0))


def test_inner_region_matches_scan():
    box = build_box(8, 4)
    region = inner_region(box, 0.25)
    coords = box.coords()
    expected = np.nonzero(np.abs(coords).max(axis=1) <= 6)[0]
    assert np.array_equal(np.sort(region.indices), expected)


def test_inner_region_limits():
    box = build_box(4, 2)
    assert inner_region(box, 1.0).as_set() == {(0, 0)}
    tiny = inner_region(build_box(8, 4), 1e-6)
    assert len(tiny) == 17**4
    with pytest.raises(ValueError):
        inner_region(box, 0.0)


def test_inner_region_metric_free():
    a = inner_region(build_box(6, 2, metric="linf"), 0.3)
    b = inner_region(build_box(6, 2, metric="l1"), 0.3)
    assert a.as_set() == b.as_set()


def _shell_scan(points, metric, span=6):
    points = [tuple(p) for p in points]
    pset = set(points)
    d = len(points[0])
    out = set()
    for y in itertools.product(range(-span, span + 1), repeat=d):
        if y in pset:
            continue
        for p in points:
            diff = [abs(a - b) for a, b in zip(y, p)]
            dist = max(diff) if metric == "linf" else sum(diff)
            if dist <= 2:
                out.add(y)
                break
    return out


@pytest.mark.parametrize("metric", ["linf", "l1"])
def test_double_boundary_single_site(metric):
    box = build_box(4, 2, metric=metric)
    region = box_region(box, (0, 0), 0)
    shell = double_boundary(region)
    assert shell.as_set() == _shell_scan([(0, 0)], metric)
    assert len(shell) == (24 if metric == "linf" else 12)


@pytest.mark.parametrize("metric", ["linf", "l1"])
def test_double_boundary_full_box(metric):
    box = build_box(2, 2, metric=metric)
    shell = double_boundary(full_region(box))
    assert shell.exterior
    assert shell.as_set() == _shell_scan(box.coords(), metric)
    assert not np.any(box.contains(shell.members))


def test_balls_and_boxes():
    box4 = build_box(3, 4)
    unit = ball(box4, (0, 0, 0, 0), 1)
    assert len(unit) == 9 and not unit.clipped
    box2 = build_box(5, 2)
    assert len(box_region(box2, (1, 1), 2)) == 9
    assert len(ball(box2, (0, 0), 2.5)) == 21
    edge = ball(box2, (5, 5), 2)
    assert edge.clipped and len(edge) == 6


def _placements(N, d, side, anchor, stride):
    out = []
    for corner in itertools.product(range(-N, N + 1), repeat=d):
        if all((c - a) % stride == 0 for c, a in zip(corner, anchor)) and all(
                c + side <= N for c in corner):
            out.append(corner)
    return sorted(out)


@pytest.mark.parametrize("anchor", [None, (-3, 2), (0, 0)])
def test_partition_matches_placement_oracle(anchor):
    box = build_box(16, 2)
    part = partition_subboxes(box, 0.5, anchor)
    assert part.side == 4 and part.stride == 8
    assert len(part.box(0)) == 25
    expected = _placements(16, 2, 4, anchor or (-16, -16), 8)
    assert sorted(map(tuple, part.corners.tolist())) == expected


def test_partition_gaps_and_containment():
    box = build_box(12, 2)
    part = partition_subboxes(box, 0.6, (-7, 1))
    members = [b.members for b in part.boxes()]
    for m in members:
        assert np.all(box.contains(m))
    for a, b in itertools.combinations(members, 2):
        gap = np.abs(a[:, None, :] - b[None, :, :]).max(axis=2).min()
        assert gap >= 3
    scope = part.sigma_scope().as_set()
    for m in members:
        assert not scope & {tuple(r) for r in m.tolist()}


def test_partition_too_large():
    box = build_box(3, 2)
    with pytest.raises(EmptyRegionError):
        partition_subboxes(box, np.log(7) / np.log(3) + 1e-9)
    assert len(partition_subboxes(box, np.log(6) / np.log(3) + 1e-9)) == 1
