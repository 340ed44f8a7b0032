import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datc.airspace import (FlightPlan, OutOfBoundsError, SectorGrid, SectorId,
                           generate_synthetic_traffic, sector_of, sectors_crossed, snapshot_at,
                           straight_plan)
from helpers import random_plan


def test_boundary_ownership():
    g = SectorGrid(2, 2)
    assert sector_of(g, 50.0, 10.0, 1000) == SectorId(0, 1, 0)
    assert sector_of(g, 100.0, 100.0, 1000) == SectorId(1, 1, 0)
    with pytest.raises(OutOfBoundsError):
        sector_of(g, 100.01, 5.0, 1000)
    with pytest.raises(OutOfBoundsError):
        sector_of(g, 5.0, 5.0, -1.0)


def test_layers_follow_bands():
    g = SectorGrid(1, 1)
    layers = [sector_of(g, 1, 1, z).layer for z in (0, 9999, 10000, 20000, 45000)]
    assert layers == sorted(layers) and layers[0] == 0 and layers[-1] == 2


def test_position_interpolates_and_clamps():
    p = FlightPlan(1, [(0, 0, 0, 0), (10, 0, 1000, 100)], 360)
    assert p.position(50) == (5.0, 0.0, 500.0)
    assert p.position(-5) == (0.0, 0.0, 0.0)
    assert p.position(1e9) == (10.0, 0.0, 1000.0)


def test_plan_rejects_bad_timing():
    with pytest.raises(ValueError):
        FlightPlan(1, [(0, 0, 0, 5), (1, 0, 0, 5)], 400)
    with pytest.raises(ValueError):
        FlightPlan(1, [(0, 0, 0, 0)], 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.7, 1.3))
def test_retime_keeps_path(seed, f):
    p = random_plan(random.Random(seed), 1, legs=3)
    q = p.retimed(f)
    assert [w[:3] for w in q.waypoints] == [w[:3] for w in p.waypoints]
    assert q.duration == pytest.approx(p.duration / f)
    assert q.check_speed()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 5))
def test_sector_route_tiles_plan(seed, rows, cols):
    g = SectorGrid(rows, cols)
    p = random_plan(random.Random(seed), 1, legs=2)
    route = sectors_crossed(g, p)
    assert route[0].t_in == pytest.approx(p.start_time)
    assert route[-1].t_out == pytest.approx(p.end_time)
    for a, b in zip(route, route[1:]):
        assert a.t_out == pytest.approx(b.t_in)
        assert a.sector != b.sector
    for v in route:
        assert v.t_out > v.t_in
        mid = p.position(0.5 * (v.t_in + v.t_out))
        assert sector_of(g, *mid) == v.sector


def test_grid_line_crossing_gives_no_sliver():
    g = SectorGrid(4, 4)
    p = straight_plan(1, (25.0, 0.0, 30000), (25.0, 100.0, 30000), 0, 450)
    route = sectors_crossed(g, p)
    assert [v.sector.row for v in route] == [0, 1, 2, 3]


def test_traffic_is_deterministic_and_valid():
    g = SectorGrid(2, 2)
    for profile in ("random", "converging"):
        a = generate_synthetic_traffic(3, 25, g, profile)
        b = generate_synthetic_traffic(3, 25, g, profile)
        assert a == b
        assert [p.owner for p in a] == list(range(1, 26))
        assert all(p.check_speed() for p in a)
        starts = [p.start_time for p in a]
        assert starts == sorted(starts)
    assert generate_synthetic_traffic(4, 25, g) != generate_synthetic_traffic(3, 25, g)
    with pytest.raises(ValueError):
        generate_synthetic_traffic(0, 5, g, "spiral")


def test_converging_ends_near_centre():
    for p in generate_synthetic_traffic(1, 40, SectorGrid(1, 1), "converging"):
        x, y, z = p.position(p.end_time)
        assert math.hypot(x - 50, y - 50) <= 10.0
        assert z == 3000.0


def test_snapshot_headings():
    p = straight_plan(1, (0, 0, 30000), (0, 50, 30000), 0, 400)
    q = straight_plan(2, (50, 50, 30000), (100, 50, 30000), 0, 400)
    snap = snapshot_at([p, q], 10.0)
    hd = {a.id: a.heading for a in snap.aircraft}
    assert hd[1] == pytest.approx(0.0) and hd[2] == pytest.approx(90.0)
    assert snapshot_at([p, q], 1e6).aircraft == ()
