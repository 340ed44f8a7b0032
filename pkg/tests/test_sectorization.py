import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datc.airspace import AircraftState, TrafficSnapshot, snapshot_at, straight_plan
from datc.sectorization import (FeatureVector, GridWeights, extract_features,
                                label_optimal_grid, score_all, score_grid)
from helpers import random_plan
from sector_oracle import brute_label, brute_scores


def scenario(seed):
    rng = random.Random(seed)
    plans = [random_plan(rng, i, t_max=60, legs=rng.randint(1, 2))
             for i in range(rng.randint(2, 10))]
    t = 80.0
    active = [p for p in plans if p.start_time <= t <= p.end_time]
    return snapshot_at(plans, t, day_of_week=rng.randint(0, 6),
                       hour_of_day=rng.randint(0, 23)), active


@pytest.mark.parametrize("seed", range(20))
def test_scores_match_brute_force(seed):
    snap, plans = scenario(seed)
    ref = brute_scores(snap, plans)
    for s in score_all(snap, plans):
        var, hand, risk, _ = ref[(s.rows, s.cols)]
        assert s.handoff_count == hand
        assert s.risk_pair_count == risk
        assert s.occupancy_variance == pytest.approx(var, abs=1e-9)
    assert label_optimal_grid(snap, plans) == brute_label(ref)


def test_ties_prefer_fewer_sectors():
    snap = TrafficSnapshot(())
    assert label_optimal_grid(snap, []) == (1, 1)


def test_weights_change_the_label():
    snap, plans = scenario(0)
    risk_only = GridWeights(w_var=0.0, w_hand=0.0, w_risk=1.0)
    scores = score_all(snap, plans, risk_only)
    r, c = label_optimal_grid(snap, plans, risk_only, scores)
    assert min(s.J for s in scores) == next(s.J for s in scores if (s.rows, s.cols) == (r, c))


def test_grid_bounds():
    snap, plans = scenario(1)
    with pytest.raises(ValueError):
        score_grid(snap, plans, 0, 2)
    with pytest.raises(ValueError):
        score_grid(snap, plans, 6, 1)


def _state(i, x, y, hdg, alt=30000.0):
    return AircraftState(i, x, y, alt, hdg, 450.0)


def test_feature_values_by_hand():
    snap = TrafficSnapshot((_state(1, 0, 0, 90), _state(2, 3, 4, 90), _state(3, 0, 8, 270)),
                           hour_of_day=19, day_of_week=6)
    f = extract_features(snap)
    assert f.traffic_density == 3
    assert f.avg_proximity == pytest.approx((5 + 8 + 5) / 3)
    assert f.conflict_risk == pytest.approx(5.0)
    assert f.primary_flow_dir == pytest.approx(1.0)
    assert f.flow_direction == pytest.approx(1.0)  # opposite headings share an axis
    assert f.day_weekend == 1 and f.day_weekday == 0
    assert (f.time_morn, f.time_noon, f.time_eve, f.time_night) == (0, 0, 1, 0)
    assert f.density_sq == 9 and f.log_proximity == pytest.approx(math.log1p(6.0))


def test_single_aircraft_features_are_finite():
    f = extract_features(TrafficSnapshot((_state(1, 5, 5, 45),)))
    assert all(math.isfinite(v) for v in f.as_list())
    assert f.flow_concentration == 0.0 and f.avg_proximity == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100), st.floats(0, 360),
                          st.floats(1000, 40000)), min_size=1, max_size=40),
       st.integers(0, 23), st.integers(0, 6))
def test_features_stay_in_range(rows, hour, day):
    snap = TrafficSnapshot(tuple(_state(i, x, y, h, z) for i, (x, y, h, z) in enumerate(rows)),
                           hour_of_day=hour, day_of_week=day)
    f = extract_features(snap)
    assert len(f.as_list()) == len(FeatureVector.names()) == 23
    assert 0 <= f.avg_proximity <= 80 and 0 <= f.conflict_risk <= 60
    assert 0 <= f.flow_concentration <= 1.5 and 0 <= f.primary_flow_dir <= 1
    assert f.time_morn + f.time_noon + f.time_eve + f.time_night == 1
    assert f.day_weekday + f.day_weekend == 1
    assert f.traffic_level in (0, 1, 2) and f.proximity_level in (0, 1, 2)
