import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stormwarn.labeling import (
    LabelParams, LightningRecord, RainGrid, haversine_km, label_event, label_hours,
    lightning_rule, over_threshold_components,
)

from oracles import components_bfs, great_circle_km, lightning_bruteforce

T0 = dt.datetime(2019, 10, 3, 15, 0)
DLAT, DLON = 0.008929, 0.013267


def grid_with(cells, value=60.0, shape=(12, 12), t=T0):
    v = np.zeros(shape)
    for r, c in cells:
        v[r, c] = value
    return RainGrid(v, 44.0, 8.0, DLAT, DLON, t)


def burst(lat, lon, count, minutes, start=T0 + dt.timedelta(minutes=5)):
    step = minutes / max(count - 1, 1)
    return [LightningRecord(start + dt.timedelta(minutes=k * step), lat, lon) for k in range(count)]


ROW = [(5, 4), (5, 5), (5, 6)]


def centre(grid, cells):
    return tuple(grid.coords(cells).mean(axis=0))


# --- components ----------------------------------------------------------

def test_three_pixel_run_is_one_component():
    comps = over_threshold_components(grid_with(ROW), 50, 3)
    assert len(comps) == 1 and len(comps[0]) == 3


def test_isolated_pixels_do_not_form_components():
    assert over_threshold_components(grid_with([(1, 1), (8, 8)], 80.0), 50, 3) == []


def test_all_zero_grid():
    assert over_threshold_components(grid_with([]), 50, 3) == []


def test_exceedance_is_strict():
    assert over_threshold_components(grid_with(ROW, 50.0), 50, 3) == []


def test_diagonal_cells_join_only_under_eight_connectivity():
    g = grid_with([(2, 2), (3, 3), (4, 4)])
    assert over_threshold_components(g, 50, 3, "four") == []
    assert len(over_threshold_components(g, 50, 3, "eight")) == 1


def test_missing_cells_count_as_dry():
    g = grid_with(ROW)
    v = g.values.copy()
    v[5, 5] = np.nan
    g2 = RainGrid(v, 44.0, 8.0, DLAT, DLON, T0)
    assert over_threshold_components(g2, 50, 3) == []
    assert label_event(g2, []).missing_cells == 1


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        over_threshold_components(np.zeros((0, 0)))


wet_grids = st.integers(1, 9).flatmap(
    lambda r: st.integers(1, 9).flatmap(
        lambda c: st.lists(st.lists(st.booleans(), min_size=c, max_size=c), min_size=r, max_size=r)))


@settings(max_examples=150)
@given(wet_grids)
def test_components_partition_wet_cells(wet):
    vals = np.where(np.array(wet), 70.0, 10.0)
    for conn, eight in (("four", False), ("eight", True)):
        comps = [c.pixels for c in over_threshold_components(vals, 50, 1, conn)]
        flat = [p for c in comps for p in c]
        assert len(flat) == len(set(flat))
        assert set(flat) == {(r, c) for r, row in enumerate(wet) for c, w in enumerate(row) if w}
        assert sorted(map(list, comps)) == sorted(components_bfs(wet, eight))


@given(wet_grids)
def test_four_components_nest_in_eight(wet):
    vals = np.where(np.array(wet), 70.0, 10.0)
    eight = [set(c.pixels) for c in over_threshold_components(vals, 50, 1, "eight")]
    for comp in over_threshold_components(vals, 50, 1, "four"):
        assert any(set(comp.pixels) <= e for e in eight)


@given(wet_grids, st.integers(1, 5))
def test_min_size_filter(wet, k):
    vals = np.where(np.array(wet), 70.0, 10.0)
    kept = over_threshold_components(vals, 50, k)
    assert all(len(c) >= k for c in kept)
    all_comps = components_bfs(wet)
    assert len(kept) == sum(1 for c in all_comps if len(c) >= k)


# --- distance --------------------------------------------------------------

def test_haversine_examples():
    assert haversine_km((44.0, 8.0), (44.0, 8.0)) == 0.0
    assert haversine_km((44.0, 8.0), (44.0, 8.0 + DLON)) == pytest.approx(1.06, rel=0.10)
    assert haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(math.pi * 6371.0, abs=1.0)
    assert haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(20015, abs=1.0)


@given(st.floats(-80, 80), st.floats(-179, 179), st.floats(-80, 80), st.floats(-179, 179))
def test_haversine_agrees_with_cosine_rule(la1, lo1, la2, lo2):
    d = haversine_km((la1, lo1), (la2, lo2))
    assert d == pytest.approx(haversine_km((la2, lo2), (la1, lo1)))
    if d > 10:
        assert d == pytest.approx(great_circle_km((la1, lo1), (la2, lo2)), rel=1e-9)


def test_invalid_coordinates_rejected():
    with pytest.raises(ValueError):
        LightningRecord(T0, 91.0, 0.0)


# --- lightning rule --------------------------------------------------------------

def test_lightning_rule_examples():
    g = grid_with(ROW)
    coords = g.coords(ROW)
    lat, lon = centre(g, ROW)
    assert lightning_rule(coords, burst(lat, lon, 12, 8))
    assert not lightning_rule(coords, burst(lat, lon, 9, 8))
    far_lat = lat + 20.0 / 111.2
    assert not lightning_rule(coords, burst(far_lat, lon, 15, 8))


def test_window_is_inclusive_and_sliding():
    g = grid_with(ROW)
    coords = g.coords(ROW)
    lat, lon = centre(g, ROW)
    assert lightning_rule(coords, burst(lat, lon, 10, 10.0))
    assert not lightning_rule(coords, burst(lat, lon, 10, 10.01))
    # a burst straddling a clock ten-minute boundary still counts
    assert lightning_rule(coords, burst(lat, lon, 10, 6, start=T0 + dt.timedelta(minutes=7)))


def test_unsorted_strikes_rejected():
    strikes = burst(44.0, 8.0, 10, 5)[::-1]
    with pytest.raises(ValueError):
        lightning_rule(np.array([[44.0, 8.0]]), strikes)


def test_strike_near_any_pixel_qualifies():
    cells = [(5, c) for c in range(0, 12)]
    g = grid_with(cells)
    coords = g.coords(cells)
    # ~4 km beyond the east end, ~14 km from the west end
    lat, lon = coords[-1, 0], coords[-1, 1] + 4.0 / 80.0
    assert lightning_rule(coords, burst(lat, lon, 10, 5))
    assert not lightning_rule(coords[:2], burst(lat, lon, 10, 5))


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lightning_rule_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n_pix = int(rng.integers(1, 21))
    n_str = int(rng.integers(0, 51))
    coords = np.column_stack([44.0 + rng.random(n_pix) * 0.05, 8.0 + rng.random(n_pix) * 0.07])
    secs = np.sort(rng.integers(0, 3600, n_str))
    lats = 44.0 + (rng.random(n_str) - 0.3) * 0.15
    lons = 8.0 + (rng.random(n_str) - 0.3) * 0.2
    strikes = [LightningRecord(T0 + dt.timedelta(seconds=int(s)), float(a), float(b))
               for s, a, b in zip(secs, lats, lons)]
    k = int(rng.integers(2, 8))
    raw = [(int(s), float(a), float(b)) for s, a, b in zip(secs, lats, lons)]
    expected = lightning_bruteforce([tuple(c) for c in coords], raw, 5.0, 600, k)
    assert lightning_rule(coords, strikes, 5.0, 10.0, k) == expected


# --- event labels -----------------------------------------------------------

def test_label_event_examples():
    g = grid_with(ROW)
    lat, lon = centre(g, ROW)
    hit = label_event(g, burst(lat, lon, 12, 8))
    assert hit.label == 1 and not hit.rain_only and set(hit.component_pixels) == set(ROW)
    rain = label_event(g, burst(lat, lon, 5, 8))
    assert rain.label == 0 and rain.rain_only
    dry = label_event(grid_with([(1, 1)], 90.0), burst(lat, lon, 12, 8))
    assert dry.label == 0 and not dry.rain_only


def test_strikes_outside_the_hour_do_not_count():
    g = grid_with(ROW)
    lat, lon = centre(g, ROW)
    late = burst(lat, lon, 12, 8, start=T0 + dt.timedelta(minutes=65))
    assert label_event(g, late).label == 0


def test_strikes_must_gather_around_one_component():
    cells_a = [(1, 1), (1, 2), (1, 3)]
    cells_b = [(10, 8), (10, 9), (10, 10)]
    g = grid_with(cells_a + cells_b)
    a = burst(*centre(g, cells_a), 5, 4)
    b = burst(*centre(g, cells_b), 5, 4, start=T0 + dt.timedelta(minutes=6))
    strikes = sorted(a + b, key=lambda s: s.time)
    assert label_event(g, strikes).label == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adding_a_strike_never_removes_a_positive(seed):
    rng = np.random.default_rng(seed)
    g = grid_with(ROW)
    lat, lon = centre(g, ROW)
    strikes = burst(lat, lon, int(rng.integers(8, 14)), float(rng.uniform(5, 14)))
    before = label_event(g, strikes).label
    extra = LightningRecord(T0 + dt.timedelta(seconds=int(rng.integers(0, 3600))),
                            lat + float(rng.normal(0, 0.03)), lon + float(rng.normal(0, 0.03)))
    after = label_event(g, sorted(strikes + [extra], key=lambda s: s.time)).label
    assert after >= before


def test_label_hours_splits_strikes_by_hour():
    g1 = grid_with(ROW, t=T0)
    g2 = grid_with(ROW, t=T0 + dt.timedelta(hours=1))
    lat, lon = centre(g1, ROW)
    strikes = burst(lat, lon, 12, 8, start=T0 + dt.timedelta(minutes=70))
    labels = label_hours([g2, g1], strikes)
    assert [l.label for l in labels] == [0, 1]
    assert labels[0].rain_only


def test_params_validation():
    with pytest.raises(ValueError):
        LabelParams(connectivity="six")
    with pytest.raises(ValueError):
        LabelParams(min_strikes=0)
