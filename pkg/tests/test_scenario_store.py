from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import synthetic_lvd
from rfpkit.scenario_store import (ASV, CUTIN, LVD, Bound, ExposureEstimate, ScenarioCategory,
                                   ScenarioRecord, TagTrack, ValidationError, builtin_category,
                                   exposure, load_records, load_tracks, mine_scenarios, save_records,
                                   validate_records)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_builtin_transforms():
    assert LVD.parameter_transforms == ("identity", "negated-logit", "log")
    assert CUTIN.parameter_transforms == ("log", "identity", "identity")
    assert ASV.parameter_transforms == ("identity", "identity")
    assert builtin_category("LVD") is LVD
    with pytest.raises(ValueError):
        builtin_category("NOPE")


def test_category_invariants():
    with pytest.raises(ValueError):
        ScenarioCategory("X", "x", (), ())
    with pytest.raises(ValueError):
        ScenarioCategory("X", "x", ("a", "b"), ("identity",))
    with pytest.raises(ValueError):
        ScenarioCategory("X", "x", ("a",), ("sqrt",))


def test_category_round_trip():
    for cat in (LVD, CUTIN, ASV):
        assert ScenarioCategory.from_dict(cat.to_dict()) == cat
    assert ScenarioCategory.from_dict({"builtin": "CUTIN"}) == CUTIN


def test_load_1300_records(tmp_path):
    theta = synthetic_lvd(1300)
    path = tmp_path / "lvd.csv"
    write_csv(path, LVD.parameter_names, theta)
    records = load_records(path, LVD)
    assert len(records) == 1300
    assert all(r.category_id == "LVD" for r in records)


def test_header_without_units(tmp_path):
    path = tmp_path / "lvd.csv"
    write_csv(path, ["v0_lead", "dv_ratio", "mean_decel"], [[20, 0.5, 1.0]])
    assert load_records(path, LVD)[0].theta == (20.0, 0.5, 1.0)


def test_empty_body(tmp_path):
    path = tmp_path / "lvd.csv"
    write_csv(path, LVD.parameter_names, [])
    assert load_records(path, LVD) == []


def test_negative_decel_rejected_with_row_index(tmp_path):
    path = tmp_path / "lvd.csv"
    write_csv(path, LVD.parameter_names, [[20, 0.5, 1.0], [20, 0.5, -1.0], [15, 0.2, 0.5]])
    with pytest.raises(ValidationError) as info:
        load_records(path, LVD)
    assert [row for row, _ in info.value.diagnostics] == [1]


@pytest.mark.parametrize("rows, fragment", [
    ([[20, 0.5]], "columns"),
    ([[20, "abc", 1.0]], "unparseable"),
    ([[20, 0.5, "nan"]], "finite"),
    ([[20, 0.5, "inf"]], "finite"),
])
def test_malformed_rows(tmp_path, rows, fragment):
    path = tmp_path / "lvd.csv"
    write_csv(path, LVD.parameter_names, rows)
    with pytest.raises(ValidationError, match=fragment):
        load_records(path, LVD)


def test_header_mismatch(tmp_path):
    path = tmp_path / "lvd.csv"
    write_csv(path, ["a", "b", "c"], [[1, 0.5, 1]])
    with pytest.raises(ValidationError, match="header"):
        load_records(path, LVD)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_records(tmp_path / "missing.csv", LVD)


def test_save_load_round_trip_with_spans(tmp_path):
    recs = [ScenarioRecord("CUTIN", (12.5, 20.0, 0.8), (1.0, 4.0)),
            ScenarioRecord("CUTIN", (30.1, 25.5, 1.1), (9.0, 12.5))]
    path = tmp_path / "c.csv"
    save_records(path, recs, CUTIN)
    assert load_records(path, CUTIN) == recs


@given(st.lists(st.tuples(st.floats(0.1, 60), st.floats(0.001, 0.999), st.floats(0.01, 10)),
                min_size=0, max_size=30))
def test_round_trip_property(tmp_path_factory, rows):
    recs = validate_records(rows, LVD)
    path = tmp_path_factory.mktemp("rt") / "lvd.csv"
    save_records(path, recs, LVD)
    assert load_records(path, LVD) == recs


def test_bound_closedness():
    b = Bound(0.0, 1.0, lower_closed=True)
    assert b.contains(0.0) and not b.contains(1.0)
    assert ASV.violations((20.0, 0.0)) == []
    assert ASV.violations((20.0, 1.0))


# --- exposure -----------------------------------------------------------------

def _records(n, cat="LVD"):
    return [ScenarioRecord(cat, (20.0, 0.5, 1.0))] * n


@pytest.mark.parametrize("n, hours, expected, reference", [
    (1300, 63.0, 20.634920634920636, 20.6),
    (297, 63.0, 4.714285714285714, 4.71),
])
def test_exposure_reference_counts(n, hours, expected, reference):
    est = exposure(_records(n), hours)
    assert est.rate_per_hour == pytest.approx(expected, rel=1e-12)
    assert abs(est.rate_per_hour - reference) <= 0.05


def test_exposure_zero_and_invalid():
    assert exposure([], 10.0).rate_per_hour == 0.0
    with pytest.raises(ValueError):
        exposure(_records(3), 0.0)
    with pytest.raises(ValueError):
        ExposureEstimate("LVD", -1, 1.0)


@given(st.integers(0, 5000), st.floats(0.1, 1e4))
def test_exposure_linear(n, hours):
    one = exposure(_records(n), hours).rate_per_hour
    two = exposure(_records(2 * n), hours).rate_per_hour
    assert two == 2 * one


# --- mining ---------------------------------------------------------------------

def test_mine_direct_match():
    tracks = [TagTrack("A", "leading vehicle", 3, 7), TagTrack("A", "decelerating", 3, 7)]
    assert mine_scenarios(tracks, [{"leading vehicle", "decelerating"}]) == [(3, 7)]


def test_mine_conjunction_needs_same_object():
    tracks = [TagTrack("A", "leading vehicle", 3, 7), TagTrack("B", "decelerating", 3, 7)]
    assert mine_scenarios(tracks, [{"leading vehicle", "decelerating"}]) == []


def test_mine_cut_in_transition():
    tracks = [
        TagTrack("C", "changing lane", 10.0, 14.0),
        TagTrack("C", "no leading vehicle", 8.0, 12.0),
        TagTrack("C", "leading vehicle", 12.0, 20.0),
    ]
    query = [{"changing lane", "no leading vehicle"}, {"changing lane", "leading vehicle"}]
    # phase one: [10, 12]; phase two: [12, 14] -> one span covering the transition
    assert mine_scenarios(tracks, query) == [(10.0, 14.0)]


def test_mine_sequence_gap_respects_slack():
    tracks = [TagTrack("A", "x", 0, 2), TagTrack("A", "y", 2.4, 5)]
    assert mine_scenarios(tracks, [{"x"}, {"y"}], slack=0.5) == [(0, 5)]
    assert mine_scenarios(tracks, [{"x"}, {"y"}], slack=0.3) == []


def test_mine_no_match():
    assert mine_scenarios([TagTrack("A", "x", 0, 1)], [{"z"}]) == []


def test_mine_min_duration():
    tracks = [TagTrack("A", "x", 0, 1), TagTrack("A", "x", 5, 9)]
    assert mine_scenarios(tracks, [{"x"}], min_duration=2.0) == [(5, 9)]


def test_mine_rejects_empty_query():
    with pytest.raises(ValueError):
        mine_scenarios([], [])


def test_tag_track_order():
    with pytest.raises(ValueError):
        TagTrack("A", "x", 2.0, 2.0)


def test_load_tracks(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("object_id,tag,start,end\nA,lead,0,3\nA,braking,1,2\n", encoding="utf-8")
    tracks = load_tracks(path)
    assert mine_scenarios(tracks, [{"lead", "braking"}]) == [(1.0, 2.0)]
    bad = tmp_path / "b.csv"
    bad.write_text("object_id,tag,start,end\nA,lead,3,1\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_tracks(bad)


_tags = st.sampled_from(["a", "b", "c"])
_track = st.builds(lambda o, t, s, d: TagTrack(o, t, s, s + d),
                   st.sampled_from(["A", "B"]), _tags, st.floats(0, 50), st.floats(0.01, 10))


@given(st.lists(_track, max_size=25),
       st.lists(st.sets(_tags, min_size=1, max_size=2), min_size=1, max_size=3))
def test_mined_spans_inside_track_union(tracks, query):
    spans = mine_scenarios(tracks, query, slack=0.5)
    for s, e in spans:
        assert s < e
        # every point of the span (except slack gaps) lies in some track; the ends certainly do
        assert any(t.start <= s <= t.end for t in tracks)
        assert any(t.start <= e <= t.end for t in tracks)
        assert s >= min(t.start for t in tracks) and e <= max(t.end for t in tracks)
    assert spans == sorted(spans)
