from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_lvd
from rfpkit import density, evt
from rfpkit import foreseeable as fs
from rfpkit.evt import ExcessSet, GpdFit
from rfpkit.foreseeable import ForeseeableQuery, UnreachableTargetError
from rfpkit.scenario_store import ASV, LVD, exposure, ScenarioRecord


@pytest.fixture(scope="module")
def lvd_model():
    return density.fit_kde(synthetic_lvd(400, seed=3), LVD)


# --- target probability -----------------------------------------------------------

@pytest.mark.parametrize("rate, lam, expected", [
    (1300 / 63, 0.1, 0.99515), (4.714285714285714, 0.1, 0.97879), (1300 / 63, 0.01, 0.99952),
])
def test_target_probabilities(rate, lam, expected):
    assert fs.target_inside_probability(rate, lam) == pytest.approx(expected, abs=5e-6)


def test_threshold_exceeds_exposure():
    with pytest.raises(ValueError, match="exceeds exposure"):
        fs.target_inside_probability(0.5, 1.0)
    with pytest.raises(ValueError, match="exceeds exposure"):
        fs.target_inside_probability(1.0, 1.0)


def test_query_validation():
    with pytest.raises(ValueError):
        ForeseeableQuery(0.0, ("expand-both",))
    with pytest.raises(ValueError):
        ForeseeableQuery(0.1, ("sideways",))
    with pytest.raises(ValueError):
        ForeseeableQuery(0.1, ("fixed", "fixed"))
    with pytest.raises(ValueError):
        ForeseeableQuery(0.1, ("expand-both", "fixed"), anchors=((0, 1),))


# --- KDE-based range -----------------------------------------------------------------

def test_kde_range_hits_target(lvd_model):
    rate = 20.0
    rng_ = fs.solve_range_kde(lvd_model, rate, ForeseeableQuery.default(0.1, 3))
    assert rng_.achieved_inside_prob == pytest.approx(rng_.target_inside_prob, abs=1e-6)
    assert rng_.residual_rate == pytest.approx(rate * (1 - rng_.achieved_inside_prob), abs=1e-9)
    assert rng_.residual_rate == pytest.approx(0.1, abs=rate * 1e-6)
    # the returned box, evaluated independently, has the reported mass
    assert density.rect_probability(lvd_model, rng_.rect) == pytest.approx(rng_.achieved_inside_prob, abs=1e-9)


def test_kde_range_accepts_exposure_record(lvd_model):
    recs = [ScenarioRecord("LVD", (20.0, 0.5, 1.0))] * 1300
    e = exposure(recs, 63.0)
    a = fs.solve_range_kde(lvd_model, e, ForeseeableQuery.default(0.1, 3))
    b = fs.solve_range_kde(lvd_model, e.rate_per_hour, ForeseeableQuery.default(0.1, 3))
    assert a == b


def test_kde_range_nested_in_lambda(lvd_model):
    wide = fs.solve_range_kde(lvd_model, 20.0, ForeseeableQuery.default(0.01, 3)).rect
    narrow = fs.solve_range_kde(lvd_model, 20.0, ForeseeableQuery.default(0.1, 3)).rect
    for j in range(3):
        assert wide.lower[j] <= narrow.lower[j] + 1e-12
        assert wide.upper[j] >= narrow.upper[j] - 1e-12


@settings(max_examples=15)
@given(st.floats(0.02, 5.0), st.floats(0.02, 5.0))
def test_kde_range_monotone_property(lam_a, lam_b):
    model = _small_model()
    lo, hi = sorted((lam_a, lam_b))
    if hi - lo < 1e-3:
        return
    big = fs.solve_range_kde(model, 10.0, ForeseeableQuery.default(lo, 3))
    small = fs.solve_range_kde(model, 10.0, ForeseeableQuery.default(hi, 3))
    assert big.achieved_inside_prob >= small.achieved_inside_prob - 2e-6
    for j in range(3):
        assert big.rect.lower[j] <= small.rect.lower[j] + 1e-9
        assert big.rect.upper[j] >= small.rect.upper[j] - 1e-9


_SMALL = {}


def _small_model():
    if "m" not in _SMALL:
        _SMALL["m"] = density.fit_kde(synthetic_lvd(150, seed=9), LVD)
    return _SMALL["m"]


def test_expand_upper_pins_lower_side(lvd_model):
    q = ForeseeableQuery(0.1, ("expand-upper", "expand-upper", "expand-upper"))
    r = fs.solve_range_kde(lvd_model, 20.0, q)
    # lower sides sit on the edge of the valid region
    assert r.rect.lower[1] == 0.0
    assert r.rect.lower[2] == 0.0
    assert r.rect.lower[0] == 0.0
    assert r.achieved_inside_prob == pytest.approx(r.target_inside_prob, abs=1e-6)


def test_aliases_match(lvd_model):
    a = fs.solve_range_kde(lvd_model, 20.0, ForeseeableQuery(0.1, ("fixed-lower",) * 3))
    b = fs.solve_range_kde(lvd_model, 20.0, ForeseeableQuery(0.1, ("expand-upper",) * 3))
    assert a.rect == b.rect


def test_fixed_dimension_uses_anchor(lvd_model):
    q = ForeseeableQuery(0.1, ("fixed", "expand-both", "expand-both"),
                         anchors=((1.0, 60.0), None, None))
    r = fs.solve_range_kde(lvd_model, 20.0, q)
    assert r.rect.lower[0] == pytest.approx(1.0)
    assert r.rect.upper[0] == pytest.approx(60.0)
    assert r.achieved_inside_prob == pytest.approx(r.target_inside_prob, abs=1e-6)


def test_unreachable_target(lvd_model):
    q = ForeseeableQuery(0.1, ("fixed", "expand-both", "expand-both"),
                         anchors=((20.0, 21.0), None, None))
    with pytest.raises(UnreachableTargetError):
        fs.solve_range_kde(lvd_model, 20.0, q)


def test_policy_length_checked(lvd_model):
    with pytest.raises(ValueError):
        fs.solve_range_kde(lvd_model, 20.0, ForeseeableQuery.default(0.1, 2))


def test_warning_beyond_data(lvd_model):
    r = fs.solve_range_kde(lvd_model, 1e6, ForeseeableQuery.default(0.01, 3))
    assert r.warnings
    assert any("beyond" in w for w in r.warnings)


def test_two_sided_zero_region_stays_inside():
    r = np.random.default_rng(4)
    theta = np.column_stack([r.uniform(10, 30, 300), r.beta(2, 5, 300)])
    model = density.fit_kde(theta, ASV)
    out = fs.solve_range_kde(model, 50.0, ForeseeableQuery.default(0.01, 2))
    assert 0.0 <= out.rect.lower[1] <= out.rect.upper[1] <= 1.0


def test_to_dict_encodes_infinities(lvd_model):
    q = ForeseeableQuery(0.1, ("expand-lower",) * 3)
    d = fs.solve_range_kde(lvd_model, 20.0, q).to_dict(LVD.parameter_names)
    assert d["bounds"][0]["upper"] == "inf"
    assert d["bounds"][1]["parameter"] == LVD.parameter_names[1]


# --- EVT bound -------------------------------------------------------------------------

def _fit(shape, scale, u, n, n_exc, orientation="upper"):
    return GpdFit(shape, scale, ExcessSet(u, (0.01,) * n_exc, n, orientation))


def test_evt_exponential_closed_form():
    fit = _fit(0.0, 1.0, 0.0, 10, 10)
    b = fs.solve_range_evt(fit, 1.0 + 1e-12, math.exp(-1.0))
    assert b.bound == pytest.approx(1.0, abs=1e-9)
    assert b.method == "gpd"


@pytest.mark.parametrize("lam, reference", [(0.1, 2.34), (0.01, 3.36)])
def test_evt_lead_vehicle_bounds(lam, reference):
    fit = _fit(0.051, 0.36, 1.18, 1300, 130)
    b = fs.solve_range_evt(fit, 1300 / 63, lam)
    assert abs(b.bound - reference) <= 0.05


@pytest.mark.parametrize("lam, reference", [(0.1, 0.81), (0.01, 0.42)])
def test_evt_cut_in_truncated_lower_bounds(lam, reference):
    fit = evt.truncate(_fit(0.62, 0.045, -0.91, 300, 30, "lower"), 0.0)
    b = fs.solve_range_evt(fit, 297 / 63, lam)
    assert b.orientation == "lower"
    assert 0.0 < b.bound < 0.91
    assert abs(b.bound - reference) <= 0.02


def test_evt_bound_residual_consistent():
    fit = _fit(0.2, 0.5, 1.0, 1000, 100)
    rate, lam = 30.0, 0.2
    b = fs.solve_range_evt(fit, rate, lam)
    y = b.bound - fit.source.threshold
    assert rate * fit.source.exceed_prob * (1 - evt.gpd_cdf(fit, y)) == pytest.approx(lam, rel=1e-9)


@given(st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_evt_bound_monotone_in_lambda(a, b):
    fit = _fit(0.1, 0.4, 1.0, 1000, 100)
    lo, hi = sorted((a, b))
    assert fs.solve_range_evt(fit, 20.0, lo).bound >= fs.solve_range_evt(fit, 20.0, hi).bound


def test_evt_empirical_fallback():
    values = np.arange(1.0, 101.0)
    fit = _fit(0.1, 1.0, 90.0, 100, 10)
    # rate above threshold is 2 * 0.1 = 0.2 < 0.5
    b = fs.solve_range_evt(fit, 2.0, 0.5, values=values)
    assert b.method == "empirical"
    assert b.bound == pytest.approx(np.quantile(values, 0.75))
    with pytest.raises(ValueError, match="empirical"):
        fs.solve_range_evt(fit, 2.0, 0.5)


def test_evt_empirical_fallback_lower():
    values = np.arange(1.0, 101.0)
    fit = _fit(0.1, 1.0, -10.0, 100, 10, "lower")
    b = fs.solve_range_evt(fit, 2.0, 0.5, values=values)
    assert b.bound == pytest.approx(-np.quantile(-values, 0.75))


def test_evt_threshold_exceeds_exposure():
    with pytest.raises(ValueError, match="exceeds exposure"):
        fs.solve_range_evt(_fit(0.1, 1.0, 0.0, 100, 10), 1.0, 2.0)
