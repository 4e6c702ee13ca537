from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfpkit import _backend
from rfpkit.driver_sim import (TRAJECTORY_COLUMNS, DriverConfig, Family, ScenarioSpec,
                               equilibrium_gap, idm_plus_accel, initial_conditions,
                               leader_profile, simulate, write_trajectory)

DRIVER = DriverConfig()


def random_spec(rng) -> ScenarioSpec:
    f = rng.integers(3)
    if f == 0:
        return ScenarioSpec(Family.LVD, (rng.uniform(3, 50), rng.uniform(0.01, 0.99), rng.uniform(0.3, 10)))
    if f == 1:
        return ScenarioSpec(Family.CUTIN, (rng.uniform(1, 120), rng.uniform(3, 50), rng.uniform(0.05, 2)))
    return ScenarioSpec(Family.ASV, (rng.uniform(3, 50), rng.uniform(0, 0.99)))


# --- configuration and specs ----------------------------------------------------------

def test_driver_validation():
    with pytest.raises(ValueError):
        DriverConfig(dt=0.0)
    with pytest.raises(ValueError):
        DriverConfig(reaction_std=-0.1)
    with pytest.raises(ValueError):
        DriverConfig(braking_cap=1.0)
    with pytest.raises(ValueError):
        DriverConfig.from_dict({"nonsense": 1})
    assert DriverConfig.from_dict({"dt": 0.02}).dt == 0.02


@pytest.mark.parametrize("family, theta", [
    ("LVD", (20.0, 1.0, 1.0)), ("LVD", (0.0, 0.5, 1.0)), ("LVD", (20.0, 0.5, 0.0)),
    ("CUTIN", (0.0, 20.0, 0.5)), ("CUTIN", (10.0, 20.0, 0.0)),
    ("ASV", (20.0, 1.0)), ("ASV", (20.0, -0.1)), ("ASV", (20.0, 0.5, 1.0)),
    ("LVD", (20.0, math.nan, 1.0)),
])
def test_invalid_specs(family, theta):
    with pytest.raises(ValueError):
        ScenarioSpec(family, theta)


def test_reaction_time_moments():
    rng = np.random.default_rng(0)
    x = np.array([DRIVER.sample_reaction_time(rng) for _ in range(100_000)])
    assert x.min() > 0
    assert x.mean() == pytest.approx(0.92, abs=0.005)
    assert x.std() == pytest.approx(0.28, abs=0.005)


# --- model pieces ----------------------------------------------------------------------

def test_idm_plus_free_road_and_cap():
    assert idm_plus_accel(0.0, 30.0, None, 0.0, DRIVER) == pytest.approx(DRIVER.max_accel)
    assert idm_plus_accel(30.0, 30.0, None, 0.0, DRIVER) == pytest.approx(0.0)
    assert idm_plus_accel(30.0, 30.0, 1.0, 0.0, DRIVER) == -DRIVER.braking_cap
    assert idm_plus_accel(30.0, 30.0, 1.0, 0.0, DRIVER, capped=False) < -DRIVER.braking_cap


def test_equilibrium_gap_balances_model():
    v = 20.0
    s = equilibrium_gap(v, DRIVER)
    assert s == pytest.approx(DRIVER.jam_distance + v * DRIVER.desired_headway)
    assert idm_plus_accel(v, v, s, v, DRIVER) == pytest.approx(0.0, abs=1e-12)
    assert idm_plus_accel(v, v, 0.9 * s, v, DRIVER) < 0


def test_leader_profile_shape():
    v0, ratio, abar = 25.0, 0.6, 2.0
    spec = ScenarioSpec(Family.LVD, (v0, ratio, abar))
    prof = leader_profile(spec)
    dv = ratio * v0
    td = dv / abar
    assert prof(0.0)[1] == pytest.approx(v0)
    assert prof(td)[1] == pytest.approx(v0 - dv)
    assert prof(td + 5.0)[1] == pytest.approx(v0 - dv)
    # average deceleration over the braking phase is abar
    assert (prof(0.0)[1] - prof(td)[1]) / td == pytest.approx(abar)
    # the peak deceleration, at the middle of the phase, is pi/2 times the mean
    h = 1e-5
    peak = -(prof(td / 2 + h)[1] - prof(td / 2 - h)[1]) / (2 * h)
    assert peak == pytest.approx(math.pi / 2 * abar, rel=1e-6)
    # position is the integral of speed
    ts = np.linspace(0, td + 2, 4001)
    speeds = np.array([prof(t)[1] for t in ts])
    assert prof(ts[-1])[0] == pytest.approx(np.trapezoid(speeds, ts), rel=1e-6)


def test_initial_conditions():
    lvd = initial_conditions(ScenarioSpec(Family.LVD, (20.0, 0.5, 1.0)), DRIVER)
    assert lvd.lead_pos - lvd.ego_pos == pytest.approx(2.0 + 20.0 * 1.2)
    assert lvd.leader_known_before_start
    cut = initial_conditions(ScenarioSpec(Family.CUTIN, (12.0, 25.0, 0.8)), DRIVER)
    assert cut.lead_pos - cut.ego_pos == 12.0
    assert cut.lead_speed == pytest.approx(20.0)
    assert not cut.leader_known_before_start
    asv = initial_conditions(ScenarioSpec(Family.ASV, (30.0, 0.2)), DRIVER)
    assert asv.lead_pos - asv.ego_pos == DRIVER.perception_range
    assert asv.lead_speed == pytest.approx(6.0)


# --- whole runs ----------------------------------------------------------------------------

def test_determinism_by_seed():
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec = random_spec(rng)
        a = simulate(spec, DRIVER, 42, record=True)
        b = simulate(spec, DRIVER, 42, record=True)
        assert a == b
        assert a.trajectory.tobytes() == b.trajectory.tobytes()


def test_seed_changes_reaction_time():
    spec = ScenarioSpec(Family.LVD, (20.0, 0.5, 1.0))
    assert simulate(spec, DRIVER, 1).reaction_delay_used != simulate(spec, DRIVER, 2).reaction_delay_used


def test_negligible_braking_is_harmless():
    out = simulate(ScenarioSpec(Family.LVD, (20.0, 1e-6, 1.0)), DRIVER, 0)
    assert not out.collision
    assert out.min_ttc > 1e3


def test_hard_braking_with_long_delay_collides():
    out = simulate(ScenarioSpec(Family.LVD, (30.0, 0.95, 9.0)), DRIVER, 0, reaction_time=2.5)
    assert out.collision
    assert out.final_gap <= 0


def test_close_slow_cut_in_collides():
    assert simulate(ScenarioSpec(Family.CUTIN, (2.0, 30.0, 0.1)), DRIVER, 0).collision


def test_standstill_leader_without_delay_stops_short():
    out = simulate(ScenarioSpec(Family.ASV, (25.0, 0.0)), DRIVER, 0, record=True, reaction_time=0.0)
    assert not out.collision
    assert out.trajectory[-1, 2] == pytest.approx(0.0, abs=1e-9)
    assert out.final_gap > 0


def test_slow_leader_rarely_hit():
    spec = ScenarioSpec(Family.ASV, (30.0, 0.13))
    hits = sum(simulate(spec, DRIVER, s).collision for s in range(200))
    assert hits < 100


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_speeds_stay_nonnegative(seed):
    spec = random_spec(np.random.default_rng(seed))
    out = simulate(spec, DRIVER, seed, record=True)
    traj = out.trajectory
    assert np.all(traj[:, 2] >= 0)
    assert np.all(traj[:, 5] >= 0)
    assert np.all(np.diff(traj[:, 0]) > 0)
    np.testing.assert_allclose(traj[:, 6], traj[:, 4] - traj[:, 1], atol=1e-9)
    if not out.collision:
        assert out.min_ttc > 0
        assert out.min_ttc <= traj[:, 7].min() + 1e-12


def test_zero_delay_uncapped_never_collides():
    rng = np.random.default_rng(7)
    for _ in range(200):
        spec = random_spec(rng)
        assert not simulate(spec, DRIVER, 0, reaction_time=0.0, capped=False).collision, spec


def test_step_size_convergence():
    rng = np.random.default_rng(11)
    checked = 0
    for i in range(150):
        spec = random_spec(rng)
        a = simulate(spec, DRIVER, i)
        b = simulate(spec, DRIVER, i, dt=0.005)
        if a.collision or b.collision:
            continue
        if math.isinf(b.min_ttc):
            assert math.isinf(a.min_ttc)
            continue
        checked += 1
        assert abs(a.min_ttc - b.min_ttc) <= 0.02 * b.min_ttc, spec
    assert checked > 50


def test_backends_agree_on_runs():
    if _backend.compiled_kernels is None:
        pytest.skip("extension not built")
    rng = np.random.default_rng(3)
    for i in range(30):
        spec = random_spec(rng)
        a = simulate(spec, DRIVER, i, record=True, kernels=_backend.python_kernels)
        b = simulate(spec, DRIVER, i, record=True, kernels=_backend.compiled_kernels)
        assert a == b
        assert np.array_equal(a.trajectory, b.trajectory)


def test_trajectory_csv(tmp_path):
    out = simulate(ScenarioSpec(Family.CUTIN, (15.0, 25.0, 0.7)), DRIVER, 3, record=True)
    path = tmp_path / "traj.csv"
    write_trajectory(path, out)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS)
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back, out.trajectory)
    with pytest.raises(ValueError):
        write_trajectory(path, simulate(ScenarioSpec(Family.ASV, (20.0, 0.5)), DRIVER, 0))


# --- reaction models ---------------------------------------------------------------------

def test_reaction_model_validation():
    with pytest.raises(ValueError):
        DriverConfig(reaction_model="telepathic")
    assert DriverConfig.from_dict({"reaction_model": "buffer"}).reaction_model == "buffer"


def test_onset_model_cruises_until_reaction():
    spec = ScenarioSpec(Family.CUTIN, (20.0, 25.0, 0.5))
    out = simulate(spec, DRIVER, 0, reaction_time=0.8, record=True)
    traj = out.trajectory
    before = traj[traj[:, 0] < 0.8 - 1e-9]
    assert np.all(before[:, 3] == 0.0)
    assert np.all(before[:, 2] == 25.0)
    after = traj[traj[:, 0] >= 0.8 + 1e-9]
    assert after[0, 3] < 0


def test_reaction_models_agree_without_delay():
    rng = np.random.default_rng(2)
    buf = DriverConfig(reaction_model="buffer")
    for _ in range(20):
        spec = random_spec(rng)
        a = simulate(spec, DRIVER, 0, reaction_time=0.0, record=True)
        b = simulate(spec, buf, 0, reaction_time=0.0, record=True)
        assert np.array_equal(a.trajectory, b.trajectory)


def test_buffer_model_runs_and_converges():
    buf = DriverConfig(reaction_model="buffer")
    rng = np.random.default_rng(13)
    for i in range(60):
        spec = random_spec(rng)
        a = simulate(spec, buf, i)
        b = simulate(spec, buf, i, dt=0.005)
        if not (a.collision or b.collision) and math.isfinite(b.min_ttc):
            assert abs(a.min_ttc - b.min_ttc) <= 0.02 * b.min_ttc


def test_hard_braking_boundary_falls_with_speed():
    # at the same braking profile, a faster leader is harder to follow safely
    ratio, decel = 0.85, 7.0
    hits = [sum(simulate(ScenarioSpec(Family.LVD, (v0, ratio, decel)), DRIVER, s).collision
                for s in range(40)) for v0 in (10.0, 30.0, 50.0)]
    assert hits[0] <= hits[1] <= hits[2]
    assert hits[2] > hits[0]
