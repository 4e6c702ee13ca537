"""Longitudinal simulation of a skilled, attentive driver in three scenario families.

The ego driver follows IDM+ with a reaction time drawn once per run from a
log-normal distribution, a braking cap and a finite perception range. By
default the reaction time is a response onset: the ego keeps cruising for
that long after the scenario starts and then reacts to the current state.
The alternative ``"buffer"`` model instead feeds IDM+ a gap and leader
speed that are delayed by the reaction time throughout the run.

The integrator takes fixed explicit steps: Heun's predictor-corrector on the
acceleration, constant acceleration within a step, and a linearly
interpolated delay buffer. A vehicle that would reverse stops instead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _backend

REACTION_MODELS = ("onset", "buffer")
TRAJECTORY_COLUMNS = ("t", "ego_pos", "ego_v", "ego_a", "lead_pos", "lead_v", "gap", "ttc")


class Family(str, Enum):
    LVD = "LVD"
    CUTIN = "CUTIN"
    ASV = "ASV"


@dataclass(frozen=True)
class DriverConfig:
    desired_headway: float = 1.2
    max_accel: float = 0.73
    comfortable_decel: float = 1.67
    accel_exponent: float = 4.0
    jam_distance: float = 2.0
    braking_cap: float = 6.0
    perception_range: float = 150.0
    reaction_mean: float = 0.92
    reaction_std: float = 0.28
    dt: float = 0.01
    horizon: float = 60.0
    reaction_model: str = "onset"

    def __post_init__(self):
        for name in ("desired_headway", "max_accel", "comfortable_decel", "accel_exponent",
                     "jam_distance", "braking_cap", "perception_range", "reaction_mean", "dt", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.reaction_std < 0:
            raise ValueError("reaction_std must be nonnegative")
        if self.braking_cap < self.comfortable_decel:
            raise ValueError("braking_cap must be at least comfortable_decel")
        if self.reaction_model not in REACTION_MODELS:
            raise ValueError(f"reaction_model must be one of {REACTION_MODELS}")

    @property
    def reaction_lognormal(self) -> tuple[float, float]:
        """(mu, sigma) of the underlying normal matching the reaction-time mean and std."""
        sigma2 = math.log1p((self.reaction_std / self.reaction_mean) ** 2)
        return math.log(self.reaction_mean) - 0.5 * sigma2, math.sqrt(sigma2)

    def sample_reaction_time(self, rng: np.random.Generator) -> float:
        mu, sigma = self.reaction_lognormal
        return float(rng.lognormal(mu, sigma))

    def to_dict(self) -> dict:
        return {k: (("inf" if math.isinf(v) else v) if isinstance(v, float) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "DriverConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown driver settings: {sorted(unknown)}")
        return cls(**{k: (str(v) if k == "reaction_model" else float(v)) for k, v in data.items()})


@dataclass(frozen=True)
class ScenarioSpec:
    """One concrete scenario.

    ``theta`` per family: LVD ``(v0_lead, dv_ratio, mean_decel)``;
    CUTIN ``(gap0, v0_ego, speed_ratio)``; ASV ``(v0_ego, speed_ratio)``.
    """

    family: Family
    theta: tuple[float, ...]

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        theta = tuple(float(x) for x in self.theta)
        object.__setattr__(self, "theta", theta)
        problems = spec_violations(fam, theta)
        if problems:
            raise ValueError(f"invalid {fam.value} scenario {theta}: {'; '.join(problems)}")


def spec_violations(family: Family, theta: Sequence[float]) -> list[str]:
    expected = 2 if family is Family.ASV else 3
    if len(theta) != expected:
        return [f"expected {expected} parameters, got {len(theta)}"]
    if not all(math.isfinite(x) for x in theta):
        return ["parameters must be finite"]
    out = []
    if family is Family.LVD:
        v0, ratio, abar = theta
        if not v0 > 0:
            out.append("v0_lead must be positive")
        if not 0 < ratio < 1:
            out.append("dv_ratio must lie in (0, 1)")
        if not abar > 0:
            out.append("mean_decel must be positive")
    elif family is Family.CUTIN:
        gap, v_ego, ratio = theta
        if not gap > 0:
            out.append("gap0 must be positive")
        if not v_ego > 0:
            out.append("v0_ego must be positive")
        if not ratio > 0:
            out.append("speed_ratio must be positive")
    else:
        v_ego, ratio = theta
        if not v_ego > 0:
            out.append("v0_ego must be positive")
        if not 0 <= ratio < 1:
            out.append("speed_ratio must lie in [0, 1)")
    return out


@dataclass(frozen=True)
class InitialConditions:
    ego_pos: float
    ego_speed: float
    lead_pos: float
    lead_speed: float
    desired_speed: float
    leader_known_before_start: bool


@dataclass(frozen=True)
class SimulationOutcome:
    collision: bool
    min_ttc: float
    final_gap: float
    reaction_delay_used: float
    end_time: float = 0.0
    trajectory: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def z(self) -> int:
        return int(self.collision)


def idm_plus_accel(speed: float, desired_speed: float, gap: float | None, lead_speed: float,
                   driver: DriverConfig, capped: bool = True) -> float:
    """IDM+ acceleration; ``gap=None`` means no leader is perceived."""
    free = 1.0 - (speed / desired_speed) ** driver.accel_exponent
    if gap is None:
        acc = driver.max_accel * free
    else:
        dyn = speed * driver.desired_headway + speed * (speed - lead_speed) / (
            2.0 * math.sqrt(driver.max_accel * driver.comfortable_decel))
        s_star = driver.jam_distance + max(dyn, 0.0)
        ratio = s_star / gap
        acc = driver.max_accel * min(free, 1.0 - ratio * ratio)
    if capped:
        acc = max(acc, -driver.braking_cap)
    return min(acc, driver.max_accel)


def equilibrium_gap(speed: float, driver: DriverConfig, desired_speed: float | None = None) -> float:
    """Smallest gap at which IDM+ yields zero acceleration behind an equal-speed leader.

    At ``speed == desired_speed`` this is ``jam_distance + speed * headway``.
    """
    v_des = speed if desired_speed is None else desired_speed
    s_star = driver.jam_distance + speed * driver.desired_headway
    ratio = speed / v_des
    if ratio >= 1.0:
        return s_star
    return s_star / math.sqrt(ratio ** driver.accel_exponent) if ratio > 0 else math.inf


def _lvd_timing(theta) -> tuple[float, float, float]:
    v0, ratio, abar = theta
    dv = ratio * v0
    return v0, dv, dv / abar


def leader_profile(spec: ScenarioSpec) -> Callable[[float], tuple[float, float]]:
    """Leader ``t -> (position relative to its start, speed)``.

    LVD leaders brake along half a cosine period so that the speed drop
    ``dv`` takes ``dv / mean_decel`` seconds; other leaders hold speed.
    """
    if spec.family is Family.LVD:
        v0, dv, td = _lvd_timing(spec.theta)
    elif spec.family is Family.CUTIN:
        _, v_ego, ratio = spec.theta
        v0, dv, td = ratio * v_ego, 0.0, 0.0
    else:
        v_ego, ratio = spec.theta
        v0, dv, td = ratio * v_ego, 0.0, 0.0

    def profile(t: float) -> tuple[float, float]:
        return _backend.python_kernels._leader_state(float(t), 0.0, v0, dv, td)

    return profile


def initial_conditions(spec: ScenarioSpec, driver: DriverConfig) -> InitialConditions:
    if spec.family is Family.LVD:
        v0 = spec.theta[0]
        return InitialConditions(0.0, v0, equilibrium_gap(v0, driver), v0, v0, True)
    if spec.family is Family.CUTIN:
        gap, v_ego, ratio = spec.theta
        return InitialConditions(0.0, v_ego, gap, ratio * v_ego, v_ego, False)
    v_ego, ratio = spec.theta
    return InitialConditions(0.0, v_ego, driver.perception_range, ratio * v_ego, v_ego, True)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate(spec: ScenarioSpec, driver: DriverConfig = DriverConfig(), rng_seed=0, *,
             reaction_time: float | None = None, record: bool = False,
             dt: float | None = None, capped: bool = True, kernels=None) -> SimulationOutcome:
    """Run one scenario; deterministic given ``(spec, driver, rng_seed)``.

    ``reaction_time`` overrides the sampled delay; ``capped=False`` lifts the
    braking cap (used to check the collision-free property of IDM+).
    """
    k = kernels or _backend.kernels
    tau = driver.sample_reaction_time(_rng(rng_seed)) if reaction_time is None else float(reaction_time)
    ic = initial_conditions(spec, driver)
    if spec.family is Family.LVD:
        _, dv, td = _lvd_timing(spec.theta)
    else:
        dv, td = 0.0, 0.0
    step = driver.dt if dt is None else float(dt)
    cap = driver.braking_cap if capped else math.inf
    lag, hold = (0.0, tau) if driver.reaction_model == "onset" else (tau, 0.0)
    collision, min_ttc, gap, t_end, traj = k.simulate_run(
        ic.ego_speed, ic.lead_pos, ic.lead_speed, dv, td, ic.leader_known_before_start,
        ic.desired_speed, driver.desired_headway, driver.max_accel, driver.comfortable_decel,
        driver.accel_exponent, driver.jam_distance, cap, driver.perception_range,
        lag, step, driver.horizon, record, hold)
    return SimulationOutcome(bool(collision), float(min_ttc), float(gap), tau, float(t_end), traj)


def write_trajectory(path: str | Path, outcome: SimulationOutcome) -> None:
    if outcome.trajectory is None:
        raise ValueError("outcome has no recorded trajectory; simulate with record=True")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in outcome.trajectory:
            w.writerow([repr(float(x)) for x in row])
