"""Reasonably-foreseeable parameter ranges from an exposure rate and a density or tail model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import density, evt
from .density import Hyperrectangle, KdeModel
from .scenario_store import ExposureEstimate

PROB_TOL = 1e-6
MAX_BISECTIONS = 200

POLICIES = ("expand-both", "expand-lower", "expand-upper", "fixed-lower", "fixed-upper", "fixed")
# a fixed lower bound means the upper bound is the one that moves, and vice versa
_ALIASES = {"fixed-lower": "expand-upper", "fixed-upper": "expand-lower"}


class UnreachableTargetError(ValueError):
    """No range under the requested policy reaches the target probability."""


@dataclass(frozen=True)
class ForeseeableQuery:
    """Threshold and per-dimension expansion policy.

    ``anchors[j]`` is the ``(lower, upper)`` pair used for whichever side of
    dimension ``j`` does not move; ``None`` pins it to the edge of the valid
    region (``-inf``/``+inf`` or a zero-region boundary).
    """

    lambda_fs: float
    expansion_policy: tuple[str, ...]
    anchors: tuple[tuple[float | None, float | None] | None, ...] = ()

    def __post_init__(self):
        if not self.lambda_fs > 0:
            raise ValueError("lambda_fs must be positive")
        policy = tuple(self.expansion_policy)
        for p in policy:
            if p not in POLICIES:
                raise ValueError(f"unknown expansion policy {p!r}; choose from {POLICIES}")
        if all(_ALIASES.get(p, p) == "fixed" for p in policy):
            raise ValueError("at least one dimension must expand")
        object.__setattr__(self, "expansion_policy", policy)
        anchors = tuple(self.anchors) or (None,) * len(policy)
        if len(anchors) != len(policy):
            raise ValueError("anchors must match the number of dimensions")
        object.__setattr__(self, "anchors", anchors)

    @classmethod
    def default(cls, lambda_fs: float, d: int) -> "ForeseeableQuery":
        return cls(lambda_fs, ("expand-both",) * d)


@dataclass(frozen=True)
class ForeseeableRange:
    rect: Hyperrectangle
    target_inside_prob: float
    achieved_inside_prob: float
    residual_rate: float
    lambda_fs: float
    expansion: float = math.nan
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self, parameter_names: Sequence[str] | None = None) -> dict:
        names = list(parameter_names) if parameter_names else [f"theta{j}" for j in range(len(self.rect.lower))]
        return {
            "lambda_fs": self.lambda_fs,
            "bounds": [{"parameter": n, "lower": _jf(lo), "upper": _jf(hi)}
                       for n, lo, hi in zip(names, self.rect.lower, self.rect.upper)],
            "target_inside_prob": self.target_inside_prob,
            "achieved_inside_prob": self.achieved_inside_prob,
            "residual_rate": self.residual_rate,
            "warnings": list(self.warnings),
        }


def _jf(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def target_inside_probability(rate_per_hour: float, lambda_fs: float) -> float:
    """Inside-probability that leaves an expected ``lambda_fs`` encounters per hour outside."""
    if not lambda_fs < rate_per_hour:
        raise ValueError(f"threshold exceeds exposure: lambda_fs={lambda_fs:g} >= {rate_per_hour:g}/h")
    return 1.0 - lambda_fs / rate_per_hour


def _side_flags(policy: str) -> tuple[bool, bool]:
    p = _ALIASES.get(policy, policy)
    return p in ("expand-both", "expand-lower"), p in ("expand-both", "expand-upper")


def _rect_at(model: KdeModel, query: ForeseeableQuery, t: float, medians, valid_lo, valid_hi):
    lo_z = np.empty(model.dim)
    hi_z = np.empty(model.dim)
    tail = 0.5 * (1.0 - t)
    for j, policy in enumerate(query.expansion_policy):
        move_lo, move_hi = _side_flags(policy)
        anchor = query.anchors[j] or (None, None)
        if move_lo:
            lo_z[j] = medians[j] if t == 0 else density.marginal_quantile_z(model, j, tail, "lower")
        else:
            lo_z[j] = valid_lo[j] if anchor[0] is None else model.axis_to_z(j, anchor[0])
        if move_hi:
            hi_z[j] = medians[j] if t == 0 else density.marginal_quantile_z(model, j, tail, "upper")
        else:
            hi_z[j] = valid_hi[j] if anchor[1] is None else model.axis_to_z(j, anchor[1])
    lo_z = np.maximum(lo_z, valid_lo)
    hi_z = np.minimum(hi_z, valid_hi)
    hi_z = np.maximum(hi_z, lo_z)
    return lo_z, hi_z


def _z_to_raw_bounds(model: KdeModel, lo_z, hi_z) -> Hyperrectangle:
    lo = model.from_z(lo_z)[0]
    hi = model.from_z(hi_z)[0]
    # sides resting on a zero-region edge take its exact raw value
    for zr in model.zero_regions:
        edge = model.axis_to_z(zr.dim, zr.value)
        if lo_z[zr.dim] == edge:
            lo[zr.dim] = zr.value
        if hi_z[zr.dim] == edge:
            hi[zr.dim] = zr.value
    return Hyperrectangle(tuple(float(x) for x in lo), tuple(float(x) for x in hi))


def _range_warnings(model: KdeModel, rect: Hyperrectangle, query: ForeseeableQuery) -> tuple[str, ...]:
    dmin, dmax = model.raw_data_range
    out = []
    for j, policy in enumerate(query.expansion_policy):
        move_lo, move_hi = _side_flags(policy)
        if move_hi and math.isfinite(rect.upper[j]) and rect.upper[j] > dmax[j]:
            out.append(f"dimension {j}: upper bound {rect.upper[j]:.6g} beyond the largest observation {dmax[j]:.6g}")
        if move_lo and math.isfinite(rect.lower[j]) and rect.lower[j] < dmin[j]:
            out.append(f"dimension {j}: lower bound {rect.lower[j]:.6g} beyond the smallest observation {dmin[j]:.6g}")
    return tuple(out)


def solve_range_kde(model: KdeModel, exposure: ExposureEstimate | float,
                    query: ForeseeableQuery) -> ForeseeableRange:
    """Hyperrectangle whose outside mass times the exposure equals ``lambda_fs``.

    Expanding sides travel from the marginal median (t=0) to infinity (t=1)
    along marginal quantiles; the shared parameter t is found by bisection.
    """
    rate = exposure.rate_per_hour if isinstance(exposure, ExposureEstimate) else float(exposure)
    if len(query.expansion_policy) != model.dim:
        raise ValueError(f"policy has {len(query.expansion_policy)} entries for a {model.dim}-d model")
    target = target_inside_probability(rate, query.lambda_fs)
    valid_lo, valid_hi = model.valid_box_z
    medians = np.array([density.marginal_quantile_z(model, j, 0.5, "upper") for j in range(model.dim)])

    def prob(t: float) -> tuple[float, Hyperrectangle]:
        lo_z, hi_z = _rect_at(model, query, t, medians, valid_lo, valid_hi)
        rect = _z_to_raw_bounds(model, lo_z, hi_z)
        if np.any(hi_z <= lo_z):
            return 0.0, rect
        return density._untruncated_box_probability(model, lo_z, hi_z) / model.renorm, rect

    p_hi, rect_hi = prob(1.0)
    if p_hi < target - PROB_TOL:
        raise UnreachableTargetError(
            f"target inside-probability {target:.6g} unreachable under the policy (max {p_hi:.6g})")
    p_lo, rect_lo = prob(0.0)
    if p_lo >= target:
        t, p, rect = 0.0, p_lo, rect_lo
    else:
        a, b = 0.0, 1.0
        t, p, rect = 1.0, p_hi, rect_hi
        for _ in range(MAX_BISECTIONS):
            if abs(p - target) < PROB_TOL and t < 1.0:
                break
            mid = 0.5 * (a + b)
            p_mid, rect_mid = prob(mid)
            t, p, rect = mid, p_mid, rect_mid
            if p_mid < target:
                a = mid
            else:
                b = mid
    p = min(max(p, 0.0), 1.0)
    return ForeseeableRange(rect, target, p, rate * (1.0 - p), query.lambda_fs, t,
                            _range_warnings(model, rect, query))


@dataclass(frozen=True)
class EvtBound:
    bound: float
    orientation: str
    lambda_fs: float
    tail_rate: float
    method: str  # "gpd" or "empirical"

    def to_dict(self) -> dict:
        return {"lambda_fs": self.lambda_fs, "bound": self.bound, "orientation": self.orientation,
                "tail_rate": self.tail_rate, "method": self.method}


def solve_range_evt(fit: evt.GpdFit, exposure: ExposureEstimate | float, lambda_fs: float,
                    values: Sequence[float] | None = None) -> EvtBound:
    """Scalar bound beyond which scenarios occur at rate ``lambda_fs``.

    Uses the fitted tail when the exceedance rate over the threshold is at
    least ``lambda_fs``; otherwise falls back to the empirical quantile of
    ``values`` (raw units). The result is in raw units: an upper bound for
    upper-oriented fits, a lower bound for lower-oriented ones.
    """
    rate = exposure.rate_per_hour if isinstance(exposure, ExposureEstimate) else float(exposure)
    if not 0 < lambda_fs < rate:
        raise ValueError(f"threshold exceeds exposure: lambda_fs={lambda_fs:g} >= {rate:g}/h")
    tail_rate = rate * fit.source.exceed_prob
    if tail_rate >= lambda_fs:
        y = evt.tail_quantile(fit, 1.0 - lambda_fs / tail_rate)
        return EvtBound(evt.to_raw(fit, fit.source.threshold + y), fit.source.orientation,
                        lambda_fs, tail_rate, "gpd")
    if values is None:
        raise ValueError("exceedance rate below lambda_fs; raw values are needed for the empirical bound")
    x = np.asarray(values, dtype=float)
    oriented = -x if fit.source.orientation == "lower" else x
    q = float(np.quantile(oriented, 1.0 - lambda_fs / rate))
    return EvtBound(evt.to_raw(fit, q), fit.source.orientation, lambda_fs, tail_rate, "empirical")
