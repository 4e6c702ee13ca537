"""Peaks-over-threshold tail modelling with the generalized Pareto distribution."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

MIN_EXCESSES = 10
MAX_ITERATIONS = 10_000
XI_ZERO = 1e-9


class ConvergenceError(RuntimeError):
    """An optimizer failed to converge within its iteration budget."""


@dataclass(frozen=True)
class ExcessSet:
    """Exceedances over a threshold in the oriented space.

    With ``orientation="lower"`` the data were negated before thresholding,
    so an upper tail here is a lower tail of the raw values.
    """

    threshold: float
    excesses: tuple[float, ...]
    total_count: int
    orientation: str = "upper"

    @property
    def exceed_prob(self) -> float:
        return len(self.excesses) / self.total_count

    def __post_init__(self):
        object.__setattr__(self, "excesses", tuple(float(y) for y in self.excesses))
        if any(y <= 0 for y in self.excesses):
            raise ValueError("excesses must be strictly positive")
        if self.orientation not in ("upper", "lower"):
            raise ValueError("orientation must be 'upper' or 'lower'")
        if not self.excesses or len(self.excesses) > self.total_count:
            raise ValueError("exceedance probability must lie in (0, 1]")


@dataclass(frozen=True)
class Truncation:
    """The fitted tail is cut off at excess ``y_max`` and rescaled by ``mass`` = F(y_max)."""

    y_max: float
    mass: float


@dataclass(frozen=True)
class GpdFit:
    shape: float
    scale: float
    source: ExcessSet
    truncation: Truncation | None = None
    converged: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def upper_end(self) -> float:
        """Largest excess in the support (inf for shape >= 0)."""
        return -self.scale / self.shape if self.shape < 0 else math.inf

    def to_dict(self) -> dict:
        return {
            "u": self.source.threshold,
            "xi": self.shape,
            "sigma": self.scale,
            "N": self.source.total_count,
            "n_excess": len(self.source.excesses),
            "exceed_prob": self.source.exceed_prob,
            "orientation": self.source.orientation,
            "truncation": None if self.truncation is None else {
                "y_max": self.truncation.y_max, "mass": self.truncation.mass},
        }

    def save(self, path: str | Path, include_excesses: bool = True) -> None:
        data = self.to_dict()
        if include_excesses:
            data["excesses"] = list(self.source.excesses)
        Path(path).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "GpdFit":
        n_exc = int(data.get("n_excess", round(data["exceed_prob"] * data["N"])))
        excesses = data.get("excesses") or [1.0] * n_exc
        src = ExcessSet(float(data["u"]), tuple(excesses), int(data["N"]), data.get("orientation", "upper"))
        tr = data.get("truncation")
        return cls(float(data["xi"]), float(data["sigma"]), src,
                   None if tr is None else Truncation(float(tr["y_max"]), float(tr["mass"])))


def build_excess_set(values: Sequence[float], orientation: str = "upper",
                     exceed_fraction: float = 0.1) -> ExcessSet:
    """Threshold at the empirical ``1 - exceed_fraction`` quantile and collect exceedances."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("values must be non-empty")
    if not 0 < exceed_fraction < 1:
        raise ValueError("exceed_fraction must lie in (0, 1)")
    if orientation == "lower":
        x = -x
    elif orientation != "upper":
        raise ValueError("orientation must be 'upper' or 'lower'")
    u = float(np.quantile(x, 1.0 - exceed_fraction))
    excesses = x[x > u] - u
    if excesses.size < MIN_EXCESSES:
        raise ValueError(f"only {excesses.size} excesses above u={u:g}; need at least {MIN_EXCESSES}")
    return ExcessSet(u, tuple(excesses), int(x.size), orientation)


def gpd_neg_loglik(shape: float, scale: float, y: np.ndarray) -> float:
    """Negative log-likelihood of excesses ``y``; inf outside the support."""
    if scale <= 0:
        return math.inf
    n = y.size
    if abs(shape) < XI_ZERO:
        return n * math.log(scale) + float(np.sum(y)) / scale
    arg = shape * y / scale
    if np.any(arg <= -1.0):
        return math.inf
    return n * math.log(scale) + (1.0 + 1.0 / shape) * float(np.sum(np.log1p(arg)))


def moment_start(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    var = float(np.var(y, ddof=1))
    ratio = mean * mean / var
    return 0.5 * (1.0 - ratio), 0.5 * mean * (ratio + 1.0)


def fit_gpd(excess: ExcessSet) -> GpdFit:
    """Maximum-likelihood GPD fit by Nelder-Mead over ``(shape, log scale)``.

    Starts from the method-of-moments estimate (moved inside the support if
    necessary); support violations for negative shape are penalized.
    """
    y = np.asarray(excess.excesses, dtype=float)
    if y.size < MIN_EXCESSES:
        raise ValueError(f"need at least {MIN_EXCESSES} excesses, got {y.size}")
    xi0, sigma0 = moment_start(y)
    ymax = float(y.max())
    if xi0 < 0 and ymax >= -sigma0 / xi0:
        # nudge the start inside the support
        sigma0 = -xi0 * ymax * 1.05

    penalty_base = 1e10 + 1e6 * y.size

    def objective(p: np.ndarray) -> float:
        xi, log_sigma = float(p[0]), float(p[1])
        sigma = math.exp(log_sigma)
        if xi < 0 and ymax >= -sigma / xi:
            return penalty_base * (1.0 + ymax + sigma / xi)
        val = gpd_neg_loglik(xi, sigma, y)
        return val if math.isfinite(val) else penalty_base

    start = np.array([xi0, math.log(sigma0)])
    res = minimize(objective, start, method="Nelder-Mead",
                   options={"maxiter": MAX_ITERATIONS, "maxfev": 2 * MAX_ITERATIONS,
                            "xatol": 1e-9, "fatol": 1e-10})
    if not res.success:
        raise ConvergenceError(f"GPD fit did not converge: {res.message}")
    best = res.x if res.fun <= objective(start) else start
    return GpdFit(float(best[0]), math.exp(float(best[1])), excess)


def _raw_cdf(shape: float, scale: float, y):
    y = np.asarray(y, dtype=float)
    if abs(shape) < XI_ZERO:
        return -np.expm1(-y / scale)
    # clamp round-off past the end of a bounded tail; log1p(-1) = -inf gives F = 1
    arg = np.maximum(shape * y / scale, -1.0)
    with np.errstate(divide="ignore"):
        return -np.expm1(-np.log1p(arg) / shape)


def gpd_cdf(fit: GpdFit, y: float) -> float:
    """GPD distribution function of the excess ``y`` (truncation applied if present)."""
    if y < 0:
        raise ValueError("excess must be nonnegative")
    if y > fit.upper_end:
        raise ValueError(f"excess {y:g} beyond the support end {fit.upper_end:g}")
    p = float(_raw_cdf(fit.shape, fit.scale, y))
    if fit.truncation is not None:
        if y >= fit.truncation.y_max:
            return 1.0
        p /= fit.truncation.mass
    return min(max(p, 0.0), 1.0)


def gpd_pdf(fit: GpdFit, y):
    y = np.asarray(y, dtype=float)
    s, xi = fit.scale, fit.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(xi) < XI_ZERO:
            out = np.exp(-y / s) / s
        else:
            out = np.exp(-(1.0 / xi + 1.0) * np.log1p(xi * y / s)) / s
    out = np.where((y >= 0) & (y <= fit.upper_end), out, 0.0)
    if fit.truncation is not None:
        out = np.where(y <= fit.truncation.y_max, out / fit.truncation.mass, 0.0)
    return out


def _raw_quantile(shape: float, scale: float, p: float) -> float:
    if p <= 0:
        return 0.0
    if abs(shape) < XI_ZERO:
        return -scale * math.log1p(-p)
    return scale / shape * math.expm1(-shape * math.log1p(-p))


def tail_quantile(fit: GpdFit, target_excess_cdf: float) -> float:
    """Excess ``y`` with ``gpd_cdf(fit, y) == target_excess_cdf``."""
    t = float(target_excess_cdf)
    if not 0 <= t < 1:
        raise ValueError("target must lie in [0, 1)")
    if fit.truncation is not None:
        t *= fit.truncation.mass
    return _raw_quantile(fit.shape, fit.scale, t)


def truncate(fit: GpdFit, raw_limit: float) -> GpdFit:
    """Restrict the tail to raw values on the feasible side of ``raw_limit``.

    ``raw_limit`` is in raw (un-negated) units: for a lower-oriented fit it is
    the smallest admissible raw value, e.g. 0 for a positive ratio.
    """
    oriented = -raw_limit if fit.source.orientation == "lower" else raw_limit
    y_max = oriented - fit.source.threshold
    if y_max <= 0:
        raise ValueError("truncation point lies at or below the threshold")
    y_max = min(y_max, fit.upper_end)
    mass = float(_raw_cdf(fit.shape, fit.scale, y_max))
    return replace(fit, truncation=Truncation(y_max, mass))


def to_raw(fit: GpdFit, oriented_value: float) -> float:
    return -oriented_value if fit.source.orientation == "lower" else oriented_value


def mle_standard_errors(shape: float, scale: float, n: int) -> tuple[float, float]:
    """Asymptotic standard errors of the GPD MLE (valid for shape > -0.5)."""
    return math.sqrt((1.0 + shape) ** 2 / n), math.sqrt(2.0 * scale * scale * (1.0 + shape) / n)
