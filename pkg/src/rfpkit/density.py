"""Gaussian-kernel density estimation over transformed, standardized scenario parameters.

Each dimension is first mapped by a monotone transform (identity, log or
negated logit), then standardized to unit sample standard deviation; one
scalar bandwidth applies to every standardized direction. Half-space "zero
regions" in raw units truncate the density, which is renormalized so that it
still integrates to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr

from ._backend import kernels
from .scenario_store import (ScenarioCategory, ScenarioRecord, records_matrix,
                             validate_records)

GOLDEN_TOL = 1e-4
MAX_REJECTION_ROUNDS = 1_000_000
_GRID_POINTS = 41
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_CDF_BLOCK = 256


class DegenerateDataError(ValueError):
    """Data cannot support a density estimate (too few points, zero variance)."""


# --- transforms -------------------------------------------------------------

def forward_transform(kind: str, x):
    """Map raw values into the estimation space, extended monotonically to +-inf."""
    x = np.asarray(x, dtype=float)
    if kind == "identity":
        return x.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "log":
            return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
        if kind == "negated-logit":
            inside = (x > 0) & (x < 1)
            xs = np.where(inside, x, 0.5)
            y = np.log(xs) - np.log1p(-xs)
            return np.where(inside, y, np.where(x <= 0, -np.inf, np.inf))
    raise ValueError(f"unknown transform {kind!r}")


def inverse_transform(kind: str, y):
    y = np.asarray(y, dtype=float)
    if kind == "identity":
        return y.copy()
    if kind == "log":
        return np.exp(y)
    if kind == "negated-logit":
        return expit(y)
    raise ValueError(f"unknown transform {kind!r}")


def log_jacobian(kind: str, x):
    """log |dy/dx| of the forward transform at raw ``x`` (inside its domain)."""
    x = np.asarray(x, dtype=float)
    if kind == "identity":
        return np.zeros_like(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "log":
            return -np.log(x)
        if kind == "negated-logit":
            return -np.log(x) - np.log1p(-x)
    raise ValueError(f"unknown transform {kind!r}")


def _in_domain(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return np.isfinite(x)
    if kind == "log":
        return (x > 0) & np.isfinite(x)
    return (x > 0) & (x < 1)


# --- model ------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroRegion:
    """Raw-space half-space where the density is zero: ``x[dim] <= value``
    (side ``"lower"``) or ``x[dim] >= value`` (side ``"upper"``)."""

    dim: int
    side: str
    value: float

    def to_dict(self) -> dict:
        return {"dim": self.dim, "side": self.side, "value": self.value}


@dataclass(frozen=True)
class Hyperrectangle:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have equal length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def full(cls, d: int) -> "Hyperrectangle":
        return cls((-math.inf,) * d, (math.inf,) * d)


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Fitted KDE. ``points`` are transformed but not yet standardized."""

    points: np.ndarray
    bandwidth: float
    transforms: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    zero_regions: tuple[ZeroRegion, ...] = ()
    category_id: str = ""
    renorm: float = field(default=1.0)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise DegenerateDataError("a KDE needs at least 2 points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        for name in ("mean", "std"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "zero_regions", tuple(self.zero_regions))
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if np.any(self.std <= 0):
            raise DegenerateDataError("standardization std must be positive")
        if len(self.transforms) != self.dim or self.mean.size != self.dim or self.std.size != self.dim:
            raise ValueError("transform/standardization length mismatch")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def z(self) -> np.ndarray:
        """Standardized kernel centres."""
        z = (self.points - self.mean) / self.std
        z.setflags(write=False)
        return z

    @cached_property
    def valid_box_z(self) -> tuple[np.ndarray, np.ndarray]:
        """The complement of the zero regions, as a box in standardized space."""
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for zr in self.zero_regions:
            zz = self.axis_to_z(zr.dim, zr.value)
            if zr.side == "lower":
                lo[zr.dim] = max(lo[zr.dim], zz)
            else:
                hi[zr.dim] = min(hi[zr.dim], zz)
        return lo, hi

    @cached_property
    def raw_data_range(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([float(inverse_transform(k, v)) for k, v in zip(self.transforms, self.points.min(axis=0))])
        hi = np.array([float(inverse_transform(k, v)) for k, v in zip(self.transforms, self.points.max(axis=0))])
        return lo, hi

    def to_z(self, theta_raw) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta_raw, dtype=float))
        cols = [forward_transform(k, theta[:, j]) for j, k in enumerate(self.transforms)]
        return (np.column_stack(cols) - self.mean) / self.std

    def axis_to_z(self, dim: int, value: float) -> float:
        y = float(forward_transform(self.transforms[dim], value))
        return (y - self.mean[dim]) / self.std[dim]

    def from_z(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        y = z * self.std + self.mean
        return np.column_stack([inverse_transform(k, y[:, j]) for j, k in enumerate(self.transforms)])

    def raw_valid(self, theta_raw) -> np.ndarray:
        """Rows inside every transform domain and outside every zero region."""
        theta = np.atleast_2d(np.asarray(theta_raw, dtype=float))
        ok = np.ones(theta.shape[0], dtype=bool)
        for j, k in enumerate(self.transforms):
            ok &= _in_domain(k, theta[:, j])
        for zr in self.zero_regions:
            col = theta[:, zr.dim]
            ok &= (col > zr.value) if zr.side == "lower" else (col < zr.value)
        return ok

    # -- serialization --
    def to_dict(self) -> dict:
        return {
            "category_id": self.category_id,
            "transforms": list(self.transforms),
            "bandwidth": self.bandwidth,
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "zero_regions": [zr.to_dict() for zr in self.zero_regions],
            "renorm": self.renorm,
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KdeModel":
        return cls(
            points=np.array(data["points"], dtype=float),
            bandwidth=float(data["bandwidth"]),
            transforms=tuple(data["transforms"]),
            mean=np.array(data["standardization"]["mean"], dtype=float),
            std=np.array(data["standardization"]["std"], dtype=float),
            zero_regions=tuple(ZeroRegion(int(z["dim"]), z["side"], float(z["value"]))
                               for z in data.get("zero_regions", ())),
            category_id=data.get("category_id", ""),
            renorm=float(data.get("renorm", 1.0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KdeModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- bandwidth --------------------------------------------------------------

def silverman_bandwidth(n: int, d: int) -> float:
    """Normal-reference bandwidth for unit-variance data."""
    return (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))


def loo_log_likelihood(points: np.ndarray, h: float) -> float:
    """Sum over points of the log density estimated from all other points."""
    return float(kernels.loo_loglik(np.ascontiguousarray(points, dtype=float), float(h)))


def select_bandwidth(points: np.ndarray) -> float:
    """Leave-one-out maximum-likelihood bandwidth for standardized ``points``.

    A coarse scan of ``log h`` over ``[h0/100, 100 h0]`` (``h0`` the
    normal-reference value) brackets the best grid cell; golden-section
    search then refines ``log h`` to :data:`GOLDEN_TOL`.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if n < 3:
        raise DegenerateDataError(f"bandwidth selection needs at least 3 points, got {n}")
    if np.any(np.ptp(pts, axis=0) == 0):
        raise DegenerateDataError("a dimension has zero variance")

    h0 = silverman_bandwidth(n, d)
    lo, hi = math.log(h0 / 100.0), math.log(h0 * 100.0)
    cache: dict[float, float] = {}

    def objective(log_h: float) -> float:
        if log_h not in cache:
            cache[log_h] = loo_log_likelihood(pts, math.exp(log_h))
        return cache[log_h]

    grid = np.linspace(lo, hi, _GRID_POINTS)
    values = [objective(float(g)) for g in grid]
    best = int(np.argmax(values))
    a = float(grid[max(best - 1, 0)])
    b = float(grid[min(best + 1, _GRID_POINTS - 1)])

    c = b - _INV_PHI * (b - a)
    e = a + _INV_PHI * (b - a)
    fc, fe = objective(c), objective(e)
    while b - a > GOLDEN_TOL:
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - _INV_PHI * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, e, fe
            e = a + _INV_PHI * (b - a)
            fe = objective(e)
    candidates = {float(grid[best]): values[best], c: fc, e: fe}
    log_h = max(candidates, key=lambda k: (candidates[k], -k))
    return math.exp(log_h)


# --- fitting ----------------------------------------------------------------

def zero_regions_for(category: ScenarioCategory) -> tuple[ZeroRegion, ...]:
    """Half-spaces excluded by the category bounds beyond each transform's own domain."""
    regions = []
    natural = {"identity": (-math.inf, math.inf), "log": (0.0, math.inf), "negated-logit": (0.0, 1.0)}
    for j, (kind, bound) in enumerate(zip(category.parameter_transforms, category.bounds)):
        nat_lo, nat_hi = natural[kind]
        if bound.lower > nat_lo:
            regions.append(ZeroRegion(j, "lower", bound.lower))
        if bound.upper < nat_hi:
            regions.append(ZeroRegion(j, "upper", bound.upper))
    return tuple(regions)


def _untruncated_box_probability(model: KdeModel, lo_z: np.ndarray, hi_z: np.ndarray) -> float:
    h = model.bandwidth
    ua = (lo_z[None, :] - model.z) / h
    ub = (hi_z[None, :] - model.z) / h
    # use the upper tail where it is the smaller quantity, for precision
    upper_tail = ua > 0
    with np.errstate(invalid="ignore"):
        mass = np.where(upper_tail, ndtr(-ua) - ndtr(-ub), ndtr(ub) - ndtr(ua))
    mass = np.where(hi_z[None, :] <= lo_z[None, :], 0.0, mass)
    return float(np.mean(np.prod(np.clip(mass, 0.0, 1.0), axis=1)))


def fit_points(points_t: np.ndarray, transforms: Sequence[str], zero_regions: Sequence[ZeroRegion] = (),
               category_id: str = "", bandwidth: float | None = None) -> KdeModel:
    """Fit a KDE to points already in the transformed space."""
    pts = np.atleast_2d(np.asarray(points_t, dtype=float))
    if pts.shape[0] < 3:
        raise DegenerateDataError(f"need at least 3 records, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateDataError("transformed points must be finite")
    std = pts.std(axis=0, ddof=1)
    if np.any(std == 0):
        raise DegenerateDataError("a dimension has zero variance")
    mean = pts.mean(axis=0)
    h = select_bandwidth((pts - mean) / std) if bandwidth is None else float(bandwidth)
    model = KdeModel(pts, h, tuple(transforms), mean, std, tuple(zero_regions), category_id)
    lo, hi = model.valid_box_z
    renorm = _untruncated_box_probability(model, lo, hi)
    if not 0 < renorm <= 1:
        raise DegenerateDataError("no probability mass outside the zero regions")
    object.__setattr__(model, "renorm", min(renorm, 1.0))
    return model


def fit_kde(records: Sequence[ScenarioRecord] | np.ndarray, category: ScenarioCategory) -> KdeModel:
    """Fit the category density: transform, standardize, select bandwidth, truncate."""
    theta = records if isinstance(records, np.ndarray) else records_matrix(records)
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[0] < 3:
        raise DegenerateDataError(f"need at least 3 records, got {theta.shape[0]}")
    if theta.shape[1] != category.dim:
        raise ValueError(f"records have {theta.shape[1]} columns; {category.id} has {category.dim}")
    validate_records(theta, category)
    cols = [forward_transform(k, theta[:, j]) for j, k in enumerate(category.parameter_transforms)]
    return fit_points(np.column_stack(cols), category.parameter_transforms,
                      zero_regions_for(category), category.id)


# --- evaluation -------------------------------------------------------------

def log_pdf_transformed(model: KdeModel, y) -> np.ndarray:
    """Log density in the transformed (pre-standardization) space, truncation included."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z = (y - model.mean) / model.std
    out = np.asarray(kernels.kde_logpdf(model.z, np.ascontiguousarray(z), model.bandwidth))
    out = out - float(np.sum(np.log(model.std))) - math.log(model.renorm)
    lo, hi = model.valid_box_z
    inside = np.all((z > lo) & (z < hi), axis=1)
    return np.where(inside, out, -np.inf)


def log_pdf(model: KdeModel, theta_raw) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta_raw, dtype=float))
    ok = model.raw_valid(theta)
    out = np.full(theta.shape[0], -np.inf)
    if np.any(ok):
        t = theta[ok]
        y = np.column_stack([forward_transform(k, t[:, j]) for j, k in enumerate(model.transforms)])
        jac = sum(log_jacobian(k, t[:, j]) for j, k in enumerate(model.transforms))
        out[ok] = log_pdf_transformed(model, y) + jac
    return out


def pdf(model: KdeModel, theta_raw):
    """Density in raw parameter units; zero inside the zero regions.

    Accepts one d-vector (returns a float) or an ``(m, d)`` array.
    """
    single = np.asarray(theta_raw).ndim == 1
    out = np.exp(log_pdf(model, theta_raw))
    return float(out[0]) if single else out


def _clip_box(model: KdeModel, lo_z: np.ndarray, hi_z: np.ndarray):
    vlo, vhi = model.valid_box_z
    return np.maximum(lo_z, vlo), np.minimum(hi_z, vhi)


def cdf(model: KdeModel, theta_raw):
    """P(theta' <= theta_raw componentwise) under the truncated estimate.

    Accepts one d-vector (returns a float) or an ``(m, d)`` array.
    """
    single = np.asarray(theta_raw).ndim == 1
    theta = np.atleast_2d(np.asarray(theta_raw, dtype=float))
    vlo, vhi = model.valid_box_z
    cols = [(forward_transform(k, theta[:, j]) - model.mean[j]) / model.std[j]
            for j, k in enumerate(model.transforms)]
    hi_z = np.minimum(np.column_stack(cols), vhi)
    h = model.bandwidth
    lo_mass = ndtr((vlo[None, :] - model.z) / h)
    out = np.empty(theta.shape[0])
    for start in range(0, theta.shape[0], _CDF_BLOCK):
        block = hi_z[start:start + _CDF_BLOCK]
        mass = ndtr((block[:, None, :] - model.z[None, :, :]) / h) - lo_mass[None, :, :]
        out[start:start + block.shape[0]] = np.prod(np.clip(mass, 0.0, 1.0), axis=2).mean(axis=1)
    out = np.clip(out / model.renorm, 0.0, 1.0)
    return float(out[0]) if single else out


def rect_probability(model: KdeModel, rect: Hyperrectangle) -> float:
    """Probability mass of a raw-space hyperrectangle.

    Evaluated as the per-kernel product of marginal interval masses, which
    equals inclusion-exclusion of the CDF over the box vertices for a
    product-kernel mixture.
    """
    lo_z = model.to_z(np.array(rect.lower))[0]
    hi_z = model.to_z(np.array(rect.upper))[0]
    lo_z, hi_z = _clip_box(model, lo_z, hi_z)
    if np.any(hi_z <= lo_z):
        return 0.0
    p = _untruncated_box_probability(model, lo_z, hi_z) / model.renorm
    return min(max(p, 0.0), 1.0)


def sample(model: KdeModel, rng_seed, n: int) -> np.ndarray:
    """Draw ``n`` raw-space samples: uniform kernel choice, Gaussian jitter, back-transform.

    Draws landing in a zero region (or outside a transform domain after
    rounding) are redrawn.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out = np.empty((n, model.dim))
    todo = np.arange(n)
    rounds = 0
    while todo.size:
        rounds += 1
        if rounds > MAX_REJECTION_ROUNDS:
            raise DegenerateDataError("rejection sampling exceeded the attempt cap")
        idx = rng.integers(model.n, size=todo.size)
        z = model.z[idx] + model.bandwidth * rng.standard_normal((todo.size, model.dim))
        theta = model.from_z(z)
        ok = model.raw_valid(theta)
        out[todo[ok]] = theta[ok]
        todo = todo[~ok]
    return out


def marginal_quantile_z(model: KdeModel, dim: int, upper_tail: float, side: str) -> float:
    """Standardized-space point leaving mass ``upper_tail`` beyond it on ``side``
    of the untruncated marginal in ``dim``."""
    from scipy.optimize import brentq

    if upper_tail <= 0:
        return math.inf if side == "upper" else -math.inf
    col = model.z[:, dim]
    h = model.bandwidth
    if side == "upper":
        def f(x):
            return float(np.mean(ndtr((col - x) / h))) - upper_tail
    else:
        def f(x):
            return float(np.mean(ndtr((x - col) / h))) - upper_tail
    span = 40.0 * h + 1.0
    a, b = col.min() - span, col.max() + span
    if f(a) * f(b) > 0:
        return math.inf if side == "upper" else -math.inf
    return brentq(f, a, b, xtol=1e-13, rtol=1e-15, maxiter=500)


def marginal_pdf(model: KdeModel, dim: int, x_raw) -> np.ndarray:
    """Raw-unit marginal density of dimension ``dim`` under the truncated estimate."""
    x = np.atleast_1d(np.asarray(x_raw, dtype=float))
    kind = model.transforms[dim]
    out = np.zeros(x.size)
    ok = _in_domain(kind, x)
    if not np.any(ok):
        return out
    lo, hi = model.valid_box_z
    h = model.bandwidth
    # mass every kernel keeps in the other dimensions' valid intervals
    others = [k for k in range(model.dim) if k != dim]
    keep = np.ones(model.n)
    for k in others:
        keep *= np.clip(ndtr((hi[k] - model.z[:, k]) / h) - ndtr((lo[k] - model.z[:, k]) / h), 0.0, 1.0)
    zz = (forward_transform(kind, x[ok]) - model.mean[dim]) / model.std[dim]
    u = (zz[:, None] - model.z[None, :, dim]) / h
    dens_z = (np.exp(-0.5 * u * u) * keep[None, :]).mean(axis=1) / (h * math.sqrt(2.0 * math.pi))
    dens = dens_z / model.std[dim] * np.exp(log_jacobian(kind, x[ok])) / model.renorm
    inside = (zz > lo[dim]) & (zz < hi[dim])
    out[ok] = np.where(inside, dens, 0.0)
    return out
