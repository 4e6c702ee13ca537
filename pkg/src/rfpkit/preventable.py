"""Collision-probability estimation for a careful, competent driver.

Category level: crude Monte Carlo over the scenario density, and importance
sampling from a density fitted to the most critical pilot runs.
Scenario level: a sequential binomial test per scenario, and boundary
extraction over a two-axis grid of scenarios.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binom

from . import density
from .density import KdeModel
from .driver_sim import DriverConfig, Family, ScenarioSpec, simulate
from .scenario_store import builtin_category
from .seeding import derive_seed, generator

# stream tags keep crude, importance and grid draws independent under one base seed
CRUDE_STREAM = 0
IMPORTANCE_STREAM = 1
GRID_STREAM = 2

VERDICTS = ("above", "below", "undecided-at-cap")

Simulator = Callable[[np.ndarray, int], object]


@dataclass(frozen=True)
class RunLog:
    """Per-run inputs and outcomes of a Monte Carlo estimate."""

    theta: np.ndarray
    collision: np.ndarray
    min_ttc: np.ndarray
    final_gap: np.ndarray
    weight: np.ndarray | None = None


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    std: float
    n_runs: int
    estimator: str
    runs: RunLog | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.estimator not in ("crude", "importance"):
            raise ValueError("estimator must be 'crude' or 'importance'")
        if not self.std >= 0:
            raise ValueError("std must be nonnegative")

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "mean": self.mean, "std": self.std, "n": self.n_runs}


@dataclass(frozen=True)
class SequentialResult:
    p_hat: float
    n_sims: int
    n_collisions: int
    verdict: str

    def to_dict(self) -> dict:
        return {"p_hat": self.p_hat, "n_sims": self.n_sims, "n_collisions": self.n_collisions,
                "verdict": self.verdict}


@dataclass(frozen=True)
class BoundaryCurve:
    family: str
    fixed_params: dict
    axis_names: tuple[str, str]
    axis_values: tuple[tuple[float, ...], tuple[float, ...]]
    threshold_crossings: tuple[tuple[float, float], ...]
    p_hat: np.ndarray = field(compare=False, repr=False)
    verdicts: tuple[tuple[str, ...], ...] = field(compare=False, repr=False)
    n_sims: np.ndarray = field(compare=False, repr=False)

    def write_csv(self, path: str | Path) -> None:
        """Fixed parameters as header comments, then one crossing per row."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# family: {self.family}\n")
            for name, value in self.fixed_params.items():
                fh.write(f"# fixed {name} = {value!r}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.axis_names[0], f"{self.axis_names[1]}_crossing"])
            for a, b in self.threshold_crossings:
                w.writerow([repr(float(a)), repr(float(b))])

    def write_grid_csv(self, path: str | Path) -> None:
        """Every grid node with its estimate and verdict."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.axis_names[0], self.axis_names[1], "p_hat", "n_sims", "verdict"])
            for i, a in enumerate(self.axis_values[0]):
                for j, b in enumerate(self.axis_values[1]):
                    w.writerow([repr(float(a)), repr(float(b)), repr(float(self.p_hat[i, j])),
                                int(self.n_sims[i, j]), self.verdicts[i][j]])


# --- simulators --------------------------------------------------------------

def family_of(model: KdeModel) -> Family:
    try:
        return Family(model.category_id)
    except ValueError:
        raise ValueError(f"cannot infer a scenario family from category {model.category_id!r}; "
                         "pass family= or simulator=") from None


def scenario_simulator(family: Family | str, driver: DriverConfig) -> Simulator:
    """``(theta, seed) -> SimulationOutcome`` for one scenario family."""
    fam = Family(family)

    def run(theta, seed: int):
        return simulate(ScenarioSpec(fam, tuple(theta)), driver, seed)

    return run


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _run_batch(thetas: np.ndarray, simulator: Simulator, seed: int, stream: int, workers: int):
    def one(i):
        out = simulator(thetas[i], derive_seed(seed, stream, i))
        return bool(out.collision), float(out.min_ttc), float(out.final_gap)

    rows = _map(one, range(thetas.shape[0]), workers)
    z = np.array([r[0] for r in rows], dtype=bool)
    ttc = np.array([r[1] for r in rows], dtype=float)
    gap = np.array([r[2] for r in rows], dtype=float)
    return z, ttc, gap


def estimator_std(values: np.ndarray) -> float:
    """Standard deviation of the sample mean: sqrt(sum((x - mean)^2)) / N."""
    x = np.asarray(values, dtype=float)
    return float(math.sqrt(np.sum((x - x.mean()) ** 2)) / x.size)


# --- category level ------------------------------------------------------------

def crude_mc(model: KdeModel, driver: DriverConfig, n: int, seed: int, *,
             family: Family | str | None = None, simulator: Simulator | None = None,
             workers: int = 1) -> RiskEstimate:
    """Plain Monte Carlo: draw scenarios from ``model``, simulate each once."""
    if n < 1:
        raise ValueError("n must be at least 1")
    sim = simulator or scenario_simulator(family or family_of(model), driver)
    thetas = density.sample(model, generator(seed, CRUDE_STREAM), n)
    z, ttc, gap = _run_batch(thetas, sim, seed, CRUDE_STREAM, workers)
    zf = z.astype(float)
    return RiskEstimate(float(zf.mean()), estimator_std(zf), n, "crude", RunLog(thetas, z, ttc, gap))


def criticality_order(min_ttc: Sequence[float], final_gap: Sequence[float]) -> np.ndarray:
    """Indices from most to least critical: smallest min TTC, then smallest final gap."""
    ttc = np.asarray(min_ttc, dtype=float)
    gap = np.asarray(final_gap, dtype=float)
    return np.lexsort((gap, ttc))


def build_importance_density(model: KdeModel, pilot: RunLog | RiskEstimate, n_critical: int) -> KdeModel:
    """KDE over the ``n_critical`` most critical pilot scenarios, with its own bandwidth."""
    runs = pilot.runs if isinstance(pilot, RiskEstimate) else pilot
    if runs is None:
        raise ValueError("pilot estimate carries no run log")
    n_pilot = runs.theta.shape[0]
    if n_critical < 3:
        raise ValueError("n_critical must be at least 3")
    if n_critical >= n_pilot:
        raise ValueError(f"n_critical={n_critical} must be below the pilot size {n_pilot}")
    chosen = runs.theta[criticality_order(runs.min_ttc, runs.final_gap)[:n_critical]]
    pts = np.column_stack([density.forward_transform(k, chosen[:, j]) for j, k in enumerate(model.transforms)])
    return density.fit_points(pts, model.transforms, model.zero_regions, model.category_id)


def _transformed(model: KdeModel, theta: np.ndarray) -> np.ndarray:
    return np.column_stack([density.forward_transform(k, theta[:, j]) for j, k in enumerate(model.transforms)])


def importance_weights(model: KdeModel, q: KdeModel, theta: np.ndarray) -> np.ndarray:
    """f/q at raw points, evaluated in the shared transformed space (Jacobians cancel)."""
    if tuple(q.transforms) != tuple(model.transforms):
        raise ValueError("importance density must use the same transforms as the scenario density")
    y = _transformed(model, theta)
    return np.exp(density.log_pdf_transformed(model, y) - density.log_pdf_transformed(q, y))


def importance_mc(model: KdeModel, q: KdeModel, driver: DriverConfig, n: int, seed: int, *,
                  family: Family | str | None = None, simulator: Simulator | None = None,
                  workers: int = 1) -> RiskEstimate:
    """Importance sampling: draw from ``q`` and weight collisions by f/q."""
    if n < 1:
        raise ValueError("n must be at least 1")
    sim = simulator or scenario_simulator(family or family_of(model), driver)
    thetas = density.sample(q, generator(seed, IMPORTANCE_STREAM), n)
    w = importance_weights(model, q, thetas)
    z, ttc, gap = _run_batch(thetas, sim, seed, IMPORTANCE_STREAM, workers)
    contrib = z * w
    return RiskEstimate(float(contrib.mean()), estimator_std(contrib), n, "importance",
                        RunLog(thetas, z, ttc, gap, w))


# --- scenario level -----------------------------------------------------------

@lru_cache(maxsize=64)
def stopping_table(p_t: float, delta_p: float, cap: int) -> tuple[tuple[int, int], ...]:
    """Per run count n (index n-1): (largest k that stops "below", smallest k that stops "above").

    "below" needs P(K <= k) < delta_p and "above" needs P(K >= k) < delta_p
    with K ~ Binomial(n, p_t). Sentinels -1 and n+1 mean "cannot stop".
    """
    table = []
    for n in range(1, cap + 1):
        ks = np.arange(n + 1)
        low = ks[binom.cdf(ks, n, p_t) < delta_p]
        high = ks[binom.sf(ks - 1, n, p_t) < delta_p]
        table.append((int(low.max()) if low.size else -1, int(high.min()) if high.size else n + 1))
    return tuple(table)


def _check_test_args(p_t: float, delta_p: float, cap: int) -> None:
    if not 0 < p_t < 1:
        raise ValueError("p_t must lie in (0, 1)")
    if not 0 < delta_p < 1:
        raise ValueError("delta_p must lie in (0, 1)")
    if cap < 1:
        raise ValueError("cap must be at least 1")


def sequential_test(draw: Callable[[int], bool], p_t: float = 0.5, delta_p: float = 0.01,
                    cap: int = 100) -> SequentialResult:
    """Run ``draw(i)`` for i = 0, 1, ... until a binomial tail drops below ``delta_p``."""
    _check_test_args(p_t, delta_p, cap)
    table = stopping_table(float(p_t), float(delta_p), int(cap))
    k = 0
    for n in range(1, cap + 1):
        k += bool(draw(n - 1))
        k_below, k_above = table[n - 1]
        if k <= k_below:
            return SequentialResult(k / n, n, k, "below")
        if k >= k_above:
            return SequentialResult(k / n, n, k, "above")
    return SequentialResult(k / cap, cap, k, "undecided-at-cap")


def sequential_probability(spec: ScenarioSpec, driver: DriverConfig = DriverConfig(), p_t: float = 0.5,
                           delta_p: float = 0.01, cap: int = 100, seed: int = 0, *,
                           simulator: Simulator | None = None) -> SequentialResult:
    """Collision probability of one scenario, simulated until the verdict is clear or ``cap``."""
    sim = simulator or scenario_simulator(spec.family, driver)
    theta = np.asarray(spec.theta, dtype=float)
    return sequential_test(lambda i: sim(theta, derive_seed(seed, i)).collision, p_t, delta_p, cap)


def _node_class(res: SequentialResult, p_t: float) -> bool:
    """Whether a node counts as at-or-above the threshold."""
    if res.verdict == "undecided-at-cap":
        return res.p_hat >= p_t
    return res.verdict == "above"


def _crossing(x0: float, p0: float, x1: float, p1: float, p_t: float) -> float:
    if p1 == p0:
        return 0.5 * (x0 + x1)
    frac = min(max((p_t - p0) / (p1 - p0), 0.0), 1.0)
    return x0 + frac * (x1 - x0)


def _strictly_monotone(values: Sequence[float]) -> bool:
    d = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(d > 0) or np.all(d < 0))


def grid_boundary(family: Family | str, grid: Sequence[tuple[str, Sequence[float]]],
                  fixed: Mapping[str, float], driver: DriverConfig = DriverConfig(),
                  p_t: float = 0.5, delta_p: float = 0.01, cap: int = 100, seed: int = 0, *,
                  simulator: Simulator | None = None, workers: int = 1) -> BoundaryCurve:
    """Sequential test at every node of a two-axis grid, then per-row threshold crossings.

    ``grid`` is ``[(outer_name, values), (inner_name, values)]``; names are
    the family's parameter names (with or without the unit suffix) and every
    parameter not on a grid axis must appear in ``fixed``. For each outer
    value the crossing is the linear interpolation of p_hat at ``p_t``
    between the last node below and the first node at or above threshold.
    """
    fam = Family(family)
    _check_test_args(p_t, delta_p, cap)
    if len(grid) != 2:
        raise ValueError("grid needs exactly two axes")
    names = [n.split(" [")[0] for n in builtin_category(fam.value).parameter_names]

    def index_of(name: str) -> int:
        short = name.split(" [")[0]
        if short not in names:
            raise ValueError(f"unknown {fam.value} parameter {name!r}; expected one of {names}")
        return names.index(short)

    (name_a, vals_a), (name_b, vals_b) = grid
    ia, ib = index_of(name_a), index_of(name_b)
    if ia == ib:
        raise ValueError("grid axes must be different parameters")
    vals_a = tuple(float(v) for v in vals_a)
    vals_b = tuple(float(v) for v in vals_b)
    for vals in (vals_a, vals_b):
        if len(vals) < 2 or not _strictly_monotone(vals):
            raise ValueError("grid axes must be strictly monotone with at least two values")
    base = [math.nan] * len(names)
    fixed_clean = {}
    for name, value in fixed.items():
        j = index_of(name)
        if j in (ia, ib):
            raise ValueError(f"{name!r} is both fixed and a grid axis")
        base[j] = float(value)
        fixed_clean[names[j]] = float(value)
    missing = [names[j] for j in range(len(names)) if j not in (ia, ib) and math.isnan(base[j])]
    if missing:
        raise ValueError(f"parameters {missing} need fixed values")

    sim = simulator or scenario_simulator(fam, driver)

    def node(ij):
        i, j = ij
        theta = list(base)
        theta[ia], theta[ib] = vals_a[i], vals_b[j]
        spec = ScenarioSpec(fam, tuple(theta))
        return sequential_probability(spec, driver, p_t, delta_p, cap, derive_seed(seed, GRID_STREAM, i, j),
                                      simulator=sim)

    cells = [(i, j) for i in range(len(vals_a)) for j in range(len(vals_b))]
    results = _map(node, cells, workers)
    nb = len(vals_b)
    p_hat = np.array([r.p_hat for r in results]).reshape(len(vals_a), nb)
    n_sims = np.array([r.n_sims for r in results]).reshape(len(vals_a), nb)
    verdicts = tuple(tuple(r.verdict for r in results[i * nb:(i + 1) * nb]) for i in range(len(vals_a)))

    crossings = []
    for i, a in enumerate(vals_a):
        row = results[i * nb:(i + 1) * nb]
        for j in range(1, nb):
            if not _node_class(row[j - 1], p_t) and _node_class(row[j], p_t):
                crossings.append((a, _crossing(vals_b[j - 1], row[j - 1].p_hat, vals_b[j], row[j].p_hat, p_t)))
                break
    return BoundaryCurve(fam.value, fixed_clean, (names[ia], names[ib]), (vals_a, vals_b),
                         tuple(crossings), p_hat, verdicts, n_sims)
