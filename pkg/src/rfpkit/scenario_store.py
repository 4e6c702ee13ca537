"""Scenario categories, record ingestion, tag-based scenario mining and exposure."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TRANSFORM_KINDS = ("identity", "log", "negated-logit")


class ValidationError(ValueError):
    """Input data violates a category contract.

    ``diagnostics`` holds ``(row_index, message)`` pairs; row indices count
    data rows from 0 (the header is not counted).
    """

    def __init__(self, message: str, diagnostics: Sequence[tuple[int, str]] = ()):
        self.diagnostics = list(diagnostics)
        if self.diagnostics:
            shown = "; ".join(f"row {i}: {m}" for i, m in self.diagnostics[:5])
            more = len(self.diagnostics) - 5
            message = f"{message}: {shown}" + (f" (+{more} more)" if more > 0 else "")
        super().__init__(message)


@dataclass(frozen=True)
class Bound:
    """Admissible interval for one raw parameter."""

    lower: float = -math.inf
    upper: float = math.inf
    lower_closed: bool = False
    upper_closed: bool = False

    def contains(self, x: float) -> bool:
        if x < self.lower or (x == self.lower and not self.lower_closed):
            return False
        if x > self.upper or (x == self.upper and not self.upper_closed):
            return False
        return True

    def describe(self) -> str:
        lo = "[" if self.lower_closed else "("
        hi = "]" if self.upper_closed else ")"
        return f"{lo}{self.lower:g}, {self.upper:g}{hi}"

    def to_dict(self) -> dict:
        return {
            "lower": _json_float(self.lower),
            "upper": _json_float(self.upper),
            "lower_closed": self.lower_closed,
            "upper_closed": self.upper_closed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Bound":
        return cls(
            lower=float(data.get("lower", -math.inf)),
            upper=float(data.get("upper", math.inf)),
            lower_closed=bool(data.get("lower_closed", False)),
            upper_closed=bool(data.get("upper_closed", False)),
        )


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass(frozen=True)
class ScenarioCategory:
    """Schema of a scenario category: parameter names, KDE transforms and validity bounds."""

    id: str
    name: str
    parameter_names: tuple[str, ...]
    parameter_transforms: tuple[str, ...]
    bounds: tuple[Bound, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parameter_names", tuple(self.parameter_names))
        object.__setattr__(self, "parameter_transforms", tuple(self.parameter_transforms))
        if not self.parameter_names:
            raise ValueError(f"category {self.id!r}: parameter_names must be non-empty")
        if len(self.parameter_transforms) != len(self.parameter_names):
            raise ValueError(
                f"category {self.id!r}: {len(self.parameter_transforms)} transforms "
                f"for {len(self.parameter_names)} parameters")
        for kind in self.parameter_transforms:
            if kind not in TRANSFORM_KINDS:
                raise ValueError(f"category {self.id!r}: unknown transform {kind!r}")
        bounds = tuple(self.bounds) or tuple(Bound() for _ in self.parameter_names)
        if len(bounds) != len(self.parameter_names):
            raise ValueError(f"category {self.id!r}: bounds length mismatch")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dim(self) -> int:
        return len(self.parameter_names)

    def violations(self, theta: Sequence[float]) -> list[str]:
        """Return human-readable reasons why ``theta`` is not a valid scenario."""
        if len(theta) != self.dim:
            return [f"expected {self.dim} values, got {len(theta)}"]
        problems = []
        for name, x, bound in zip(self.parameter_names, theta, self.bounds):
            if not math.isfinite(x):
                problems.append(f"{name} is not finite")
            elif not bound.contains(x):
                problems.append(f"{name}={x:g} outside {bound.describe()}")
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "parameter_names": list(self.parameter_names),
            "parameter_transforms": list(self.parameter_transforms),
            "bounds": [b.to_dict() for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioCategory":
        if "builtin" in data:
            return builtin_category(data["builtin"])
        bounds = tuple(Bound.from_dict(b) for b in data.get("bounds", ()))
        return cls(
            id=str(data["id"]),
            name=str(data.get("name", data["id"])),
            parameter_names=tuple(data["parameter_names"]),
            parameter_transforms=tuple(
                data.get("parameter_transforms", ["identity"] * len(data["parameter_names"]))),
            bounds=bounds,
        )


_POS = Bound(lower=0.0)
_UNIT_OPEN = Bound(lower=0.0, upper=1.0)

LVD = ScenarioCategory(
    id="LVD",
    name="leading vehicle decelerating",
    parameter_names=("v0_lead [m/s]", "dv_ratio [-]", "mean_decel [m/s^2]"),
    parameter_transforms=("identity", "negated-logit", "log"),
    bounds=(_POS, _UNIT_OPEN, _POS),
)
CUTIN = ScenarioCategory(
    id="CUTIN",
    name="cut-in",
    parameter_names=("gap0 [m]", "v0_ego [m/s]", "speed_ratio [-]"),
    parameter_transforms=("log", "identity", "identity"),
    bounds=(_POS, _POS, _POS),
)
ASV = ScenarioCategory(
    id="ASV",
    name="approaching slower vehicle",
    parameter_names=("v0_ego [m/s]", "speed_ratio [-]"),
    parameter_transforms=("identity", "identity"),
    bounds=(_POS, Bound(lower=0.0, upper=1.0, lower_closed=True)),
)
BUILTIN_CATEGORIES = {c.id: c for c in (LVD, CUTIN, ASV)}


def builtin_category(category_id: str) -> ScenarioCategory:
    try:
        return BUILTIN_CATEGORIES[category_id.upper()]
    except KeyError:
        raise ValueError(f"unknown builtin category {category_id!r}; "
                         f"choose from {sorted(BUILTIN_CATEGORIES)}") from None


@dataclass(frozen=True)
class ScenarioRecord:
    category_id: str
    theta: tuple[float, ...]
    source_time_span: tuple[float, float] | None = None


@dataclass(frozen=True)
class TagTrack:
    object_id: str
    tag: str
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"tag {self.tag!r} on {self.object_id!r}: start must precede end")


@dataclass(frozen=True)
class ExposureEstimate:
    category_id: str
    count: int
    hours: float
    rate_per_hour: float = field(init=False)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if not self.hours > 0:
            raise ValueError("hours must be positive")
        object.__setattr__(self, "rate_per_hour", self.count / self.hours)

    def to_dict(self) -> dict:
        return {"category_id": self.category_id, "count": self.count,
                "hours": self.hours, "rate_per_hour": self.rate_per_hour}


def validate_records(rows: Iterable[Sequence[float]], category: ScenarioCategory,
                     spans: Sequence[tuple[float, float] | None] | None = None) -> list[ScenarioRecord]:
    records, problems = [], []
    for i, theta in enumerate(rows):
        theta = tuple(float(x) for x in theta)
        reasons = category.violations(theta)
        if reasons:
            problems.extend((i, r) for r in reasons)
            continue
        span = spans[i] if spans is not None else None
        records.append(ScenarioRecord(category.id, theta, span))
    if problems:
        raise ValidationError(f"invalid {category.id} records", problems)
    return records


def _bare(name: str) -> str:
    return name.split(" [")[0].strip()


def load_records(path: str | Path, schema: ScenarioCategory) -> list[ScenarioRecord]:
    """Read a scenario CSV whose header lists the category's parameters in order.

    Two optional trailing columns ``span_start`` and ``span_end`` carry the
    source time span. Any row-level problem raises :class:`ValidationError`
    listing every offending row.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"scenario file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: missing header row") from None
        expected = list(schema.parameter_names)
        # the unit suffix (" [m/s]") is optional in the header
        names = [_bare(h) for h in header]
        bare = [_bare(n) for n in expected]
        has_span = names[-2:] == ["span_start", "span_end"] and names[:-2] == bare
        if names != bare and not has_span:
            raise ValidationError(
                f"{path}: header {header} does not match {schema.id} parameters {expected}")
        width = len(header)
        rows, spans, problems = [], [], []
        for i, row in enumerate(reader):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                problems.append((i, f"expected {width} columns, got {len(row)}"))
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                problems.append((i, f"unparseable value ({exc})"))
                continue
            if has_span:
                spans.append((values[-2], values[-1]))
                values = values[:-2]
            else:
                spans.append(None)
            rows.append((i, values))
    if problems:
        raise ValidationError(f"{path}: malformed rows", problems)
    records, problems = [], []
    for (i, values), span in zip(rows, spans):
        reasons = schema.violations(values)
        if reasons:
            problems.extend((i, r) for r in reasons)
        else:
            records.append(ScenarioRecord(schema.id, tuple(values), span))
    if problems:
        raise ValidationError(f"{path}: invalid {schema.id} records", problems)
    return records


def save_records(path: str | Path, records: Sequence[ScenarioRecord], schema: ScenarioCategory) -> None:
    with_span = any(r.source_time_span is not None for r in records)
    header = list(schema.parameter_names) + (["span_start", "span_end"] if with_span else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            row = [repr(float(x)) for x in r.theta]
            if with_span:
                span = r.source_time_span or (math.nan, math.nan)
                row += [repr(float(span[0])), repr(float(span[1]))]
            writer.writerow(row)


def records_matrix(records: Sequence[ScenarioRecord]) -> np.ndarray:
    if not records:
        return np.empty((0, 0))
    return np.array([r.theta for r in records], dtype=float)


def load_tracks(path: str | Path) -> list[TagTrack]:
    """Read a tag-track CSV with columns ``object_id,tag,start,end``."""
    tracks, problems = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"object_id", "tag", "start", "end"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader):
            try:
                tracks.append(TagTrack(row["object_id"], row["tag"].strip(),
                                       float(row["start"]), float(row["end"])))
            except ValueError as exc:
                problems.append((i, str(exc)))
    if problems:
        raise ValidationError(f"{path}: invalid tag rows", problems)
    return tracks


def _merge(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def _intersect(a: list[tuple[float, float]], b: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if s < e:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def mine_scenarios(tracks: Sequence[TagTrack], query: Sequence[Iterable[str]],
                   slack: float = 0.5, min_duration: float = 0.0) -> list[tuple[float, float]]:
    """Find time spans where some object satisfies a sequence of tag conjunctions.

    Each element of ``query`` is a set of tags that must hold simultaneously on
    one object; consecutive elements are consecutive phases on that same
    object, separated by at most ``slack`` seconds. Returns the maximal
    ``(start, end)`` spans, sorted; spans of different objects may overlap.
    """
    phases = [frozenset(q) for q in query]
    if not phases or any(not p for p in phases):
        raise ValueError("query must be a non-empty list of non-empty tag sets")

    by_object: dict[str, dict[str, list[tuple[float, float]]]] = defaultdict(lambda: defaultdict(list))
    for tr in tracks:
        by_object[tr.object_id][tr.tag].append((tr.start, tr.end))

    spans: set[tuple[float, float]] = set()
    for obj in sorted(by_object):
        tags = {t: _merge(iv) for t, iv in by_object[obj].items()}
        phase_ivs = []
        for phase in phases:
            ivs = None
            for tag in sorted(phase):
                cur = tags.get(tag, [])
                ivs = cur if ivs is None else _intersect(ivs, cur)
            phase_ivs.append(ivs or [])
        if any(not ivs for ivs in phase_ivs):
            continue
        # chains: (chain_start, last_interval)
        chains = [(s, (s, e)) for s, e in phase_ivs[0]]
        for ivs in phase_ivs[1:]:
            nxt = []
            for start, (ps, pe) in chains:
                for s, e in ivs:
                    if ps <= s <= pe + slack and e > pe:
                        nxt.append((start, (s, e)))
            chains = nxt
        found = {(start, last[1]) for start, last in chains}
        maximal = [sp for sp in found
                   if not any(o != sp and o[0] <= sp[0] and sp[1] <= o[1] for o in found)]
        spans.update(sp for sp in maximal if sp[1] - sp[0] >= min_duration)
    return sorted(spans)


def exposure(records: Sequence[ScenarioRecord], hours: float, category_id: str | None = None) -> ExposureEstimate:
    """Encounters per hour: the empirical mean of the counting process."""
    if not hours > 0:
        raise ValueError("hours must be positive")
    if category_id is None:
        category_id = records[0].category_id if records else ""
    return ExposureEstimate(category_id, len(records), float(hours))
