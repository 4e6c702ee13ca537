"""Command-line front end.

Configuration is one JSON document; command-line flags override it. Every
report embeds the toolkit version and a SHA-256 digest of the effective
configuration and carries no timestamps, so identical inputs give
byte-identical outputs.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, density, evt, foreseeable, preventable
from .driver_sim import DriverConfig, Family, ScenarioSpec, simulate, write_trajectory
from .scenario_store import (ScenarioCategory, ValidationError, builtin_category, exposure,
                             load_records, load_tracks, mine_scenarios, records_matrix)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3

DEFAULTS: dict[str, Any] = {
    "base_seed": 0,
    "lambda_fs": [0.1, 0.01],
    "evt": {"exceed_fraction": 0.1},
    "driver": {},
    "mc": {"n_pilot": 10_000, "n_is": 10_000, "n_critical_fraction": 0.1},
    "sequential": {"p_t": 0.5, "delta_p": 0.01, "cap": 100},
    "plots": {"bins": 40, "points": 200},
    "categories": {},
}


class ConfigError(ValueError):
    pass


# --- configuration ----------------------------------------------------------------

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None) -> tuple[dict, Path]:
    """Config merged over the defaults, and the directory relative paths resolve against."""
    if path is None:
        return copy.deepcopy(DEFAULTS), Path.cwd()
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, data)
    base = p.parent
    for cid, section in cfg["categories"].items():
        for key in ("data", "tracks"):
            if key in section and not (base / section[key]).exists():
                raise ConfigError(f"category {cid}: {key} path {section[key]!r} does not exist")
    return cfg, base


def config_digest(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(path: Path, body: dict, cfg: dict) -> None:
    report = {"version": __version__, "config_digest": config_digest(cfg), **body}
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def short_name(name: str) -> str:
    return name.split(" [")[0]


def _category_section(cfg: dict, category_id: str) -> dict:
    section = cfg["categories"].get(category_id)
    if section is None:
        try:
            builtin_category(category_id)
        except (KeyError, ValueError):
            raise ConfigError(f"category {category_id!r} is neither configured nor built in") from None
        section = {}
        cfg["categories"][category_id] = section
    return section


def _schema(section: dict, category_id: str) -> ScenarioCategory:
    schema = section.get("schema")
    if schema is None:
        return builtin_category(category_id)
    return ScenarioCategory.from_dict(schema)


def _load_category(cfg: dict, base: Path, category_id: str):
    section = _category_section(cfg, category_id)
    schema = _schema(section, category_id)
    if "data" not in section:
        raise ConfigError(f"category {category_id}: no data path (set categories.{category_id}.data or --data)")
    records = load_records(base / section["data"], schema)
    hours = section.get("hours", cfg.get("hours"))
    if hours is None:
        raise ConfigError("observation hours missing (set 'hours' or --hours)")
    return schema, records, exposure(records, float(hours), schema.id)


def _driver(cfg: dict) -> DriverConfig:
    return DriverConfig.from_dict(cfg.get("driver", {}))


def _lambdas(cfg: dict) -> list[float]:
    lams = cfg["lambda_fs"]
    if isinstance(lams, (int, float)):
        lams = [lams]
    out = [float(x) for x in lams]
    if not out or any(not x > 0 for x in out):
        raise ConfigError("lambda_fs must be a non-empty list of positive rates")
    return out


def _dimension_index(schema: ScenarioCategory, dim: str | int) -> int:
    names = [short_name(n) for n in schema.parameter_names]
    if isinstance(dim, int) or str(dim).isdigit():
        j = int(dim)
        if not 0 <= j < schema.dim:
            raise ConfigError(f"dimension {j} out of range for {schema.id}")
        return j
    key = short_name(str(dim))
    if key not in names:
        raise ConfigError(f"unknown parameter {dim!r} for {schema.id}; choose from {names}")
    return names.index(key)


# --- plot data ------------------------------------------------------------------

def _histogram_rows(name: str, values: np.ndarray, bins: int):
    counts, edges = np.histogram(values, bins=bins)
    dens = counts / (values.size * np.diff(edges))
    return [(name, edges[i], edges[i + 1], int(counts[i]), dens[i]) for i in range(bins)]


def _emit_kde_plots(out: Path, tag: str, model: density.KdeModel, schema: ScenarioCategory,
                    theta: np.ndarray, cfg: dict) -> list[str]:
    bins, points = int(cfg["plots"]["bins"]), int(cfg["plots"]["points"])
    hist_rows, pdf_rows = [], []
    for j, name in enumerate(schema.parameter_names):
        col = theta[:, j]
        hist_rows += _histogram_rows(short_name(name), col, bins)
        pad = 0.1 * (col.max() - col.min())
        lo, hi = col.min() - pad, col.max() + pad
        b = schema.bounds[j]
        lo, hi = max(lo, b.lower), min(hi, b.upper)
        xs = np.linspace(lo, hi, points)
        ys = density.marginal_pdf(model, j, xs)
        pdf_rows += [(short_name(name), x, y) for x, y in zip(xs, ys)]
    hist_path, pdf_path = out / f"{tag}_histogram.csv", out / f"{tag}_marginal_pdf.csv"
    _write_csv(hist_path, ("parameter", "bin_lower", "bin_upper", "count", "density"), hist_rows)
    _write_csv(pdf_path, ("parameter", "x", "pdf"), pdf_rows)
    return [hist_path.name, pdf_path.name]


# --- commands -------------------------------------------------------------------

def cmd_foreseeable_kde(args, cfg: dict, base: Path, out: Path) -> dict:
    schema, records, expo = _load_category(cfg, base, args.category)
    section = cfg["categories"][args.category]
    theta = records_matrix(records)
    model = density.fit_kde(theta, schema)
    policy = section.get("expansion_policy") or ["expand-both"] * schema.dim
    anchors = section.get("anchors") or ()
    ranges = []
    for lam in _lambdas(cfg):
        query = foreseeable.ForeseeableQuery(lam, tuple(policy), tuple(
            None if a is None else tuple(a) for a in anchors))
        rng = foreseeable.solve_range_kde(model, expo, query)
        ranges.append(rng.to_dict(schema.parameter_names))
    tag = f"foreseeable_kde_{schema.id}"
    files = _emit_kde_plots(out, tag, model, schema, theta, cfg)
    body = {"command": "foreseeable-kde", "category": schema.id, "exposure": expo.to_dict(),
            "bandwidth": model.bandwidth, "renormalization": model.renorm, "n_records": model.n,
            "expansion_policy": list(policy), "ranges": ranges, "plot_data": files}
    write_report(out / f"{tag}.json", body, cfg)
    return body


def cmd_foreseeable_evt(args, cfg: dict, base: Path, out: Path) -> dict:
    schema, records, expo = _load_category(cfg, base, args.category)
    section = cfg["categories"][args.category]
    evt_cfg = _merge(cfg["evt"], section.get("evt", {}))
    if args.dimension is not None:
        evt_cfg["dimension"] = args.dimension
    if args.orientation is not None:
        evt_cfg["orientation"] = args.orientation
    if "dimension" not in evt_cfg:
        raise ConfigError("EVT needs a dimension (--dimension or categories.<id>.evt.dimension)")
    j = _dimension_index(schema, evt_cfg["dimension"])
    orientation = evt_cfg.get("orientation", "upper")
    values = records_matrix(records)[:, j]
    excess = evt.build_excess_set(values, orientation, float(evt_cfg["exceed_fraction"]))
    fit = evt.fit_gpd(excess)
    if evt_cfg.get("truncate_at") is not None:
        fit = evt.truncate(fit, float(evt_cfg["truncate_at"]))
    bounds = [foreseeable.solve_range_evt(fit, expo, lam, values).to_dict() for lam in _lambdas(cfg)]
    name = short_name(schema.parameter_names[j])
    tag = f"foreseeable_evt_{schema.id}_{name}"
    y = np.asarray(excess.excesses)
    bins, points = int(cfg["plots"]["bins"]), int(cfg["plots"]["points"])
    hist_path, pdf_path = out / f"{tag}_excess_histogram.csv", out / f"{tag}_gpd_pdf.csv"
    _write_csv(hist_path, ("parameter", "bin_lower", "bin_upper", "count", "density"),
               _histogram_rows("excess", y, bins))
    ys = np.linspace(0.0, min(1.2 * y.max(), fit.upper_end), points)
    _write_csv(pdf_path, ("excess", "raw_value", "pdf"),
               [(e, evt.to_raw(fit, excess.threshold + e), p) for e, p in zip(ys, evt.gpd_pdf(fit, ys))])
    body = {"command": "foreseeable-evt", "category": schema.id, "parameter": schema.parameter_names[j],
            "exposure": expo.to_dict(), "fit": fit.to_dict(), "bounds": bounds,
            "plot_data": [hist_path.name, pdf_path.name]}
    write_report(out / f"{tag}.json", body, cfg)
    return body


def cmd_preventable_category(args, cfg: dict, base: Path, out: Path) -> dict:
    schema, records, expo = _load_category(cfg, base, args.category)
    family = Family(cfg["categories"][args.category].get("family", schema.id))
    driver = _driver(cfg)
    mc = cfg["mc"]
    n_pilot, n_is = int(mc["n_pilot"]), int(mc["n_is"])
    n_critical = max(3, int(round(float(mc["n_critical_fraction"]) * n_pilot)))
    seed = int(cfg["base_seed"])
    model = density.fit_kde(records_matrix(records), schema)
    crude = preventable.crude_mc(model, driver, n_pilot, seed, family=family, workers=args.threads)
    q = preventable.build_importance_density(model, crude, n_critical)
    imp = preventable.importance_mc(model, q, driver, n_is, seed, family=family, workers=args.threads)
    tag = f"preventable_{schema.id}"
    _write_csv(out / f"{tag}.csv", ("category", "mu_mc", "sigma_mc", "mu_is", "sigma_is"),
               [(schema.id, crude.mean, crude.std, imp.mean, imp.std)])
    body = {"command": "preventable-category", "category": schema.id, "family": family.value,
            "seed": seed, "n_critical": n_critical, "importance_bandwidth": q.bandwidth,
            "estimates": [dict(crude.to_dict(), seed=seed), dict(imp.to_dict(), seed=seed)],
            "table": f"{tag}.csv"}
    write_report(out / f"{tag}.json", body, cfg)
    return body


def _axis(spec) -> tuple[str, list[float]]:
    if isinstance(spec, str):
        # NAME:start:stop:num or NAME=v1,v2,...
        if "=" in spec:
            name, vals = spec.split("=", 1)
            return name, [float(v) for v in vals.split(",")]
        parts = spec.split(":")
        if len(parts) != 4:
            raise ConfigError(f"axis {spec!r} must be NAME:start:stop:num or NAME=v1,v2,...")
        return parts[0], list(np.linspace(float(parts[1]), float(parts[2]), int(parts[3])))
    if "values" in spec:
        return spec["name"], [float(v) for v in spec["values"]]
    return spec["name"], list(np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])))


def cmd_preventable_grid(args, cfg: dict, base: Path, out: Path) -> dict:
    grid_cfg = dict(cfg.get("grid", {}))
    if args.family:
        grid_cfg["family"] = args.family
    if args.outer:
        grid_cfg["outer"] = args.outer
    if args.inner:
        grid_cfg["inner"] = args.inner
    if args.fixed:
        fixed = dict(grid_cfg.get("fixed", {}))
        for item in args.fixed:
            if "=" not in item:
                raise ConfigError(f"--fixed expects NAME=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            fixed[k] = float(v)
        grid_cfg["fixed"] = fixed
    for key in ("family", "outer", "inner"):
        if key not in grid_cfg:
            raise ConfigError(f"grid needs '{key}' (config 'grid' section or flag)")
    cfg["grid"] = grid_cfg
    seq = cfg["sequential"]
    axes = [_axis(grid_cfg["outer"]), _axis(grid_cfg["inner"])]
    curve = preventable.grid_boundary(grid_cfg["family"], axes, grid_cfg.get("fixed", {}), _driver(cfg),
                                      float(seq["p_t"]), float(seq["delta_p"]), int(seq["cap"]),
                                      int(cfg["base_seed"]), workers=args.threads)
    tag = f"boundary_{curve.family}"
    curve.write_csv(out / f"{tag}.csv")
    curve.write_grid_csv(out / f"{tag}_grid.csv")
    body = {"command": "preventable-grid", "family": curve.family, "fixed": curve.fixed_params,
            "axes": {curve.axis_names[0]: list(curve.axis_values[0]),
                     curve.axis_names[1]: list(curve.axis_values[1])},
            "sequential": seq, "seed": int(cfg["base_seed"]),
            "crossings": [list(c) for c in curve.threshold_crossings],
            "plot_data": [f"{tag}.csv", f"{tag}_grid.csv"]}
    write_report(out / f"{tag}.json", body, cfg)
    return body


def _parse_query(text: str) -> list[list[str]]:
    phases = [[t.strip() for t in phase.split("+") if t.strip()] for phase in text.split(",")]
    if not phases or any(not p for p in phases):
        raise ConfigError(f"query {text!r} must look like 'tagA+tagB,tagC'")
    return phases


def cmd_mine(args, cfg: dict, base: Path, out: Path) -> dict:
    mine_cfg = dict(cfg.get("mine", {}))
    for key in ("tracks", "query", "slack", "min_duration", "hours"):
        val = getattr(args, key)
        if val is not None:
            mine_cfg[key] = val
    if "tracks" not in mine_cfg or "query" not in mine_cfg:
        raise ConfigError("mine needs --tracks and --query (or a 'mine' config section)")
    cfg["mine"] = mine_cfg
    query = mine_cfg["query"]
    phases = _parse_query(query) if isinstance(query, str) else [list(p) for p in query]
    tracks = load_tracks(base / mine_cfg["tracks"] if args.tracks is None else Path(args.tracks))
    spans = mine_scenarios(tracks, phases, float(mine_cfg.get("slack", 0.5)),
                           float(mine_cfg.get("min_duration", 0.0)))
    _write_csv(out / "mined_spans.csv", ("start", "end"), [(float(s), float(e)) for s, e in spans])
    body = {"command": "mine", "query": phases, "n_spans": len(spans), "spans": "mined_spans.csv"}
    hours = mine_cfg.get("hours", cfg.get("hours"))
    if hours is not None:
        body["rate_per_hour"] = len(spans) / float(hours)
    write_report(out / "mine.json", body, cfg)
    return body


def cmd_simulate(args, cfg: dict, base: Path, out: Path) -> dict:
    sim_cfg = dict(cfg.get("simulate", {}))
    if args.family:
        sim_cfg["family"] = args.family
    if args.theta:
        sim_cfg["theta"] = [float(x) for x in args.theta]
    if args.reaction_time is not None:
        sim_cfg["reaction_time"] = args.reaction_time
    if "family" not in sim_cfg or "theta" not in sim_cfg:
        raise ConfigError("simulate needs --family and --theta (or a 'simulate' config section)")
    cfg["simulate"] = sim_cfg
    spec = ScenarioSpec(Family(sim_cfg["family"]), tuple(sim_cfg["theta"]))
    outcome = simulate(spec, _driver(cfg), int(cfg["base_seed"]), reaction_time=sim_cfg.get("reaction_time"),
                       record=True)
    write_trajectory(out / "trajectory.csv", outcome)
    body = {"command": "simulate", "family": spec.family.value, "theta": list(spec.theta),
            "seed": int(cfg["base_seed"]), "collision": outcome.collision, "min_ttc": outcome.min_ttc,
            "final_gap": outcome.final_gap, "reaction_delay": outcome.reaction_delay_used,
            "end_time": outcome.end_time, "trajectory": "trajectory.csv"}
    write_report(out / "simulation.json", body, cfg)
    return body


GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": ".", "threads": 1, "json_errors": False}

COMMANDS = {
    "foreseeable-kde": cmd_foreseeable_kde,
    "foreseeable-evt": cmd_foreseeable_evt,
    "preventable-category": cmd_preventable_category,
    "preventable-grid": cmd_preventable_grid,
    "mine": cmd_mine,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; defaults are filled in later
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="base seed (overrides config)")
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="worker threads for simulations (default 1)")
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")

    parser = argparse.ArgumentParser(prog="rfpkit", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def category_args(p):
        p.add_argument("--category", required=True, help="category id (e.g. LVD, CUTIN, ASV)")
        p.add_argument("--data", help="scenario CSV for the category")
        p.add_argument("--hours", type=float, help="observation hours")
        p.add_argument("--lambda-fs", type=float, action="append", dest="lambda_fs",
                       help="foreseeability threshold per hour (repeatable)")

    p = sub.add_parser("foreseeable-kde", parents=[common], help="foreseeable ranges from a KDE")
    category_args(p)
    p = sub.add_parser("foreseeable-evt", parents=[common], help="foreseeable bound from a GPD tail")
    category_args(p)
    p.add_argument("--dimension", help="parameter name or index")
    p.add_argument("--orientation", choices=("upper", "lower"))
    p.add_argument("--exceed-fraction", type=float, dest="exceed_fraction")
    p.add_argument("--truncate-at", type=float, dest="truncate_at", help="raw-unit limit of the tail")
    p = sub.add_parser("preventable-category", parents=[common], help="crude and importance-sampled collision probability")
    category_args(p)
    p.add_argument("--n-pilot", type=int, dest="n_pilot")
    p.add_argument("--n-is", type=int, dest="n_is")
    p = sub.add_parser("preventable-grid", parents=[common], help="collision-probability boundary over a grid")
    p.add_argument("--family", choices=[f.value for f in Family])
    p.add_argument("--outer", help="NAME:start:stop:num or NAME=v1,v2,...")
    p.add_argument("--inner", help="NAME:start:stop:num or NAME=v1,v2,...")
    p.add_argument("--fixed", action="append", help="NAME=VALUE for a parameter off the grid (repeatable)")
    p = sub.add_parser("mine", parents=[common], help="find scenario spans in tag tracks")
    p.add_argument("--tracks", help="tag-track CSV (object_id,tag,start,end)")
    p.add_argument("--query", help="phases separated by ',', tags within a phase by '+'")
    p.add_argument("--slack", type=float)
    p.add_argument("--min-duration", type=float, dest="min_duration")
    p.add_argument("--hours", type=float, help="observation hours, to report a rate")
    p = sub.add_parser("simulate", parents=[common], help="simulate one scenario and dump the trajectory")
    p.add_argument("--family", choices=[f.value for f in Family])
    p.add_argument("--theta", nargs="+", help="scenario parameters")
    p.add_argument("--reaction-time", type=float, dest="reaction_time")
    return parser


def _apply_overrides(args, cfg: dict, base: Path) -> None:
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    if getattr(args, "lambda_fs", None):
        cfg["lambda_fs"] = args.lambda_fs
    if getattr(args, "hours", None) is not None:
        cfg["hours"] = args.hours
    if getattr(args, "exceed_fraction", None) is not None:
        cfg["evt"]["exceed_fraction"] = args.exceed_fraction
    for key in ("n_pilot", "n_is"):
        if getattr(args, key, None) is not None:
            cfg["mc"][key] = getattr(args, key)
    category = getattr(args, "category", None)
    if category is not None:
        section = _category_section(cfg, category)
        if getattr(args, "data", None):
            # flag paths are relative to the working directory, config paths to the config file
            section["data"] = args.data if base == Path.cwd() else str(Path(args.data).resolve())
        if getattr(args, "truncate_at", None) is not None:
            section.setdefault("evt", {})["truncate_at"] = args.truncate_at
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")


def _fail(args, exc: BaseException, code: int) -> int:
    diagnostics = [{"row": r, "message": m} for r, m in getattr(exc, "diagnostics", ())]
    if getattr(args, "json_errors", False):
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if diagnostics:
            payload["diagnostics"] = diagnostics
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
        for d in diagnostics[:20]:
            print(f"  row {d['row']}: {d['message']}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        cfg, base = load_config(args.config)
        _apply_overrides(args, cfg, base)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        body = COMMANDS[args.command](args, cfg, base, out)
    except (evt.ConvergenceError,) as exc:
        return _fail(args, exc, EXIT_NO_CONVERGENCE)
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        return _fail(args, exc, EXIT_INVALID)
    print(json.dumps(_jsonable({"command": args.command, "ok": True,
                                **{k: v for k, v in body.items() if k in ("category", "family")}}),
                     sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
