"""Batch experiments: analytic and simulated sweeps written as long-format CSV.

Every run writes, under ``--out``:

* one CSV per metric family with columns
  ``n_sf, rsf, t_wifi, engine, metric, value, ci_halfwidth``;
* ``compare.csv`` when both engines ran;
* ``manifest.json`` holding config hashes, versions, seeds, runtimes and the
  only timestamp of the run.

Absent values are written as ``NA``. Rows are sorted, so reruns with the
same inputs produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import dataclasses
import datetime as dt
import functools
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .core import DEFAULT_T_WIFI, SystemConfig, coerce_config_fields, load_config, class4_preset
from .jmc import ConvergenceError
from .metrics import AnalyticModel, MetricsReport, fixed_point

log = logging.getLogger(__name__)

NA = "NA"
ENGINES = ("analytic", "simulation")
LONG_COLUMNS = ("n_sf", "rsf", "t_wifi", "engine", "metric", "value", "ci_halfwidth")
COMPARE_COLUMNS = (
    "n_sf", "rsf", "t_wifi", "metric", "analytic", "simulated", "ci_halfwidth",
    "abs_err", "rel_err", "allowed", "status",
)

# metric family -> CSV file stem and the metrics it holds ("c_sf_*" expands per subframe)
FAMILIES = {
    "transmit": ("tau_l", "tau_h", "tau_h_mc", "tau_h_ow", "tau_h_mc_abs", "tau_h_ow_abs", "p_b_l"),
    "collision": ("p_c_h", "p_overlap", "p_d"),
    "subframe": ("c_sf_*", "avg_collided_sf", "alpha"),
    "throughput_delay": ("s_l", "s_h", "e_d_l", "e_d_h"),
    "z2": ("z2",),
}


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float
    rel_tol: float
    ci_mult: float

    def allowed(self, simulated: float, ci: float | None) -> float:
        ci_term = self.ci_mult * ci if ci is not None and math.isfinite(ci) else 0.0
        return max(self.abs_tol, self.rel_tol * abs(simulated), ci_term)


TOLERANCE_PROFILES = {
    "strict": Tolerance(0.02, 0.05, 3.0),
    "loose": Tolerance(0.05, 0.10, 3.0),
}
TOLERANCE_PROFILES["paper"] = TOLERANCE_PROFILES["loose"]  # interface alias


@dataclass(frozen=True)
class Cell:
    n_sf: int
    rsf: int
    t_wifi: float

    def config(self, base: SystemConfig) -> SystemConfig:
        return base.replace(n_sf=self.n_sf, rsf=self.rsf, t_wifi=self.t_wifi)


@dataclass
class ExperimentSpec:
    mode: str
    base: SystemConfig = field(default_factory=lambda: class4_preset(8, "first", 54))
    t_wifi: tuple[float, ...] = ()
    rsf: tuple[str, ...] = ()
    n_sf: tuple[int, ...] = ()
    engines: tuple[str, ...] = ("analytic",)
    seeds: tuple[int, ...] = (1,)
    total_slots: int = 10_000_000
    warmup_slots: int = 100_000
    out: Path = Path("results")
    tol_profile: str = "strict"
    cache: Path | None = None
    jobs: int = 1
    csf_rule: str = "inflight"

    def __post_init__(self):
        if self.mode not in ("analyze", "simulate", "compare", "sweep"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "sweep" and not (self.t_wifi and self.rsf and self.n_sf):
            raise ValueError("sweep mode needs non-empty t_wifi, rsf and n_sf axes")
        if self.mode == "compare" and (not self.seeds or self.total_slots <= self.warmup_slots):
            raise ValueError("compare mode needs seeds and total_slots > warmup_slots")
        unknown = set(self.engines) - set(ENGINES)
        if unknown or not self.engines:
            raise ValueError(f"engines must be drawn from {ENGINES}, got {self.engines}")
        if self.tol_profile not in TOLERANCE_PROFILES:
            raise ValueError(f"unknown tolerance profile {self.tol_profile!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")

    def cells(self) -> list[Cell]:
        n_sfs = self.n_sf or (self.base.n_sf,)
        t_wifis = self.t_wifi or (self.base.t_wifi,)
        rsfs = self.rsf or (str(self.base.rsf),)
        out = {Cell(n, resolve_rsf(r, n), float(t)) for n in n_sfs for r in rsfs for t in t_wifis}
        for cell in out:
            if not 1 <= cell.rsf <= cell.n_sf:
                raise ValueError(f"rsf {cell.rsf} outside 1..{cell.n_sf}")
        return sorted(out, key=lambda c: (c.n_sf, c.rsf, c.t_wifi))


def resolve_rsf(token: str | int, n_sf: int) -> int:
    """``"last"`` names the last subframe whose feedback arrives 4 subframes before the MCOT ends."""
    if str(token) == "last":
        return max(1, n_sf - 4)
    return int(token)


# --------------------------------------------------------------------------
# engines
# --------------------------------------------------------------------------


ANALYTIC_MODULES = ("core.py", "laa_chain.py", "wifi_chain.py", "jmc.py", "metrics.py")


@functools.lru_cache(maxsize=1)
def analytic_fingerprint() -> str:
    """Hash of the analytic sources, so cached results never outlive a code change."""
    digest = hashlib.sha256()
    for name in ANALYTIC_MODULES:
        digest.update((Path(__file__).parent / name).read_bytes())
    return digest.hexdigest()[:12]


def _cache_path(cache: Path | None, config: SystemConfig, csf_rule: str) -> Path | None:
    if cache is None:
        return None
    return Path(cache) / "analytic" / analytic_fingerprint() / f"{config.config_hash()}-{csf_rule}.json"


def report_from_dict(data: dict) -> MetricsReport:
    return MetricsReport(**data)


def _analytic_group(
    base: SystemConfig, cells: Sequence[Cell], csf_rule: str, cache: Path | None
) -> list[tuple[Cell, MetricsReport | None, dict]]:
    """Fixed points for cells sharing ``(n_sf, t_wifi)``, reusing one precomputation."""
    out = []
    model = None
    for cell in cells:
        config = cell.config(base)
        path = _cache_path(cache, config, csf_rule)
        info = {"config_hash": config.config_hash(), "engine": "analytic"}
        start = time.perf_counter()
        if path is not None and path.exists():
            report = report_from_dict(json.loads(path.read_text()))
            info.update(cached=True, seconds=0.0)
            out.append((cell, report, info))
            continue
        try:
            if model is None:
                model = AnalyticModel(config, csf_rule=csf_rule)
            result = fixed_point(config, model=model.for_rsf(config.rsf), csf_rule=csf_rule)
        except (ConvergenceError, ValueError, ArithmeticError) as exc:
            info.update(error=f"{type(exc).__name__}: {exc}", seconds=time.perf_counter() - start)
            out.append((cell, None, info))
            continue
        report = result.report
        info.update(cached=False, seconds=time.perf_counter() - start, rounds=result.rounds)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(report.to_json())
        out.append((cell, report, info))
    return out


def _simulation_cell(
    base: SystemConfig, cell: Cell, seeds: Sequence[int], total_slots: int, warmup_slots: int
) -> tuple[Cell, MetricsReport | None, dict]:
    from .simulator import SimConfig, measure, run_seeds

    config = cell.config(base)
    info = {"config_hash": config.config_hash(), "engine": "simulation", "seeds": list(seeds)}
    start = time.perf_counter()
    try:
        stats = run_seeds(SimConfig(config, total_slots=total_slots, warmup_slots=warmup_slots), seeds)
        report = measure(stats)
    except (ValueError, ArithmeticError) as exc:
        info.update(error=f"{type(exc).__name__}: {exc}", seconds=time.perf_counter() - start)
        return cell, None, info
    info.update(seconds=time.perf_counter() - start, mcots=report.diagnostics["mcots"],
                packets=report.diagnostics["packets"])
    return cell, report, info


def _run_engines(spec: ExperimentSpec):
    cells = spec.cells()
    tasks = []
    if "analytic" in spec.engines:
        groups: dict[tuple[int, float], list[Cell]] = {}
        for cell in cells:
            groups.setdefault((cell.n_sf, cell.t_wifi), []).append(cell)
        for group in groups.values():
            tasks.append((_analytic_group, (spec.base, group, spec.csf_rule, spec.cache)))
    if "simulation" in spec.engines:
        for cell in cells:
            tasks.append((_simulation_cell, (spec.base, cell, spec.seeds, spec.total_slots, spec.warmup_slots)))

    def collect(res):
        return res if isinstance(res, list) else [res]

    results = []
    if spec.jobs == 1:
        for fn, args in tasks:
            results += collect(fn(*args))
    else:
        with cf.ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            for res in pool.map(_call, tasks):
                results += collect(res)
    return results


def _call(task):
    fn, args = task
    return fn(*args)


# --------------------------------------------------------------------------
# rows and CSV output
# --------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class ResultRow:
    n_sf: int
    rsf: int
    t_wifi: float
    engine: str
    metric: str
    value: float | None
    ci_halfwidth: float | None = None

    def fields(self) -> list[str]:
        return [str(self.n_sf), str(self.rsf), fmt(self.t_wifi), self.engine, self.metric,
                fmt(self.value), fmt(self.ci_halfwidth)]


def fmt(value) -> str:
    """Stable text form; ``NA`` marks an absent or non-finite value."""
    if value is None:
        return NA
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return NA
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.12g}"


def _clean(value) -> float | None:
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def report_rows(cell: Cell, engine: str, report: MetricsReport) -> list[ResultRow]:
    half = report.diagnostics.get("ci_halfwidth", {}) if engine == "simulation" else {}
    return [
        ResultRow(cell.n_sf, cell.rsf, cell.t_wifi, engine, name, _clean(value), _clean(half.get(name)))
        for name, value in report.metric_items()
    ]


def family_of(metric: str) -> str:
    for family, names in FAMILIES.items():
        for name in names:
            if metric == name or (name.endswith("*") and metric.startswith(name[:-1])):
                return family
    raise KeyError(metric)


def _metric_sort_key(metric: str):
    # c_sf_10 after c_sf_9
    head, _, tail = metric.rpartition("_")
    return (head, int(tail)) if tail.isdigit() else (metric, -1)


def _row_key(row: ResultRow):
    return (row.n_sf, row.rsf, row.t_wifi, row.engine, _metric_sort_key(row.metric))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_family_csvs(rows: Sequence[ResultRow], out: Path) -> list[Path]:
    by_family: dict[str, list[ResultRow]] = {family: [] for family in FAMILIES}
    for row in rows:
        by_family[family_of(row.metric)].append(row)
    return [
        write_csv(out / f"{family}.csv", LONG_COLUMNS, (r.fields() for r in sorted(items, key=_row_key)))
        for family, items in by_family.items()
    ]


def read_result_rows(directory: Path) -> list[ResultRow]:
    """Load the family CSVs written by a previous run."""
    rows = []
    for family in FAMILIES:
        path = Path(directory) / f"{family}.csv"
        if not path.exists():
            continue
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ResultRow(
                    int(rec["n_sf"]), int(rec["rsf"]), float(rec["t_wifi"]), rec["engine"], rec["metric"],
                    _parse(rec["value"]), _parse(rec["ci_halfwidth"]),
                ))
    return rows


def _parse(text: str) -> float | None:
    return None if text == NA else float(text)


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    n_sf: int
    rsf: int
    t_wifi: float
    metric: str
    analytic: float | None
    simulated: float | None
    ci_halfwidth: float | None
    abs_err: float | None
    rel_err: float | None
    allowed: float | None
    passed: bool | None  # None when either engine has no value

    @property
    def status(self) -> str:
        return "absent" if self.passed is None else ("pass" if self.passed else "fail")

    def fields(self) -> list[str]:
        return [str(self.n_sf), str(self.rsf), fmt(self.t_wifi), self.metric, fmt(self.analytic),
                fmt(self.simulated), fmt(self.ci_halfwidth), fmt(self.abs_err), fmt(self.rel_err),
                fmt(self.allowed), self.status]


def compare_rows(rows: Sequence[ResultRow], tolerance: Tolerance) -> list[ComparisonRow]:
    table: dict[tuple, dict[str, ResultRow]] = {}
    for row in rows:
        table.setdefault((row.n_sf, row.rsf, row.t_wifi, row.metric), {})[row.engine] = row
    out = []
    for key in sorted(table, key=lambda k: (*k[:3], _metric_sort_key(k[3]))):
        pair = table[key]
        a = pair.get("analytic")
        s = pair.get("simulation")
        av = a.value if a else None
        sv = s.value if s else None
        ci = s.ci_halfwidth if s else None
        if av is None or sv is None or not (math.isfinite(av) and math.isfinite(sv)):
            out.append(ComparisonRow(*key, av, sv, ci, None, None, None, None))
            continue
        err = abs(av - sv)
        rel = err / abs(sv) if sv else None
        allowed = tolerance.allowed(sv, ci)
        out.append(ComparisonRow(*key, av, sv, ci, err, rel, allowed, err <= allowed))
    return out


# --------------------------------------------------------------------------
# figures
# --------------------------------------------------------------------------

FIGURE_COLUMNS = ("figure", "panel", "engine", "series", "x_name", "x", "value", "ci_halfwidth")

# figure -> (panel axes, series metrics, x axis)
FIGURES = {
    "transmit": (("n_sf", "rsf"), ("tau_l", "tau_h", "tau_h_ow_abs", "tau_h_mc_abs"), "t_wifi"),
    "wifi_collision": (("n_sf",), ("p_c_h",), "t_wifi"),
    "doubling": (("n_sf",), ("p_d",), "t_wifi"),
    "subframe_8ms": (("t_wifi",), ("c_sf",), "subframe"),
    "subframe_10ms": (("t_wifi",), ("c_sf",), "subframe"),
    "throughput": (("n_sf", "rsf"), ("s_l", "s_h"), "t_wifi"),
    "delay": (("n_sf", "rsf"), ("e_d_l", "e_d_h"), "t_wifi"),
    "sum_throughput": (("n_sf", "rsf"), ("s_sum",), "t_wifi"),
}
# numbered names accepted by the command line and emit_figure_data
FIGURE_ALIASES = {
    "fig7": "transmit", "fig8": "wifi_collision", "fig9": "doubling", "fig10": "subframe_8ms",
    "fig11": "subframe_10ms", "fig12": "throughput", "fig13": "delay", "fig14": "sum_throughput",
}
# subframe-collision figures fix the MCOT and reference subframe
FIGURE_FILTER = {"subframe_8ms": (8, 1), "subframe_10ms": (10, 1)}


def _figure_points(rows: Sequence[ResultRow], figure: str):
    panels, series, x_name = FIGURES[figure]
    keep = FIGURE_FILTER.get(figure)
    if keep:
        rows = [r for r in rows if (r.n_sf, r.rsf) == keep]
    points = []
    if series == ("s_sum",):
        sums: dict[tuple, list[ResultRow]] = {}
        for r in rows:
            if r.metric in ("s_l", "s_h"):
                sums.setdefault((r.n_sf, r.rsf, r.t_wifi, r.engine), []).append(r)
        for (n_sf, rsf, t, engine), parts in sums.items():
            if len(parts) == 2 and all(p.value is not None for p in parts):
                cis = [p.ci_halfwidth for p in parts]
                ci = None if None in cis else math.hypot(*cis)
                points.append(((n_sf, rsf), engine, "s_sum", t, parts[0].value + parts[1].value, ci))
        return points
    for r in rows:
        if x_name == "subframe":
            if not r.metric.startswith("c_sf_"):
                continue
            points.append(((r.t_wifi,), r.engine, "c_sf", int(r.metric.rsplit("_", 1)[1]), r.value, r.ci_halfwidth))
        elif r.metric in series:
            panel = tuple(getattr(r, name) for name in panels)
            # panels that pool both reference subframes keep them apart by series name
            label = r.metric if "rsf" in panels else f"{r.metric}_rsf{r.rsf}"
            points.append((panel, r.engine, label, r.t_wifi, r.value, r.ci_halfwidth))
    return points


def _panel_name(figure: str, panel: tuple) -> str:
    names = FIGURES[figure][0]
    return "_".join(f"{n}{fmt(v)}" for n, v in zip(names, panel))


def _expected_panels(figure: str) -> list[tuple]:
    panels = FIGURES[figure][0]
    if panels == ("n_sf", "rsf"):
        return [(n, r) for n in (8, 10) for r in (1, resolve_rsf("last", n))]
    if panels == ("n_sf",):
        return [(8,), (10,)]
    return [(float(t),) for t in DEFAULT_T_WIFI[2:]]


def emit_figure_data(rows: Sequence[ResultRow], figure: str, out: Path) -> list[Path]:
    """Write one long-format CSV per sub-figure; returns the written paths.

    Panels of the standard 8 and 10 ms layout that have no data are listed in
    ``<figure>_missing.txt``. With no usable data a header-only
    ``<figure>.csv`` is written.
    """
    figure = FIGURE_ALIASES.get(figure, figure)
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {sorted(FIGURES)}")
    out = Path(out)
    x_name = FIGURES[figure][2]
    points = _figure_points(rows, figure)
    by_panel: dict[tuple, list] = {}
    for panel, engine, series, x, value, ci in points:
        by_panel.setdefault(panel, []).append((engine, series, x, value, ci))
    paths = []
    for panel in sorted(by_panel):
        name = _panel_name(figure, panel)
        body = sorted(by_panel[panel], key=lambda p: (p[0], p[1], p[2]))
        paths.append(write_csv(
            out / f"{figure}_{name}.csv", FIGURE_COLUMNS,
            ([figure, name, e, s, x_name, fmt(x), fmt(v), fmt(ci)] for e, s, x, v, ci in body),
        ))
    if not paths:
        paths.append(write_csv(out / f"{figure}.csv", FIGURE_COLUMNS, []))
    missing = [p for p in _expected_panels(figure) if p not in by_panel]
    sidecar = out / f"{figure}_missing.txt"
    if missing:
        sidecar.write_text("".join(_panel_name(figure, p) + "\n" for p in missing))
        paths.append(sidecar)
    elif sidecar.exists():
        sidecar.unlink()
    return paths


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------


def _lookup(rows: Sequence[ResultRow]) -> dict[tuple, ResultRow]:
    return {(r.n_sf, r.rsf, r.t_wifi, r.engine, r.metric): r for r in rows}


def write_collided_table(rows: Sequence[ResultRow], out: Path, n_sf: int = 8) -> Path:
    """Average collided subframes per MCOT; one line per ``T_WiFi``."""
    table = _lookup(rows)
    rsfs = tuple(dict.fromkeys((1, resolve_rsf("last", n_sf))))
    header = ["t_wifi"]
    for rsf in rsfs:
        header += [f"rsf{rsf}_simulation", f"rsf{rsf}_simulation_ci", f"rsf{rsf}_analysis"]
    t_values = sorted({r.t_wifi for r in rows if r.n_sf == n_sf})
    body = []
    for t in t_values:
        line = [fmt(t)]
        for rsf in rsfs:
            sim = table.get((n_sf, rsf, t, "simulation", "avg_collided_sf"))
            ana = table.get((n_sf, rsf, t, "analytic", "avg_collided_sf"))
            line += [fmt(sim.value if sim else None), fmt(sim.ci_halfwidth if sim else None),
                     fmt(ana.value if ana else None)]
        body.append(line)
    return write_csv(Path(out) / "collided_subframes.csv", header, body)


def write_z2_table(rows: Sequence[ResultRow], out: Path) -> Path:
    """Simulated mean share ``z2`` of overlapping packets; one line per ``T_WiFi``."""
    table = _lookup(rows)
    columns = list(dict.fromkeys((n, r) for n in (8, 10) for r in (1, resolve_rsf("last", n))))
    header = ["t_wifi"]
    for n, r in columns:
        header += [f"n_sf{n}_rsf{r}", f"n_sf{n}_rsf{r}_ci"]
    body = []
    for t in sorted({r.t_wifi for r in rows}):
        line = [fmt(t)]
        for n, r in columns:
            row = table.get((n, r, t, "simulation", "z2"))
            line += [fmt(row.value if row else None), fmt(row.ci_halfwidth if row else None)]
        body.append(line)
    return write_csv(Path(out) / "z2_split.csv", header, body)


# --------------------------------------------------------------------------
# experiment driver
# --------------------------------------------------------------------------


def _versions() -> dict:
    import numba
    import numpy
    import scipy

    return {"laacoex": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    comparisons: list[ComparisonRow]
    cells: list[dict]
    status: int
    paths: list[Path]


def run_experiment(spec: ExperimentSpec, extra_outputs: Sequence[str] = ()) -> ExperimentResult:
    """Run every engine over every cell and write CSVs plus the manifest.

    A failing cell is recorded in the manifest and does not stop the others.
    Status is 1 if any cell failed to run, else 2 if any comparison failed,
    else 0.
    """
    started = time.perf_counter()
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _run_engines(spec)
    rows: list[ResultRow] = []
    cell_info = []
    for cell, report, info in results:
        cell_info.append({"n_sf": cell.n_sf, "rsf": cell.rsf, "t_wifi": cell.t_wifi, **info})
        if report is not None:
            rows += report_rows(cell, info["engine"], report)
    rows.sort(key=_row_key)
    paths = write_family_csvs(rows, out)

    comparisons: list[ComparisonRow] = []
    if set(spec.engines) == set(ENGINES):
        comparisons = compare_rows(rows, TOLERANCE_PROFILES[spec.tol_profile])
        paths.append(write_csv(out / "compare.csv", COMPARE_COLUMNS, (c.fields() for c in comparisons)))
    if "collided-table" in extra_outputs:
        paths.append(write_collided_table(rows, out))
    if "z2-table" in extra_outputs:
        paths.append(write_z2_table(rows, out))

    errors = [c for c in cell_info if "error" in c]
    failed = [c for c in comparisons if c.passed is False]
    status = 1 if errors else (2 if failed else 0)
    cell_info.sort(key=lambda c: (c["n_sf"], c["rsf"], c["t_wifi"], c["engine"]))
    manifest = {
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "spec": _spec_dict(spec),
        "effective_config": spec.base.to_dict(),
        "versions": _versions(),
        "cells": cell_info,
        "failed_comparisons": len(failed),
        "errors": len(errors),
        "status": status,
        "seconds": time.perf_counter() - started,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    paths.append(out / "manifest.json")
    return ExperimentResult(rows, comparisons, cell_info, status, paths)


def _spec_dict(spec: ExperimentSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["base"] = spec.base.to_dict()
    return d


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laacoex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("--t-wifi", type=_csv_list, help="comma-separated T_WiFi values")
    common.add_argument("--rsf", type=_csv_list, help="comma-separated subframes; 'last' = last eligible")
    common.add_argument("--n-sf", type=_csv_list, help="comma-separated subframes per MCOT")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, help="use seeds 1..N")
    seeds.add_argument("--seed-list", type=_csv_list, help="comma-separated seeds")
    common.add_argument("--slots", type=int, default=10_000_000, help="slots per seed, warmup included")
    common.add_argument("--warmup", type=int, default=100_000)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--tol-profile", choices=sorted(TOLERANCE_PROFILES), default="strict")
    common.add_argument("--cache", type=Path, help="directory caching analytic fixed points")
    common.add_argument("--csf-rule", choices=("inflight", "backoff_only"), default="inflight")

    sub.add_parser("analyze", parents=[common], help="analytic fixed point per cell")
    sub.add_parser("simulate", parents=[common], help="slot-level simulation per cell")
    sub.add_parser("compare", parents=[common], help="both engines plus compare.csv")
    sweep = sub.add_parser("sweep", parents=[common], help="grid over T_WiFi x RSF x n_sf")
    sweep.add_argument("--engines", type=_csv_list, default=["analytic"])
    collided = sub.add_parser("collided-table", aliases=["table4"], parents=[common],
                              help="collided subframes per MCOT, 8 ms")
    collided.add_argument("--engines", type=_csv_list, default=list(ENGINES))
    sub.add_parser("z2-table", aliases=["table5"], parents=[common], help="simulated z2 grid")
    fig = sub.add_parser("figure", help="figure data from a previous run's CSVs")
    fig.add_argument("name", choices=sorted(FIGURES) + sorted(FIGURE_ALIASES) + ["all"])
    fig.add_argument("--results", type=Path, required=True, help="directory of family CSVs")
    fig.add_argument("--out", type=Path, default=None)
    return parser


def _base_config(args) -> SystemConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    overrides = coerce_config_fields(overrides)
    if args.config:
        return load_config(args.config, **overrides)
    return class4_preset(8, "first", 54).replace(**overrides)


def _seeds(args) -> tuple[int, ...]:
    if args.seed_list:
        return tuple(int(s) for s in args.seed_list)
    return tuple(range(1, (args.seeds or 1) + 1))


COMMAND_ALIASES = {"table4": "collided-table", "table5": "z2-table"}


def spec_from_args(args) -> tuple[ExperimentSpec, tuple[str, ...]]:
    command = COMMAND_ALIASES.get(args.command, args.command)
    base = _base_config(args)
    axes = {
        "t_wifi": tuple(float(t) for t in args.t_wifi) if args.t_wifi else (),
        "rsf": tuple(args.rsf) if args.rsf else (),
        "n_sf": tuple(int(n) for n in args.n_sf) if args.n_sf else (),
    }
    extra: tuple[str, ...] = ()
    mode = command
    engines: tuple[str, ...] = {"analyze": ("analytic",), "simulate": ("simulation",),
                                "compare": ENGINES}.get(command, ())
    if command == "sweep":
        engines = tuple(args.engines)
        axes = {"t_wifi": axes["t_wifi"] or tuple(map(float, DEFAULT_T_WIFI)),
                "rsf": axes["rsf"] or ("1", "last"), "n_sf": axes["n_sf"] or (8, 10)}
    elif command == "collided-table":
        mode, engines, extra = "sweep", tuple(args.engines), ("collided-table",)
        axes = {"t_wifi": axes["t_wifi"] or tuple(map(float, DEFAULT_T_WIFI)), "rsf": ("1", "last"), "n_sf": (8,)}
    elif command == "z2-table":
        mode, engines, extra = "sweep", ("simulation",), ("z2-table",)
        axes = {"t_wifi": axes["t_wifi"] or tuple(map(float, DEFAULT_T_WIFI)),
                "rsf": ("1", "last"), "n_sf": axes["n_sf"] or (8, 10)}
    spec = ExperimentSpec(
        mode=mode, base=base, engines=engines, seeds=_seeds(args), total_slots=args.slots,
        warmup_slots=args.warmup, out=args.out, tol_profile=args.tol_profile, cache=args.cache,
        jobs=args.jobs, csf_rule=args.csf_rule, **axes,
    )
    return spec, extra


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.command == "figure":
            rows = read_result_rows(args.results)
            names = sorted(FIGURES) if args.name == "all" else [args.name]
            for name in names:
                for path in emit_figure_data(rows, name, args.out or args.results / "figures"):
                    print(path)
            return 0
        spec, extra = spec_from_args(args)
        result = run_experiment(spec, extra)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in result.paths:
        print(path)
    if result.status == 2:
        failed = [c for c in result.comparisons if c.passed is False]
        print(f"{len(failed)} comparison cell(s) outside tolerance", file=sys.stderr)
    elif result.status == 1:
        print("some cells failed to run; see manifest.json", file=sys.stderr)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
