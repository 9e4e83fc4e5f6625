"""Suites of runs and density estimates over a range of variable counts.

Output is a CSV with a fixed column set (see ``CSV_COLUMNS``) plus a JSON
manifest holding the full spec, per-job seeds, timings and failures.  Each
``(v, protocol)`` job gets one row.  When both a generation median and the
matching density exist for some ``v``, an extra ``k-table`` row carries all
of them together with ``K = G * sqrt(D)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .density import (
    DensityBudgetExceeded,
    LengthDistribution,
    estimate_conditional_density,
    estimate_density,
    working_length_distribution,
)
from .evolution import SINGLE_METRIC, TWO_PHASE, EvolutionConfig, run_experiment

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("v", "metric", "protocol", "G1", "G2", "G2prime", "D1", "D2", "D2prime",
               "K1", "K2", "K2prime", "evolutions", "min_hits", "seed")

DENSITY_PROTOCOLS = ("density-d1", "density-d2", "density-d2prime")
ALL_PROTOCOLS = (TWO_PHASE, SINGLE_METRIC) + DENSITY_PROTOCOLS
K_TABLE = "k-table"

# which (G, D) columns combine into each K column
K_PAIRS = {"K1": ("G1", "D1"), "K2": ("G2", "D2"), "K2prime": ("G2", "D2prime")}


def compute_k(G: float, D: float) -> float:
    """Generation median times the square root of the density."""
    if D <= 0:
        raise ValueError("density must be positive")
    if G < 0:
        raise ValueError("generation count must be non-negative")
    return G * math.sqrt(D)


@dataclass(frozen=True)
class ConstancyRow:
    v: int
    G: float
    D: float
    which: str
    K: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "K", compute_k(self.G, self.D))


@dataclass(frozen=True)
class ExperimentSpec:
    command: str = "suite"
    v_range: tuple[int, int] = (2, 4)
    metric: str = "f2"
    protocols: tuple[str, ...] = ALL_PROTOCOLS
    evolutions: int = 30
    # None: 100 at v=2 for D1 and D2', 30 everywhere else
    min_hits: Optional[int] = None
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None
    format: str = "csv"
    population: int = 1000
    tournament: int = 7
    mutation_prob: float = 0.2
    steady_gens: int = 10
    max_generations: int = 20000
    n_working: int = 30
    length_passes: int = 1
    batch_size: int = 20000
    max_samples: Optional[int] = None
    resume: bool = False
    verbose: bool = False

    def __post_init__(self):
        lo, hi = self.v_range
        if not 1 <= lo <= hi:
            raise ValueError("variable range must satisfy 1 <= A <= B")
        if self.metric not in ("f2", "f3"):
            raise ValueError(f"unknown metric {self.metric!r}")
        bad = [p for p in self.protocols if p not in ALL_PROTOCOLS]
        if bad or not self.protocols:
            raise ValueError(f"unknown protocol {', '.join(bad) or '(none)'}")
        if self.evolutions < 1:
            raise ValueError("evolutions must be at least 1")
        if self.min_hits is not None and self.min_hits < 1:
            raise ValueError("min-hits must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.format not in ("csv", "json"):
            raise ValueError(f"unknown format {self.format!r}")

    @property
    def vs(self) -> range:
        return range(self.v_range[0], self.v_range[1] + 1)

    def config(self, v: int, seed: int) -> EvolutionConfig:
        return EvolutionConfig(
            v=v, population_size=self.population, tournament_size=self.tournament,
            mutation_probability=self.mutation_prob,
            steady_state_generations=self.steady_gens, second_metric=self.metric,
            max_generations=self.max_generations, seed=seed)

    def hits_for(self, v: int, protocol: str) -> int:
        if self.min_hits is not None:
            return self.min_hits
        return 100 if v == 2 and protocol in ("density-d1", "density-d2prime") else 30

    def to_dict(self) -> dict:
        return asdict(self)


def job_seed(master: int, v: int, label: str) -> int:
    """Seed for one job, a function of the master seed, v and the job label only."""
    tag = int.from_bytes(label.encode(), "little") % (2**32)
    return int(np.random.SeedSequence([master, v, tag]).generate_state(1)[0])


def _fmt_g(x: Optional[float]) -> str:
    return "" if x is None else f"{x:g}"


def _fmt_d(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.3e}"


def _fmt_k(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.4g}"


_FORMATTERS = {"G1": _fmt_g, "G2": _fmt_g, "G2prime": _fmt_g,
               "D1": _fmt_d, "D2": _fmt_d, "D2prime": _fmt_d,
               "K1": _fmt_k, "K2": _fmt_k, "K2prime": _fmt_k}


def format_row(row: dict) -> dict[str, str]:
    out = {}
    for col in CSV_COLUMNS:
        val = row.get(col)
        fmt = _FORMATTERS.get(col)
        out[col] = fmt(val) if fmt else ("" if val is None else str(val))
    return out


def _run_v(spec: ExperimentSpec, v: int):
    """All selected protocols for one v; returns (rows, manifest entries)."""
    rows, entries = [], []
    dist: Optional[LengthDistribution] = None
    values: dict[str, float] = {}
    for protocol in spec.protocols:
        seed = job_seed(spec.seed, v, protocol)
        entry = {"v": v, "protocol": protocol, "seed": seed}
        row = {"v": v, "metric": spec.metric, "protocol": protocol, "seed": spec.seed}
        start = time.perf_counter()
        try:
            if protocol in (TWO_PHASE, SINGLE_METRIC):
                summary = run_experiment(spec.config(v, seed), spec.evolutions, protocol,
                                         verbose=spec.verbose)
                row.update(G1=summary.G1, G2=summary.G2, G2prime=summary.G2_prime,
                           evolutions=spec.evolutions)
                entry["capped"] = summary.capped
            else:
                if dist is None:
                    lseed = job_seed(spec.seed, v, "lengths")
                    dist = working_length_distribution(
                        spec.config(v, lseed), spec.n_working, np.random.default_rng(lseed),
                        passes=spec.length_passes, batch_size=spec.batch_size)
                entry["length_distribution"] = dist.to_dict()
                hits = spec.hits_for(v, protocol)
                rng = np.random.default_rng(seed)
                common = dict(min_hits=hits, rng=rng, batch_size=spec.batch_size,
                              max_samples=spec.max_samples)
                if protocol == "density-d2prime":
                    est = estimate_conditional_density(dist, v, **common)
                    row["D2prime"] = est.density
                else:
                    pred = "f1" if protocol == "density-d1" else "f2"
                    est = estimate_density(pred, dist, v, **common)
                    row["D1" if pred == "f1" else "D2"] = est.density
                row["min_hits"] = hits
                entry.update(hits=est.hits, samples=est.samples, ci=[est.ci_low, est.ci_high])
        except (DensityBudgetExceeded, RuntimeError, ValueError) as exc:
            entry["error"] = str(exc)
            log.warning("v=%d %s failed: %s", v, protocol, exc)
        entry["seconds"] = round(time.perf_counter() - start, 3)
        entries.append(entry)
        if "error" not in entry:
            rows.append(row)
            for col in ("G1", "G2", "G2prime", "D1", "D2", "D2prime"):
                if row.get(col) is not None:
                    values[col] = row[col]

    k_row = {"v": v, "metric": spec.metric, "protocol": K_TABLE, "seed": spec.seed}
    k_row.update(values)
    have_k = False
    for k_col, (g_col, d_col) in K_PAIRS.items():
        if g_col in values and d_col in values and values[d_col] > 0:
            k_row[k_col] = compute_k(values[g_col], values[d_col])
            have_k = True
    if have_k:
        rows.append(k_row)
    return rows, entries


def _csv_text(rows: list[dict], header: bool) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    if header:
        writer.writeheader()
    for row in rows:
        writer.writerow(format_row(row))
    return buf.getvalue()


def _done_vs(path: Path) -> set[int]:
    if not path.exists():
        return set()
    with path.open() as fh:
        return {int(r["v"]) for r in csv.DictReader(fh)}


def run_suite(spec: ExperimentSpec) -> list[dict]:
    """Execute the suite, writing CSV (flushed per v) and a JSON manifest.

    With ``spec.resume`` the values of v already present in the CSV are
    skipped.  Returns the rows produced in this call.
    """
    out = Path(spec.out or os.environ.get("SORTGP_OUT", "results"))
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    manifest_path = out / "manifest.json"

    done = _done_vs(csv_path) if spec.resume else set()
    todo = [v for v in spec.vs if v not in done]
    if not spec.resume or not csv_path.exists():
        csv_path.write_text(_csv_text([], header=True))

    manifest = {
        "schema_version": CSV_SCHEMA_VERSION,
        "software": {"sortgp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "spec": spec.to_dict(),
        "jobs": [],
    }
    if spec.resume and manifest_path.exists():
        manifest["jobs"] = json.loads(manifest_path.read_text()).get("jobs", [])

    all_rows: list[dict] = []
    started = time.perf_counter()

    def record(rows, entries):
        with csv_path.open("a") as fh:
            fh.write(_csv_text(rows, header=False))
        manifest["jobs"].extend(entries)
        manifest["seconds"] = round(time.perf_counter() - started, 3)
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        all_rows.extend(rows)

    if spec.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for rows, entries in pool.map(_run_v, [spec] * len(todo), todo):
                record(rows, entries)
    else:
        for v in todo:
            record(*_run_v(spec, v))

    if spec.format == "json":
        (out / "results.json").write_text(json.dumps(all_rows, indent=2, sort_keys=True))
    return all_rows


def audit_rows(rows: list[dict[str, str]], rel_tol: float = 2e-3) -> list[str]:
    """Recompute every K column from its G and D columns; return mismatches.

    Tolerance allows for the rounding of printed values.
    """
    problems = []
    for i, row in enumerate(rows):
        for k_col, (g_col, d_col) in K_PAIRS.items():
            if not row.get(k_col):
                continue
            if not row.get(g_col) or not row.get(d_col):
                problems.append(f"row {i}: {k_col} present without {g_col} and {d_col}")
                continue
            expect = compute_k(float(row[g_col]), float(row[d_col]))
            got = float(row[k_col])
            if not math.isclose(got, expect, rel_tol=rel_tol, abs_tol=1e-12):
                problems.append(f"row {i} (v={row.get('v')}): {k_col}={got} but "
                                f"{g_col}*sqrt({d_col})={expect:.6g}")
    return problems


def audit_csv(path: str | os.PathLike) -> list[str]:
    with open(path, newline="") as fh:
        return audit_rows(list(csv.DictReader(fh)))
