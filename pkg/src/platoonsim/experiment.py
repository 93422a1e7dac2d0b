"""Monte Carlo sweeps over algorithm x market penetration rate."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SimConfig, SweepPlan, config_hash, config_to_dict
from .engine import CrashRecord, run_iteration
from .scenario import derive_seed, sample_scenario

__all__ = [
    "SweepPlan", "Histogram", "AggregateMetrics", "CellResult", "SweepResult", "SweepError",
    "histogram_energy", "aggregate_metrics", "run_cell", "run_sweep", "write_outputs",
]


class SweepError(RuntimeError):
    def __init__(self, message: str, algorithm: str, mpr: float, iteration: int, seed: int):
        super().__init__(f"{message} (algorithm={algorithm}, mpr={mpr}, iteration={iteration}, seed={seed})")
        self.algorithm = algorithm
        self.mpr = mpr
        self.iteration = iteration
        self.seed = seed


@dataclass
class Histogram:
    edges: list[float]
    counts: list[int]

    @property
    def total(self) -> int:
        return int(sum(self.counts))


def histogram_energy(values, bins: int = 20) -> Histogram:
    """Fixed-width histogram over [0, max]. Accepts CrashRecords or floats.

    The last bin is closed on the right, so the maximum lands in it.
    """
    vals = sorted(float(getattr(v, "e_loss", v)) for v in values)
    if not vals:
        return Histogram([], [])
    hi = vals[-1]
    if hi / bins <= 0.0:  # all zero, or a subnormal maximum
        hi = 1.0
    width = hi / bins
    edges = [width * k for k in range(bins)] + [hi]
    counts = [0] * bins
    for v in vals:
        k = int(v / width) if v < hi else bins - 1
        # float division can land one bin off near an edge
        while k > 0 and v < edges[k]:
            k -= 1
        while k < bins - 1 and v >= edges[k + 1]:
            k += 1
        counts[k] += 1
    return Histogram(edges, counts)


@dataclass
class AggregateMetrics:
    iterations: int
    n_crashes: int
    crash_count_by_position: dict[int, int]
    crash_rate_per_pair: float
    crash_rate_stderr: float
    iteration_crash_fraction: float
    total_e_loss: float
    mean_e_loss_per_iteration: float
    mean_e_loss_per_crash: float
    e_loss_histogram: Histogram

    def to_json(self) -> dict:
        d = asdict(self)
        d["crash_count_by_position"] = {str(k): v for k, v in self.crash_count_by_position.items()}
        return d


def aggregate_metrics(records, iterations: int, n_vehicles: int, bins: int = 20) -> AggregateMetrics:
    """Fold crash records from ``iterations`` completed episodes.

    A crash of pair (i-1, i) is attributed to position i, the striking car.
    Energies are summed in a canonical order so the result does not depend
    on record order.
    """
    records = sorted(records, key=lambda r: (r.iteration, r.tick, r.pair))
    by_pos = {p: 0 for p in range(2, n_vehicles + 1)}
    for r in records:
        by_pos[r.position] += 1
    n = len(records)
    pairs = iterations * (n_vehicles - 1)
    rate = n / pairs if pairs else 0.0
    stderr = math.sqrt(rate * (1.0 - rate) / pairs) if pairs else 0.0
    hit_iters = len({r.iteration for r in records})
    total_e = float(math.fsum(r.e_loss for r in records))
    return AggregateMetrics(
        iterations=iterations,
        n_crashes=n,
        crash_count_by_position=by_pos,
        crash_rate_per_pair=rate,
        crash_rate_stderr=stderr,
        iteration_crash_fraction=hit_iters / iterations if iterations else 0.0,
        total_e_loss=total_e,
        mean_e_loss_per_iteration=total_e / iterations if iterations else 0.0,
        mean_e_loss_per_crash=total_e / n if n else 0.0,
        e_loss_histogram=histogram_energy(records, bins),
    )


@dataclass
class CellResult:
    algorithm: str
    mpr: float
    iterations: int
    crashes: list[CrashRecord]
    metrics: AggregateMetrics


@dataclass
class SweepResult:
    plan: SweepPlan
    config: SimConfig
    cells: dict[tuple[str, float], CellResult] = field(default_factory=dict)

    def metrics(self, algorithm: str, mpr: float) -> AggregateMetrics:
        return self.cells[(algorithm, mpr)].metrics


def _run_chunk(config: SimConfig, algorithm: str, mpr: float, root_seed: int, its) -> list[CrashRecord]:
    out = []
    for it in its:
        seed = derive_seed(root_seed, mpr, it)
        try:
            scenario = sample_scenario(config, mpr, seed)
            result = run_iteration(scenario, algorithm, config, iteration=it)
        except Exception as exc:
            raise SweepError(f"iteration failed: {exc!r}", algorithm, mpr, it, seed) from exc
        out.extend(result.crashes)
    return out


def _chunks(n: int, size: int):
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("PLATOONSIM_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def run_cell(config: SimConfig, algorithm: str, mpr: float, iterations: int, root_seed: int = 0,
             bins: int = 20, threads: int | None = 1) -> CellResult:
    plan = SweepPlan(algorithms=(algorithm,), mpr_grid=(mpr,), iterations=iterations,
                     tked_iterations=iterations, seed=root_seed, histogram_bins=bins)
    return run_sweep(plan, config, threads=threads).cells[(algorithm, mpr)]


def run_sweep(plan: SweepPlan, config: SimConfig | None = None, threads: int | None = None,
              chunk_size: int = 25) -> SweepResult:
    """Execute every (algorithm, mpr) cell of the plan.

    Iteration ``k`` of a cell uses ``derive_seed(plan.seed, mpr, k)``, so
    the result is independent of thread count and scheduling.
    """
    config = config or SimConfig()
    threads = resolve_threads(threads)
    units = []
    for algo in plan.algorithms:
        for mpr in plan.mpr_grid:
            for its in _chunks(plan.iterations_for(algo), chunk_size):
                units.append((algo, mpr, its))

    def work(unit):
        algo, mpr, its = unit
        return _run_chunk(config, algo, mpr, plan.seed, its)

    if threads == 1:
        outputs = [work(u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(work, units))

    result = SweepResult(plan, config)
    collected: dict[tuple[str, float], list[CrashRecord]] = {}
    for (algo, mpr, _), recs in zip(units, outputs):
        collected.setdefault((algo, mpr), []).extend(recs)
    for algo in plan.algorithms:
        for mpr in plan.mpr_grid:
            recs = sorted(collected.get((algo, mpr), []), key=lambda r: (r.iteration, r.tick, r.pair))
            iters = plan.iterations_for(algo)
            metrics = aggregate_metrics(recs, iters, config.n_vehicles, plan.histogram_bins)
            result.cells[(algo, mpr)] = CellResult(algo, mpr, iters, recs, metrics)
    return result


# --- output files ----------------------------------------------------------------

CRASH_COLUMNS = ["algorithm", "mpr", "seed", "iteration", "pair_front", "pair_rear", "tick",
                 "v_front_before", "v_rear_before", "v_front_after", "v_rear_after", "e_loss"]


def _stamp(config: SimConfig, plan: SweepPlan) -> dict:
    return {"version": __version__, "config_sha256": config_hash(config, plan), "seed": plan.seed}


def _csv_text(stamp: dict, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"# platoonsim {stamp['version']} config_sha256={stamp['config_sha256']} seed={stamp['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def render_outputs(result: SweepResult) -> dict[str, str]:
    """Relative path -> file contents for every sweep output."""
    plan, config = result.plan, result.config
    stamp = _stamp(config, plan)
    cells = [result.cells[(a, m)] for a in plan.algorithms for m in plan.mpr_grid]

    crash_rows = []
    for cell in cells:
        for r in cell.crashes:
            crash_rows.append([cell.algorithm, cell.mpr, derive_seed(plan.seed, cell.mpr, r.iteration),
                               r.iteration, r.pair[0], r.pair[1], r.tick, *r.v_before, *r.v_after, r.e_loss])

    agg = {
        "meta": {**stamp, "config": config_to_dict(config, plan)},
        "cells": [{"algorithm": c.algorithm, "mpr": c.mpr, "metrics": c.metrics.to_json()} for c in cells],
    }

    pos_rows, rate_rows, energy_rows, hist_rows = [], [], [], []
    for c in cells:
        m = c.metrics
        for p, count in m.crash_count_by_position.items():
            pos_rows.append([c.algorithm, c.mpr, p, count])
        rate_rows.append([c.algorithm, c.mpr, m.iterations, m.n_crashes, m.crash_rate_per_pair,
                          m.crash_rate_stderr, m.iteration_crash_fraction])
        energy_rows.append([c.algorithm, c.mpr, m.total_e_loss, m.mean_e_loss_per_iteration,
                            m.mean_e_loss_per_crash])
        h = m.e_loss_histogram
        for k, count in enumerate(h.counts):
            hist_rows.append([c.algorithm, c.mpr, k, h.edges[k], h.edges[k + 1], count])

    return {
        "crashes.csv": _csv_text(stamp, CRASH_COLUMNS, crash_rows),
        "aggregates.json": json.dumps(agg, indent=2, sort_keys=True) + "\n",
        "plotdata/crash_by_position.csv": _csv_text(stamp, ["algorithm", "mpr", "position", "crashes"], pos_rows),
        "plotdata/crash_rate.csv": _csv_text(
            stamp, ["algorithm", "mpr", "iterations", "crashes", "crash_rate_per_pair",
                    "crash_rate_stderr", "iteration_crash_fraction"], rate_rows),
        "plotdata/energy_loss.csv": _csv_text(
            stamp, ["algorithm", "mpr", "total_e_loss", "mean_e_loss_per_iteration",
                    "mean_e_loss_per_crash"], energy_rows),
        "plotdata/energy_histogram.csv": _csv_text(
            stamp, ["algorithm", "mpr", "bin", "e_lo", "e_hi", "count"], hist_rows),
    }


def write_outputs(result: SweepResult, out_dir: str | Path) -> list[Path]:
    """Write all outputs atomically: files are staged and moved into place
    only once every one of them rendered successfully."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = render_outputs(result)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    try:
        for rel, text in files.items():
            path = staging / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        written = []
        for rel in files:
            dest = out_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(staging / rel, dest)
            written.append(dest)
        return written
    finally:
        shutil.rmtree(staging, ignore_errors=True)
