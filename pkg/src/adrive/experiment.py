"""Volume x size x protocol sweeps written to one CSV, optionally in parallel."""

from __future__ import annotations

import csv
import itertools
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

from .config import PROTOCOL_NAMES, SimConfig
from .sim import SafetyViolation, Simulation

DEFAULT_VOLUMES = (200, 400, 600, 800)
DEFAULT_SIZES = (10, 40, 70, 100)
DEFAULT_REPS = 10

# the first nine columns are the documented results format; the rest back
# the liveness checks and make failed cells visible
COLUMNS = (
    "protocol",
    "volume",
    "size",
    "seed",
    "avg_delay_s",
    "worst_delay_s",
    "deadlocks",
    "mean_resolution_s",
    "collisions",
    "completed",
    "incomplete",
    "unresolved",
    "over_bound",
    "max_stall_s",
    "error",
)
FLOAT_COLUMNS = ("avg_delay_s", "worst_delay_s", "mean_resolution_s", "max_stall_s")
INT_COLUMNS = ("volume", "seed", "deadlocks", "collisions", "completed", "incomplete", "unresolved", "over_bound")


class Cell(NamedTuple):
    protocol: str
    volume: float
    size: float
    seed: int


def cells(
    volumes: Sequence[float],
    sizes: Sequence[float],
    protocols: Sequence[str] = PROTOCOL_NAMES,
    reps: int = DEFAULT_REPS,
    base_seed: int = 0,
) -> list[Cell]:
    """Every run of the sweep, in output order.

    Both protocols share the seed of a (volume, size, rep) cell, so they see
    the same arrivals.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    out = []
    for index, (volume, size, rep) in enumerate(itertools.product(volumes, sizes, range(reps))):
        for protocol in protocols:
            out.append(Cell(protocol, volume, size, base_seed + index))
    return out


def cell_config(base: SimConfig, cell: Cell) -> SimConfig:
    scene = base.scene
    if isinstance(scene, str) or "generator" not in scene or scene["generator"].get("kind") != "single_track":
        raise ValueError("sweeps vary the section length, so the base scene must use the single_track generator")
    gen = {**scene["generator"], "length_m": float(cell.size)}
    return base.replace(
        scene={**scene, "generator": gen},
        protocol=cell.protocol,
        volume_vph=float(cell.volume),
        seed=cell.seed,
        abort_on_collision=False,
    )


def _fmt(x: float) -> str:
    return "" if x is None or math.isnan(x) else f"{x:.4f}"


def run_cell(base: SimConfig, cell: Cell) -> dict[str, str]:
    row = {k: "" for k in COLUMNS}
    row.update(protocol=cell.protocol, volume=f"{cell.volume:g}", size=f"{cell.size:g}", seed=str(cell.seed))
    try:
        result = Simulation(cell_config(base, cell)).run()
    except (SafetyViolation, ValueError, RuntimeError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")[:300]
        return row
    over = [s for s in result.stalls if s[2] > s[3]]
    row.update(
        avg_delay_s=_fmt(result.average_delay),
        worst_delay_s=_fmt(result.worst_delay),
        deadlocks=str(result.deadlocks),
        mean_resolution_s=_fmt(result.mean_resolution),
        collisions=str(result.collisions),
        completed=str(result.completed),
        incomplete=str(result.incomplete),
        unresolved=str(len(result.unresolved)),
        over_bound=str(len(over)),
        max_stall_s=_fmt(max((s[2] for s in result.stalls), default=0.0)),
    )
    return row


def _run_packed(args):
    return run_cell(*args)


def run_matrix(
    base: SimConfig,
    volumes: Sequence[float] = DEFAULT_VOLUMES,
    sizes: Sequence[float] = DEFAULT_SIZES,
    protocols: Sequence[str] = PROTOCOL_NAMES,
    reps: int = DEFAULT_REPS,
    out: str | Path | None = None,
    jobs: int = 1,
    base_seed: int | None = None,
    progress: Callable[[int, int, dict], None] | None = None,
) -> list[dict[str, str]]:
    """Run the sweep; rows reach ``out`` in cell order as soon as they are known."""
    todo = cells(volumes, sizes, protocols, reps, base.seed if base_seed is None else base_seed)
    if todo:
        cell_config(base, todo[0])  # fail before writing anything
    rows: list[dict[str, str]] = []
    fh = open(out, "w", newline="") if out is not None else None
    try:
        writer = None
        if fh is not None:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
            writer.writeheader()
            fh.flush()
        work = ((base, c) for c in todo)
        if jobs > 1:
            pool = ProcessPoolExecutor(max_workers=jobs)
            results: Iterable[dict] = pool.map(_run_packed, work)
        else:
            pool = None
            results = map(_run_packed, work)
        try:
            for i, row in enumerate(results):
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
                if progress is not None:
                    progress(i + 1, len(todo), row)
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    finally:
        if fh is not None:
            fh.close()
    return rows


def read_results(path: str | Path) -> list[dict]:
    """Load a results CSV with numeric columns converted; blanks become NaN."""
    out = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = dict(raw)
            for k in FLOAT_COLUMNS:
                row[k] = float(raw[k]) if raw.get(k) else math.nan
            for k in INT_COLUMNS:
                row[k] = int(float(raw[k])) if raw.get(k) else 0
            row["size"] = float(raw["size"])
            out.append(row)
    return out


class CellSummary(NamedTuple):
    runs: int
    errors: int
    avg_delay_s: float
    worst_delay_s: float
    deadlocks: float
    collisions: int


def summarize(rows: Iterable[dict]) -> dict[tuple[str, int, float], CellSummary]:
    """Mean over seeds per (protocol, volume, size); numeric rows as from read_results."""
    groups: dict[tuple[str, int, float], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["protocol"], int(r["volume"]), float(r["size"])), []).append(r)
    out = {}
    for key in sorted(groups):
        g = groups[key]
        ok = [r for r in g if not r["error"] and not math.isnan(r["avg_delay_s"])]
        mean = lambda k: statistics.fmean(r[k] for r in ok) if ok else math.nan  # noqa: E731
        out[key] = CellSummary(len(g), len(g) - len(ok), mean("avg_delay_s"), mean("worst_delay_s"), mean("deadlocks"), sum(r["collisions"] for r in g))
    return out


def by_volume(summary: dict, protocol: str, size: float | None = None) -> dict[int, tuple[float, float]]:
    """Mean average and worst delay per volume, pooled over sizes unless one is given."""
    acc: dict[int, list[CellSummary]] = {}
    for (proto, volume, sz), s in summary.items():
        if proto == protocol and (size is None or sz == size):
            acc.setdefault(volume, []).append(s)
    return {
        v: (statistics.fmean(s.avg_delay_s for s in ss), statistics.fmean(s.worst_delay_s for s in ss))
        for v, ss in sorted(acc.items())
    }
