"""Front quality metrics, cross-run merging, and result export.

Objective convention throughout: f1 (communication fraction) is minimized,
f2 (accuracy) is maximized, both live in [0, 1], and the hypervolume
reference point (1.0, 0.0) is the worst corner of that box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .objectives import Bounds, Genome

HV_REFERENCE = (1.0, 0.0)


@dataclass(frozen=True)
class ParetoPoint:
    comm: float
    accuracy: float
    genome: Genome
    run_id: int
    generation: int

    def as_pair(self) -> tuple[float, float]:
        return (self.comm, self.accuracy)


def pareto_filter(points: Sequence[tuple[float, ...]], directions: Sequence[int] = (1, -1)) -> list[int]:
    """Indices of points not strictly dominated by any other point.

    Duplicates do not dominate each other, so every copy of a non-dominated
    point survives.
    """
    arr = np.asarray([[d * v for d, v in zip(directions, p)] for p in points], np.float64)
    keep = []
    for i in range(len(arr)):
        no_worse = (arr <= arr[i]).all(axis=1)
        strictly_better = (arr < arr[i]).any(axis=1)
        if not (no_worse & strictly_better).any():
            keep.append(i)
    return keep


def hypervolume(points: Sequence[tuple[float, float]], reference: tuple[float, float] = HV_REFERENCE) -> float:
    """Area dominated by the front within the reference box.

    The front is swept by ascending f1; each point contributes the rectangle
    from the reference f1 back to its own, over the f2 span it adds above the
    running ceiling. Dominated input points are filtered first and contribute
    nothing; a point strictly outside the reference box is an error.
    """
    f1_ref, f2_ref = reference
    for p in points:
        if p[0] > f1_ref or p[1] < f2_ref:
            raise ValueError(f"point {tuple(p)} lies outside the reference box {reference}")
    if not points:
        return 0.0
    keep = pareto_filter([(p[0], p[1]) for p in points])
    front = sorted({(points[i][0], points[i][1]) for i in keep})
    area = 0.0
    ceiling = f2_ref
    for f1, f2 in front:
        if f2 > ceiling:
            area += (f1_ref - f1) * (f2 - ceiling)
            ceiling = f2
    return area


def merge_pseudo_optimal(runs: Sequence[Sequence[ParetoPoint]]) -> list[ParetoPoint]:
    """Non-dominated filter over the union of all runs' points, provenance kept."""
    if not runs:
        raise ValueError("need at least one run to merge")
    union = [p for run in runs for p in run]
    keep = pareto_filter([p.as_pair() for p in union])
    merged = [union[i] for i in keep]
    merged.sort(key=lambda p: (p.comm, p.accuracy, p.run_id))
    return merged


def best_accuracy_point(front: Sequence[ParetoPoint]) -> ParetoPoint:
    return max(front, key=lambda p: (p.accuracy, -p.comm))


def lowest_comm_point(front: Sequence[ParetoPoint]) -> ParetoPoint:
    return min(front, key=lambda p: (p.comm, -p.accuracy))


def elbow_point(front: Sequence[ParetoPoint]) -> ParetoPoint:
    """Front member farthest from the chord joining the front's extreme points."""
    ordered = sorted(front, key=lambda p: (p.comm, p.accuracy))
    a = lowest_comm_point(front).as_pair()
    b = best_accuracy_point(front).as_pair()
    chord = np.hypot(b[0] - a[0], b[1] - a[1])
    if chord == 0.0:
        return ordered[0]
    best, best_dist = ordered[0], -1.0
    for p in ordered:
        dist = abs((b[0] - a[0]) * (a[1] - p.accuracy) - (a[0] - p.comm) * (b[1] - a[1])) / chord
        if dist > best_dist:
            best, best_dist = p, dist
    return best


FRONT_KINDS = ("best_accuracy", "elbow", "lowest_comm")

_SELECTORS = {
    "best_accuracy": best_accuracy_point,
    "elbow": elbow_point,
    "lowest_comm": lowest_comm_point,
}


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(int(value))


def pareto_header(n_layers: int) -> str:
    mus = ",".join(f"mu_{i + 1}" for i in range(n_layers))
    bs = ",".join(f"b_{i + 1}" for i in range(n_layers))
    return f"run,gen,f1,f2,m,E,{mus},{bs}"


def write_pareto_csv(path, points: Sequence[ParetoPoint], n_layers: int) -> None:
    lines = [pareto_header(n_layers)]
    for p in points:
        fields = [p.run_id, p.generation, p.comm, p.accuracy, *p.genome.to_vector()]
        lines.append(",".join(_fmt(v) for v in fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_pareto_csv(path) -> list[ParetoPoint]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    points = []
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        run_id, gen = int(cells[0]), int(cells[1])
        f1, f2 = float(cells[2]), float(cells[3])
        genome = Genome.from_vector([int(c) for c in cells[4:]])
        points.append(ParetoPoint(f1, f2, genome, run_id, gen))
    return points


HV_HEADER = "gen,hv,evals,hv_archive"


def write_hypervolume_csv(path, rows: Sequence[tuple[int, float, int, float]]) -> None:
    lines = [HV_HEADER]
    for gen, hv, evals, hv_archive in rows:
        lines.append(f"{gen},{_fmt(hv)},{evals},{_fmt(hv_archive)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_hypervolume_csv(path) -> list[tuple[int, float, int, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        gen, hv, evals, hv_archive = line.split(",")
        rows.append((int(gen), float(hv), int(evals), float(hv_archive)))
    return rows


def genome_stats_rows(run_fronts: Sequence[Sequence[ParetoPoint]], bounds: Bounds) -> list[tuple]:
    """Quartiles of normalized genome coordinates of each run's selected points.

    For every selection kind (best accuracy, elbow, lowest communication) the
    chosen genome of each run is normalized coordinate-wise to [0, 1] by the
    search bounds; rows carry (kind, coordinate, q1, median, q3).
    """
    ranges = bounds.coordinate_ranges()
    names = bounds.coordinate_names()
    rows = []
    for kind in FRONT_KINDS:
        chosen = [_SELECTORS[kind](front) for front in run_fronts if front]
        if not chosen:
            continue
        matrix = np.array([p.genome.to_vector() for p in chosen], np.float64)
        for col, (name, (lo, hi)) in enumerate(zip(names, ranges)):
            span = hi - lo
            values = (matrix[:, col] - lo) / span if span else np.zeros(len(chosen))
            q1, med, q3 = np.percentile(values, [25, 50, 75])
            rows.append((kind, name, float(q1), float(med), float(q3)))
    return rows


GENOME_STATS_HEADER = "kind,coord,q1,median,q3"


def write_genome_stats_csv(path, rows: Sequence[tuple]) -> None:
    lines = [GENOME_STATS_HEADER]
    for kind, coord, q1, med, q3 in rows:
        lines.append(f"{kind},{coord},{_fmt(q1)},{_fmt(med)},{_fmt(q3)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def build_summary(
    run_fronts: Sequence[Sequence[ParetoPoint]],
    merged: Sequence[ParetoPoint],
    hv_tables: Sequence[Sequence[tuple[int, float, int, float]]],
    manifest: dict,
) -> dict:
    per_run = []
    for k, (front, hv_rows) in enumerate(zip(run_fronts, hv_tables), start=1):
        entry = {
            "run": k,
            "front_size": len(front),
            "best_f2": max((p.accuracy for p in front), default=0.0),
            "min_f1": min((p.comm for p in front), default=1.0),
        }
        if hv_rows:
            entry["final_hv"] = hv_rows[-1][1]
            entry["final_hv_archive"] = hv_rows[-1][3]
            entry["evaluations"] = hv_rows[-1][2]
        per_run.append(entry)
    return {
        "config": manifest,
        "runs": len(run_fronts),
        "merged_front_size": len(merged),
        "best_f2": max((p.accuracy for p in merged), default=0.0),
        "min_f1": min((p.comm for p in merged), default=1.0),
        "per_run": per_run,
    }


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )


def export_campaign(
    out_dir,
    run_fronts: Sequence[Sequence[ParetoPoint]],
    hv_tables: Sequence[Sequence[tuple[int, float, int, float]]],
    bounds: Bounds,
    manifest: dict,
) -> dict:
    """Write per-run fronts, hypervolume traces, the merged front, genome
    statistics, and summary.json into out_dir. Returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_layers = bounds.n_layers
    for k, front in enumerate(run_fronts, start=1):
        write_pareto_csv(out / f"pareto_run{k}.csv", front, n_layers)
    for k, rows in enumerate(hv_tables, start=1):
        write_hypervolume_csv(out / f"hypervolume_run{k}.csv", rows)
    merged = merge_pseudo_optimal(run_fronts) if run_fronts else []
    write_pareto_csv(out / "pareto_merged.csv", merged, n_layers)
    write_genome_stats_csv(out / "genome_stats.csv", genome_stats_rows(run_fronts, bounds))
    summary = build_summary(run_fronts, merged, hv_tables, manifest)
    write_summary(out / "summary.json", summary)
    return summary
