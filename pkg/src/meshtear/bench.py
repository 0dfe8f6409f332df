"""Latency harness for the tear pipeline.

Replays a scalpel path against fresh mesh copies, timing each stage
(broad_phase, classify, clip, delta_apply, cluster_repair) per segment
with a monotonic wall clock, single-threaded. The first two repetitions
are warm-up and never reported. Timing is observational only: the
deltas a bench run produces are byte-identical to an unbenchmarked run.
"""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParameterError
from .formats import ScalpelPathFile, write_bench
from .mesh import Mesh, apply_delta, faces_near
from .particles import SimParams, decompose, update_after_tear
from .tear import (
    TearDelta,
    build_cells,
    build_tear_delta,
    classify_faces,
    sample_path,
)

STAGES = ("broad_phase", "classify", "clip", "delta_apply", "cluster_repair")
# Per-segment budget, p50 over classify+clip+delta_apply+cluster_repair.
DEFAULT_BUDGET_MS = 20.0
WARMUP_REPS = 2


@dataclass(frozen=True)
class StageStats:
    p50: float
    p95: float
    max: float

    @staticmethod
    def from_micros(samples) -> "StageStats":
        arr = np.asarray(samples, dtype=np.float64)
        if arr.size == 0:
            return StageStats(0.0, 0.0, 0.0)
        return StageStats(
            p50=float(np.percentile(arr, 50)),
            p95=float(np.percentile(arr, 95)),
            max=float(arr.max()),
        )


@dataclass
class BenchReport:
    mesh_name: str
    total_faces: int
    segments: int
    repetitions: int
    stages: dict[str, StageStats]
    stage_order: tuple[str, ...]
    faces_touched: int                 # worst segment, from the broad phase
    segment_micros: list[float]        # budgeted stages summed, per instance
    clustering_micros: float
    flagged_zero_work: bool
    environment: str
    replay_payload: str = ""           # first-rep deltas, canonical JSON

    @property
    def segment_p50_ms(self) -> float:
        if not self.segment_micros:
            return 0.0
        return float(np.percentile(np.array(self.segment_micros), 50)) / 1000.0

    def gate(self, budget_ms: float = DEFAULT_BUDGET_MS) -> bool:
        """True when the p50 per-segment time fits the budget."""
        return self.segment_p50_ms < budget_ms

    def touched_fraction(self) -> float:
        if self.total_faces == 0:
            return 0.0
        return self.faces_touched / self.total_faces

    def to_csv(self) -> bytes:
        return write_bench(self)


def _build_chain(path: ScalpelPathFile):
    samples = sample_path(path.samples, path.spacing)
    if len(samples) < 2:
        return []
    return build_cells(samples, path.width)


def run_tear_bench(mesh: Mesh, path: ScalpelPathFile, repetitions: int = 20,
                   d: float = 0.1, params: Optional[SimParams] = None,
                   mesh_name: str = "mesh") -> BenchReport:
    """Replay the path on fresh copies of the mesh and report honest
    per-stage percentiles in microseconds.

    Requires repetitions >= 5; the first two are discarded as warm-up.
    A path that never touches the mesh is reported as a zero-work run
    and flagged.
    """
    if repetitions < 5:
        raise ParameterError("need at least 5 repetitions")
    cells = _build_chain(path)
    clock = time.perf_counter_ns

    t0 = clock()
    base_state = decompose(mesh, d, params)
    clustering_micros = (clock() - t0) / 1000.0
    del base_state

    stage_samples: dict[str, list[float]] = {s: [] for s in STAGES}
    segment_micros: list[float] = []
    worst_touched = 0
    any_work = False
    deltas_first_rep: list[TearDelta] = []

    for rep in range(repetitions):
        work = mesh.copy()
        state = decompose(work, d, params)
        record = rep >= WARMUP_REPS
        for cell in cells:
            t0 = clock()
            candidates = faces_near(work, cell.aabb_min, cell.aabb_max)
            t1 = clock()
            inside, crossing = classify_faces(work, cell, candidates=candidates)
            t2 = clock()
            delta = build_tear_delta(work, cell, inside, crossing)
            t3 = clock()
            apply_delta(work, delta)
            t4 = clock()
            update_after_tear(state, delta, work, d)
            t5 = clock()
            if rep == 0:
                deltas_first_rep.append(delta)
            if not delta.empty:
                any_work = True
            if record:
                stage_samples["broad_phase"].append((t1 - t0) / 1000.0)
                stage_samples["classify"].append((t2 - t1) / 1000.0)
                stage_samples["clip"].append((t3 - t2) / 1000.0)
                stage_samples["delta_apply"].append((t4 - t3) / 1000.0)
                stage_samples["cluster_repair"].append((t5 - t4) / 1000.0)
                segment_micros.append((t5 - t1) / 1000.0)
                worst_touched = max(worst_touched, len(candidates))

    stages = {name: StageStats.from_micros(vals) for name, vals in stage_samples.items()}
    return BenchReport(
        mesh_name=mesh_name,
        total_faces=mesh.live_face_count,
        segments=len(cells),
        repetitions=repetitions,
        stages=stages,
        stage_order=STAGES,
        faces_touched=worst_touched,
        segment_micros=segment_micros,
        clustering_micros=clustering_micros,
        flagged_zero_work=not any_work,
        environment=f"{platform.machine()} {platform.python_implementation()} "
                    f"{platform.python_version()}",
        replay_payload=json.dumps([d.payload() for d in deltas_first_rep]),
    )


def render_report(report: BenchReport, png_path: str) -> None:
    """Write the stage-latency figure next to the CSV output."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    x = np.arange(len(report.stage_order))
    p50 = [report.stages[s].p50 / 1000.0 for s in report.stage_order]
    p95 = [report.stages[s].p95 / 1000.0 for s in report.stage_order]
    mx = [report.stages[s].max / 1000.0 for s in report.stage_order]
    width = 0.28
    ax1.bar(x - width, p50, width, label="p50")
    ax1.bar(x, p95, width, label="p95")
    ax1.bar(x + width, mx, width, label="max")
    ax1.set_xticks(x, report.stage_order, rotation=20)
    ax1.set_ylabel("ms per segment")
    ax1.set_title(f"{report.mesh_name}: stage latency "
                  f"({report.segments} segs x {report.repetitions} reps)")
    ax1.legend()

    if report.segment_micros:
        ax2.plot(np.array(report.segment_micros) / 1000.0, lw=0.8)
        ax2.axhline(report.segment_p50_ms, color="k", ls="--", lw=0.8,
                    label=f"p50 = {report.segment_p50_ms:.2f} ms")
        ax2.axhline(DEFAULT_BUDGET_MS, color="r", ls=":", lw=0.8,
                    label=f"budget = {DEFAULT_BUDGET_MS:.0f} ms")
        ax2.legend()
    ax2.set_xlabel("segment instance")
    ax2.set_ylabel("ms")
    ax2.set_title(
        f"per-segment time; touched {report.faces_touched}/{report.total_faces} faces"
    )
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
