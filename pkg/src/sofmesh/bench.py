"""Strategy ablation: evaluated-pair counters and relative timings per stage."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .mesher import STAGE_ORDER, ExtractionResult, Strategies, extract_mesh, staged_strategies
from .scheduling import schedule_points, workload_stats

CAVEAT = ("# Counters are exact. Wall-clock numbers are relative CPU measurements only; "
          "absolute GPU timings are not reproducible here.")

STAGE_ALIASES = {
    "schedule": "schedule", "scheduling": "schedule", "tile": "schedule", "tiles": "schedule",
    "minz": "min_z", "min_z": "min_z", "min-z": "min_z",
    "early_stop": "early_stop", "early-stop": "early_stop", "earlystop": "early_stop", "early": "early_stop",
    "prune": "prune", "pruning": "prune",
}


class EquivalenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StageReport:
    name: str
    strategies: Tuple[str, ...]
    pairs: int
    blocks: int
    block_variance: float
    seconds_per_iteration: float
    classify_seconds: float
    vertices_classified: int
    triangles: int

    def row(self, baseline: "StageReport") -> dict:
        return {
            "stage": self.name,
            "strategies": "+".join(self.strategies) or "none",
            "pairs": self.pairs,
            "pairs_vs_naive": f"{self.pairs / max(baseline.pairs, 1):.4f}",
            "blocks": self.blocks,
            "block_variance": f"{self.block_variance:.3f}",
            "seconds_per_iteration": f"{self.seconds_per_iteration:.6f}",
            "relative_time": f"{(self.classify_seconds + self.seconds_per_iteration) / max(baseline.classify_seconds + baseline.seconds_per_iteration, 1e-12):.3f}",
            "vertices_classified": self.vertices_classified,
            "triangles": self.triangles,
        }


def parse_stages(text: Optional[str], dead_cull: bool = False):
    """Stages from a list like ``+schedule,+minz``; ``None`` or ``all`` gives the full order."""
    if text is None or text.strip() in ("", "all"):
        return staged_strategies(dead_cull)
    flags = {k: False for k in STAGE_ORDER}
    stages = [("naive", Strategies(False, False, False, False, dead_cull))]
    for tok in text.split(","):
        key = tok.strip().lstrip("+").lower()
        if key in ("", "naive", "none"):
            continue
        if key not in STAGE_ALIASES:
            raise ValueError(f"unknown strategy {tok!r}")
        name = STAGE_ALIASES[key]
        flags[name] = True
        stages.append(("+" + name, Strategies(dead_cull=dead_cull, **flags)))
    return stages


def _report(name, strategies: Strategies, res: ExtractionResult, iterations: int) -> StageReport:
    pops = res.block_populations
    return StageReport(
        name,
        tuple(k for k in STAGE_ORDER + ("dead_cull",) if getattr(strategies, k)),
        int(res.counters["pairs"]),
        int(len(pops)),
        float(pops.var()) if len(pops) else 0.0,
        res.timings.get("refine", 0.0) / max(iterations, 1),
        res.timings.get("classify", 0.0),
        int(res.counters["classified"]),
        int(len(res.mesh.triangles)),
    )


def run_ablation(scene, cameras: Sequence, stages=None, **extract_kwargs) -> List[StageReport]:
    """Extract the mesh once per stage and report counters.

    Every stage must label grid vertices and place mesh vertices exactly like
    the first (naive) stage; otherwise :class:`EquivalenceError` is raised and
    no report is produced.
    """
    stages = stages or staged_strategies()
    extract_kwargs.pop("strategies", None)
    iterations = extract_kwargs.get("iterations", 8)
    reports = []
    reference = None
    for name, strat in stages:
        res = extract_mesh(scene, cameras, strategies=strat, **extract_kwargs)
        if reference is None:
            reference = res
        elif not (np.array_equal(res.inside, reference.inside)
                  and np.array_equal(res.mesh.triangles, reference.mesh.triangles)
                  and np.array_equal(res.mesh.vertices, reference.mesh.vertices)):
            raise EquivalenceError(f"stage {name} does not reproduce the naive mesh")
        reports.append(_report(name, strat, res, iterations))
    return reports


def format_report(reports: List[StageReport]) -> str:
    """CSV text with a caveat header line."""
    from .io import write_rows_csv

    buf = io.StringIO()
    buf.write(CAVEAT + "\n")
    write_rows_csv(buf, [r.row(reports[0]) for r in reports])
    return buf.getvalue()


def format_table(reports: List[StageReport]) -> str:
    lines = [CAVEAT, f"{'stage':<12} {'pairs':>12} {'vs naive':>9} {'blocks':>7} {'s/iter':>10}"]
    for r in reports:
        lines.append(f"{r.name:<12} {r.pairs:>12d} {r.pairs / max(reports[0].pairs, 1):>9.3f} {r.blocks:>7d} "
                     f"{r.seconds_per_iteration:>10.4f}")
    return "\n".join(lines)


def workload_comparison(points, cam, tile_size: int = 16, block_size: int = 256):
    """Variance of per-block populations: tile binning versus scheduled blocks."""
    binned, scheduled = workload_stats(schedule_points(points, cam, tile_size, block_size))
    return binned, scheduled
