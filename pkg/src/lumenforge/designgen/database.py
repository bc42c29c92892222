"""Training-database generation: plans, records, and resumable JSONL storage.

Targets are laid out deterministically from the plan and seed; each one is
designed by design_surface, warm-started from the nearest already-planned
neighbor (a dependency tree, so results are byte-identical no matter how
many workers run or how they are scheduled). Records stream to disk in plan
order; interrupted runs resume by skipping targets already on disk.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass

import numpy as np

from ..optics import OffsetTarget, RectTarget, Scenario
from ..shsurface import SurfaceModel
from .fit import DesignOptions, design_surface
from .lm import DivergenceError

TRAINING_BOX = {
    "reflector_offset": {"x_off": (0.0, 500.0), "y_off": (0.0, 500.0)},
    "lens_rect": {"width": (2000.0, 4000.0), "height": (2000.0, 4000.0),
                  "distance": (1000.0, 1500.0)},
}


@dataclass(frozen=True)
class RandomPlan:
    """Uniform random targets over the scenario's training box."""

    count: int


@dataclass(frozen=True)
class GridPlan:
    """Regular grid over the lens training box (width x height x distance)."""

    n_width: int
    n_height: int
    n_distance: int

    @property
    def count(self) -> int:
        return self.n_width * self.n_height * self.n_distance


@dataclass
class DesignRecord:
    scenario: str
    target: object
    surface: SurfaceModel | None
    nonuniformity_pct: float
    spill_fraction: float
    iterations: int
    rms_mm: float
    seed: int
    error: str | None = None

    def to_json_line(self) -> str:
        payload = {"scenario": self.scenario, "target": target_to_dict(self.target)}
        if self.error is not None:
            payload["error"] = self.error
        else:
            payload["surface"] = self.surface.to_dict()
            payload["nonuniformity_pct"] = self.nonuniformity_pct
            payload["spill"] = self.spill_fraction
            payload["meta"] = {"iters": self.iterations, "rms_mm": self.rms_mm,
                               "seed": self.seed}
        return json.dumps(payload)

    @classmethod
    def from_dict(cls, data: dict) -> "DesignRecord":
        target = target_from_dict(data["scenario"], data["target"])
        if "error" in data:
            return cls(scenario=data["scenario"], target=target, surface=None,
                       nonuniformity_pct=float("nan"), spill_fraction=float("nan"),
                       iterations=0, rms_mm=float("nan"), seed=0, error=data["error"])
        meta = data.get("meta", {})
        return cls(
            scenario=data["scenario"],
            target=target,
            surface=SurfaceModel.from_dict(data["surface"]),
            nonuniformity_pct=float(data["nonuniformity_pct"]),
            spill_fraction=float(data["spill"]),
            iterations=int(meta.get("iters", 0)),
            rms_mm=float(meta.get("rms_mm", float("nan"))),
            seed=int(meta.get("seed", 0)),
            error=None,
        )


def target_to_dict(target) -> dict:
    if isinstance(target, OffsetTarget):
        return {"x_off": target.x_off, "y_off": target.y_off}
    return {"width": target.width, "height": target.height, "distance": target.distance}


def target_from_dict(scenario_kind: str, data: dict):
    if scenario_kind == "reflector_offset":
        return OffsetTarget(x_off=float(data["x_off"]), y_off=float(data["y_off"]))
    return RectTarget(width=float(data["width"]), height=float(data["height"]),
                      distance=float(data["distance"]))


def plan_targets(scenario: Scenario, plan, seed: int) -> list:
    """Deterministic target list for a sampling plan."""
    box = TRAINING_BOX[scenario.kind]
    if isinstance(plan, RandomPlan):
        if scenario.kind != "reflector_offset":
            raise ValueError("random plans are defined for the reflector scenario")
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        lo_x, hi_x = box["x_off"]
        lo_y, hi_y = box["y_off"]
        pts = rng.random((plan.count, 2))
        return [OffsetTarget(x_off=float(lo_x + (hi_x - lo_x) * u),
                             y_off=float(lo_y + (hi_y - lo_y) * v)) for u, v in pts]
    if isinstance(plan, GridPlan):
        if scenario.kind != "lens_rect":
            raise ValueError("grid plans are defined for the lens scenario")

        def axis(bounds, n):
            lo, hi = bounds
            if n == 1:
                return [0.5 * (lo + hi)]
            return [float(v) for v in np.linspace(lo, hi, n)]

        targets = [
            RectTarget(width=w, height=h, distance=d)
            for d in axis(box["distance"], plan.n_distance)
            for w in axis(box["width"], plan.n_width)
            for h in axis(box["height"], plan.n_height)
        ]
        return targets
    raise TypeError(f"unknown plan type {type(plan).__name__}")


def _normalized_params(scenario: Scenario, target) -> np.ndarray:
    box = TRAINING_BOX[scenario.kind]
    vals = []
    for name, value in target_to_dict(target).items():
        lo, hi = box[name]
        vals.append((value - lo) / (hi - lo) if hi > lo else 0.0)
    return np.array(vals)


def warm_start_parents(scenario: Scenario, targets: list) -> list[int]:
    """parent[i] = nearest earlier target (plan-order tree; -1 for the root)."""
    coords = [_normalized_params(scenario, t) for t in targets]
    parents = [-1]
    for i in range(1, len(targets)):
        dists = [float(np.linalg.norm(coords[i] - coords[j])) for j in range(i)]
        parents.append(int(np.argmin(dists)))
    return parents


def record_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + 7_919 * index + 17) & 0x7FFFFFFFFFFFFFFF


def generate_database(scenario: Scenario, plan, seed: int, out_path,
                      opts: DesignOptions | None = None, threads: int = 1,
                      progress=None) -> list[DesignRecord]:
    """Design every target in the plan and stream records to a JSONL file.

    Resumable: targets whose records already sit in out_path are skipped.
    Failed fits become error records and the run continues. Output is in
    plan order and byte-identical across runs and worker counts.
    """
    opts = opts or DesignOptions.for_scenario(scenario.kind)
    targets = plan_targets(scenario, plan, seed)
    parents = warm_start_parents(scenario, targets)

    def target_key(t):
        return json.dumps(target_to_dict(t), sort_keys=True)

    done: dict[int, DesignRecord] = {}
    if out_path is not None and os.path.exists(out_path):
        existing = read_database(out_path, scenario_kind=scenario.kind)
        by_target = {target_key(r.target): r for r in existing}
        for i, t in enumerate(targets):
            rec = by_target.get(target_key(t))
            if rec is not None and rec.error is None:
                done[i] = rec

    results: dict[int, tuple[DesignRecord, object]] = {}
    for i, rec in done.items():
        results[i] = (rec, (rec.surface, None))

    def ancestor_warm(index: int):
        j = parents[index]
        while j >= 0:
            if j in results and results[j][0].error is None:
                surface, sq = results[j][1]
                return surface, sq
            j = parents[j]
        return None, None

    def build(index: int) -> tuple[DesignRecord, object]:
        target = targets[index]
        warm_surface, warm_sq = ancestor_warm(index)
        rseed = record_seed(seed, index)
        try:
            res = design_surface(scenario, target, init=warm_surface,
                                 init_square=warm_sq, opts=opts, seed=rseed)
            rec = DesignRecord(
                scenario=scenario.kind, target=target, surface=res.surface,
                nonuniformity_pct=res.nonuniformity_pct,
                spill_fraction=res.spill_fraction, iterations=res.iterations,
                rms_mm=res.rms_mm, seed=rseed,
            )
            return rec, (res.surface, res.square_coords)
        except (DivergenceError, ValueError) as exc:
            rec = DesignRecord(scenario=scenario.kind, target=target, surface=None,
                               nonuniformity_pct=float("nan"),
                               spill_fraction=float("nan"), iterations=0,
                               rms_mm=float("nan"), seed=rseed,
                               error=f"{type(exc).__name__}: {exc}")
            return rec, (None, None)

    pending = [i for i in range(len(targets)) if i not in results]
    fh = open(out_path, "w") if out_path is not None else None
    try:
        write_cursor = 0

        def flush():
            nonlocal write_cursor
            while write_cursor < len(targets) and write_cursor in results:
                if fh is not None:
                    fh.write(results[write_cursor][0].to_json_line())
                    fh.write("\n")
                    fh.flush()
                write_cursor += 1

        flush()  # rewrite any resumed prefix before new work starts
        if threads <= 1:
            for i in pending:
                results[i] = build(i)
                flush()
                if progress is not None:
                    progress(i, results[i][0])
        else:
            remaining = set(pending)
            futures = {}
            with ThreadPoolExecutor(max_workers=threads) as pool:
                def launch_ready():
                    for i in sorted(remaining):
                        p = parents[i]
                        if p < 0 or p in results:
                            futures[pool.submit(build, i)] = i
                            remaining.discard(i)

                launch_ready()
                while futures:
                    finished, _ = wait(list(futures), return_when=FIRST_COMPLETED)
                    for fut in finished:
                        i = futures.pop(fut)
                        results[i] = fut.result()
                        if progress is not None:
                            progress(i, results[i][0])
                    launch_ready()
                    flush()
            flush()
    finally:
        if fh is not None:
            fh.close()
    return [results[i][0] for i in range(len(targets))]


def read_database(path, scenario_kind: str | None = None) -> list[DesignRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if scenario_kind is not None and data["scenario"] != scenario_kind:
                raise ValueError(
                    f"database mixes scenarios: expected {scenario_kind}, "
                    f"found {data['scenario']}"
                )
            records.append(DesignRecord.from_dict(data))
    return records
