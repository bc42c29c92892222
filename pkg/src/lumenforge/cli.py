"""Pipeline driver: database generation, training, inference, sweeps, serving.

Units on every flag are millimeters. Exit codes: 0 success, 1 usage,
2 I/O failure, 3 numerical failure. All commands are deterministic given an
explicit --seed, independent of --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .designgen import (
    DesignOptions,
    DivergenceError,
    GridPlan,
    RandomPlan,
    TRAINING_BOX,
    generate_database,
    read_database,
    record_seed,
)
from .optics import (
    DEFAULT_RAYS,
    OffsetTarget,
    RectTarget,
    Scenario,
    evaluate_design,
    write_irradiance_csv,
    write_irradiance_pgm,
)
from .shsurface import InvalidSurfaceError
from .surrogate import (
    TOPOLOGY_PRESETS,
    ModelFormatError,
    TrainOptions,
    dataset_from_records,
    infer_design,
    load_model,
    save_model,
    train_lm,
)

PARAM_ALIASES = {
    "reflector_offset": {"x": "x_off", "x_off": "x_off", "y": "y_off", "y_off": "y_off"},
    "lens_rect": {"w": "width", "width": "width", "h": "height", "height": "height",
                  "d": "distance", "distance": "distance"},
}
PARAM_ORDER = {
    "reflector_offset": ["x_off", "y_off"],
    "lens_rect": ["width", "height", "distance"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage failures exit 1, not argparse's 2
        raise UsageError(message)


def _parse_params(scenario_kind: str, entries: list[str]) -> dict[str, list[float]]:
    """--param name=value or name=lo:hi:n, names canonicalized per scenario."""
    aliases = PARAM_ALIASES[scenario_kind]
    values: dict[str, list[float]] = {}
    for entry in entries:
        if "=" not in entry:
            raise UsageError(f"--param needs name=value, got {entry!r}")
        name, _, spec = entry.partition("=")
        name = name.strip().lower()
        if name not in aliases:
            raise UsageError(f"unknown parameter {name!r} for scenario {scenario_kind}")
        canonical = aliases[name]
        parts = spec.split(":")
        try:
            if len(parts) == 1:
                values[canonical] = [float(parts[0])]
            elif len(parts) == 3:
                lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
                if n < 1:
                    raise UsageError(f"step count must be >= 1 in {entry!r}")
                values[canonical] = [lo] if n == 1 else [float(v) for v in np.linspace(lo, hi, n)]
            else:
                raise UsageError(f"bad range {spec!r}; use value or lo:hi:count")
        except ValueError as exc:
            raise UsageError(f"bad number in {entry!r}: {exc}") from exc
    missing = [p for p in PARAM_ORDER[scenario_kind] if p not in values]
    if missing:
        raise UsageError(f"missing parameter(s) {', '.join(missing)}")
    return values


def _make_target(scenario_kind: str, point: dict[str, float]):
    if scenario_kind == "reflector_offset":
        return OffsetTarget(x_off=point["x_off"], y_off=point["y_off"])
    return RectTarget(width=point["width"], height=point["height"],
                      distance=point["distance"])


def _outside_training_box(scenario_kind: str, point: dict[str, float]) -> bool:
    box = TRAINING_BOX[scenario_kind]
    return any(not (box[k][0] <= v <= box[k][1]) for k, v in point.items())


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_db(args) -> int:
    scenario = Scenario.preset(args.scenario)
    if args.random is not None:
        plan = RandomPlan(count=args.random)
    else:
        try:
            nw, nh, nd = (int(v) for v in args.grid.lower().split("x"))
        except ValueError as exc:
            raise UsageError(f"--grid expects WxHxD integers, got {args.grid!r}") from exc
        plan = GridPlan(n_width=nw, n_height=nh, n_distance=nd)

    if plan.count == 0:
        Path(args.out).write_text("")
        print("empty plan: wrote 0 records")
        return 0

    from dataclasses import replace

    opts = DesignOptions.for_scenario(args.scenario)
    if args.feedback_rays is not None:
        opts = replace(opts, feedback_rays=args.feedback_rays)
    if args.eval_rays is not None:
        opts = replace(opts, eval_rays=args.eval_rays)
    done = []

    def progress(i, rec):
        done.append(rec)
        status = f"error: {rec.error}" if rec.error else \
            f"nonuniformity {rec.nonuniformity_pct:.2f}% spill {rec.spill_fraction:.4f}"
        print(f"[{len(done)}/{plan.count}] target {rec.target} -> {status}", flush=True)

    t0 = time.perf_counter()
    records = generate_database(scenario, plan, args.seed, args.out, opts=opts,
                                threads=args.threads, progress=progress)
    ok = [r for r in records if r.error is None]
    print(f"wrote {len(records)} records ({len(ok)} ok) to {args.out} "
          f"in {time.perf_counter() - t0:.0f}s")
    if ok:
        vals = [r.nonuniformity_pct for r in ok]
        print(f"non-uniformity: mean {np.mean(vals):.2f}% max {np.max(vals):.2f}%")
    if args.plot and ok:
        from .reports import save_database_figure

        fig_path = str(Path(args.out).with_suffix(".png"))
        save_database_figure(records, fig_path)
        print(f"figure: {fig_path}")
    return 0 if len(ok) >= 0.9 * len(records) else 3


def cmd_train(args) -> int:
    records = read_database(args.db)
    if not records:
        print("database is empty; nothing to train on", file=sys.stderr)
        return 3
    kinds = {r.scenario for r in records}
    if len(kinds) > 1:
        print(f"database mixes scenarios {sorted(kinds)}; refusing", file=sys.stderr)
        return 3
    scenario_kind = records[0].scenario
    dataset = dataset_from_records(records)
    if len(dataset) < 2:
        print("fewer than 2 usable records", file=sys.stderr)
        return 3

    topology = TOPOLOGY_PRESETS[scenario_kind]
    if args.topology:
        topology = [int(v) for v in args.topology.split(",")]
    mask = "full" if scenario_kind == "reflector_offset" else "quadrant"
    opts = TrainOptions(max_epochs=args.epochs, seed=args.seed,
                        holdout_fraction=args.holdout)
    model, report = train_lm(topology, dataset, opts, scenario=scenario_kind, mask=mask)
    save_model(model, args.out)
    report_path = str(Path(args.out).with_suffix(".report.json"))
    with open(report_path, "w") as fh:
        json.dump({
            "epochs": report.epochs,
            "final_mse": report.final_mse,
            "wall_time_s": report.wall_time,
            "diverged": report.diverged,
            "holdout_mse": report.holdout_mse,
            "holdout_indices": report.holdout_indices,
            "mse_history": report.mse_history,
        }, fh)
        fh.write("\n")
    print(f"trained {topology} on {len(dataset)} records: "
          f"final mse {report.final_mse:.3e} in {report.epochs} epochs "
          f"({report.wall_time:.1f}s)")
    print(f"model: {args.out}  report: {report_path}")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    params = _parse_params(model.scenario, args.param)
    sweeps = {k: v for k, v in params.items() if len(v) > 1}
    if sweeps:
        raise UsageError(f"infer takes single values, got ranges for {sorted(sweeps)}")
    point = {k: v[0] for k, v in params.items()}
    if _outside_training_box(model.scenario, point):
        print(f"warning: {point} lies outside the training box "
              f"{TRAINING_BOX[model.scenario]} (extrapolating)", file=sys.stderr)
    target = _make_target(model.scenario, point)
    surface = infer_design(model, target)
    surface.to_json(args.out)
    print(f"surface: {args.out}")

    if args.evaluate:
        scenario = Scenario.preset(model.scenario)
        res = evaluate_design(scenario, surface, target, n_rays=args.rays,
                              seed=args.seed, threads=args.threads)
        print(f"non-uniformity {res.nonuniformity_pct:.2f}% "
              f"spill {res.stats.spill_fraction:.4f} "
              f"({args.rays} rays, seed {args.seed})")
        if args.irradiance_csv:
            write_irradiance_csv(res.raw, args.irradiance_csv)
            print(f"irradiance: {args.irradiance_csv}")
        if args.pgm:
            write_irradiance_pgm(res.smoothed, args.pgm)
            print(f"pgm: {args.pgm}")
        if args.plot:
            from .reports import save_irradiance_figure

            fig_path = str(Path(args.out).with_suffix(".png"))
            save_irradiance_figure(
                res.smoothed, fig_path,
                title=f"non-uniformity {res.nonuniformity_pct:.2f}%")
            print(f"figure: {fig_path}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    scenario = Scenario.preset(model.scenario)
    params = _parse_params(model.scenario, args.param)
    order = PARAM_ORDER[model.scenario]
    axes = [name for name in order if len(params[name]) > 1]

    points = [{}]
    for name in order:
        points = [dict(p, **{name: v}) for p in points for v in params[name]]

    rows = []
    for idx, point in enumerate(points):
        row = dict(point)
        target = _make_target(model.scenario, point)
        try:
            surface = infer_design(model, target)
            res = evaluate_design(scenario, surface, target, n_rays=args.rays,
                                  seed=record_seed(args.seed, idx),
                                  threads=args.threads)
            row["nonuniformity_pct"] = res.nonuniformity_pct
            row["spill_fraction"] = res.stats.spill_fraction
            row["error"] = ""
        except (InvalidSurfaceError, ValueError) as exc:
            row["nonuniformity_pct"] = ""
            row["spill_fraction"] = ""
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
        status = row["error"] or f"{row['nonuniformity_pct']:.2f}%"
        print(f"[{idx + 1}/{len(points)}] {point} -> {status}", flush=True)

    header = order + ["nonuniformity_pct", "spill_fraction", "error"]
    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[k]) for k in header) + "\n")
    print(f"sweep: {args.out} ({len(rows)} rows)")

    if args.plot:
        from .reports import save_sweep_figure

        fig_path = str(Path(args.out).with_suffix(".png"))
        save_sweep_figure(rows, axes, fig_path)
        print(f"figure: {fig_path}")
    return 0


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def read_sweep_csv(path) -> list[dict]:
    """Parse cmd_eval output back into typed rows."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            row = {}
            for key, cell in zip(header, cells):
                if key == "error":
                    row[key] = cell
                else:
                    row[key] = float(cell) if cell else ""
            rows.append(row)
    return rows


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    model_paths = [p for p in args.models.split(",") if p]
    app = build_app(model_paths, max_rays=args.max_rays, ui_dir=args.ui_dir,
                    trace_workers=args.threads)
    host, _, port = args.addr.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="lumenforge",
                     description="Learned freeform illumination design pipeline")
    parser.add_argument("--version", action="version", version=f"lumenforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-db", help="generate a training database of designs")
    p.add_argument("--scenario", required=True, choices=list(TOPOLOGY_PRESETS))
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--random", type=int, help="number of uniform random targets")
    group.add_argument("--grid", help="lens grid as WxHxD, e.g. 5x5x4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--eval-rays", type=int, default=None)
    p.add_argument("--feedback-rays", type=int, default=None)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_gen_db)

    p = sub.add_parser("train", help="train the surrogate network on a database")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topology", help="comma-separated layer sizes (default: preset)")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="infer a single design from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--evaluate", action="store_true")
    p.add_argument("--rays", type=int, default=DEFAULT_RAYS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--irradiance-csv")
    p.add_argument("--pgm")
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=False)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="sweep targets through the model and raytrace each")
    p.add_argument("--model", required=True)
    p.add_argument("--param", action="append", default=[],
                   metavar="NAME=VALUE|NAME=LO:HI:N")
    p.add_argument("--out", required=True)
    p.add_argument("--rays", type=int, default=DEFAULT_RAYS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the design API and UI")
    p.add_argument("--models", required=True, help="comma-separated model files")
    p.add_argument("--addr", default="127.0.0.1:8080")
    p.add_argument("--max-rays", type=int, default=500_000)
    p.add_argument("--threads", type=int, default=0, help="trace workers (0 = cores-1)")
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, InvalidSurfaceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
