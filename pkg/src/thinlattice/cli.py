"""Command-line interface: ``run``, ``render`` and ``report``.

Exit codes: 0 success, 2 validation error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .driver import (HistoryFormatError, RunAborted, best_by_damage, best_by_sea,
                     design_space_from_config, load_history, read_design_csv, run)
from .lattice import ValidationError
from .render import render_svg

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT = 0, 2, 3
DEFAULT_OUT_DIR = "thinlattice_run"

EVOLUTION_COLUMNS = ["iteration", "sea_per_volume", "sea_per_mass", "mwc", "total_energy",
                     "external_work", "damage_dissipation", "walls_killed", "max_thickness_change",
                     "evaluation_completed"]


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    overrides = {"max_design_iterations": args.max_iterations, "scheme": args.scheme}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        for path, msg in exc.errors:
            _err(f"{path}: {msg}")
        return EXIT_VALIDATION
    out_dir = Path(args.out_dir or cfg.output_dir or DEFAULT_OUT_DIR)

    def show(rec):
        if args.quiet:
            return
        obj = rec.solver["objective_final"] if rec.solver else float("nan")
        m = rec.metrics
        flag = "" if rec.evaluation_completed else "  [evaluation incomplete]"
        print(f"iter {rec.iteration:3d}  objective {obj:.4e}  SEA {m.sea_per_volume:.4e} J/mm3  "
              f"MWC {m.mwc:.3f}  kills {len(rec.walls_killed_this_iter):3d}  "
              f"max|dt| {rec.max_thickness_change:.4e} mm{flag}")

    try:
        history = run(cfg, out_dir=out_dir, on_iteration=show)
    except RunAborted as exc:
        _err(str(exc))
        return EXIT_ABORT
    except (ValueError, ValidationError) as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    if not args.quiet:
        print(f"{history.terminated_by} after {len(history.records)} iterations; "
              f"best SEA at iteration {history.best_iteration_by_sea}, "
              f"least damage at iteration {history.best_iteration_by_damage}; output in {out_dir}")
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for path, msg in exc.errors:
            _err(f"{path}: {msg}")
        return EXIT_VALIDATION
    try:
        ds = design_space_from_config(cfg)
        thickness, alive = read_design_csv(args.design_csv)
        svg = render_svg(ds, thickness, alive, cfg.t_min, cfg.t_max, args.stroke_scale)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    Path(args.out_svg).write_text(svg, encoding="utf-8")
    return EXIT_OK


def _run_status(history_path: Path, records) -> str:
    summary = history_path.parent / "run.json"
    if summary.exists():
        try:
            status = json.loads(summary.read_text(encoding="utf-8")).get("status")
            if status:
                return status
        except ValueError:
            pass
    return "converged" if records[-1].converged else "not converged"


def cmd_report(args) -> int:
    path = Path(args.history)
    try:
        records = load_history(path)
    except (OSError, HistoryFormatError) as exc:
        _err(str(exc))
        return EXIT_VALIDATION
    out_dir = Path(args.out_dir) if args.out_dir else path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "evolution.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVOLUTION_COLUMNS)
        for r in records:
            m = r.metrics
            writer.writerow([r.iteration, repr(m.sea_per_volume),
                             "" if m.sea_per_mass is None else repr(m.sea_per_mass),
                             repr(m.mwc), repr(m.total_energy), repr(m.external_work),
                             repr(m.damage_dissipation), len(r.walls_killed_this_iter),
                             repr(r.max_thickness_change), int(r.evaluation_completed)])

    failed = [r.iteration for r in records if not r.evaluation_completed]
    print(f"iterations: {len(records)}")
    print(f"status: {_run_status(path, records)}")
    print(f"best iteration by SEA: {best_by_sea(records)}")
    print(f"best iteration by damage: {best_by_damage(records)}")
    if failed:
        print(f"incomplete evaluations at iterations: {', '.join(map(str, failed))}")
    print(f"wrote {out_dir / 'evolution.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinlattice", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a thickness optimization")
    p.add_argument("--config", required=True, help="YAML or JSON run configuration")
    p.add_argument("--out-dir", help=f"output directory (default: config output_dir or ./{DEFAULT_OUT_DIR})")
    p.add_argument("--max-iterations", type=int, help="override max_design_iterations")
    p.add_argument("--scheme", type=int, choices=(1, 2), help="override the update scheme")
    p.add_argument("--seed", type=int, help="reserved; the surrogate is deterministic")
    p.add_argument("--quiet", action="store_true", help="suppress per-iteration lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="render a design CSV as SVG")
    p.add_argument("design_csv")
    p.add_argument("out_svg")
    p.add_argument("--config", required=True, help="configuration holding the matching geometry")
    p.add_argument("--stroke-scale", type=float, default=3.0, help="stroke width in px per mm of thickness")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="summarize a run history")
    p.add_argument("history", help="path to history.jsonl")
    p.add_argument("--out-dir", help="where to write evolution.csv (default: next to the history)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
