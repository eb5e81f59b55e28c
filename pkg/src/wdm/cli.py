"""Sweep harness: ``wdm run-sweep config.json`` and ``wdm report results.csv``.

A sweep varies one axis (number of characters, dataset size or batch size)
and trains every (axis value, objective, seed) cell, appending one CSV row per
cell. ``report`` aggregates CSVs across seeds and redraws the plots from the
CSV alone.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datasets import GlyphDatasetSpec, ShapesDatasetSpec, generate, mi_of_spec
from .models import EncoderConfig, build_critic
from .objectives import ObjectiveConfig
from .probe import evaluate_model
from .training import TrainConfig, estimate_mi, train

logger = logging.getLogger("wdm")

CSV_COLUMNS = ("axis", "objective", "seed", "mi_certificate", "final_mi_estimate",
               "mean_probe_accuracy", "per_factor_accuracies", "wallclock_s")
CSV_FORMAT_VERSION = 1
AXES = ("n_characters", "dataset_size", "batch_size")
FAMILIES = ("glyph", "shapes")

DESK_DATASET = {"family": "glyph", "layout": "stacked", "alphabet_size": 16, "n_characters": 1,
                "n_samples": 1024, "cell_px": 16, "jitter": 0.1, "distortion": 0.05}
DESK_ENCODER = {"arch": "mlp", "hidden_widths": None, "repr_dim": 64, "activation": "relu"}
DESK_TRAIN = {"steps": 1500, "batch_size": 64, "learning_rate": 1e-3, "eval_every": 200,
              "optimizer": "adaptive_moment", "eval_batches": 16}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ReportError(ValueError):
    pass


@dataclass
class SweepConfig:
    axis: str
    values: list
    objectives: list[str]
    seeds: list[int]
    dataset: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    probe_split_seed: int = 0
    output_dir: str = "sweep_out"
    workers: int = 1

    def cells(self) -> list[tuple]:
        return [(v, obj, s) for v in self.values for obj in self.objectives for s in self.seeds]


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.search(rf'"{re.escape(key)}"\s*:', line):
            return i
    return None


def parse_config(text: str, overrides: dict | None = None) -> SweepConfig:
    """Parse and validate a sweep config; errors carry the offending line number."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", 1)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    def fail(key, msg):
        raise ConfigError(msg, _line_of(text, key))

    allowed = {f for f in SweepConfig.__dataclass_fields__}
    for key in raw:
        if key not in allowed:
            fail(key, f"unknown key {key!r}")
    for key in ("axis", "values", "objectives", "seeds"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}", 1)
    if raw["axis"] not in AXES:
        fail("axis", f"axis must be one of {AXES}, got {raw['axis']!r}")
    for key in ("values", "objectives", "seeds"):
        if not isinstance(raw[key], list) or not raw[key]:
            fail(key, f"{key} must be a nonempty list")
    for obj in raw["objectives"]:
        if obj not in ("cpc", "wpc"):
            fail("objectives", f"unsupported objective {obj!r}; sweeps compare cpc and wpc")
    if not all(isinstance(s, int) for s in raw["seeds"]):
        fail("seeds", "seeds must be integers")
    if not all(isinstance(v, int) and v >= 1 for v in raw["values"]):
        fail("values", "axis values must be positive integers")
    if raw["axis"] == "batch_size" and min(raw["values"]) < 2:
        fail("values", "batch sizes must be at least 2")

    dataset = {**DESK_DATASET, **raw.get("dataset", {})}
    if dataset["family"] not in FAMILIES:
        fail("family", f"dataset family must be one of {FAMILIES}")
    if dataset["family"] == "shapes" and raw["axis"] == "n_characters":
        fail("axis", "the shapes family has no n_characters axis")
    encoder = {**DESK_ENCODER, **raw.get("encoder", {})}
    train_cfg = {**DESK_TRAIN, **raw.get("train", {})}
    cfg = SweepConfig(raw["axis"], raw["values"], raw["objectives"], raw["seeds"], dataset, encoder,
                      dict(raw.get("objective", {})), train_cfg,
                      int(raw.get("probe_split_seed", 0)), str(raw.get("output_dir", "sweep_out")),
                      int(raw.get("workers", 1)))
    try:
        for value in cfg.values:
            resolve_cell(cfg, value, cfg.objectives[0], cfg.seeds[0])
    except (TypeError, ValueError) as exc:
        key = next((k for k in ("dataset", "encoder", "train", "objective") if k in raw), "axis")
        fail(key, f"invalid cell settings: {exc}")
    return cfg


def resolve_cell(cfg: SweepConfig, value, objective: str, seed: int):
    """Concrete (dataset spec, encoder, objective, train) configs for one cell."""
    d = dict(cfg.dataset)
    n_samples = value if cfg.axis == "dataset_size" else d["n_samples"]
    batch = value if cfg.axis == "batch_size" else cfg.train["batch_size"]
    if d["family"] == "glyph":
        k = value if cfg.axis == "n_characters" else d["n_characters"]
        sizes = d.get("alphabet_sizes") or [d["alphabet_size"]] * k
        sizes = list(sizes)[:k] if cfg.axis == "n_characters" and d.get("alphabet_sizes") else sizes
        grid = (1, len(sizes)) if d["layout"] == "spatial" else None
        spec = GlyphDatasetSpec(sizes, layout=d["layout"], grid=grid, cell_px=d["cell_px"],
                                n_samples=n_samples, seed=seed, jitter=d["jitter"],
                                distortion=d.get("distortion", 0.0))
        shape = spec.image_shape
    else:
        spec = ShapesDatasetSpec(n_samples=n_samples, seed=seed, image_px=d.get("image_px", 32))
        shape = (spec.image_px, spec.image_px, 3)
    enc = dict(cfg.encoder)
    if enc.get("hidden_widths") is None:
        enc["hidden_widths"] = [256, 256] if enc["arch"] == "mlp" else [32, 64, 64, 128]
    encoder = EncoderConfig(shape, **enc)
    obj = ObjectiveConfig(objective, batch_size=batch, **cfg.objective)
    tr = TrainConfig(seed=seed, **{**cfg.train, "batch_size": batch})
    return spec, encoder, obj, tr


def run_cell(cfg: SweepConfig, value, objective: str, seed: int) -> dict:
    start = time.perf_counter()
    spec, encoder, obj, tr = resolve_cell(cfg, value, objective, seed)
    ds = generate(spec)
    critic = build_critic(encoder, seed=seed)
    critic, _ = train(ds, encoder, obj, tr, critic=critic)
    est = estimate_mi(critic, ds, tr.batch_size, tr.eval_batches, seed=seed)
    probe = evaluate_model(critic, ds, cfg.probe_split_seed)
    return {
        "axis": value,
        "objective": objective,
        "seed": seed,
        "mi_certificate": repr(float(ds.mi_certificate)),
        "final_mi_estimate": repr(round(est, 10)),
        "mean_probe_accuracy": repr(round(probe.mean_accuracy, 10)),
        "per_factor_accuracies": ";".join(repr(round(a, 10)) for a in probe.per_factor_accuracy),
        "wallclock_s": f"{time.perf_counter() - start:.3f}",
    }


def _run_cell_job(args):
    cfg, cell = args
    try:
        return cell, run_cell(cfg, *cell), None
    except Exception as exc:  # recorded in the manifest, sweep continues
        return cell, None, f"{type(exc).__name__}: {exc}"


def run_sweep(config_path, out_dir=None, seeds=None, dry_run=False, workers=None, stream=None) -> int:
    """Run every cell of a sweep; returns a process exit code."""
    stream = stream or sys.stdout
    text = Path(config_path).read_text()
    try:
        cfg = parse_config(text, {"seeds": seeds, "output_dir": out_dir, "workers": workers})
    except ConfigError as exc:
        where = f"{config_path}:{exc.line}" if exc.line else str(config_path)
        print(f"{where}: {exc}", file=sys.stderr)
        return 2
    cells = cfg.cells()
    if dry_run:
        print(json.dumps({"config": asdict(cfg), "cells": len(cells)}, indent=2), file=stream)
        for cell in cells:
            spec, _, _, tr = resolve_cell(cfg, *cell)
            print(f"  axis={cell[0]} objective={cell[1]} seed={cell[2]} "
                  f"mi={mi_of_spec(spec):.4f} K={tr.batch_size}", file=stream)
        return 0

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    manifest = {"format_version": CSV_FORMAT_VERSION, "config": asdict(cfg), "n_cells": len(cells),
                "csv": csv_path.name, "failures": [], "completed": 0}
    failures = manifest["failures"]
    jobs = [(cfg, cell) for cell in cells]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()

        def emit(cell, row, error):
            if error:
                failures.append({"axis": cell[0], "objective": cell[1], "seed": cell[2], "error": error})
                logger.error("cell %s failed: %s", cell, error)
            else:
                writer.writerow(row)
                fh.flush()
                manifest["completed"] += 1
                print(f"axis={cell[0]} {cell[1]} seed={cell[2]}: acc={row['mean_probe_accuracy']}", file=stream)

        if cfg.workers > 1:
            # rows are written in cell order whatever the completion order
            with ProcessPoolExecutor(cfg.workers) as pool:
                for result in pool.map(_run_cell_job, jobs):
                    emit(*result)
        else:
            for job in jobs:
                emit(*_run_cell_job(job))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    report([csv_path], stream=stream)
    return 1 if failures else 0


# -- report ----------------------------------------------------------------------

def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ReportError(f"{path}: header {reader.fieldnames} does not match the sweep schema")
        return list(reader)


def _manifest_for(path: Path) -> dict:
    m = path.parent / "manifest.json"
    return json.loads(m.read_text()) if m.exists() else {}


def _dataset_size(row: dict, manifest: dict, fallback):
    cfg = manifest.get("config", {})
    if cfg.get("axis") == "dataset_size":
        return int(row["axis"])
    return cfg.get("dataset", {}).get("n_samples", fallback)


def aggregate(csv_paths, dataset_size=None) -> list[dict]:
    groups: dict[tuple, dict] = {}
    for p in map(Path, csv_paths):
        manifest = _manifest_for(p)
        for row in _read_rows(p):
            key = (int(row["axis"]), row["objective"])
            g = groups.setdefault(key, {"acc": [], "mi": [], "cert": float(row["mi_certificate"]),
                                        "n": _dataset_size(row, manifest, dataset_size)})
            g["acc"].append(float(row["mean_probe_accuracy"]))
            g["mi"].append(float(row["final_mi_estimate"]))
    summary = []
    for (axis, obj), g in sorted(groups.items()):
        n = g["n"]
        summary.append({
            "axis": axis, "objective": obj, "n_seeds": len(g["acc"]),
            "acc_mean": float(np.mean(g["acc"])), "acc_std": float(np.std(g["acc"])),
            "mi_mean": float(np.mean(g["mi"])), "mi_std": float(np.std(g["mi"])),
            "mi_certificate": g["cert"], "dataset_size": n,
            # exp(MI) > n, compared in log space
            "exceeds_dataset": None if n is None else bool(g["cert"] > math.log(n)),
        })
    return summary


def plot_summary(summary: list[dict], path: Path, axis_name: str = "axis") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for obj in sorted({r["objective"] for r in summary}):
        rows = [r for r in summary if r["objective"] == obj]
        xs = np.array([r["axis"] for r in rows])
        m = np.array([r["acc_mean"] for r in rows])
        s = np.array([r["acc_std"] for r in rows])
        ax.plot(xs, m, marker="o", label=obj.upper())
        ax.fill_between(xs, m - s, m + s, alpha=0.25)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("mean probe accuracy")
    if axis_name in ("dataset_size", "batch_size"):
        ax.set_xscale("log", base=2)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def report(csv_paths, out_md=None, dataset_size=None, stream=None) -> list[dict]:
    stream = stream or sys.stdout
    paths = [Path(p) for p in csv_paths]
    summary = aggregate(paths, dataset_size)
    header = "| axis | objective | seeds | probe acc (mean ± std) | MI estimate (mean ± std) | MI certificate | exp(MI) > n |"
    lines = [header, "|" + "---|" * 7]
    for r in summary:
        flag = "n/a" if r["exceeds_dataset"] is None else ("YES" if r["exceeds_dataset"] else "no")
        lines.append(f"| {r['axis']} | {r['objective']} | {r['n_seeds']} | {r['acc_mean']:.4f} ± {r['acc_std']:.4f} "
                     f"| {r['mi_mean']:.4f} ± {r['mi_std']:.4f} | {r['mi_certificate']:.4f} | {flag} |")
    table = "\n".join(lines)
    print(table, file=stream)
    out_md = Path(out_md) if out_md else paths[0].parent / "report.md"
    out_md.write_text("# Sweep report\n\n" + table + "\n")
    for p in paths:
        axis_name = _manifest_for(p).get("config", {}).get("axis", "axis")
        plot_summary(aggregate([p], dataset_size), p.with_suffix(".png"), axis_name)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wdm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    rs = sub.add_parser("run-sweep", help="train every cell of a sweep config")
    rs.add_argument("config")
    rs.add_argument("--out-dir")
    rs.add_argument("--seeds", type=int, nargs="+")
    rs.add_argument("--workers", type=int)
    rs.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan")
    rp = sub.add_parser("report", help="aggregate sweep CSVs and redraw plots")
    rp.add_argument("csv", nargs="+")
    rp.add_argument("--out", help="markdown output path (default: report.md next to the first CSV)")
    rp.add_argument("--dataset-size", type=int, help="n for the exp(MI) > n flag when no manifest says")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "run-sweep":
        return run_sweep(args.config, args.out_dir, args.seeds, args.dry_run, args.workers)
    try:
        report(args.csv, args.out, args.dataset_size)
    except (ReportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
