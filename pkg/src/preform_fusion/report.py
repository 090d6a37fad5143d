"""Render tables and figures from a case-study run directory."""
from __future__ import annotations

import csv
from pathlib import Path

from . import plotting, store
from .metrics import format_improvement, relative_improvement
from .thermal import SimConfig, SlabConfig, simulate


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    return "" if v is None else repr(float(v))


def render_report(run_dir, out_dir=None) -> list[Path]:
    """Write metric tables, plot-data CSVs and SVG figures; returns the written paths."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    report = store.read_report(run_dir / "report.json")
    written = []

    rows, dim_rows = [], []
    for set_name, ev in report.get("evaluations", {}).items():
        for model, met in ev["models"].items():
            if "error" in met:
                continue
            rows.append([set_name, model, _num(met["rmse"]), _num(met["mae"]),
                         _num(met["r2"]), met["n"]])
            for j, d in enumerate(met["per_dimension"]):
                dim_rows.append([set_name, model, f"t{j:02d}", _num(d["rmse"]),
                                 _num(d["mae"]), _num(d["r2"])])
    path = out / "metrics.csv"
    _write_rows(path, ["eval_set", "model", "rmse", "mae", "r2", "n"], rows)
    written.append(path)
    path = out / "metrics_per_dimension.csv"
    _write_rows(path, ["eval_set", "model", "point", "rmse", "mae", "r2"], dim_rows)
    written.append(path)

    summary = report.get("summary")
    if summary:
        table = []
        for key, higher in (("rmse", False), ("mae", False), ("r2", True)):
            b, g = summary[f"unseen_{key}_baseline"], summary[f"unseen_{key}_global"]
            if b is None or g is None:
                continue
            pct = relative_improvement(b, g, higher_is_better=higher)
            table.append([key.upper() if key != "r2" else "R2", _num(b), _num(g),
                          format_improvement(pct, higher)])
        path = out / "unseen_comparison.csv"
        _write_rows(path, ["metric", "baseline", "global", "improvement"], table)
        written.append(path)

    histories = {}
    for name in report.get("models", {}):
        hpath = run_dir / "histories" / f"{name}.csv"
        if not hpath.exists():
            continue
        h = store.read_history_csv(hpath)
        histories[name] = h
        path = out / f"curve_{name}.csv"
        _write_rows(path, ["epoch", "train_loss", "val_r2"],
                    [[i + 1, _num(l), _num(r)] for i, (l, r) in
                     enumerate(zip(h.train_loss, h.val_r2))])
        written.append(path)

    case = report.get("case", "")
    focus = {k: histories[k] for k in ("global", "baseline") if k in histories}
    if focus:
        path = out / "training_global_vs_baseline.svg"
        plotting.plot_training_curves(focus, path, title=f"{case} case")
        written.append(path)
    if histories:
        path = out / "training_all_models.svg"
        plotting.plot_training_curves(histories, path)
        written.append(path)
    if report.get("evaluations"):
        path = out / "rmse_by_eval_set.svg"
        plotting.plot_metric_bars(report["evaluations"], path)
        written.append(path)

    manifest = report.get("manifest", {})
    if manifest.get("variants"):
        labels = [manifest["variants"]["base"], *manifest["variants"]["finetune"],
                  manifest["variants"]["unseen"]]
        sim = SimConfig(**manifest.get("sim", {}))
        custom = manifest.get("custom_variants", {})
        profiles = {}
        for label in labels:
            v = store.resolve_variant(label, custom)
            profiles[label] = simulate(SlabConfig((40.0, 80.0)), v.material, v.geometry, sim)
        path = out / "reference_profiles.svg"
        plotting.plot_profiles(profiles, path, title="slabs at 40 / 80 mm")
        written.append(path)
        if case == "material":
            path = out / "heat_capacity_curves.svg"
            plotting.plot_cp_curves([store.resolve_variant(l, custom).material
                                     for l in labels], path)
            written.append(path)
    return written
