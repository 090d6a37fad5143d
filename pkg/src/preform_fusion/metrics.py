"""Pooled regression metrics and model comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: Optional[float]  # None when the targets have zero variance
    n: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2, "n": self.n}


def compute_metrics(predictions, targets) -> Metrics:
    """RMSE, MAE and R² pooled over every entry of an (n, k) prediction matrix.

    R² uses the grand mean of all target entries as the reference predictor.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape}, targets {t.shape}")
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    if p.shape[0] < 1:
        raise ValueError("need at least one row")
    err = p - t
    sse = float(np.sum(err * err))
    rmse = math.sqrt(sse / err.size)
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else None
    return Metrics(rmse, mae, r2, int(p.shape[0]))


def per_dimension_metrics(predictions, targets) -> list[Metrics]:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    return [compute_metrics(p[:, j], t[:, j]) for j in range(p.shape[1])]


def relative_improvement(before: float, after: float, higher_is_better: bool = False) -> float:
    """Percent improvement of ``after`` over ``before``.

    Errors improve by ``(before - after) / before``; scores such as R² by
    ``(after - before) / before``.
    """
    if before == 0:
        return 0.0 if after == before else math.copysign(math.inf, after - before)
    change = (after - before) if higher_is_better else (before - after)
    return 100.0 * change / abs(before)


def format_improvement(pct: float, higher_is_better: bool = False, decimals: int = 1) -> str:
    """Render a percent change with an arrow, e.g. ``'↓ 72%'`` for decimals=0."""
    arrow = "↑" if higher_is_better else "↓"
    if pct < 0:
        arrow = "↓" if higher_is_better else "↑"
    return f"{arrow} {abs(pct):.{decimals}f}%"


def compare_models(models: Sequence, eval_set, names: Sequence[str] | None = None) -> dict:
    """Metrics for each model on ``eval_set`` plus pairwise relative improvements.

    A model that cannot consume ``eval_set`` is reported with an ``error`` entry;
    the remaining models are still evaluated.
    """
    names = list(names or [getattr(m, "label", "") or f"model{i}" for i, m in enumerate(models)])
    if len(set(names)) != len(names):
        raise ValueError(f"model names must be unique: {names}")
    per_model = {}
    for name, model in zip(names, models):
        try:
            pred = model.predict_dataset(eval_set)
        except (KeyError, ValueError) as exc:
            per_model[name] = {"error": str(exc)}
            continue
        m = compute_metrics(pred, eval_set.targets)
        per_model[name] = {
            **m.to_dict(),
            "per_dimension": [d.to_dict() for d in per_dimension_metrics(pred, eval_set.targets)],
        }
    out = {"models": per_model}
    ok = [n for n in names if "error" not in per_model[n]]
    pairs = []
    for i, a in enumerate(ok):
        for b in ok[i + 1:]:
            ma, mb = per_model[a], per_model[b]
            pair = {
                "reference": a,
                "candidate": b,
                "rmse_improvement_pct": round(relative_improvement(ma["rmse"], mb["rmse"]), 1),
                "mae_improvement_pct": round(relative_improvement(ma["mae"], mb["mae"]), 1),
            }
            if ma["r2"] is not None and mb["r2"] is not None:
                pair["r2_improvement_pct"] = round(
                    relative_improvement(ma["r2"], mb["r2"], higher_is_better=True), 1)
            pairs.append(pair)
    if pairs:
        out["pairwise"] = pairs
    return out
