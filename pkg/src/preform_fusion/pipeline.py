"""Experiment graph: base training, fine-tuning, experience extraction, fusion, baseline."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import store
from .dataset import Dataset, VariantDescriptor, concat
from .doe import ParameterSpace, lhs_sample
from .metrics import compare_models, relative_improvement
from .neural import (ModelConfig, TrainConfig, TrainedModel, TrainingHistory, fit, train)
from .thermal import generate_dataset

log = logging.getLogger(__name__)

FINETUNE_LR_FACTOR = 0.3
R2_TARGET = 0.95


def derive_seed(master: int, stage: str) -> int:
    """Stage seed as a 63-bit slice of sha256("<master>/<stage>")."""
    digest = hashlib.sha256(f"{master}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def finetune(base: TrainedModel, data: Dataset, tc: TrainConfig, label: str = "",
             lr_factor: float = FINETUNE_LR_FACTOR) -> tuple[TrainedModel, TrainingHistory]:
    """Warm-start every layer from ``base`` and keep training on ``data``.

    The input scaler is inherited; the output scaler is re-fitted to the new
    variant's targets. The learning rate is ``lr_factor`` times ``tc``'s.
    """
    missing = [n for n in base.input_names if n not in data.input_names]
    if missing:
        raise ValueError(f"dataset lacks model inputs {missing}; model expects {base.input_names}")
    model, history = fit(base, data, tc, refit_input_scaler=False, refit_output_scaler=True,
                         lr_scale=lr_factor)
    try:
        descriptor = data.variant_descriptor(label).to_dict()
    except ValueError:
        descriptor = None
    parent = base.provenance.get("label")
    chain = list(base.provenance.get("chain") or [parent]) + [label]
    model = replace(model, provenance={"label": label, "parent": parent, "chain": chain,
                                       "descriptor": descriptor})
    return model, history


@dataclass(frozen=True)
class FusionPlan:
    variant_models: Sequence[tuple[TrainedModel, VariantDescriptor]]
    space: ParameterSpace
    doe_n: int = 2000
    seed: int = 0

    def __post_init__(self):
        if len(self.variant_models) < 2:
            raise ValueError("fusion needs at least two variant models")
        if self.doe_n < 1:
            raise ValueError("doe_n must be >= 1")
        names = {d.names for _, d in self.variant_models}
        if len(names) != 1:
            raise ValueError("variant descriptors must share the same feature names")
        for model, desc in self.variant_models:
            if model.input_names != self.space.names:
                raise ValueError(
                    f"model {model.label!r} consumes {model.input_names}, "
                    f"fusion space provides {self.space.names}")
        labels = [d.label for _, d in self.variant_models]
        if len(set(labels)) != len(labels):
            raise ValueError(f"variant labels must be distinct: {labels}")


def extract_experience(plan: FusionPlan) -> Dataset:
    """Query every variant model on one fresh LHS design.

    Each model contributes ``doe_n`` rows: the design point, that variant's
    descriptor features, and the model's predicted temperatures.
    """
    design = lhs_sample(plan.space, plan.doe_n, plan.seed)
    pts = np.asarray(design.points)
    parts = []
    for model, desc in plan.variant_models:
        pred = model.predict(pts)
        inputs = np.hstack([pts, np.tile(desc.values(), (len(pts), 1))])
        parts.append(Dataset(plan.space.names + desc.names, inputs, pred,
                             ("predicted",) * len(pts)))
    return concat(parts)


def train_global(fused: Dataset, config: ModelConfig, tc: TrainConfig,
                 label: str = "global") -> tuple[TrainedModel, TrainingHistory]:
    if len(fused) == 0:
        raise ValueError("fused dataset is empty")
    if not fused.descriptor_names:
        raise ValueError("fused dataset carries no variant descriptor columns")
    if config.input_dim != len(fused.input_names):
        raise ValueError(f"global model needs input_dim={len(fused.input_names)}")
    return train(config, fused, tc, input_names=fused.input_names, label=label)


def _with_descriptor(data: Dataset, desc: VariantDescriptor) -> Dataset:
    if all(n in data.input_names for n in desc.names):
        return data
    inputs = np.hstack([data.inputs, np.tile(desc.values(), (len(data), 1))])
    return Dataset(data.input_names + desc.names, inputs, data.targets, data.provenance)


def subsample_variants(variant_datasets: Sequence[tuple[Dataset, VariantDescriptor]],
                       sizes: Sequence[int], seed: int) -> Dataset:
    if len(sizes) != len(variant_datasets):
        raise ValueError("one size per variant dataset is required")
    short = [(d.label, int(k), len(ds)) for (ds, d), k in zip(variant_datasets, sizes)
             if k > len(ds) or k < 0]
    if short:
        detail = ", ".join(f"{lab}: requested {k}, available {a}" for lab, k, a in short)
        raise ValueError(f"insufficient rows for baseline ({detail})")
    if sum(sizes) == 0:
        raise ValueError("baseline training set would be empty")
    rng = np.random.default_rng(seed)
    parts = []
    for (ds, desc), k in zip(variant_datasets, sizes):
        if k == 0:
            continue
        idx = np.sort(rng.choice(len(ds), size=int(k), replace=False))
        parts.append(_with_descriptor(ds, desc).rows(idx))
    return concat(parts)


def train_baseline(variant_datasets: Sequence[tuple[Dataset, VariantDescriptor]],
                   sizes: Sequence[int], config: ModelConfig, tc: TrainConfig,
                   seed: int, label: str = "baseline") -> tuple[TrainedModel, TrainingHistory]:
    """From-scratch model on a per-variant subsample of simulated data."""
    combined = subsample_variants(variant_datasets, sizes, seed)
    return train(config, combined, tc, input_names=combined.input_names, label=label)


# ---------------------------------------------------------------------- case study

@dataclass
class CaseStudyResult:
    report: dict
    models: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    datasets: dict = field(default_factory=dict)


class _Sink:
    """Writes artifacts as soon as they exist so a failed run leaves them behind."""

    def __init__(self, out_dir):
        self.root = Path(out_dir) if out_dir is not None else None
        if self.root is not None:
            for sub in ("checkpoints", "datasets", "histories"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)

    def dataset(self, name, data):
        if self.root is not None:
            store.write_dataset(data, self.root / "datasets" / f"{name}.csv")

    def model(self, name, model, history):
        if self.root is not None:
            store.save_checkpoint(model, self.root / "checkpoints" / f"{name}.ckpt")
            store.write_history_csv(history, self.root / "histories" / f"{name}.csv")


def _model_summary(model: TrainedModel, history: TrainingHistory) -> dict:
    p = model.provenance
    return {
        "label": p.get("label"),
        "parent": p.get("parent"),
        "chain": p.get("chain"),
        "input_names": list(model.input_names),
        "skip_connections": model.config.skip_connections,
        "n_params": model.config.n_params,
        "epochs_run": len(history),
        "best_epoch": history.best_epoch,
        "epochs_to_r2_target": history.epochs_to_r2(R2_TARGET),
        "checkpoint_sha256": hashlib.sha256(store.checkpoint_bytes(model)).hexdigest(),
    }


def run_case_study(manifest: store.ManifestFile, out_dir=None,
                   threads: int = 1) -> CaseStudyResult:
    """Execute the full fusion experiment described by ``manifest``.

    Produces five models (base, two fine-tunes, global, baseline) for the
    default manifests, evaluates them and returns the report. When
    ``out_dir`` is given, datasets, checkpoints and histories are written
    there as they are produced.
    """
    m = manifest.data
    master = manifest.master_seed
    space = manifest.space
    sim = manifest.sim_config
    base_tc = manifest.train_config
    arch = manifest.model_config_kwargs
    sizes = m["sizes"]
    base_label = m["variants"]["base"]
    ft_labels = list(m["variants"]["finetune"])
    training_labels = [base_label] + ft_labels
    unseen_label = m["variants"]["unseen"]
    variants = {label: manifest.variant(label) for label in training_labels + [unseen_label]}

    seeds: dict[str, int] = {}

    def seed(stage: str) -> int:
        seeds[stage] = derive_seed(master, stage)
        return seeds[stage]

    def tc_for(stage: str) -> TrainConfig:
        return replace(base_tc, seed=seed(f"train:{stage}"))

    sink = _Sink(out_dir)
    result = CaseStudyResult(report={})
    slab_names = space.names

    def gen(name, label, n, stage):
        ds = generate_dataset(space, variants[label], n, seed(stage), sim, threads=threads)
        result.datasets[name] = ds
        sink.dataset(name, ds)
        return ds

    def keep(name, model, history):
        result.models[name] = model
        result.histories[name] = history
        sink.model(name, model, history)

    try:
        # variant-specific training data and models
        train_sets = {}
        for label in training_labels:
            n = sizes["base"] if label == base_label else sizes["finetune"]
            train_sets[label] = gen(f"train_{label}", label, n, f"data:{label}")

        cfg = ModelConfig(len(slab_names), init_seed=seed(f"init:{base_label}"), **arch)
        base_desc = variants[base_label].descriptor()
        base_model, base_hist = train(cfg, train_sets[base_label], tc_for(base_label),
                                      input_names=slab_names, label=base_label,
                                      descriptor=base_desc.to_dict())
        keep(base_label, base_model, base_hist)
        variant_models = {base_label: base_model}
        for label in ft_labels:
            model, hist = finetune(base_model, train_sets[label], tc_for(label), label=label,
                                   lr_factor=m["finetune_lr_factor"])
            keep(label, model, hist)
            variant_models[label] = model

        # experience extraction and the global model
        plan = FusionPlan([(variant_models[lab], variants[lab].descriptor())
                           for lab in training_labels],
                          space, sizes["doe_n"], seed("fusion-doe"))
        fused = extract_experience(plan)
        if m["fusion"]["include_simulated"]:
            fused = concat([fused] + [train_sets[lab] for lab in training_labels])
        result.datasets["fused"] = fused
        sink.dataset("fused", fused)
        gcfg = ModelConfig(len(fused.input_names), init_seed=seed("init:global"), **arch)
        global_model, global_hist = train_global(fused, gcfg, tc_for("global"))
        keep("global", global_model, global_hist)

        # from-scratch baseline on fresh simulated pools
        pool_n = max(sizes["baseline"].values())
        pools = []
        for label in training_labels:
            pool = gen(f"pool_{label}", label, pool_n, f"pool:{label}")
            pools.append((pool, variants[label].descriptor()))
        bcfg = ModelConfig(len(fused.input_names), init_seed=seed("init:baseline"), **arch)
        baseline, baseline_hist = train_baseline(
            pools, [sizes["baseline"][lab] for lab in training_labels], bcfg,
            tc_for("baseline"), seed("baseline-subsample"))
        keep("baseline", baseline, baseline_hist)

        # evaluation sets
        evaluations = {}
        for label in training_labels:
            test = gen(f"test_{label}", label, sizes["variant_test"], f"test:{label}")
            evaluations[f"variant:{label}"] = compare_models(
                [variant_models[label], global_model, baseline], test,
                names=[label, "global", "baseline"])
        data_seeds = {v for k, v in seeds.items() if not k.startswith(("train:", "init:"))}
        unseen_seed = derive_seed(master, "unseen-test")
        if unseen_seed in data_seeds:
            raise RuntimeError("unseen-variant seed collides with a training design seed")
        unseen = gen("unseen_test", unseen_label, sizes["unseen_test"], "unseen-test")
        leaked = [name for name, ds in result.datasets.items() if name != "unseen_test"
                  and _contains_descriptor(ds, variants[unseen_label].descriptor())]
        if leaked:
            raise RuntimeError(f"unseen variant descriptor found in training data: {leaked}")
        unseen_eval = compare_models([baseline, global_model], unseen,
                                     names=["baseline", "global"])
        evaluations[f"unseen:{unseen_label}"] = unseen_eval
    except Exception as exc:
        result.report = _assemble_report(manifest, seeds, result, {}, status="failed",
                                         error=f"{type(exc).__name__}: {exc}")
        if sink.root is not None:
            store.write_report(result.report, sink.root / "report.json")
        raise

    result.report = _assemble_report(manifest, seeds, result, evaluations)
    if sink.root is not None:
        store.write_manifest(manifest, sink.root / "manifest.json")
        store.write_report(result.report, sink.root / "report.json")
    return result


def _contains_descriptor(ds: Dataset, desc: VariantDescriptor) -> bool:
    if not all(n in ds.input_names for n in desc.names):
        return False
    block = ds.columns(desc.names)
    return bool(np.any(np.all(block == desc.values(), axis=1)))


def _assemble_report(manifest, seeds, result: CaseStudyResult, evaluations: dict,
                     status: str = "ok", error: str | None = None) -> dict:
    m = manifest.data
    report = {
        "experiment": m["name"],
        "case": m["case"],
        "status": status,
        "master_seed": manifest.master_seed,
        "seeds": dict(sorted(seeds.items())),
        "manifest": manifest.to_dict(),
        "fusion_mode": ("predicted+simulated" if m["fusion"]["include_simulated"]
                        else "predicted_only"),
        "datasets": {
            name: {"rows": len(ds),
                   "sha256": hashlib.sha256(store.dataset_to_csv(ds).encode()).hexdigest()}
            for name, ds in sorted(result.datasets.items())
        },
        "models": {name: _model_summary(model, result.histories[name])
                   for name, model in result.models.items()},
        "histories": {name: h.to_dict() for name, h in result.histories.items()},
        "evaluations": evaluations,
    }
    if error:
        report["error"] = error
    unseen_key = f"unseen:{m['variants']['unseen']}"
    if unseen_key in evaluations:
        g = evaluations[unseen_key]["models"]["global"]
        b = evaluations[unseen_key]["models"]["baseline"]
        report["summary"] = {
            "unseen_rmse_global": g["rmse"],
            "unseen_rmse_baseline": b["rmse"],
            "unseen_mae_global": g["mae"],
            "unseen_mae_baseline": b["mae"],
            "unseen_r2_global": g["r2"],
            "unseen_r2_baseline": b["r2"],
            "rmse_improvement_pct": round(relative_improvement(b["rmse"], g["rmse"]), 1),
            "global_beats_baseline": g["rmse"] < b["rmse"],
            "fused_rows": len(result.datasets["fused"]),
        }
    return report


def architecture_benchmark(variant: str = "mid_cp", n_train: int = 550, n_test: int = 200,
                           n_seeds: int = 5, master_seed: int = 0,
                           model_kwargs: dict | None = None, tc: TrainConfig | None = None,
                           space: ParameterSpace | None = None, sim=None) -> dict:
    """Plain MLP against the residual variant on one variant's simulated data.

    Both arms share data, initial-weight seeds, shuffling seeds and budget;
    only the skip connections differ.
    """
    from .metrics import compute_metrics
    from .thermal import default_space, preset_variant

    space = space or default_space()
    tc = tc or TrainConfig()
    kwargs = dict(model_kwargs or {})
    kwargs.pop("skip_connections", None)
    v = preset_variant(variant)
    train_set = generate_dataset(space, v, n_train, derive_seed(master_seed, "arch:train"), sim)
    test_set = generate_dataset(space, v, n_test, derive_seed(master_seed, "arch:test"), sim)
    arms = {"plain": False, "skip": True}
    out = {name: {"rmse": [], "mae": [], "r2": []} for name in arms}
    for i in range(n_seeds):
        init_seed = derive_seed(master_seed, f"arch:init:{i}")
        run_tc = replace(tc, seed=derive_seed(master_seed, f"arch:train:{i}"))
        for name, skip in arms.items():
            cfg = ModelConfig(len(space), skip_connections=skip, init_seed=init_seed, **kwargs)
            model, _ = train(cfg, train_set, run_tc, input_names=space.names, label=name)
            met = compute_metrics(model.predict_dataset(test_set), test_set.targets)
            for key in ("rmse", "mae", "r2"):
                out[name][key].append(getattr(met, key))
    summary = {name: {f"mean_{k}": float(np.mean(v)) for k, v in d.items()}
               for name, d in out.items()}
    return {
        "variant": variant, "n_train": n_train, "n_test": n_test, "n_seeds": n_seeds,
        "master_seed": master_seed, "per_seed": out, "summary": summary,
        "rmse_reduction_pct": relative_improvement(summary["plain"]["mean_rmse"],
                                                   summary["skip"]["mean_rmse"]),
    }
