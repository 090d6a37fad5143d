"""Command-line entry point: ``preform-fusion <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline, store
from .dataset import Dataset, VariantDescriptor
from .doe import ParameterSpace
from .metrics import compute_metrics
from .neural import ModelConfig, TrainConfig, train
from .thermal import MAX_SLAB_POSITION, generate_dataset

log = logging.getLogger("preform_fusion")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _announce(args, effective: dict) -> None:
    blob = json.dumps(effective, sort_keys=True, default=str).encode()
    print(f"seed={args.seed} config-hash={hashlib.sha256(blob).hexdigest()[:16]}")


def _manifest(args) -> store.ManifestFile | None:
    return store.load_manifest(args.config) if getattr(args, "config", None) else None


def _train_config(args, manifest) -> TrainConfig:
    base = manifest.train_config if manifest else TrainConfig()
    overrides = {k: getattr(args, k) for k in
                 ("epochs", "batch_size", "learning_rate", "patience")
                 if getattr(args, k, None) is not None}
    return replace(base, seed=pipeline.derive_seed(args.seed, "train"), **overrides)


def _model_kwargs(args, manifest) -> dict:
    kw = dict(manifest.model_config_kwargs) if manifest else {
        "hidden_widths": (64, 64, 64), "skip_connections": True, "activation": "tanh"}
    if getattr(args, "no_skip", False):
        kw["skip_connections"] = False
    if getattr(args, "activation", None):
        kw["activation"] = args.activation
    if getattr(args, "hidden", None):
        kw["hidden_widths"] = tuple(args.hidden)
    return kw


def _write_checkpoint(model, history, out) -> None:
    out = Path(out)
    store.save_checkpoint(model, out)
    store.write_history_csv(history, out.with_suffix(".history.csv"))
    best = history.best_epoch
    if len(history):
        i = max(best, 1) - 1
        print(f"epochs={len(history)} best_epoch={best} val_rmse={history.val_rmse[i]:.6g} "
              f"val_r2={history.val_r2[i]}")
    print(f"wrote {out} sha256={store.file_checksum(out)}")


# ------------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    manifest = _manifest(args)
    custom = manifest.data["custom_variants"] if manifest else {}
    try:
        variant = store.resolve_variant(args.variant, custom)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_FAILURE
    space = manifest.space if manifest else _space_from(args.space, ("s1", "s2"))
    sim = manifest.sim_config if manifest else None
    _announce(args, {"cmd": "gen-data", "variant": args.variant, "n": args.n,
                     "space": space.dims, "sim": sim})
    data = generate_dataset(space, variant, args.n, args.seed, sim, threads=args.threads)
    store.write_dataset(data, args.out)
    print(f"rows={len(data)} sha256={store.file_checksum(args.out)}")
    return EXIT_OK


def _input_selection(data: Dataset, spec: str):
    if spec == "slab":
        return data.slab_names
    if spec == "all":
        return data.input_names
    return tuple(s.strip() for s in spec.split(",") if s.strip())


def cmd_train(args) -> int:
    manifest = _manifest(args)
    data = store.read_dataset(args.data)
    names = _input_selection(data, args.inputs)
    tc = _train_config(args, manifest)
    cfg = ModelConfig(len(names), init_seed=pipeline.derive_seed(args.seed, "init"),
                      **_model_kwargs(args, manifest))
    _announce(args, {"cmd": "train", "inputs": names, "model": cfg.to_dict(), "train": tc})
    try:
        desc = data.variant_descriptor(args.label).to_dict()
    except ValueError:
        desc = None
    model, history = train(cfg, data, tc, input_names=names, label=args.label, descriptor=desc)
    _write_checkpoint(model, history, args.out)
    return EXIT_OK


def cmd_finetune(args) -> int:
    manifest = _manifest(args)
    base = store.load_checkpoint(args.base)
    data = store.read_dataset(args.data)
    tc = _train_config(args, manifest)
    factor = args.lr_factor or (manifest.data["finetune_lr_factor"] if manifest
                                else pipeline.FINETUNE_LR_FACTOR)
    _announce(args, {"cmd": "finetune", "base": base.provenance, "train": tc,
                     "lr_factor": factor})
    model, history = pipeline.finetune(base, data, tc, label=args.label, lr_factor=factor)
    _write_checkpoint(model, history, args.out)
    return EXIT_OK


def _space_from(specs, names) -> ParameterSpace:
    bounds = {n: (5.0, MAX_SLAB_POSITION) for n in names}
    for spec in specs or []:
        try:
            name, rng = spec.split("=")
            lo, hi = (float(v) for v in rng.split(":"))
        except ValueError:
            raise UsageError(f"bad --space entry {spec!r}; expected name=lower:upper")
        bounds[name] = (lo, hi)
    return ParameterSpace.from_bounds(bounds)


def cmd_fuse(args) -> int:
    models = [store.load_checkpoint(p) for p in args.models]
    pairs = []
    for path, model in zip(args.models, models):
        desc = model.provenance.get("descriptor")
        if not desc:
            raise ValueError(f"{path}: checkpoint records no variant descriptor")
        pairs.append((model, VariantDescriptor.from_dict(desc)))
    manifest = _manifest(args)
    space = manifest.space if manifest else _space_from(args.space, models[0].input_names)
    _announce(args, {"cmd": "fuse", "models": [m.provenance for m in models],
                     "doe_n": args.doe_n, "space": space.dims})
    plan = pipeline.FusionPlan(pairs, space, args.doe_n, args.seed)
    fused = pipeline.extract_experience(plan)
    store.write_dataset(fused, args.out)
    print(f"rows={len(fused)} sha256={store.file_checksum(args.out)}")
    return EXIT_OK


def cmd_train_global(args) -> int:
    manifest = _manifest(args)
    fused = store.read_dataset(args.data)
    tc = _train_config(args, manifest)
    cfg = ModelConfig(len(fused.input_names), init_seed=pipeline.derive_seed(args.seed, "init"),
                      **_model_kwargs(args, manifest))
    _announce(args, {"cmd": "train-global", "model": cfg.to_dict(), "train": tc})
    model, history = pipeline.train_global(fused, cfg, tc)
    _write_checkpoint(model, history, args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    if len(args.sizes) != len(args.data):
        raise UsageError("--sizes needs one count per --data file")
    manifest = _manifest(args)
    pools = []
    for path in args.data:
        ds = store.read_dataset(path)
        pools.append((ds, ds.variant_descriptor(Path(path).stem)))
    tc = _train_config(args, manifest)
    width = len(pools[0][0].input_names)
    cfg = ModelConfig(width, init_seed=pipeline.derive_seed(args.seed, "init"),
                      **_model_kwargs(args, manifest))
    _announce(args, {"cmd": "baseline", "sizes": args.sizes, "model": cfg.to_dict(),
                     "train": tc})
    model, history = pipeline.train_baseline(
        pools, args.sizes, cfg, tc, pipeline.derive_seed(args.seed, "baseline-subsample"))
    _write_checkpoint(model, history, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = store.load_checkpoint(args.model)
    data = store.read_dataset(args.data)
    _announce(args, {"cmd": "evaluate", "model": model.provenance, "data": args.data})
    m = compute_metrics(model.predict_dataset(data), data.targets)
    print(f"n={m.n} rmse={m.rmse:.6g} mae={m.mae:.6g} r2={m.r2}")
    if args.out:
        store.write_report({"model": args.model, "data": args.data, "metrics": m.to_dict()},
                           args.out)
    return EXIT_OK


def cmd_case_study(args) -> int:
    if args.config:
        manifest = store.load_manifest(args.config)
        if args.case and args.case != manifest.case:
            raise UsageError(f"--case {args.case} conflicts with manifest case {manifest.case}")
        manifest = store.validate_manifest({**manifest.data, "master_seed": args.seed})
    else:
        manifest = store.default_manifest(args.case or "material", args.seed)
    out = args.out or manifest.data["output_dir"]
    if not out:
        raise UsageError("an output directory is required (--out or output_dir in the manifest)")
    _announce(args, manifest.data)
    result = pipeline.run_case_study(manifest, out_dir=out, threads=args.threads)
    s = result.report["summary"]
    print(f"fused_rows={s['fused_rows']} unseen_rmse global={s['unseen_rmse_global']:.4f} "
          f"baseline={s['unseen_rmse_baseline']:.4f} improvement={s['rmse_improvement_pct']}%")
    if not args.no_figures:
        from .report import render_report
        render_report(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report

    _announce(args, {"cmd": "report", "run": args.run})
    for path in render_report(args.run, args.out):
        print(path)
    return EXIT_OK


def cmd_arch_benchmark(args) -> int:
    manifest = _manifest(args)
    kw = _model_kwargs(args, manifest)
    tc = manifest.train_config if manifest else TrainConfig()
    _announce(args, {"cmd": "arch-benchmark", "variant": args.variant, "model": kw, "train": tc})
    res = pipeline.architecture_benchmark(args.variant, args.n_train, args.n_test, args.seeds,
                                          args.seed, kw, tc)
    p, s = res["summary"]["plain"], res["summary"]["skip"]
    print(f"plain mean_rmse={p['mean_rmse']:.4f}  skip mean_rmse={s['mean_rmse']:.4f}  "
          f"reduction={res['rmse_reduction_pct']:.1f}%")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        store.write_report(res, out / "architecture_benchmark.json")
        from .plotting import plot_architecture_comparison
        plot_architecture_comparison(res["per_seed"]["plain"]["rmse"],
                                     res["per_seed"]["skip"]["rmse"],
                                     out / "architecture_benchmark.svg")
    return EXIT_OK


# ------------------------------------------------------------------------ parser

def _add_train_opts(p) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--learning-rate", "--lr", type=float)
    p.add_argument("--patience", type=_positive_int)
    p.add_argument("--activation", choices=("relu", "tanh"))
    p.add_argument("--hidden", type=_positive_int, nargs="+", help="hidden layer widths")
    p.add_argument("--no-skip", action="store_true", help="plain MLP without residual blocks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preform-fusion", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--config", help="experiment manifest (JSON)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate a variant dataset")
    p.add_argument("--variant", required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--space", nargs="*", help="name=lower:upper slab bounds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model from scratch")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inputs", default="slab", help="'slab', 'all' or comma-separated columns")
    p.add_argument("--label", default="")
    _add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune a checkpoint")
    p.add_argument("--base", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="")
    p.add_argument("--lr-factor", type=float)
    _add_train_opts(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("fuse", parents=[common], help="extract experience into a fused CSV")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--doe-n", type=_positive_int, default=2000)
    p.add_argument("--space", nargs="*", help="name=lower:upper slab bounds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train-global", parents=[common], help="train on a fused dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_opts(p)
    p.set_defaults(func=cmd_train_global)

    p = sub.add_parser("baseline", parents=[common], help="from-scratch multi-variant model")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--out", required=True)
    _add_train_opts(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("case-study", parents=[common], help="run a full case study")
    p.add_argument("--case", choices=("material", "geometry"))
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_case_study)

    p = sub.add_parser("report", parents=[common], help="render tables and figures for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("arch-benchmark", parents=[common],
                       help="plain MLP vs skip connections on one variant")
    p.add_argument("--variant", default="mid_cp")
    p.add_argument("--n-train", type=_positive_int, default=550)
    p.add_argument("--n-test", type=_positive_int, default=200)
    p.add_argument("--seeds", type=_positive_int, default=5)
    p.add_argument("--out")
    _add_train_opts(p)
    p.set_defaults(func=cmd_arch_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
