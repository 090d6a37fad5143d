"""File formats: dataset CSV, model checkpoints, experiment manifests and reports.

Checkpoint layout (all offsets in bytes from the start of the file)::

    PREFORM-FUSION-CHECKPOINT\\n        magic line
    header-bytes <N>\\n                  decimal length of the JSON header
    <N bytes of UTF-8 JSON>\\n           format_version, model_config, scalers,
                                        provenance, tensor table, payload size
                                        and SHA-256
    <payload>                           every tensor as little-endian float64,
                                        row-major, in tensor-table order

Floats in text formats are written with ``repr`` (shortest round-trip form),
so write -> read -> write reproduces files byte for byte.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import PROVENANCE_KINDS, TARGET_NAMES, Dataset
from .doe import ParameterSpace
from .neural import ModelConfig, Scaler, TrainConfig, TrainedModel, TrainingHistory
from .thermal import (CP_PRESETS, GEOMETRY_PRESETS, HeatCapacityCurve, PreformGeometry,
                      SimConfig, Variant, preset_variant, MAX_SLAB_POSITION)

CHECKPOINT_MAGIC = b"PREFORM-FUSION-CHECKPOINT\n"
CHECKPOINT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------- datasets

def _fmt(v: float) -> str:
    return repr(float(v))


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(data.input_names) + list(TARGET_NAMES) + ["provenance"])
    for x, y, p in zip(data.inputs, data.targets, data.provenance):
        writer.writerow([_fmt(v) for v in x] + [_fmt(v) for v in y] + [p])
    return buf.getvalue()


def write_dataset(data: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(data), encoding="utf-8")


def _parse_float(token: str, line: int, column: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DatasetFormatError(f"line {line}: column {column!r}: not a number: {token!r}")
    if not math.isfinite(v):
        raise DatasetFormatError(f"line {line}: column {column!r}: non-finite value {token!r}")
    return v


def read_dataset(path) -> Dataset:
    """Parse a dataset CSV strictly; every problem is reported with its line number."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DatasetFormatError("line 1: empty file, expected a header")
    header = rows[0]
    if len(set(header)) != len(header):
        raise DatasetFormatError("line 1: duplicate column names in header")
    if not header or header[-1] != "provenance":
        raise DatasetFormatError("line 1: last column must be 'provenance'")
    missing = [t for t in TARGET_NAMES if t not in header]
    if missing:
        raise DatasetFormatError(f"line 1: missing target column {missing[0]!r}")
    first = header.index(TARGET_NAMES[0])
    if tuple(header[first:-1]) != TARGET_NAMES:
        raise DatasetFormatError(
            f"line 1: target columns must be {TARGET_NAMES[0]}..{TARGET_NAMES[-1]} in order, "
            "directly before 'provenance'")
    input_names = header[:first]
    if not input_names:
        raise DatasetFormatError("line 1: no input columns")
    if any(re.fullmatch(r"t\d+", n) for n in input_names):
        raise DatasetFormatError("line 1: stray target-like column among inputs")
    n_in = len(input_names)
    inputs, targets, prov = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(
                f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        vals = [_parse_float(tok, lineno, col) for tok, col in zip(row[:-1], header[:-1])]
        if row[-1] not in PROVENANCE_KINDS:
            raise DatasetFormatError(f"line {lineno}: unknown provenance {row[-1]!r}")
        inputs.append(vals[:n_in])
        targets.append(vals[n_in:])
        prov.append(row[-1])
    return Dataset(
        tuple(input_names),
        np.array(inputs, dtype=float).reshape(-1, n_in),
        np.array(targets, dtype=float).reshape(-1, len(TARGET_NAMES)),
        tuple(prov),
    )


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------------ checkpoints

def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def checkpoint_bytes(model: TrainedModel) -> bytes:
    tensors = []
    chunks = []
    for i, p in enumerate(model.params):
        layer, kind = divmod(i, 2)
        tensors.append({"name": f"layer{layer}.{'bias' if kind else 'weight'}",
                        "shape": list(p.shape)})
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "input_names": list(model.input_names),
        "output_names": list(TARGET_NAMES),
        "input_scaler": model.input_scaler.to_dict(),
        "output_scaler": model.output_scaler.to_dict(),
        "provenance": model.provenance,
        "tensors": tensors,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    return (CHECKPOINT_MAGIC + f"header-bytes {len(hbytes)}\n".encode("ascii")
            + hbytes + b"\n" + payload)


def save_checkpoint(model: TrainedModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def checkpoint_from_bytes(blob: bytes) -> TrainedModel:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("offset 0: bad magic; not a preform-fusion checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    eol = blob.find(b"\n", pos)
    m = re.fullmatch(rb"header-bytes (\d+)", blob[pos:eol] if eol >= 0 else b"")
    if m is None:
        raise CheckpointError(f"offset {pos}: malformed header-length line")
    hlen = int(m.group(1))
    hstart = eol + 1
    hend = hstart + hlen
    if hend + 1 > len(blob) or blob[hend:hend + 1] != b"\n":
        raise CheckpointError(f"offset {hstart}: header of {hlen} bytes truncated or unterminated")
    try:
        header = json.loads(blob[hstart:hend].decode("utf-8"), object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"offset {hstart + exc.pos}: corrupt header: {exc.msg}") from None
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"offset {hstart}: corrupt header: {exc}") from None
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r} (expected {CHECKPOINT_VERSION})")
    try:
        config = ModelConfig.from_dict(header["model_config"])
        in_scaler = Scaler.from_dict(header["input_scaler"])
        out_scaler = Scaler.from_dict(header["output_scaler"])
        tensors = header["tensors"]
        pbytes = header["payload_bytes"]
        digest = header["payload_sha256"]
        input_names = tuple(header["input_names"])
        provenance = header["provenance"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"offset {hstart}: invalid header field: {exc}") from None
    expected = []
    for fan_in, fan_out in config.layer_shapes:
        expected += [[fan_in, fan_out], [fan_out]]
    if [t["shape"] for t in tensors] != expected:
        raise CheckpointError(f"offset {hstart}: tensor shapes do not match the model config")
    pstart = hend + 1
    payload = blob[pstart:]
    if len(payload) != pbytes:
        raise CheckpointError(
            f"offset {pstart}: payload is {len(payload)} bytes, header declares {pbytes}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError(f"offset {pstart}: payload checksum mismatch (corrupted weights)")
    params, off = [], 0
    for shape in expected:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).astype(float)
        params.append(arr.reshape(shape))
        off += 8 * count
    return TrainedModel(config, params, input_names, in_scaler, out_scaler, provenance)


def load_checkpoint(path) -> TrainedModel:
    return checkpoint_from_bytes(Path(path).read_bytes())


# -------------------------------------------------------------------------- manifests

_CASE_DEFAULTS = {
    "material": {
        "variants": {"base": "mid_cp", "finetune": ["low_cp", "high_cp"], "unseen": "unseen_cp"},
        "baseline": {"low_cp": 625, "mid_cp": 700, "high_cp": 625},
    },
    "geometry": {
        "variants": {"base": "medium", "finetune": ["small", "large"],
                     "unseen": "unseen_geometry"},
        "baseline": {"small": 625, "medium": 700, "large": 625},
    },
}

_SIZES_DEFAULT = {"base": 550, "finetune": 450, "doe_n": 2000, "unseen_test": 500,
                  "variant_test": 200}
_MODEL_DEFAULT = {"hidden_widths": [64, 64, 64], "skip_connections": True, "activation": "tanh"}
_TOP_KEYS = {"schema_version", "name", "case", "master_seed", "variants", "custom_variants",
             "sizes", "space", "model", "train", "finetune_lr_factor", "fusion", "sim",
             "output_dir"}


def _check_keys(d: dict, allowed, where: str) -> None:
    if not isinstance(d, dict):
        raise ManifestError(f"{where}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ManifestError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _int(v, where, minimum=0) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ManifestError(f"{where}: expected an integer >= {minimum}, got {v!r}")
    return v


def _num(v, where) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ManifestError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


@dataclass(frozen=True)
class ManifestFile:
    """Validated experiment manifest with every default filled in."""

    data: dict

    @property
    def case(self) -> str:
        return self.data["case"]

    @property
    def master_seed(self) -> int:
        return self.data["master_seed"]

    def variant(self, name: str) -> Variant:
        return resolve_variant(name, self.data.get("custom_variants", {}))

    @property
    def space(self) -> ParameterSpace:
        return ParameterSpace.from_bounds(self.data["space"])

    @property
    def model_config_kwargs(self) -> dict:
        m = self.data["model"]
        return {"hidden_widths": tuple(m["hidden_widths"]),
                "skip_connections": m["skip_connections"], "activation": m["activation"]}

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.data["train"])

    @property
    def sim_config(self) -> SimConfig:
        return SimConfig(**self.data["sim"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def resolve_variant(name: str, custom: dict | None = None) -> Variant:
    custom = custom or {}
    if name in custom:
        spec = custom[name]
        if spec["kind"] == "material":
            geo = GEOMETRY_PRESETS[spec.get("geometry", "medium")]
            return Variant(name, "material",
                           HeatCapacityCurve(spec["temps"], spec["cps"], name), geo)
        mat = CP_PRESETS[spec.get("material", "mid_cp")]
        geo = PreformGeometry(spec["length"], spec["wall_thickness"], spec["weight"],
                              spec["neck_length"], name)
        return Variant(name, "geometry", mat, geo)
    return preset_variant(name)


def _validate_custom(custom: dict) -> dict:
    out = {}
    for name, spec in custom.items():
        where = f"custom_variants.{name}"
        if name in CP_PRESETS or name in GEOMETRY_PRESETS:
            raise ManifestError(f"{where}: name clashes with a built-in preset")
        if not isinstance(spec, dict) or spec.get("kind") not in ("material", "geometry"):
            raise ManifestError(f"{where}: 'kind' must be 'material' or 'geometry'")
        if spec["kind"] == "material":
            _check_keys(spec, {"kind", "temps", "cps", "geometry"}, where)
            if spec.get("geometry", "medium") not in GEOMETRY_PRESETS:
                raise ManifestError(f"{where}.geometry: unknown geometry preset")
            try:
                HeatCapacityCurve(spec["temps"], spec["cps"], name)
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{where}: invalid heat capacity curve: {exc}") from None
            if tuple(float(t) for t in spec["temps"]) != tuple(
                    next(iter(CP_PRESETS.values())).temps):
                raise ManifestError(f"{where}: temps must match the shared knot temperatures")
        else:
            _check_keys(spec, {"kind", "length", "wall_thickness", "weight", "neck_length",
                               "material"}, where)
            if spec.get("material", "mid_cp") not in CP_PRESETS:
                raise ManifestError(f"{where}.material: unknown material preset")
            try:
                PreformGeometry(spec["length"], spec["wall_thickness"], spec["weight"],
                                spec["neck_length"], name)
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{where}: invalid geometry: {exc}") from None
        out[name] = spec
    return out


def validate_manifest(raw: dict) -> ManifestFile:
    """Check a raw manifest dictionary and fill in defaults."""
    _check_keys(raw, _TOP_KEYS, "manifest")
    if "schema_version" not in raw:
        raise ManifestError("manifest: missing schema_version")
    if raw["schema_version"] != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(f"manifest: unsupported schema_version {raw['schema_version']!r}")
    case = raw.get("case", "material")
    if case not in _CASE_DEFAULTS:
        raise ManifestError(f"case: must be 'material' or 'geometry', got {case!r}")
    defaults = _CASE_DEFAULTS[case]
    m = {"schema_version": MANIFEST_SCHEMA_VERSION, "case": case}
    m["name"] = raw.get("name", f"{case}-case-study")
    if not isinstance(m["name"], str):
        raise ManifestError("name: expected a string")
    m["master_seed"] = _int(raw.get("master_seed", 0), "master_seed")
    m["custom_variants"] = _validate_custom(raw.get("custom_variants", {}))

    variants = raw.get("variants", {})
    _check_keys(variants, {"base", "finetune", "unseen"}, "variants")
    v = {**defaults["variants"], **variants}
    if not isinstance(v["finetune"], list) or not v["finetune"]:
        raise ManifestError("variants.finetune: expected a non-empty list")
    labels = [v["base"], *v["finetune"], v["unseen"]]
    if len(set(labels)) != len(labels):
        raise ManifestError(f"variants: labels must be distinct, got {labels}")
    for label in labels:
        try:
            variant = resolve_variant(label, m["custom_variants"])
        except KeyError as exc:
            raise ManifestError(f"variants: {exc.args[0]}") from None
        if variant.kind != case:
            raise ManifestError(f"variants: {label!r} is a {variant.kind} variant in a {case} case")
    m["variants"] = {"base": v["base"], "finetune": list(v["finetune"]), "unseen": v["unseen"]}

    sizes = raw.get("sizes", {})
    _check_keys(sizes, set(_SIZES_DEFAULT) | {"baseline"}, "sizes")
    s = {k: _int(sizes.get(k, d), f"sizes.{k}", 1) for k, d in _SIZES_DEFAULT.items()}
    training = [v["base"], *v["finetune"]]
    if "baseline" in sizes:
        baseline = sizes["baseline"]
        _check_keys(baseline, training, "sizes.baseline")
    elif set(defaults["baseline"]) == set(training):
        baseline = defaults["baseline"]
    else:
        baseline = {label: s["base"] for label in training}
    s["baseline"] = {label: _int(baseline.get(label, 0), f"sizes.baseline.{label}")
                     for label in training}
    if sum(s["baseline"].values()) == 0:
        raise ManifestError("sizes.baseline: total baseline size must be positive")
    m["sizes"] = s

    space = raw.get("space", {"s1": [5.0, MAX_SLAB_POSITION], "s2": [5.0, MAX_SLAB_POSITION]})
    if not isinstance(space, dict) or not space:
        raise ManifestError("space: expected a non-empty object of name -> [lower, upper]")
    for name, b in space.items():
        if not isinstance(b, list) or len(b) != 2:
            raise ManifestError(f"space.{name}: expected [lower, upper]")
        _num(b[0], f"space.{name}"), _num(b[1], f"space.{name}")
        if not (0 < b[0] < b[1] <= MAX_SLAB_POSITION):
            raise ManifestError(f"space.{name}: bounds must satisfy 0 < lower < upper <= "
                                f"{MAX_SLAB_POSITION}")
    m["space"] = {k: [float(b[0]), float(b[1])] for k, b in space.items()}

    model = raw.get("model", {})
    _check_keys(model, set(_MODEL_DEFAULT), "model")
    m["model"] = {**_MODEL_DEFAULT, **model}
    try:
        ModelConfig(input_dim=1, **{**m["model"],
                                    "hidden_widths": tuple(m["model"]["hidden_widths"])})
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"model: {exc}") from None

    train_keys = {f.name for f in fields(TrainConfig)} - {"seed"}
    tr = raw.get("train", {})
    _check_keys(tr, train_keys, "train")
    tdefault = TrainConfig()
    m["train"] = {k: tr.get(k, getattr(tdefault, k)) for k in sorted(train_keys)}
    try:
        TrainConfig(**m["train"])
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"train: {exc}") from None

    m["finetune_lr_factor"] = _num(raw.get("finetune_lr_factor", 0.3), "finetune_lr_factor")
    if m["finetune_lr_factor"] <= 0:
        raise ManifestError("finetune_lr_factor: must be positive")

    fusion = raw.get("fusion", {})
    _check_keys(fusion, {"include_simulated"}, "fusion")
    inc = fusion.get("include_simulated", False)
    if not isinstance(inc, bool):
        raise ManifestError("fusion.include_simulated: expected true/false")
    m["fusion"] = {"include_simulated": inc}

    sim_keys = {f.name for f in fields(SimConfig)}
    sim = raw.get("sim", {})
    _check_keys(sim, sim_keys, "sim")
    sdefault = SimConfig()
    m["sim"] = {k: _num(sim.get(k, getattr(sdefault, k)), f"sim.{k}") for k in sorted(sim_keys)}
    try:
        SimConfig(**m["sim"])
    except ValueError as exc:
        raise ManifestError(f"sim: {exc}") from None

    out = raw.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ManifestError("output_dir: expected a string or null")
    m["output_dir"] = out
    return ManifestFile(m)


def parse_manifest(text: str) -> ManifestFile:
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except ValueError as exc:
        raise ManifestError(str(exc)) from None
    return validate_manifest(raw)


def load_manifest(path) -> ManifestFile:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def manifest_to_text(manifest: ManifestFile) -> str:
    return json.dumps(manifest.data, indent=2, sort_keys=True) + "\n"


def write_manifest(manifest: ManifestFile, path) -> None:
    Path(path).write_text(manifest_to_text(manifest), encoding="utf-8")


def default_manifest(case: str = "material", master_seed: int = 0, **overrides) -> ManifestFile:
    return validate_manifest({"schema_version": MANIFEST_SCHEMA_VERSION, "case": case,
                              "master_seed": master_seed, **overrides})


# ---------------------------------------------------------------------------- reports

def report_to_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(report_to_text(report), encoding="utf-8")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"), object_pairs_hook=_no_duplicates)


def write_history_csv(history: TrainingHistory, path) -> None:
    """Per-epoch curve: epoch, train_loss, val_rmse, val_r2."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_rmse", "val_r2"])
        for i, (loss, rmse, r2) in enumerate(
                zip(history.train_loss, history.val_rmse, history.val_r2), start=1):
            w.writerow([i, _fmt(loss), _fmt(rmse), "" if r2 is None else _fmt(r2)])


def read_history_csv(path) -> TrainingHistory:
    h = TrainingHistory()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["epoch", "train_loss", "val_rmse", "val_r2"]:
        raise DatasetFormatError(f"{path}: line 1: not a history CSV")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise DatasetFormatError(f"{path}: line {lineno}: expected 4 fields")
        h.train_loss.append(float(row[1]))
        h.val_rmse.append(float(row[2]))
        h.val_r2.append(float(row[3]) if row[3] else None)
    return h
