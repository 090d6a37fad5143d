"""Tabular container pairing named input columns with 32-point temperature targets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_TARGETS = 32
TARGET_NAMES = tuple(f"t{i:02d}" for i in range(N_TARGETS))
PROVENANCE_KINDS = ("simulated", "predicted")

# descriptor feature names per variant kind; material knots are named by temperature
GEOMETRY_FEATURES = ("length", "wall_thickness", "weight", "neck_length")


@dataclass(frozen=True)
class VariantDescriptor:
    kind: str
    features: dict
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("material", "geometry"):
            raise ValueError(f"unknown variant kind {self.kind!r}")
        feats = {str(k): float(v) for k, v in dict(self.features).items()}
        if not feats:
            raise ValueError("descriptor needs at least one feature")
        if self.kind == "geometry" and tuple(feats) != GEOMETRY_FEATURES:
            raise ValueError(f"geometry descriptor features must be {GEOMETRY_FEATURES}")
        if self.kind == "material" and not all(k.startswith("cp_") for k in feats):
            raise ValueError("material descriptor features must be cp_<temperature> knots")
        if any(not (np.isfinite(v) and v > 0) for v in feats.values()):
            raise ValueError("descriptor feature values must be positive")
        object.__setattr__(self, "features", feats)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.features)

    def values(self) -> np.ndarray:
        return np.array(list(self.features.values()))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "features": dict(self.features)}

    @classmethod
    def from_dict(cls, d: dict) -> "VariantDescriptor":
        return cls(d["kind"], d["features"], d.get("label", ""))


def _descriptor_kind(names: Sequence[str]) -> str | None:
    if any(n.startswith("cp_") for n in names):
        return "material"
    if any(n in GEOMETRY_FEATURES for n in names):
        return "geometry"
    return None


@dataclass(frozen=True, eq=False)
class Dataset:
    input_names: tuple[str, ...]
    inputs: np.ndarray
    targets: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.input_names)
        object.__setattr__(self, "input_names", names)
        x = np.array(self.inputs, dtype=float).reshape(-1, len(names)) if len(names) else None
        if x is None:
            raise ValueError("dataset needs at least one input column")
        y = np.array(self.targets, dtype=float)
        if y.ndim != 2 or y.shape[1] != N_TARGETS:
            raise ValueError(f"targets must have shape (n, {N_TARGETS}), got {y.shape}")
        prov = tuple(self.provenance)
        if not (x.shape[0] == y.shape[0] == len(prov)):
            raise ValueError(
                f"row count mismatch: inputs {x.shape[0]}, targets {y.shape[0]}, "
                f"provenance {len(prov)}"
            )
        if len(set(names)) != len(names):
            raise ValueError("input column names must be unique")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        bad = set(prov) - set(PROVENANCE_KINDS)
        if bad:
            raise ValueError(f"unknown provenance flags {sorted(bad)}")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "provenance", prov)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.input_names == other.input_names
            and self.provenance == other.provenance
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.targets, other.targets)
        )

    @property
    def target_names(self) -> tuple[str, ...]:
        return TARGET_NAMES

    def columns(self, names: Iterable[str]) -> np.ndarray:
        idx = []
        for n in names:
            if n not in self.input_names:
                raise KeyError(f"dataset has no input column {n!r}; columns: {self.input_names}")
            idx.append(self.input_names.index(n))
        return self.inputs[:, idx]

    def rows(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.input_names,
            self.inputs[index],
            self.targets[index],
            tuple(np.asarray(self.provenance, dtype=object)[index]),
        )

    @property
    def slab_names(self) -> tuple[str, ...]:
        desc = set(self.descriptor_names)
        return tuple(n for n in self.input_names if n not in desc)

    @property
    def descriptor_names(self) -> tuple[str, ...]:
        kind = _descriptor_kind(self.input_names)
        if kind == "material":
            return tuple(n for n in self.input_names if n.startswith("cp_"))
        if kind == "geometry":
            return tuple(n for n in self.input_names if n in GEOMETRY_FEATURES)
        return ()

    def variant_descriptor(self, label: str = "") -> VariantDescriptor:
        """Descriptor of a single-variant dataset (descriptor columns must be constant)."""
        names = self.descriptor_names
        if not names:
            raise ValueError("dataset has no variant descriptor columns")
        block = self.columns(names)
        if len(self) == 0 or np.any(block != block[0]):
            raise ValueError("descriptor columns are not constant; dataset mixes variants")
        return VariantDescriptor(_descriptor_kind(names), dict(zip(names, block[0])), label)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise ValueError("nothing to concatenate")
    names = datasets[0].input_names
    for d in datasets[1:]:
        if d.input_names != names:
            raise ValueError(f"column mismatch: {d.input_names} vs {names}")
    return Dataset(
        names,
        np.vstack([d.inputs for d in datasets]),
        np.vstack([d.targets for d in datasets]),
        tuple(p for d in datasets for p in d.provenance),
    )
