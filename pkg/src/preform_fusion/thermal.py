"""Synthetic 1-D axial heating model used as the training-data source.

The preform is discretised into 32 nodes spaced uniformly from neck (node 0)
to tip (node 31). Each node receives a volumetric microwave source shaped by
the slab positions, conducts axially through zero-flux ends and loses heat to
ambient. Temperature-dependent heat capacity is handled in enthalpy form so
the deposited energy is accounted for exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset, VariantDescriptor
from .doe import ParameterSpace, lhs_sample

N_NODES = 32
MAX_SLAB_POSITION = 112.5  # mm, half the 250 mm cavity width minus preform allowance

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


class UnstableTimeStepError(ValueError):
    def __init__(self, time_step: float, max_step: float):
        super().__init__(
            f"time step {time_step:g} s violates the explicit stability bound; "
            f"maximum admissible step is {max_step:.6g} s"
        )
        self.time_step = time_step
        self.max_step = max_step


@dataclass(frozen=True)
class HeatCapacityCurve:
    """Piecewise-linear cp(T) with clamped ends. temps in °C, cps in J/kg°C."""

    temps: tuple[float, ...]
    cps: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temps)
        cps = tuple(float(c) for c in self.cps)
        object.__setattr__(self, "temps", temps)
        object.__setattr__(self, "cps", cps)
        if len(temps) != len(cps):
            raise ValueError("temps and cps must have equal length")
        if len(temps) < 2:
            raise ValueError("a heat capacity curve needs at least 2 knots")
        if not all(np.isfinite(temps)) or not all(np.isfinite(cps)):
            raise ValueError("heat capacity knots must be finite")
        if any(b <= a for a, b in zip(temps, temps[1:])):
            raise ValueError("curve temperatures must be strictly increasing")
        if any(c <= 0 for c in cps):
            raise ValueError("heat capacities must be strictly positive")

    def descriptor(self) -> VariantDescriptor:
        names = [f"cp_{t:g}" for t in self.temps]
        return VariantDescriptor("material", dict(zip(names, self.cps)), self.label)


def interp_cp(curve: HeatCapacityCurve, T):
    """Heat capacity at temperature ``T``; constant beyond the outer knots."""
    out = np.interp(T, curve.temps, curve.cps)
    return float(out) if np.ndim(out) == 0 else out


class _Enthalpy:
    """Specific enthalpy g(T) = integral of cp from the first knot, and its inverse."""

    def __init__(self, curve: HeatCapacityCurve):
        t = np.asarray(curve.temps)
        c = np.asarray(curve.cps)
        self.t, self.c = t, c
        self.slope = np.diff(c) / np.diff(t)
        seg = np.diff(t) * (c[:-1] + c[1:]) / 2.0
        self.g = np.concatenate([[0.0], np.cumsum(seg)])

    def forward(self, T: np.ndarray) -> np.ndarray:
        t, c, g = self.t, self.c, self.g
        k = np.clip(np.searchsorted(t, T, side="right") - 1, 0, len(t) - 2)
        x = np.clip(T, t[0], t[-1]) - t[k]
        out = g[k] + c[k] * x + 0.5 * self.slope[k] * x * x
        out = np.where(T < t[0], c[0] * (T - t[0]), out)
        return np.where(T > t[-1], g[-1] + c[-1] * (T - t[-1]), out)

    def inverse(self, e: np.ndarray) -> np.ndarray:
        t, c, g = self.t, self.c, self.g
        k = np.clip(np.searchsorted(g, e, side="right") - 1, 0, len(t) - 2)
        d = np.clip(e, g[0], g[-1]) - g[k]
        # root of c_k x + a/2 x^2 = d in the cancellation-free form
        x = 2.0 * d / (c[k] + np.sqrt(c[k] ** 2 + 2.0 * self.slope[k] * d))
        out = t[k] + x
        out = np.where(e < g[0], t[0] + e / c[0], out)
        return np.where(e > g[-1], t[-1] + (e - g[-1]) / c[-1], out)


@dataclass(frozen=True)
class PreformGeometry:
    """Preform dimensions: length/wall thickness/neck length in mm, weight in g."""

    length: float
    wall_thickness: float
    weight: float
    neck_length: float
    label: str = ""

    def __post_init__(self):
        for name in ("length", "wall_thickness", "weight", "neck_length"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"geometry {name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        if self.neck_length >= self.length:
            raise ValueError("neck length must be shorter than the preform")

    def descriptor(self) -> VariantDescriptor:
        feats = {
            "length": self.length,
            "wall_thickness": self.wall_thickness,
            "weight": self.weight,
            "neck_length": self.neck_length,
        }
        return VariantDescriptor("geometry", feats, self.label)


@dataclass(frozen=True)
class SlabConfig:
    positions: tuple[float, ...]

    def __post_init__(self):
        pos = tuple(float(p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if not pos:
            raise ValueError("at least one slab position is required")
        _check_positions(np.asarray(pos)[None, :])


def _check_positions(pos: np.ndarray) -> None:
    bad = ~np.isfinite(pos) | (pos <= 0.0) | (pos > MAX_SLAB_POSITION)
    if np.any(bad):
        v = pos[bad][0]
        raise ValueError(f"slab position {v} mm outside (0, {MAX_SLAB_POSITION}] mm")


@dataclass(frozen=True)
class SimConfig:
    """Physical and coupling constants of the stand-in heating model.

    ``source_scale`` converts input power (W) into peak volumetric deposition
    (W/m^3) for a single perfectly coupled lobe. Convection acts on both wall
    surfaces, so its volumetric rate is ``2 h / wall_thickness``.
    """

    ambient_temp: float = 25.0
    input_power: float = 1000.0
    heating_time: float = 30.0
    time_step: float = 0.5
    conduction_coeff: float = 0.24
    convection_coeff: float = 10.0
    density: float = 1380.0
    source_scale: float = 4400.0
    focal_offset: float = 0.2
    focal_span: float = 0.6
    lobe_fwhm: float = 1.0 / 8.0  # fraction of preform length
    coupling_center: float = 60.0  # mm
    coupling_width: float = 30.0  # mm
    ref_wall_thickness: float = 3.0  # mm
    ref_linear_mass: float = 0.24  # g/mm

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if name in ("ambient_temp",):
                continue
            if name in ("input_power", "conduction_coeff", "convection_coeff", "focal_offset"):
                if v < 0:
                    raise ValueError(f"{name} must be non-negative, got {v}")
            elif v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.heating_time < self.time_step:
            raise ValueError("heating_time must be at least one time step")


def _mass_factor(geometry: PreformGeometry, config: SimConfig) -> float:
    return (geometry.weight / geometry.length) / config.ref_linear_mass


def node_positions(geometry: PreformGeometry) -> np.ndarray:
    """Axial node coordinates in mm, neck to tip."""
    return np.linspace(0.0, geometry.length, N_NODES)


def max_stable_step(material: HeatCapacityCurve, geometry: PreformGeometry,
                    config: SimConfig) -> float:
    """Largest explicit time step allowed: 0.4 * rho * cp_min * dz^2 / k."""
    if config.conduction_coeff == 0:
        return float("inf")
    dz = geometry.length / (N_NODES - 1) * 1e-3
    rho = config.density * _mass_factor(geometry, config)
    return 0.4 * rho * min(material.cps) * dz * dz / config.conduction_coeff


def _power_batch(positions: np.ndarray, geometry: PreformGeometry, config: SimConfig) -> np.ndarray:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    _check_positions(positions)
    L = geometry.length
    z = node_positions(geometry)
    centers = L * (config.focal_offset + config.focal_span * positions / MAX_SLAB_POSITION)
    sigma = L * config.lobe_fwhm * _FWHM_TO_SIGMA
    lobes = np.exp(-0.5 * ((z[None, None, :] - centers[:, :, None]) / sigma) ** 2).sum(axis=1)
    offset = (positions.mean(axis=1) - config.coupling_center) / config.coupling_width
    efficiency = 1.0 / (1.0 + offset ** 2)
    amplitude = config.input_power * config.source_scale
    amplitude *= geometry.wall_thickness / config.ref_wall_thickness
    return amplitude * efficiency[:, None] * lobes


def power_profile(slabs: SlabConfig, geometry: PreformGeometry, config: SimConfig) -> np.ndarray:
    """Volumetric power deposition (W/m^3) at the 32 axial nodes."""
    return _power_batch(np.asarray(slabs.positions)[None, :], geometry, config)[0]


def simulate_batch(positions, material: HeatCapacityCurve, geometry: PreformGeometry,
                   config: SimConfig) -> np.ndarray:
    """Final temperature fields for a batch of slab configurations, shape (B, 32)."""
    max_dt = max_stable_step(material, geometry, config)
    if config.time_step > max_dt:
        raise UnstableTimeStepError(config.time_step, max_dt)
    q = _power_batch(positions, geometry, config)
    n_steps = max(1, int(round(config.heating_time / config.time_step)))
    dt = config.heating_time / n_steps
    dz = geometry.length / (N_NODES - 1) * 1e-3
    rho = config.density * _mass_factor(geometry, config)
    k_dz2 = config.conduction_coeff / (dz * dz)
    h_vol = 2.0 * config.convection_coeff / (geometry.wall_thickness * 1e-3)
    ta = config.ambient_temp

    enthalpy = _Enthalpy(material)
    g_amb = float(enthalpy.forward(np.array(ta)))
    T = np.full_like(q, ta)
    H = np.zeros_like(q)  # J/m^3 above ambient
    lap = np.empty_like(q)
    for _ in range(n_steps):
        lap[:, 1:-1] = T[:, :-2] - 2.0 * T[:, 1:-1] + T[:, 2:]
        lap[:, 0] = 2.0 * (T[:, 1] - T[:, 0])
        lap[:, -1] = 2.0 * (T[:, -2] - T[:, -1])
        H = H + dt * (q + k_dz2 * lap - h_vol * (T - ta))
        T = enthalpy.inverse(g_amb + H / rho)
    # round-off in the enthalpy inversion may dip a hair below ambient
    return np.maximum(T, ta)


def simulate(slabs: SlabConfig, material: HeatCapacityCurve, geometry: PreformGeometry,
             config: SimConfig) -> np.ndarray:
    """Final 32-node temperature field in °C for one slab configuration."""
    return simulate_batch(np.asarray(slabs.positions)[None, :], material, geometry, config)[0]


@dataclass(frozen=True)
class Variant:
    """A simulated process variant: one material on one geometry."""

    label: str
    kind: str  # "material" or "geometry": which properties the descriptor exposes
    material: HeatCapacityCurve
    geometry: PreformGeometry

    def descriptor(self) -> VariantDescriptor:
        src = self.material if self.kind == "material" else self.geometry
        d = src.descriptor()
        return VariantDescriptor(d.kind, d.features, self.label)


def generate_dataset(space: ParameterSpace, variant: Variant, n: int, seed: int,
                     config: SimConfig | None = None, threads: int = 1,
                     chunk: int = 256) -> Dataset:
    """Simulate an LHS design of ``n`` slab configurations for one variant.

    Input columns are the slab dimensions of ``space`` followed by the variant's
    descriptor features. Rows follow design order regardless of ``threads``.
    """
    config = config or SimConfig()
    design = lhs_sample(space, n, seed)
    pts = np.asarray(design.points)
    chunks = [pts[i:i + chunk] for i in range(0, len(pts), chunk)]

    def run(block):
        return simulate_batch(block, variant.material, variant.geometry, config)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fields = list(pool.map(run, chunks))
    else:
        fields = [run(b) for b in chunks]
    targets = np.vstack(fields)
    desc = variant.descriptor()
    inputs = np.hstack([pts, np.tile(desc.values(), (n, 1))])
    return Dataset(
        input_names=space.names + desc.names,
        inputs=inputs,
        targets=targets,
        provenance=("simulated",) * n,
    )


# Heat capacity arrays used for the material study (J/kg°C at 80..250 °C).
CP_TEMPS = (80.0, 100.0, 120.0, 150.0, 250.0)
LOW_CP = HeatCapacityCurve(CP_TEMPS, (1000, 1050, 1100, 1350, 1450), "low_cp")
MID_CP = HeatCapacityCurve(CP_TEMPS, (1100, 1150, 1200, 1500, 1600), "mid_cp")
HIGH_CP = HeatCapacityCurve(CP_TEMPS, (1250, 1300, 1650, 1750, 1800), "high_cp")
# held-out material: knotwise mean of mid and high
UNSEEN_CP = HeatCapacityCurve(
    CP_TEMPS, tuple((a + b) / 2 for a, b in zip(MID_CP.cps, HIGH_CP.cps)), "unseen_cp"
)

SMALL = PreformGeometry(80.0, 2.5, 18.0, 18.0, "small")
MEDIUM = PreformGeometry(100.0, 3.0, 24.0, 21.0, "medium")
LARGE = PreformGeometry(120.0, 3.5, 32.0, 21.0, "large")
UNSEEN_GEOMETRY = PreformGeometry(110.0, 3.2, 28.0, 21.0, "unseen_geometry")

CP_PRESETS = {c.label: c for c in (LOW_CP, MID_CP, HIGH_CP, UNSEEN_CP)}
GEOMETRY_PRESETS = {g.label: g for g in (SMALL, MEDIUM, LARGE, UNSEEN_GEOMETRY)}


def preset_variant(name: str) -> Variant:
    """Material presets run on the medium preform; geometry presets use mid cp."""
    if name in CP_PRESETS:
        return Variant(name, "material", CP_PRESETS[name], MEDIUM)
    if name in GEOMETRY_PRESETS:
        return Variant(name, "geometry", MID_CP, GEOMETRY_PRESETS[name])
    known = ", ".join(sorted(CP_PRESETS) + sorted(GEOMETRY_PRESETS))
    raise KeyError(f"unknown variant {name!r}; known variants: {known}")


def default_space(n_slabs: int = 2, lower: float = 5.0) -> ParameterSpace:
    return ParameterSpace(tuple((f"s{i + 1}", lower, MAX_SLAB_POSITION) for i in range(n_slabs)))
