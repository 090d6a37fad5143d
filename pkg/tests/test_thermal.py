from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from preform_fusion.doe import ParameterSpace
from preform_fusion.thermal import (CP_PRESETS, HIGH_CP, LARGE, LOW_CP, MEDIUM, MID_CP, SMALL,
                                    UNSEEN_CP, HeatCapacityCurve, PreformGeometry, SimConfig,
                                    SlabConfig, UnstableTimeStepError, _Enthalpy,
                                    default_space, generate_dataset, interp_cp, max_stable_step,
                                    power_profile, preset_variant, simulate, simulate_batch)

CFG = SimConfig()


def test_table_knots():
    assert interp_cp(LOW_CP, 80) == 1000
    assert interp_cp(HIGH_CP, 120) == 1650
    for curve in (LOW_CP, MID_CP, HIGH_CP):
        for t, c in zip(curve.temps, curve.cps):
            assert interp_cp(curve, t) == c


def test_interpolation_and_clamp():
    # halfway between (80, 1000) and (100, 1050)
    assert interp_cp(LOW_CP, 90) == pytest.approx(1025.0)
    assert interp_cp(MID_CP, 300) == 1600
    assert interp_cp(MID_CP, 20) == 1100


def test_unseen_curve_is_mid_high_mean():
    assert UNSEEN_CP.cps == (1175.0, 1225.0, 1425.0, 1625.0, 1700.0)


@pytest.mark.parametrize("temps,cps", [
    ((80,), (1000,)),
    ((80, 80), (1000, 1100)),
    ((100, 80), (1000, 1100)),
    ((80, 100), (1000, -1)),
    ((80, 100), (1000,)),
])
def test_curve_validation(temps, cps):
    with pytest.raises(ValueError):
        HeatCapacityCurve(temps, cps)


def test_geometry_validation():
    with pytest.raises(ValueError):
        PreformGeometry(100, 3, 24, 120)
    with pytest.raises(ValueError):
        PreformGeometry(100, 0, 24, 20)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(-50, 400))
def test_enthalpy_inverse_roundtrip(t):
    for curve in CP_PRESETS.values():
        e = _Enthalpy(curve)
        assert float(e.inverse(e.forward(np.array(t)))) == pytest.approx(t, abs=1e-9)


def test_enthalpy_matches_quadrature():
    e = _Enthalpy(HIGH_CP)
    for t in (25.0, 95.0, 133.0, 260.0):
        ref, _ = quad(lambda x: interp_cp(HIGH_CP, x), 80.0, t, points=HIGH_CP.temps, limit=200)
        assert float(e.forward(np.array(t))) == pytest.approx(ref, rel=1e-10, abs=1e-6)


def test_zero_power_profile():
    q = power_profile(SlabConfig((30.0, 90.0)), MEDIUM, replace(CFG, input_power=0.0))
    assert np.all(q == 0.0)


def test_superposition_of_identical_slabs():
    double = power_profile(SlabConfig((55.0, 55.0)), MEDIUM, CFG)
    single = power_profile(SlabConfig((55.0,)), MEDIUM, CFG)
    np.testing.assert_allclose(double, 2 * single, rtol=1e-14)


def test_reference_profile_has_two_maxima():
    # independent closed form: focal node = 31 * (0.2 + 0.6 * s / 112.5)
    expected = sorted(round(31 * (0.2 + 0.6 * s / 112.5)) for s in (40.0, 80.0))
    assert expected == [13, 19]
    q = power_profile(SlabConfig((40.0, 80.0)), MEDIUM, CFG)
    peaks = [i for i in range(1, 31) if q[i] > q[i - 1] and q[i] > q[i + 1]]
    assert peaks == expected
    assert np.all(q >= 0)


@pytest.mark.parametrize("pos", [0.0, -5.0, 112.6, float("nan")])
def test_slab_bounds(pos):
    with pytest.raises(ValueError):
        SlabConfig((pos, 50.0))
    with pytest.raises(ValueError):
        simulate_batch(np.array([[pos, 50.0]]), MID_CP, MEDIUM, CFG)


def test_zero_power_gives_ambient():
    for curve in CP_PRESETS.values():
        T = simulate(SlabConfig((40.0, 80.0)), curve, MEDIUM, replace(CFG, input_power=0.0))
        assert np.all(T == CFG.ambient_temp)


def test_reference_field_shape_and_range():
    T = simulate(SlabConfig((40.0, 80.0)), MID_CP, MEDIUM, CFG)
    assert T.shape == (32,)
    assert np.all(np.isfinite(T)) and np.all(T >= CFG.ambient_temp)
    assert 80.0 <= T.max() <= 120.0


def test_deterministic():
    a = simulate(SlabConfig((33.3, 71.0)), LOW_CP, LARGE, CFG)
    b = simulate(SlabConfig((33.3, 71.0)), LOW_CP, LARGE, CFG)
    assert a.tobytes() == b.tobytes()


def test_high_cp_runs_cooler():
    slabs = SlabConfig((40.0, 80.0))
    assert np.all(simulate(slabs, HIGH_CP, MEDIUM, CFG) <= simulate(slabs, LOW_CP, MEDIUM, CFG))


def test_power_monotonicity():
    pos = np.random.default_rng(0).uniform(5, 112.5, size=(20, 2))
    prev = None
    for p in (0.0, 250.0, 500.0, 1000.0, 1500.0):
        T = simulate_batch(pos, MID_CP, SMALL, replace(CFG, input_power=p))
        if prev is not None:
            assert np.all(T >= prev)
        prev = T


def test_time_step_refinement():
    slabs = SlabConfig((40.0, 80.0))
    coarse = simulate(slabs, MID_CP, MEDIUM, CFG)
    fine = simulate(slabs, MID_CP, MEDIUM, replace(CFG, time_step=CFG.time_step / 2))
    assert np.max(np.abs(coarse - fine)) <= 0.5


def test_stability_bound_enforced():
    limit = max_stable_step(MID_CP, MEDIUM, CFG)
    # 0.4 * rho * cp_min * dz^2 / k, computed by hand for the medium preform
    dz = 0.1 / 31
    assert limit == pytest.approx(0.4 * 1380 * 1100 * dz * dz / 0.24, rel=1e-12)
    bad = replace(CFG, time_step=limit * 1.01, heating_time=limit * 10)
    with pytest.raises(UnstableTimeStepError) as err:
        simulate(SlabConfig((40.0, 80.0)), MID_CP, MEDIUM, bad)
    assert err.value.max_step == pytest.approx(limit)


def _cp_oracle(curve):
    t, c = curve.temps, curve.cps

    def cp(x):
        if x <= t[0]:
            return c[0]
        if x >= t[-1]:
            return c[-1]
        for i in range(len(t) - 1):
            if t[i] <= x <= t[i + 1]:
                return c[i] + (c[i + 1] - c[i]) * (x - t[i]) / (t[i + 1] - t[i])
    return cp


@pytest.mark.parametrize("curve", [LOW_CP, HIGH_CP])
def test_energy_balance_without_losses(curve):
    cfg = replace(CFG, conduction_coeff=0.0, convection_coeff=0.0)
    slabs = SlabConfig((40.0, 80.0))
    T = simulate(slabs, curve, MEDIUM, cfg)
    q = power_profile(slabs, MEDIUM, cfg)
    rho = cfg.density * (MEDIUM.weight / MEDIUM.length) / cfg.ref_linear_mass
    cp = _cp_oracle(curve)
    for i in range(32):
        deposited = q[i] * cfg.heating_time
        if deposited < 1e-3:
            continue
        stored = rho * quad(cp, cfg.ambient_temp, T[i], points=curve.temps, limit=200)[0]
        assert stored == pytest.approx(deposited, rel=1e-3)


def test_generate_dataset_rows_and_columns():
    space = default_space()
    mid = generate_dataset(space, preset_variant("mid_cp"), 550, seed=1)
    assert len(mid) == 550
    assert mid.input_names == ("s1", "s2", "cp_80", "cp_100", "cp_120", "cp_150", "cp_250")
    assert set(mid.provenance) == {"simulated"}
    low = generate_dataset(space, preset_variant("low_cp"), 450, seed=2)
    assert len(low) == 450
    geo = generate_dataset(space, preset_variant("large"), 5, seed=2)
    assert geo.input_names[2:] == ("length", "wall_thickness", "weight", "neck_length")


def test_single_row_matches_simulate():
    space = default_space()
    v = preset_variant("high_cp")
    ds = generate_dataset(space, v, 1, seed=5)
    T = simulate(SlabConfig(tuple(ds.inputs[0, :2])), v.material, v.geometry, CFG)
    assert np.array_equal(ds.targets[0], T)


def test_parallel_generation_keeps_order():
    space = ParameterSpace((("s1", 5.0, 112.5), ("s2", 5.0, 112.5)))
    v = preset_variant("small")
    serial = generate_dataset(space, v, 300, seed=9, chunk=64)
    threaded = generate_dataset(space, v, 300, seed=9, threads=3, chunk=64)
    assert serial == threaded


def test_unknown_variant():
    with pytest.raises(KeyError, match="known variants"):
        preset_variant("ultra_cp")
