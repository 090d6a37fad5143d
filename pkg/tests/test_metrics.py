import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from preform_fusion.metrics import (compare_models, compute_metrics, format_improvement,
                                    relative_improvement)


def brute_force(pred, targ):
    flat_p = [float(v) for v in np.ravel(pred)]
    flat_t = [float(v) for v in np.ravel(targ)]
    m = len(flat_p)
    sse = sum((a - b) ** 2 for a, b in zip(flat_p, flat_t))
    mae = sum(abs(a - b) for a, b in zip(flat_p, flat_t)) / m
    mean = math.fsum(flat_t) / m
    sst = sum((b - mean) ** 2 for b in flat_t)
    return math.sqrt(sse / m), mae, 1 - sse / sst


def test_perfect_prediction():
    t = np.random.default_rng(0).normal(size=(5, 32))
    m = compute_metrics(t, t)
    assert (m.rmse, m.mae, m.r2, m.n) == (0.0, 0.0, 1.0, 5)


def test_grand_mean_predictor_has_zero_r2():
    t = np.random.default_rng(1).normal(size=(7, 32))
    m = compute_metrics(np.full_like(t, t.mean()), t)
    assert m.r2 == pytest.approx(0.0, abs=1e-12)


def test_hand_arithmetic():
    m = compute_metrics(np.array([1.0, 3.0]), np.array([2.0, 2.0]))
    assert m.rmse == 1.0 and m.mae == 1.0
    assert m.r2 is None  # constant targets


def test_shape_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(np.zeros((2, 32)), np.zeros((3, 32)))


def test_matches_brute_force_random():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, k = rng.integers(1, 6), rng.integers(1, 8)
        t = rng.normal(50, 10, size=(n, k))
        p = t + rng.normal(0, 2, size=(n, k))
        if n * k < 2:
            continue
        m = compute_metrics(p, t)
        rmse, mae, r2 = brute_force(p, t)
        assert m.rmse == pytest.approx(rmse, rel=1e-12)
        assert m.mae == pytest.approx(mae, rel=1e-12)
        assert m.r2 == pytest.approx(r2, rel=1e-12, abs=1e-12)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(p=arrays(np.float64, (4, 3), elements=finite), t=arrays(np.float64, (4, 3), elements=finite),
       shift=st.floats(-100, 100))
def test_rmse_dominates_mae_and_shift_invariance(p, t, shift):
    m = compute_metrics(p, t)
    assert m.rmse >= m.mae - 1e-12 and m.mae >= 0
    s = compute_metrics(p + shift, t + shift)
    assert s.rmse == pytest.approx(m.rmse, rel=1e-9, abs=1e-9)
    assert s.mae == pytest.approx(m.mae, rel=1e-9, abs=1e-9)
    if m.r2 is not None and np.var(t) > 1e-6:
        assert m.r2 <= 1.0
        assert s.r2 == pytest.approx(m.r2, rel=1e-6, abs=1e-6)


def test_table_improvement_convention():
    rmse = relative_improvement(0.185, 0.052)
    mae = relative_improvement(0.148, 0.039)
    r2 = relative_improvement(0.91, 0.98, higher_is_better=True)
    assert round(rmse) == 72
    assert round(mae) == 74
    assert round(r2, 1) == 7.7
    assert format_improvement(rmse, decimals=0) == "↓ 72%"
    assert format_improvement(r2, higher_is_better=True) == "↑ 7.7%"


class _Const:
    def __init__(self, value, label, names=("x",)):
        self.value, self.label, self.input_names = value, label, names

    def predict_dataset(self, data):
        data.columns(self.input_names)
        return np.full(data.targets.shape, self.value)


def _eval_set():
    from preform_fusion.dataset import Dataset
    rng = np.random.default_rng(3)
    return Dataset(("x",), rng.normal(size=(6, 1)), rng.normal(40, 5, size=(6, 32)),
                   ("simulated",) * 6)


def test_compare_identical_models():
    ev = _eval_set()
    out = compare_models([_Const(40.0, "a"), _Const(40.0, "b")], ev)
    pair = out["pairwise"][0]
    assert pair["rmse_improvement_pct"] == 0.0 and pair["mae_improvement_pct"] == 0.0
    assert pair["r2_improvement_pct"] == 0.0


def test_compare_single_model_has_no_pairs():
    out = compare_models([_Const(40.0, "a")], _eval_set())
    assert "pairwise" not in out and "a" in out["models"]


def test_compare_flags_incompatible_model():
    out = compare_models([_Const(40.0, "a"), _Const(40.0, "b", names=("zz",))], _eval_set())
    assert "error" in out["models"]["b"]
    assert out["models"]["a"]["rmse"] > 0
    assert "pairwise" not in out
