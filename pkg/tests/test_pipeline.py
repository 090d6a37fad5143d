import numpy as np
import pytest

from preform_fusion import store
from preform_fusion.dataset import Dataset
from preform_fusion.doe import ParameterSpace
from preform_fusion.metrics import compute_metrics
from preform_fusion.neural import ModelConfig, TrainConfig, train
from preform_fusion.pipeline import (FusionPlan, derive_seed, extract_experience, finetune,
                                     run_case_study, subsample_variants, train_baseline,
                                     train_global)
from preform_fusion.thermal import default_space, generate_dataset, preset_variant

SPACE = default_space()
SMALL_NET = dict(hidden_widths=(16, 16, 16))
FAST = TrainConfig(epochs=5, batch_size=16)


@pytest.fixture(scope="module")
def variant_sets():
    out = {}
    for i, name in enumerate(("mid_cp", "low_cp", "high_cp")):
        v = preset_variant(name)
        out[name] = (generate_dataset(SPACE, v, 120, seed=i), v.descriptor())
    return out


@pytest.fixture(scope="module")
def base(variant_sets):
    data, desc = variant_sets["mid_cp"]
    model, _ = train(ModelConfig(2, **SMALL_NET), data, FAST, input_names=SPACE.names,
                     label="mid_cp", descriptor=desc.to_dict())
    return model


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "data:mid_cp") == derive_seed(0, "data:mid_cp")
    assert derive_seed(0, "data:mid_cp") != derive_seed(1, "data:mid_cp")
    assert derive_seed(0, "a") != derive_seed(0, "b")
    assert 0 <= derive_seed(123, "x") < 2 ** 63


def test_finetune_keeps_lineage(base, variant_sets):
    data, _ = variant_sets["low_cp"]
    tuned, hist = finetune(base, data, FAST, label="low_cp")
    assert tuned.provenance["parent"] == "mid_cp"
    assert tuned.provenance["chain"] == ["mid_cp", "low_cp"]
    assert tuned.provenance["descriptor"]["label"] == "low_cp"
    np.testing.assert_array_equal(tuned.input_scaler.shift, base.input_scaler.shift)
    assert len(hist) == 5


def test_finetune_zero_epochs_changes_only_output_scaling(base, variant_sets):
    data, _ = variant_sets["high_cp"]
    tuned, _ = finetune(base, data, TrainConfig(epochs=0), label="high_cp")
    assert all(np.array_equal(a, b) for a, b in zip(tuned.params, base.params))


def test_finetune_rejects_missing_columns(base):
    other = Dataset(("a", "b"), np.ones((3, 2)), np.ones((3, 32)), ("simulated",) * 3)
    with pytest.raises(ValueError, match="lacks model inputs"):
        finetune(base, other, FAST)


def _plan(models, doe_n=2000, seed=4):
    return FusionPlan(models, SPACE, doe_n, seed)


def test_extract_experience_rows(base, variant_sets):
    models = [(base, variant_sets[n][1]) for n in ("mid_cp", "low_cp", "high_cp")]
    fused = extract_experience(_plan(models))
    assert len(fused) == 6000
    assert set(fused.provenance) == {"predicted"}
    assert fused.input_names == ("s1", "s2", "cp_80", "cp_100", "cp_120", "cp_150", "cp_250")
    # identical design and model: per-variant blocks agree on slab columns and targets
    np.testing.assert_array_equal(fused.inputs[:2000, :2], fused.inputs[2000:4000, :2])
    np.testing.assert_array_equal(fused.targets[:2000], fused.targets[4000:])
    assert not np.array_equal(fused.inputs[:2000, 2:], fused.inputs[2000:4000, 2:])


def test_extract_experience_deterministic(base, variant_sets):
    models = [(base, variant_sets[n][1]) for n in ("mid_cp", "low_cp")]
    assert extract_experience(_plan(models, 50)) == extract_experience(_plan(models, 50))


def test_fusion_plan_validation(base, variant_sets):
    desc = variant_sets["mid_cp"][1]
    with pytest.raises(ValueError, match="at least two"):
        _plan([(base, desc)])
    with pytest.raises(ValueError, match="distinct"):
        _plan([(base, desc), (base, desc)])
    geo = preset_variant("small").descriptor()
    with pytest.raises(ValueError, match="same feature names"):
        _plan([(base, desc), (base, geo)])
    wide = ParameterSpace((("s1", 5.0, 112.5), ("s2", 5.0, 112.5), ("s3", 5.0, 112.5)))
    with pytest.raises(ValueError, match="consumes"):
        FusionPlan([(base, desc), (base, variant_sets["low_cp"][1])], wide)


def test_global_model_on_identical_variants(base, variant_sets):
    models = [(base, variant_sets[n][1]) for n in ("mid_cp", "low_cp", "high_cp")]
    fused = extract_experience(_plan(models, 300))
    cfg = ModelConfig(len(fused.input_names), **SMALL_NET)
    glob, _ = train_global(fused, cfg, TrainConfig(epochs=150, batch_size=32))
    assert glob.provenance["label"] == "global"
    # all three teachers agree, so the student should reproduce the shared map
    err = compute_metrics(glob.predict_dataset(fused), base.predict(fused.inputs[:, :2]))
    assert err.rmse <= 1.0


def test_train_global_needs_descriptors(variant_sets):
    data, _ = variant_sets["mid_cp"]
    slabs_only = Dataset(("s1", "s2"), data.inputs[:, :2], data.targets, data.provenance)
    with pytest.raises(ValueError, match="descriptor"):
        train_global(slabs_only, ModelConfig(2), FAST)


def test_baseline_subsample(variant_sets):
    pools = [variant_sets[n] for n in ("mid_cp", "low_cp", "high_cp")]
    combined = subsample_variants(pools, [100, 90, 80], seed=3)
    assert len(combined) == 270
    assert set(combined.provenance) == {"simulated"}
    with pytest.raises(ValueError, match="insufficient rows.*requested 500, available 120"):
        subsample_variants(pools, [500, 10, 10], seed=3)
    with pytest.raises(ValueError, match="empty"):
        subsample_variants(pools, [0, 0, 0], seed=3)


def test_baseline_full_size():
    pools = []
    for i, (name, n) in enumerate((("mid_cp", 700), ("low_cp", 625), ("high_cp", 625))):
        v = preset_variant(name)
        pools.append((generate_dataset(SPACE, v, n, seed=40 + i), v.descriptor()))
    assert len(subsample_variants(pools, [700, 625, 625], seed=0)) == 1950
    model, hist = train_baseline(pools, [700, 625, 625], ModelConfig(7, **SMALL_NET),
                                 TrainConfig(epochs=1), seed=0)
    assert model.input_names[2:] == pools[0][1].names
    assert model.provenance["label"] == "baseline" and len(hist) == 1


def _tiny_manifest(case, seed=0):
    return store.default_manifest(
        case, seed,
        sizes={"base": 60, "finetune": 50, "doe_n": 40, "unseen_test": 30, "variant_test": 20},
        model={"hidden_widths": [8, 8, 8]},
        train={"epochs": 3, "batch_size": 16})


def test_tiny_case_study_structure(tmp_path):
    res = run_case_study(_tiny_manifest("geometry"), out_dir=tmp_path)
    rep = res.report
    assert rep["status"] == "ok"
    assert set(res.models) == {"medium", "small", "large", "global", "baseline"}
    assert res.datasets["fused"].descriptor_names == ("length", "wall_thickness", "weight",
                                                      "neck_length")
    assert rep["summary"]["fused_rows"] == 120
    assert res.models["small"].provenance["chain"] == ["medium", "small"]
    assert (tmp_path / "report.json").exists() and (tmp_path / "manifest.json").exists()
    assert len(list((tmp_path / "checkpoints").iterdir())) == 5
    assert "unseen:unseen_geometry" in rep["evaluations"]
    assert store.read_report(tmp_path / "report.json") == rep


def test_case_study_reproducible(tmp_path):
    a = run_case_study(_tiny_manifest("material", 3), out_dir=tmp_path / "a")
    b = run_case_study(_tiny_manifest("material", 3), out_dir=tmp_path / "b")
    assert (tmp_path / "a/report.json").read_bytes() == (tmp_path / "b/report.json").read_bytes()
    for f in sorted((tmp_path / "a/checkpoints").iterdir()):
        assert f.read_bytes() == (tmp_path / "b/checkpoints" / f.name).read_bytes()
    assert a.report["seeds"] == b.report["seeds"]


def test_failed_run_writes_partial_report(tmp_path):
    bad = store.default_manifest(
        "material", 0, sizes={"base": 20, "finetune": 20, "doe_n": 10, "unseen_test": 5,
                              "variant_test": 5},
        model={"hidden_widths": [8, 8, 8]}, train={"epochs": 1, "batch_size": 64})
    with pytest.raises(ValueError, match="batch_size"):
        run_case_study(bad, out_dir=tmp_path)
    assert store.read_report(tmp_path / "report.json")["status"] == "failed"
