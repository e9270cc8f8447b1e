import dataclasses
import logging
import time

import numpy as np
import pytest

from capgp.data import synth as sd
from capgp.data.cyclic_data import CapacityPoint, CyclicCase, Dataset
from capgp.models import capacity_models as cm
from capgp.models import forecaster as fc
from capgp.models import gpr
from capgp.utils import experiments_utils as eu
from capgp.utils.errors import IncompatibleParams, TooFewPairs, TooShort, ValidationError
from runner import train
from runner.cli import compose_config
from tools.analysis import metrics

FAST = ["fit.restarts=2", "fit.max_iters=40"]


@pytest.fixture
def conf():
    return compose_config(FAST)


@pytest.fixture
def exp(conf):
    return train.Experiment(conf=conf)


def test_flatten_dict():
    assert eu.flatten_dict({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == [("a:b", 1), ("a:c:d", 2), ("e", 3)]


def test_fold_indices_partition():
    folds = eu.fold_indices(10, 3, seed=1)
    assert sorted(len(f) for f in folds) == [3, 3, 4]
    np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(10))
    again = eu.fold_indices(10, 3, seed=1)
    for a, b in zip(folds, again):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("n,k", [(10, 1), (3, 4)])
def test_fold_indices_errors(n, k):
    with pytest.raises(TooFewPairs):
        eu.fold_indices(n, k, seed=0)


def test_config_groups(conf):
    cfg = train.fit_config(conf, seed=7)
    assert (cfg.restarts, cfg.max_iters, cfg.seed) == (2, 40, 7)
    assert train.fit_config(conf).seed == conf.experiment.seed
    assert train.synth_config(conf) == sd.SynthConfig()


def test_load_dataset_defaults_to_synthetic(exp):
    ds = exp.load_dataset()
    assert ds.case_ids == ["1", "2", "3", "4", "5", "6"]


@pytest.mark.parametrize("name,label", [("a", cm.MODEL_A), ("b", cm.MODEL_B), ("segm", cm.SEGM), ("modelb", cm.MODEL_B)])
def test_resolve_label(name, label):
    assert cm.resolve_label(name) == label


def test_resolve_unknown_label():
    with pytest.raises(ValidationError):
        cm.resolve_label("c")


def test_reference_params_match_the_kernels():
    for label in cm.MODEL_LABELS:
        params = cm.reference_params(label)
        assert set(params.names) == set(cm.build_kernel(label, 2).param_names()) | {"sigma_n"}
    with pytest.raises(IncompatibleParams):
        cm.reference_params(cm.SEGM)["sigma_1"]


def test_fit_capacity_model_checks_columns(synth_ds, fast_fit):
    X, y, _ = fc.pooled_pairs(synth_ds.subset(["1"]).cases)
    with pytest.raises(ValidationError):
        cm.fit_capacity_model(cm.MODEL_B, X, y, lags=3, cfg=fast_fit)


def test_input_policies(synth_ds, fast_fit):
    X, y, _ = fc.pooled_pairs(synth_ds.subset(["1", "4"]).cases)
    segm = cm.fit_capacity_model(cm.SEGM, X, y, lags=2, cfg=fast_fit)
    model_b = cm.fit_capacity_model(cm.MODEL_B, X, y, lags=2, cfg=fast_fit)
    assert segm.scaler is not None
    np.testing.assert_allclose(np.mean(segm.training.X, axis=0), 0.0, atol=1e-9)
    assert model_b.scaler is None
    np.testing.assert_array_equal(model_b.training.X, X)
    assert (segm.label, segm.lags, model_b.label) == (cm.SEGM, 2, cm.MODEL_B)


def test_compare_reports_every_model_and_phase(exp, synth_ds):
    reports = exp.compare(synth_ds, sd.TRAIN_CASES, sd.TEST_CASES, {"5": 14, "6": 9})
    assert [(r.model_label, r.phase) for r in reports] == [
        (label, phase) for label in metrics.MODEL_LABELS for phase in metrics.PHASES
    ]
    for r in reports:
        expected_cases = set(sd.TRAIN_CASES) if r.phase == "train" else set(sd.TEST_CASES)
        assert set(r.per_case) == expected_cases
        assert r.lags == 2
        assert all(np.isfinite(r.aggregate))


def test_compare_single_case_split(exp, synth_ds):
    reports = exp.compare(synth_ds, ["1"], ["5"], {"5": 3}, labels=[cm.MODEL_B])
    assert [r.phase for r in reports] == list(metrics.PHASES)
    assert set(reports[-1].per_case) == {"5"}


def test_compare_warns_about_missing_horizons(exp, synth_ds, caplog):
    with caplog.at_level(logging.WARNING):
        exp.compare(synth_ds, ["1", "3"], ["5"], {}, labels=[cm.MODEL_B])
    assert "No horizon" in caplog.text


def test_evaluate_saved_model(exp, synth_ds):
    model = exp.train(synth_ds, cm.MODEL_B, sd.TRAIN_CASES)
    reports = exp.evaluate(model, synth_ds, ["5", "6"], {"5": 14, "6": 9})
    assert [r.phase for r in reports] == list(metrics.PHASES)
    assert set(reports[0].per_case) == {"training"}
    assert set(reports[2].per_case) == {"5", "6"}


def test_evaluate_needs_a_label(exp, synth_ds):
    model = exp.train(synth_ds, cm.MODEL_B, ["1"])
    unlabeled = dataclasses.replace(model, label=None)
    with pytest.raises(ValidationError):
        exp.evaluate(unlabeled, synth_ds, ["5"])


def test_leave_one_out(exp, synth_ds):
    X, y, _ = fc.pooled_pairs(synth_ds.subset(["1"]).cases)
    X, y = X[:6], y[:6]
    reports = exp.kfold_cv(X, y, 6, "segm", lags=2)
    assert len(reports) == 6
    assert [list(r.per_case) for r in reports] == [[f"fold{i}"] for i in range(6)]
    for r in reports:
        # a single held-out pair: all three indicators coincide
        assert r.aggregate.me_ah == r.aggregate.mae_ah
    again = exp.kfold_cv(X, y, 6, "segm", lags=2)
    assert again == reports


def test_kfold_needs_enough_pairs(exp):
    with pytest.raises(TooFewPairs):
        exp.kfold_cv(np.zeros((3, 4)) + 1.0, np.ones(3), 5, cm.SEGM)


def test_lag_sweep(exp, synth_ds):
    reports = exp.lag_sweep(synth_ds, [1, 2], train_ids=["1", "4"], test_ids=["5"], horizons={"5": 5})
    assert [(r.model_label, r.phase, r.lags) for r in reports] == [
        (cm.MODEL_B, "multi_step", 1),
        (cm.MODEL_B, "multi_step", 2),
    ]


def test_lag_sweep_single_value(exp, synth_ds):
    assert len(exp.lag_sweep(synth_ds, [2], train_ids=["1"], test_ids=["5"], horizons={"5": 4})) == 1


def test_lag_sweep_rejects_short_cases(exp, synth_ds):
    short = CyclicCase("x", 35.0, 80.0, [CapacityPoint(100.0 * i, 21.0 - 0.1 * i) for i in range(3)])
    ds = Dataset(cases=list(synth_ds.cases) + [short])
    with pytest.raises(TooShort):
        exp.lag_sweep(ds, [5], train_ids=["1"], test_ids=["x"], horizons={"x": 1})


def _seeded(seed):
    exp = train.Experiment(conf=compose_config([f"experiment.seed={seed}"]))
    return exp, exp.load_dataset()


@pytest.mark.slow
def test_models_rank_by_multi_step_error():
    rmse = {label: [] for label in cm.MODEL_LABELS}
    for seed in range(5):
        exp, ds = _seeded(seed)
        reports = exp.compare(ds, sd.TRAIN_CASES, sd.TEST_CASES, {"5": 14, "6": 9})
        for r in reports:
            assert r.aggregate.mae_ah <= r.aggregate.rmse_ah + 1e-12 <= r.aggregate.me_ah + 2e-12
            if r.phase == "multi_step":
                rmse[r.model_label].append(r.aggregate.rmse_ah)
    median = {label: float(np.median(values)) for label, values in rmse.items()}
    assert median[cm.MODEL_B] <= median[cm.MODEL_A] <= median[cm.SEGM], median
    assert median[cm.MODEL_B] <= 0.015 * ds.nominal_capacity_ah, median


@pytest.mark.slow
def test_two_lags_beat_one_lag():
    by_lags = {1: [], 2: []}
    for seed in range(5):
        exp, ds = _seeded(seed)
        for r in exp.lag_sweep(ds, [1, 2]):
            by_lags[r.lags].append(r.aggregate.rmse_ah)
    assert np.median(by_lags[2]) <= np.median(by_lags[1]), by_lags


@pytest.mark.slow
@pytest.mark.parametrize("label", cm.MODEL_LABELS)
def test_single_fit_is_fast(label, synth_ds):
    X, y, _ = fc.pooled_pairs(synth_ds.subset(sd.TRAIN_CASES).cases, fc.LagConfig(lags=2))
    start = time.perf_counter()
    cm.fit_capacity_model(label, X, y, 2, gpr.FitConfig(restarts=8))
    assert time.perf_counter() - start < 15.0


@pytest.mark.slow
def test_model_a_finds_dod_irrelevant_when_fade_ignores_it():
    relevant = 0
    for seed in range(5):
        ds = sd.synth_matrix(sd.SynthConfig(beta=0.0, seed=seed))
        X, y, _ = fc.pooled_pairs(ds.subset(sd.TRAIN_CASES).cases, fc.LagConfig(lags=2))
        params = cm.fit_capacity_model(cm.MODEL_A, X, y, 2, gpr.FitConfig(seed=seed)).params
        relevant += params["sigma_DOD"] > max(params["sigma_1"], params["sigma_2"])
    assert relevant >= 4
