"""Script for fitting and comparing capacity-fade GP models.

Sample command:
> python runner/train.py experiment.seed=3 fit.restarts=4
"""

import logging
import os
from typing import List, Mapping, Optional, Sequence

import hydra
import numpy as np
import wandb
from joblib import Parallel, delayed
from omegaconf import DictConfig, OmegaConf

import capgp.utils.experiments_utils as eu
from capgp.data import cyclic_data
from capgp.data import synth as sd
from capgp.data.cyclic_data import CyclicCase, Dataset
from capgp.models import capacity_models as cm
from capgp.models import forecaster as fc
from capgp.models import gpr
from capgp.utils.errors import ValidationError
from tools.analysis import metrics
from tools.analysis import utils as au


def fit_config(conf: DictConfig, seed: Optional[int] = None) -> gpr.FitConfig:
    fit_conf = OmegaConf.to_container(conf.fit, resolve=True)
    if seed is not None:
        fit_conf["seed"] = int(seed)
    return gpr.FitConfig(**fit_conf)


def synth_config(conf: DictConfig) -> sd.SynthConfig:
    return sd.SynthConfig(**OmegaConf.to_container(conf.synth, resolve=True))


def _one_step_predictions(model: gpr.TrainedModel, cases: Sequence[CyclicCase], lag_conf: fc.LagConfig):
    actual, predicted = {}, {}
    for case in cases:
        pairs = fc.build_pairs(case, lag_conf)
        mean, _ = gpr.predict(model, [x for x, _ in pairs])
        actual[case.case_id] = np.array([y for _, y in pairs])
        predicted[case.case_id] = mean
    return actual, predicted


def _multi_step_predictions(
    model: gpr.TrainedModel,
    cases: Sequence[CyclicCase],
    horizons: Mapping[str, int],
    observation_noise: bool = False,
    propagate: bool = True,
):
    actual, predicted = {}, {}
    for case in cases:
        points, truth = fc.forecast_case(
            model, case, horizons.get(case.case_id), observation_noise=observation_noise, propagate=propagate
        )
        actual[case.case_id] = truth
        predicted[case.case_id] = np.array([p.mean for p in points])
    return actual, predicted


def run_variant(
    label: str,
    train: Dataset,
    test: Dataset,
    horizons: Mapping[str, int],
    lags: int,
    cfg: gpr.FitConfig,
    phases: Sequence[str] = metrics.PHASES,
) -> List[metrics.EvalReport]:
    """Fit one model variant on the pooled training cases and report the requested phases."""
    lag_conf = fc.LagConfig(lags=lags)
    X, y, _ = fc.pooled_pairs(train.cases, lag_conf)
    model = cm.fit_capacity_model(label, X, y, lags, cfg)
    reports = []
    for phase in phases:
        if phase == "train":
            actual, predicted = _one_step_predictions(model, train.cases, lag_conf)
        elif phase == "one_step":
            actual, predicted = _one_step_predictions(model, test.cases, lag_conf)
        else:
            actual, predicted = _multi_step_predictions(model, test.cases, horizons)
        reports.append(metrics.EvalReport.from_predictions(model.label, phase, actual, predicted, lags=lags))
    return reports


class Experiment:
    def __init__(self, *, conf: DictConfig):
        """Initialize experiment.

        Args:
            conf: composed config with fit, synth, experiment and wandb groups.
        """
        self._log = logging.getLogger(__name__)
        self._conf = conf
        self._exp_conf = conf.experiment
        self._wandb_conf = conf.wandb
        self._use_wandb = self._wandb_conf.use_wandb
        self._seed = int(self._exp_conf.seed)
        self._lag_conf = fc.LagConfig(lags=self._exp_conf.lags)
        self._wandb_ready = False

    @property
    def conf(self):
        return self._conf

    @property
    def seed(self) -> int:
        return self._seed

    def fit_config(self, seed: Optional[int] = None) -> gpr.FitConfig:
        return fit_config(self._conf, self._seed if seed is None else seed)

    def load_dataset(self) -> Dataset:
        """Read experiment.data_path, or generate the synthetic matrix."""
        if self._exp_conf.data_path is not None:
            return cyclic_data.load_csv(self._exp_conf.data_path, self._exp_conf.nominal_capacity_ah)
        self._log.info("No data_path set; generating the synthetic cyclic matrix")
        return sd.synth_matrix(synth_config(self._conf))

    def init_wandb(self):
        self._log.info("Initializing Wandb.")
        conf_dict = OmegaConf.to_container(self._conf, resolve=True)
        wandb.init(
            project=self._wandb_conf.project,
            entity=self._wandb_conf.entity,
            name=f"{self._exp_conf.name}_{wandb.util.generate_id()[:2]}",
            config=dict(eu.flatten_dict(conf_dict)),
            dir=self._wandb_conf.dir,
            tags=self._wandb_conf.tags,
            group=self._wandb_conf.group,
            mode="offline" if self._wandb_conf.offline else "online",
            job_type=self._wandb_conf.job_type,
        )
        self._wandb_ready = True
        self._log.info(f"Wandb: run_dir={wandb.run.dir}")

    def log_reports(self, reports: Sequence[metrics.EvalReport], prefix: str) -> None:
        for r in reports:
            tag = r.model_label if r.lags is None else f"{r.model_label}_lags{r.lags}"
            self._log.info(
                f"{prefix} {tag} {r.phase}: ME {r.aggregate.me_ah:.4f} Ah, "
                f"MAE {r.aggregate.mae_ah:.4f} Ah, RMSE {r.aggregate.rmse_ah:.4f} Ah"
            )
        if not self._use_wandb:
            return
        if not self._wandb_ready:
            self.init_wandb()
        logs = {}
        for r in reports:
            tag = r.model_label if r.lags is None else f"{r.model_label}_lags{r.lags}"
            for key, value in r.aggregate._asdict().items():
                logs[f"{prefix}/{tag}/{r.phase}/{key}"] = value
        wandb.log(logs)

    def train(self, ds: Dataset, label: str, train_ids: Sequence, lags: Optional[int] = None) -> gpr.TrainedModel:
        lags = self._lag_conf.lags if lags is None else lags
        train = ds.subset(train_ids)
        X, y, _ = fc.pooled_pairs(train.cases, fc.LagConfig(lags=lags))
        return cm.fit_capacity_model(label, X, y, lags, self.fit_config())

    def evaluate(
        self, model: gpr.TrainedModel, ds: Dataset, case_ids: Sequence, horizons: Optional[Mapping[str, int]] = None
    ) -> List[metrics.EvalReport]:
        """Train-fit, one-step and multi-step reports of a fitted model.

        The train-fit report covers the model's own training rows, pooled
        under the key ``training``.
        """
        if model.label is None:
            raise ValidationError("model carries no label; refit it with a capacity model")
        label = cm.resolve_label(model.label)
        lags = fc.model_lags(model)
        cases = [ds.case(i) for i in case_ids]
        horizons = {} if horizons is None else {str(k): int(v) for k, v in horizons.items()}
        train_report = metrics.EvalReport.from_predictions(
            label, "train", {"training": model.training.targets}, {"training": gpr.fitted_mean(model)}, lags=lags
        )
        actual, predicted = _one_step_predictions(model, cases, fc.LagConfig(lags=lags))
        one_step = metrics.EvalReport.from_predictions(label, "one_step", actual, predicted, lags=lags)
        actual, predicted = _multi_step_predictions(
            model, cases, horizons, self._exp_conf.observation_noise, self._exp_conf.propagate
        )
        multi_step = metrics.EvalReport.from_predictions(label, "multi_step", actual, predicted, lags=lags)
        reports = [train_report, one_step, multi_step]
        self.log_reports(reports, "evaluate")
        return reports

    def kfold_cv(
        self,
        X,
        y,
        k: int,
        label: str,
        lags: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> List[metrics.EvalReport]:
        """One-step reports for each held-out fold of a seeded k-fold split.

        A diagnostic only; nothing is selected with it.
        """
        lags = self._lag_conf.lags if lags is None else lags
        seed = self._seed if seed is None else seed
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        folds = eu.fold_indices(len(y), k, seed)
        label = cm.resolve_label(label)
        reports = []
        for i, held_out in enumerate(folds):
            keep = np.setdiff1d(np.arange(len(y)), held_out)
            model = cm.fit_capacity_model(label, X[keep], y[keep], lags, self.fit_config(seed))
            mean, _ = gpr.predict(model, X[held_out])
            reports.append(
                metrics.EvalReport.from_predictions(
                    label, "one_step", {f"fold{i}": y[held_out]}, {f"fold{i}": mean}, lags=lags
                )
            )
            self._log.info(f"Fold {i}: {len(held_out)} held-out pairs, RMSE {reports[-1].aggregate.rmse_ah:.4f} Ah")
        self.log_reports(reports, "kfold")
        return reports

    def compare(
        self,
        ds: Dataset,
        train_ids: Sequence,
        test_ids: Sequence,
        horizons: Mapping[str, int],
        seed: Optional[int] = None,
        labels: Sequence[str] = cm.MODEL_LABELS,
        lags: Optional[int] = None,
    ) -> List[metrics.EvalReport]:
        """Train-fit, one-step and multi-step reports for each model variant, in label order."""
        lags = self._lag_conf.lags if lags is None else lags
        train, test = cyclic_data.split(ds, train_ids, test_ids)
        horizons = {str(k): int(v) for k, v in horizons.items()}
        missing = [c for c in test.case_ids if c not in horizons]
        if missing:
            self._log.warning(f"No horizon for test cases {missing}; forecasting their full measured future")
        cfg = self.fit_config(seed)
        per_label = Parallel(n_jobs=self._exp_conf.n_jobs)(
            delayed(run_variant)(cm.resolve_label(label), train, test, horizons, lags, cfg) for label in labels
        )
        reports = [r for group in per_label for r in group]
        self.log_reports(reports, "compare")
        return reports

    def lag_sweep(
        self,
        ds: Dataset,
        lags_range: Sequence[int],
        seed: Optional[int] = None,
        train_ids: Optional[Sequence] = None,
        test_ids: Optional[Sequence] = None,
        horizons: Optional[Mapping[str, int]] = None,
    ) -> List[metrics.EvalReport]:
        """Model B multi-step reports, one per lag count."""
        lags_range = [int(l) for l in lags_range]
        if not lags_range or min(lags_range) < 1:
            raise ValidationError(f"lag counts must be >= 1, got {lags_range}")
        train_ids = list(self._exp_conf.train_cases) if train_ids is None else train_ids
        test_ids = list(self._exp_conf.test_cases) if test_ids is None else test_ids
        horizons = dict(self._exp_conf.horizons) if horizons is None else horizons
        horizons = {str(k): int(v) for k, v in horizons.items()}
        train, test = cyclic_data.split(ds, train_ids, test_ids)
        for case in list(train.cases) + list(test.cases):
            fc.build_pairs(case, fc.LagConfig(lags=max(lags_range)))
        cfg = self.fit_config(seed)
        reports = []
        for lags in lags_range:
            reports.extend(run_variant(cm.MODEL_B, train, test, horizons, lags, cfg, phases=("multi_step",)))
        self.log_reports(reports, "lag_sweep")
        return reports

    def finish(self):
        if self._wandb_ready:
            wandb.finish()


@hydra.main(version_base=None, config_path="config/", config_name="base")
def run(conf: DictConfig) -> None:
    # Fixes bug in https://github.com/wandb/wandb/issues/1525
    os.environ["WANDB_START_METHOD"] = "thread"
    exp = Experiment(conf=conf)
    ds = exp.load_dataset()
    reports = exp.compare(
        ds,
        list(conf.experiment.train_cases),
        list(conf.experiment.test_cases),
        dict(conf.experiment.horizons),
        labels=list(conf.experiment.models),
    )
    out_dir = conf.experiment.out_dir
    os.makedirs(out_dir, exist_ok=True)
    au.write_reports(reports, os.path.join(out_dir, "compare.json"))
    with open(os.path.join(out_dir, "config.yaml"), "w") as f:
        OmegaConf.save(config=conf, f=f)
    exp.finish()


if __name__ == "__main__":
    run()
