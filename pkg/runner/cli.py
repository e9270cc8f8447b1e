"""Command-line entry point.

Every sub-command composes the hydra config tree under runner/config and
accepts trailing ``key=value`` overrides, e.g.

> capgp compare --data data.csv --train-cases 1,2,3,4 --test-cases 5,6 \
      --horizons 5=14,6=9 --seed 0 --out report.json fit.restarts=4

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import pydantic
from hydra import compose, initialize_config_dir
from hydra.errors import HydraException
from omegaconf import DictConfig
from omegaconf.errors import OmegaConfBaseException

from capgp.data import cyclic_data
from capgp.data import synth as sd
from capgp.models import capacity_models as cm
from capgp.models import forecaster as fc
from capgp.models import gpr
from capgp.utils.errors import NumericalError, ValidationError
from runner import train
from runner.inference import MODES, Predictor
from tools.analysis import utils as au

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config")
LOG_FORMAT = "[%(asctime)s][%(name)s][%(levelname)s] - %(message)s"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

logger = logging.getLogger(__name__)


def compose_config(overrides: Sequence[str] = ()) -> DictConfig:
    with initialize_config_dir(version_base=None, config_dir=CONFIG_DIR):
        return compose(config_name="base", overrides=list(overrides))


def parse_ids(text: str) -> List[str]:
    ids = [t.strip() for t in str(text).split(",") if t.strip()]
    if not ids:
        raise ValidationError(f"no case ids in '{text}'")
    return ids


def parse_horizons(text: str) -> Dict[str, int]:
    """'5=14,6=9' -> {'5': 14, '6': 9}"""
    horizons = {}
    for item in parse_ids(text):
        case_id, sep, steps = item.partition("=")
        if not sep:
            raise ValidationError(f"horizon '{item}' must look like <case_id>=<steps>")
        try:
            horizons[case_id.strip()] = int(steps)
        except ValueError as e:
            raise ValidationError(f"horizon '{item}' has a non-integer step count") from e
        if horizons[case_id.strip()] < 1:
            raise ValidationError(f"horizon '{item}' must be at least one step")
    return horizons


def parse_lags_range(text: str) -> List[int]:
    """'1..5' or '1,2,3' -> [1, 2, 3, ...]"""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(t) for t in parse_ids(text)]
    except ValueError as e:
        raise ValidationError(f"cannot parse lag range '{text}'") from e
    if not values or min(values) < 1:
        raise ValidationError(f"lag range '{text}' must contain counts >= 1")
    return values


def _overrides(args: argparse.Namespace) -> List[str]:
    out = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        out.append(f"experiment.seed={args.seed}")
    if getattr(args, "lags", None) is not None and isinstance(args.lags, int):
        out.append(f"experiment.lags={args.lags}")
    return out


def cmd_synth(args, conf: DictConfig) -> int:
    if args.config is not None:
        cfg = sd.load_synth_config(args.config, seed=args.seed)
    else:
        cfg = train.synth_config(conf)
    ds = sd.synth_matrix(cfg)
    cyclic_data.write_csv(ds, args.out)
    logger.info(f"Wrote {len(ds)} synthetic cases to {args.out}")
    return EXIT_OK


def cmd_train(args, conf: DictConfig) -> int:
    exp = train.Experiment(conf=conf)
    ds = cyclic_data.load_csv(args.data)
    model = exp.train(ds, cm.resolve_label(args.model), parse_ids(args.train_cases), conf.experiment.lags)
    gpr.save_model(model, args.out)
    logger.info(f"Saved {model.label} (nll {model.nll:.4f}) to {args.out}")
    return EXIT_OK


def cmd_predict(args, conf: DictConfig) -> int:
    predictor = Predictor.from_file(
        args.model, observation_noise=args.observation_noise, propagate=conf.experiment.propagate
    )
    ds = cyclic_data.load_csv(args.data)
    points = predictor.forecast(ds.case(args.case), args.mode, args.steps)
    predictor.write(points, args.out)
    return EXIT_OK


def cmd_evaluate(args, conf: DictConfig) -> int:
    exp = train.Experiment(conf=conf)
    model = gpr.load_model(args.model)
    ds = cyclic_data.load_csv(args.data)
    horizons = parse_horizons(args.horizons) if args.horizons else None
    reports = exp.evaluate(model, ds, parse_ids(args.cases), horizons)
    au.write_reports(reports, args.out)
    return EXIT_OK


def cmd_compare(args, conf: DictConfig) -> int:
    exp = train.Experiment(conf=conf)
    ds = cyclic_data.load_csv(args.data)
    horizons = parse_horizons(args.horizons) if args.horizons else dict(conf.experiment.horizons)
    reports = exp.compare(ds, parse_ids(args.train_cases), parse_ids(args.test_cases), horizons)
    au.write_reports(reports, args.out)
    exp.finish()
    return EXIT_OK


def cmd_lag_sweep(args, conf: DictConfig) -> int:
    exp = train.Experiment(conf=conf)
    ds = cyclic_data.load_csv(args.data)
    reports = exp.lag_sweep(
        ds,
        parse_lags_range(args.lags) if args.lags else list(conf.experiment.lags_range),
        train_ids=parse_ids(args.train_cases) if args.train_cases else None,
        test_ids=parse_ids(args.test_cases) if args.test_cases else None,
        horizons=parse_horizons(args.horizons) if args.horizons else None,
    )
    au.write_reports(reports, args.out)
    exp.finish()
    return EXIT_OK


def cmd_kfold(args, conf: DictConfig) -> int:
    exp = train.Experiment(conf=conf)
    ds = cyclic_data.load_csv(args.data)
    lag_conf = fc.LagConfig(lags=conf.experiment.lags)
    X, y, _ = fc.pooled_pairs(ds.subset(parse_ids(args.train_cases)).cases, lag_conf)
    folds = conf.experiment.folds if args.folds is None else args.folds
    reports = exp.kfold_cv(X, y, folds, cm.resolve_label(args.model), lag_conf.lags)
    au.write_reports(reports, args.out)
    exp.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capgp",
        description="GP capacity-fade forecasting",
        epilog="Trailing key=value arguments are passed to hydra as config overrides.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate the six-case synthetic matrix")
    p.add_argument("--config", default=None, help="JSON file with SynthConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = add("train", cmd_train, "fit one model on pooled training cases")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=sorted(cm.MODEL_ALIASES))
    p.add_argument("--train-cases", required=True)
    p.add_argument("--lags", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "forecast one case with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--observation-noise", action="store_true")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "report a saved model on named cases")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--horizons", default=None)
    p.add_argument("--out", required=True)

    p = add("compare", cmd_compare, "SEGM vs Model A vs Model B")
    p.add_argument("--data", required=True)
    p.add_argument("--train-cases", required=True)
    p.add_argument("--test-cases", required=True)
    p.add_argument("--horizons", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("lag-sweep", cmd_lag_sweep, "Model B multi-step error against lag count")
    p.add_argument("--data", required=True)
    p.add_argument("--lags", default=None, help="range such as 1..5 or 1,2,3; defaults to experiment.lags_range")
    p.add_argument("--train-cases", default=None)
    p.add_argument("--test-cases", default=None)
    p.add_argument("--horizons", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("kfold", cmd_kfold, "k-fold one-step cross-validation diagnostic")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=sorted(cm.MODEL_ALIASES))
    p.add_argument("--train-cases", required=True)
    p.add_argument("--folds", type=int, default=None, help="defaults to experiment.folds")
    p.add_argument("--lags", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; leftover key=value arguments become hydra overrides."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    bad = [a for a in extra if a.startswith("-") or "=" not in a]
    if bad:
        parser.error(f"unrecognized arguments: {' '.join(bad)}")
    args.overrides = extra
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(format=LOG_FORMAT, level=logging.DEBUG if args.verbose else logging.INFO, force=True)
    try:
        conf = compose_config(_overrides(args))
        return args.func(args, conf)
    except (ValidationError, pydantic.ValidationError, HydraException, OmegaConfBaseException) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
