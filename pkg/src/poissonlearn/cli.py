"""Command-line front end: simulate, train, evaluate, classify, report-merge.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import artifacts as A
from . import metrics as MX
from . import systems as S
from .integrate import EmptyTrajectoryError, StepFailure
from .train import TrainConfig, TrainingDiverged, evaluate_gt, simulate_system, train

logger = logging.getLogger("poissonlearn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

# SystemSpec fields that a config file may override
SYSTEM_KEYS = ("inertia", "k", "mgl", "chi", "tau", "ic_box", "r_radius")
RUN_KEYS = ("out", "plot", "evaluate")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    system_overrides: dict
    out: Path = Path("out")
    plot: bool = False
    evaluate: bool = True

    @property
    def spec(self) -> S.SystemSpec:
        return S.SystemSpec(self.train.system, **self.system_overrides)

    def run_dir(self, flavor: str | None = None) -> Path:
        return self.out / self.train.system / (flavor or self.train.flavor) / str(self.train.seed)

    def to_dict(self) -> dict:
        d = self.train.to_dict()
        d.update(self.system_overrides)
        d.update(out=str(self.out), plot=self.plot, evaluate=self.evaluate)
        return d


def allowed_keys() -> tuple[str, ...]:
    return TrainConfig.field_names() + SYSTEM_KEYS + RUN_KEYS


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, (list, tuple)) else v


def build_run_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge defaults < config file < command-line flags; unknown keys are errors."""
    unknown = sorted(set(file_values) - set(allowed_keys()))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    train_kw = {k: values[k] for k in TrainConfig.field_names() if k in values}
    sys_kw = {k: _to_tuple(values[k]) for k in SYSTEM_KEYS if k in values}
    try:
        cfg = TrainConfig(**train_kw)
        S.SystemSpec(cfg.system, **sys_kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return RunConfig(cfg, sys_kw, Path(values.get("out", "out")), bool(values.get("plot", False)),
                     bool(values.get("evaluate", True)))


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _write_manifest(directory: Path, command: str, rc: RunConfig, outputs: dict[str, str],
                    name="manifest.json") -> str:
    config = rc.to_dict()
    # the hash covers what determines the results, not where they are written
    inputs = {k: v for k, v in config.items() if k not in RUN_KEYS}
    manifest = {"command": command, "config": config,
                "input_hash": A.git_blob_sha1(MX.dumps(inputs).encode()),
                "outputs": dict(sorted(outputs.items()))}
    return A.write_text(directory / name, MX.dumps(manifest) + "\n")


# --- commands -------------------------------------------------------------------

def cmd_simulate(rc: RunConfig) -> int:
    cfg = rc.train
    states, lengths = simulate_system(rc.spec, cfg.n_train_traj, cfg.dt, cfg.steps, cfg.seed)
    if not np.any(lengths >= 2):
        raise EmptyTrajectoryError("every trajectory failed at its first step")
    directory = rc.out / cfg.system / "simulate" / str(cfg.seed)
    digest = A.write_trajectories(directory / "trajectories.jsonl", states, lengths, cfg.system, cfg.seed, cfg.dt)
    _write_manifest(directory, "simulate", rc, {"trajectories.jsonl": digest})
    print(f"wrote {len(states)} trajectories to {directory / 'trajectories.jsonl'}")
    return EXIT_OK


def _evaluate_into(rc: RunConfig, model, directory: Path) -> tuple[MX.MetricsReport, dict[str, str]]:
    spec = rc.spec
    if model.n != spec.dim:
        raise ConfigError(f"checkpoint dimension {model.n} does not match system {spec.name} ({spec.dim})")
    comparison = evaluate_gt(model, rc.train, spec)
    report, point = MX.build_report(model, comparison, spec, return_pointwise=True)
    outputs = A.write_report(directory, report)
    for name, values in (("delta_M", point.delta_M), ("delta_L", point.delta_L), ("det", point.det)):
        if values is not None:
            outputs[f"histograms/{name}.csv"] = A.write_histogram(directory / "histograms" / f"{name}.csv", values)
    if rc.plot:
        gt, pred = comparison.gt[0], comparison.pred[0]
        t = rc.train.dt * np.arange(len(gt))
        n = gt.shape[1]
        header = ["t"] + [f"gt{i}" for i in range(n)] + [f"model{i}" for i in range(n)]
        outputs["plots/trajectory.dat"] = A.write_gnu_dat(
            directory / "plots" / "trajectory.dat", header, [t, *gt.T, *pred.T])
    return report, outputs


def cmd_train(rc: RunConfig) -> int:
    cfg = rc.train
    directory = rc.run_dir()
    try:
        result = train(cfg, rc.spec)
    except TrainingDiverged as err:
        outputs = {}
        if err.model is not None:
            outputs["checkpoint.json"] = A.write_checkpoint(directory / "checkpoint.json", err.model)
        outputs["losses.csv"] = A.write_losses(directory / "losses.csv", err.history)
        _write_manifest(directory, "train", rc, outputs)
        raise
    outputs = {"checkpoint.json": A.write_checkpoint(directory / "checkpoint.json", result.model),
               "losses.csv": A.write_losses(directory / "losses.csv", result.history)}
    if rc.plot:
        hist = result.history
        outputs["plots/losses.dat"] = A.write_gnu_dat(
            directory / "plots" / "losses.dat", list(A.LOSS_COLUMNS),
            [[h[c] for h in hist] for c in A.LOSS_COLUMNS])
    if rc.evaluate:
        report, more = _evaluate_into(rc, result.model, directory)
        outputs.update(more)
    _write_manifest(directory, "train", rc, outputs)
    last = result.history[-1]
    print(f"trained {cfg.system}/{cfg.flavor} seed {cfg.seed}: best epoch {result.best_epoch}, "
          f"val loss {last['val_loss']:.3e}, val Jacobiator {last['val_jacobiator']:.3e}")
    return EXIT_OK


def cmd_evaluate(rc: RunConfig, checkpoint: str | None) -> int:
    path = Path(checkpoint) if checkpoint else rc.run_dir() / "checkpoint.json"
    try:
        model = A.read_checkpoint(path)
    except OSError as err:
        raise ConfigError(f"cannot read checkpoint {path}: {err}") from err
    except (KeyError, ValueError) as err:
        raise ConfigError(f"invalid checkpoint {path}: {err}") from err
    directory = rc.run_dir(model.flavor)
    report, outputs = _evaluate_into(rc, model, directory)
    _write_manifest(directory, "evaluate", rc, outputs, name="evaluate_manifest.json")
    print(MX.dumps(report.table_row()))
    return EXIT_OK


def classify_reports(reports: list[MX.MetricsReport], metric: str) -> tuple[str, dict[str, float]]:
    systems = {r.system for r in reports}
    if len(systems) != 1:
        raise ConfigError(f"reports mix systems: {', '.join(sorted(systems))}")
    errors = {}
    for r in reports:
        if r.flavor in errors:
            raise ConfigError(f"two reports for flavor {r.flavor}")
        value = getattr(r, metric, None)
        if value is None:
            raise ConfigError(f"metric {metric} is not available for {r.system}")
        errors[r.flavor] = value
    if len(errors) < 2:
        raise ConfigError("classification needs reports for at least two flavors")
    return MX.classify_hamiltonianity(errors), errors


def cmd_classify(rc: RunConfig, report_paths: list[str], metric: str) -> int:
    if not report_paths:
        base = rc.out / rc.train.system
        report_paths = [str(p) for f in ("WJ", "SJ", "IJ")
                        for p in [base / f / str(rc.train.seed) / "report.json"] if p.exists()]
    try:
        reports = [A.read_report(p) for p in report_paths]
    except (OSError, ValueError, TypeError) as err:
        raise ConfigError(f"cannot read report: {err}") from err
    verdict, errors = classify_reports(reports, metric)
    system = reports[0].system
    out = {"system": system, "metric": metric, "margin": MX.CLASSIFIER_MARGIN,
           "errors": {f: errors[f] for f in ("WJ", "SJ", "IJ") if f in errors}, "verdict": verdict}
    A.write_text(rc.out / system / "classify" / str(rc.train.seed) / "verdict.json", MX.dumps(out) + "\n")
    print(f"{system}: {verdict} ({', '.join(f'{k}={v:.3e}' for k, v in out['errors'].items())})")
    return EXIT_OK


def cmd_report_merge(rc: RunConfig) -> int:
    paths = sorted(rc.out.glob("*/*/*/report.json"))
    if not paths:
        raise ConfigError(f"no reports found under {rc.out}")
    A.write_text(rc.out / "results.csv", A.merge_reports(paths))
    print(f"merged {len(paths)} reports into {rc.out / 'results.csv'}")
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------

# flag name -> config key
FLAG_KEYS = {"system": "system", "flavor": "flavor", "seed": "seed", "dt": "dt", "steps": "steps",
             "trajectories": "n_train_traj", "gt_trajectories": "n_gt_traj", "hidden": "hidden",
             "lr": "lr", "epochs": "epochs", "batch_size": "batch_size",
             "jacobi_weight": "jacobi_weight", "unroll_iters": "unroll_iters", "out": "out"}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--system", help=f"one of {', '.join(S.SYSTEMS)} (case-insensitive)")
    p.add_argument("--flavor", help="WJ, SJ or IJ")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--trajectories", type=int, help="training (or simulated) trajectory count")
    p.add_argument("--gt-trajectories", type=int, help="ground-truth comparison trajectory count")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--jacobi-weight", type=float)
    p.add_argument("--unroll-iters", type=int)
    p.add_argument("--out", help="output root directory (default: out)")
    p.add_argument("--plot", action="store_true", default=None, help="also write gnu-style .dat files")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poissonlearn",
                                     description="Learn Poisson bivectors and energies from trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate ground-truth trajectories")
    _add_common(p)
    p = sub.add_parser("train", help="simulate, train and (by default) evaluate one model")
    _add_common(p)
    p.add_argument("--no-evaluate", dest="evaluate", action="store_false", default=None)
    p = sub.add_parser("evaluate", help="compare a checkpoint with fresh ground truth")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: the run directory's)")
    p = sub.add_parser("classify", help="Hamiltonianity verdict from flavour reports")
    _add_common(p)
    p.add_argument("reports", nargs="*", help="report.json files (default: the run directories')")
    p.add_argument("--metric", default="delta_M",
                   help="report field compared across flavors (default: delta_M)")
    p = sub.add_parser("report-merge", help="merge all reports under --out into results.csv")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {key: getattr(args, flag) for flag, key in FLAG_KEYS.items()}
        overrides["plot"] = args.plot
        overrides["evaluate"] = getattr(args, "evaluate", None)
        rc = build_run_config(_load_config_file(args.config), overrides)
        if args.command == "simulate":
            return cmd_simulate(rc)
        if args.command == "train":
            return cmd_train(rc)
        if args.command == "evaluate":
            return cmd_evaluate(rc, args.checkpoint)
        if args.command == "classify":
            return cmd_classify(rc, args.reports, args.metric)
        return cmd_report_merge(rc)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, StepFailure, EmptyTrajectoryError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
