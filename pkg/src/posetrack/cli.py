"""
Command-line entry point: ``posetrack gen | gradcheck | fit | track``.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from posetrack import __version__
from posetrack.fit import (
    Checkpoint,
    OptimConfig,
    ToyRegressor,
    load_checkpoint,
    save_checkpoint,
    train,
    train_scorer,
    training_samples,
)
from posetrack.geom import TriMesh, cylinder_mesh, load_obj
from posetrack.losses import GRADIENT_FAMILIES, run_gradient_check
from posetrack.symmetry import Z_AXIS, ReflectiveConfig, SymmetryBank
from posetrack.synth import Camera, DatasetConfig, generate_dataset, load_dataset, write_dataset
from posetrack.track import (
    SCENARIOS,
    BiasEstimator,
    Estimator,
    FlipInjector,
    ModelEstimator,
    NoiseEstimator,
    OracleEstimator,
    TrackPolicy,
    TrackReport,
    Trajectory,
    emit_report,
    metrics,
    run_benchmark,
)
from posetrack.utils.config import apply_overrides, config, load_flat_config
from posetrack.utils.errors import GradientCheckFailed, TrackingBudgetExceeded, exit_code_for

logger = logging.getLogger(f"{config.LOGGER_NAME}.cli")

GRADCHECK_TOLERANCE = 1e-4


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not an integer")
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {value}")
    return value


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Flags accepted both before and after the subcommand."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(0), help="master seed (default 0)")
    parser.add_argument(
        "--out", type=Path, default=default(Path(".")), help="output directory (default: current directory)"
    )
    parser.add_argument(
        "--format", choices=["json", "csv"], default=default("json"), help="report format (default json)"
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=default("WARNING"),
        help="log level for messages on stderr (default WARNING)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posetrack", description="6-DOF pose tracking toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global_flags(parser, suppress=False)
    # subcommand copies must not overwrite a value given before the subcommand
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a synthetic RGB-D dataset")
    gen.add_argument("--mesh", type=Path, default=None, help="Wavefront OBJ of the object (default: built-in cylinder)")
    gen.add_argument("--n", type=_positive_int, required=True, help="number of samples")
    gen.add_argument("--config", type=Path, default=None, help="flat JSON of dataset config overrides")
    gen.add_argument("--workers", type=_positive_int, default=1, help="generation threads (default 1)")
    gen.set_defaults(handler=cmd_gen)

    check = sub.add_parser("gradcheck", parents=[common], help="compare analytic and finite-difference loss gradients")
    check.add_argument("--trials", type=_positive_int, required=True, help="random configurations per loss family")
    check.set_defaults(handler=cmd_gradcheck)

    fit = sub.add_parser("fit", parents=[common], help="train the toy regressor on a generated dataset")
    fit.add_argument("--data", type=Path, required=True, help="dataset directory with a manifest")
    fit.add_argument("--epochs", type=_positive_int, default=50, help="training epochs (default 50)")
    fit.add_argument("--warmup", type=_non_negative_int, default=25, help="warm-up epochs (default 25)")
    fit.add_argument("--b2", type=_positive_int, default=config.BANK_SIZE, help="symmetry bank size (default 64)")
    fit.add_argument("--symmetry-axis", choices=["z", "none"], default="z", help="continuous symmetry axis (default z)")
    fit.add_argument(
        "--weighting", choices=["learnable", "sum", "standardized"], default="learnable",
        help="multi-task weighting scheme (default learnable)",
    )  # fmt: skip
    fit.add_argument("--lr", type=float, default=1e-3, help="base learning rate (default 1e-3)")
    fit.add_argument("--batch-size", type=_positive_int, default=16, help="batch size (default 16)")
    fit.set_defaults(handler=cmd_fit)

    track = sub.add_parser("track", parents=[common], help="run the tracking benchmark")
    track.add_argument("--scenario", choices=sorted(SCENARIOS) + ["all"], default="all", help="scenario name or 'all'")
    track.add_argument(
        "--estimator", choices=["oracle", "bias", "noise", "model"], default="oracle", help="pose estimator"
    )
    track.add_argument("--model", type=Path, default=None, help="checkpoint, required with --estimator model")
    track.add_argument("--mesh", type=Path, default=None, help="OBJ rendered for the model estimator")
    track.add_argument("--reset", type=_positive_int, default=config.RESET_INTERVAL, help="reset interval in frames")
    track.add_argument("--reflective", choices=["on", "off"], default="off", help="reflective flip rejection")
    track.add_argument("--fail-budget", type=_non_negative_int, default=None, help="maximum failures per scenario")
    track.add_argument("--frames", type=_positive_int, default=200, help="frames per scenario (default 200)")
    track.add_argument("--bias-mm", type=float, default=10.0, help="x translation bias of the bias estimator")
    track.add_argument("--noise-trans-mm", type=float, default=2.0, help="translation sigma of the noise estimator")
    track.add_argument("--noise-rot-deg", type=float, default=1.0, help="rotation sigma of the noise estimator")
    track.add_argument("--workers", type=_positive_int, default=1, help="run scenarios concurrently when > 1")
    track.set_defaults(handler=cmd_track)
    return parser


def _load_mesh(path: Optional[Path]) -> TriMesh:
    return cylinder_mesh() if path is None else load_obj(path)


def cmd_gen(args: argparse.Namespace) -> int:
    mesh = _load_mesh(args.mesh)
    cfg = DatasetConfig()
    if args.config is not None:
        cfg = apply_overrides(cfg, load_flat_config(args.config))
    cam = Camera()
    samples = generate_dataset(args.n, mesh, cam, cfg, args.seed, workers=args.workers)
    manifest = write_dataset(samples, args.out, mesh, cam, cfg, args.seed)
    print(manifest)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    failed = []
    for family in GRADIENT_FAMILIES:
        result = run_gradient_check(family, args.trials, args.seed)
        print(f"{family:<10} max_rel_error={result.max_rel_error:.3e}")
        if result.max_rel_error >= GRADCHECK_TOLERANCE:
            failed.append(result)
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        print(f"violation: {worst.family} seed={worst.worst_seed}")
        raise GradientCheckFailed(
            f"{len(failed)} loss famil{'y' if len(failed) == 1 else 'ies'} exceeded {GRADCHECK_TOLERANCE:g}; "
            f"worst {worst.family} at seed {worst.worst_seed}"
        )
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    manifest, samples = load_dataset(args.data)
    max_delta = float(manifest.get("config", {}).get("max_delta", config.MAX_DELTA_TRANS))
    dataset = training_samples(samples, np.asarray(manifest["lambda_gs"]), max_delta=max_delta)
    cfg = OptimConfig(
        lr=args.lr,
        lr_min=min(1e-5, args.lr),
        warmup_epochs=args.warmup,
        batch_size=args.batch_size,
        epochs=args.epochs,
        b2=args.b2,
        weighting=args.weighting,
        max_delta=max_delta,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    model = ToyRegressor.create(rng=rng)
    bank = SymmetryBank.clustered(cfg.b2, rng, Z_AXIS) if args.symmetry_axis == "z" else None

    history = train(model, dataset, cfg, bank)

    scorer = None
    if history.bank is not None:
        features = np.stack([s.features for s in dataset])
        scorer = train_scorer(features, history.oracle_labels, history.bank.size)

    args.out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = args.out / "checkpoint.json"
    save_checkpoint(
        checkpoint_path,
        Checkpoint(
            model=model,
            task_weights=history.task_weights,
            bank=history.bank,
            optimizer=history.optimizer.state_dict() if history.optimizer is not None else None,
            epoch=len(history),
            max_delta=max_delta,
            scorer=scorer,
        ),
    )
    history.to_csv(args.out / "history.csv")
    print(checkpoint_path)
    return 0


def _estimator_factory(args: argparse.Namespace) -> Callable[[Trajectory], Estimator]:
    checkpoint = load_checkpoint(args.model) if args.estimator == "model" else None
    mesh = _load_mesh(args.mesh) if checkpoint is not None else None

    def make(traj: Trajectory) -> Estimator:
        if args.estimator == "bias":
            inner: Estimator = BiasEstimator(traj, bias_mm=(args.bias_mm, 0.0, 0.0))
        elif args.estimator == "noise":
            inner = NoiseEstimator(
                traj, sigma_trans_mm=args.noise_trans_mm, sigma_rot_deg=args.noise_rot_deg, seed=args.seed
            )
        elif checkpoint is not None:
            inner = ModelEstimator(checkpoint.model, mesh, max_delta=checkpoint.max_delta)
        else:
            inner = OracleEstimator(traj)
        if traj.flip_frames:
            return FlipInjector(inner, traj.flip_frames)
        return inner

    return make


def _summary_line(report: TrackReport) -> str:
    m = metrics(report)
    t, r = m["trans_err_mm"], m["rot_err_deg"]
    return (
        f"{report.scenario:<18} {t['mean']:8.2f} ± {t['std']:<8.2f} "
        f"{r['mean']:8.2f} ± {r['std']:<8.2f} {report.failures:>5d}"
    )


def cmd_track(args: argparse.Namespace) -> int:
    if args.estimator == "model" and args.model is None:
        raise ValueError("--model is required with --estimator model")
    if args.estimator != "model" and args.model is not None:
        raise ValueError("--model is only used with --estimator model")

    scenarios: List[str] = list(SCENARIOS) if args.scenario == "all" else [args.scenario]
    policy = TrackPolicy(
        reset_interval=args.reset,
        reflective=ReflectiveConfig() if args.reflective == "on" else None,
    )
    mesh = _load_mesh(args.mesh) if args.estimator == "model" else None
    factory = _estimator_factory(args)

    if args.workers > 1:
        reports = asyncio.run(
            run_benchmark(scenarios, factory, policy, args.seed, args.frames, mesh=mesh, async_mode=True)
        )
    else:
        reports = run_benchmark(scenarios, factory, policy, args.seed, args.frames, mesh=mesh)

    args.out.mkdir(parents=True, exist_ok=True)
    print(f"{'scenario':<18} {'trans mm':>19} {'rot deg':>19} {'fails':>5}")
    for report in reports:
        emit_report(report, args.format, args.out / f"track_{report.scenario}.{args.format}")
        print(_summary_line(report))

    if args.fail_budget is not None:
        over = [r.scenario for r in reports if r.failures > args.fail_budget]
        if over:
            raise TrackingBudgetExceeded(f"Failure budget {args.fail_budget} exceeded by: {', '.join(over)}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except Exception as e:
        logger.debug("Command '%s' failed", args.command, exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
