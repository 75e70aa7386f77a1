"""Command-line surface: synth, train, eval, sweep, ablate, lopo, report.

Every command writes a run manifest into its output directory before doing
any work; re-running a command with ``--from-manifest`` replays the recorded
arguments (only the output directory may change). Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from ._version import __version__
from .config import build_train_config, config_snapshot, parse_config_file
from .data import dataset_fingerprint, load_dataset, save_dataset, with_noisy_fraction
from .errors import (
    CheckpointError,
    DataError,
    DegenerateOutputError,
    MissingLabelError,
    NumericError,
    ShapeError,
    UsageError,
)
from .evaluation import (
    ablation_battery,
    evaluate,
    leave_one_person_out,
    noise_distance,
    sweep_alpha_beta,
)
from .reports import (
    RunManifest,
    ablate_metrics_csv,
    ablate_summary_md,
    eval_metrics_csv,
    eval_summary_md,
    lopo_metrics_csv,
    lopo_summary_md,
    merge_report,
    noise_metrics_csv,
    noise_summary_md,
    read_manifest,
    sweep_metrics_csv,
    sweep_summary_md,
    write_manifest,
    write_text_atomic,
)
from .synth import DEFAULT_RESOLUTION, synth_generate
from .training import history_to_csv, load_checkpoint, save_checkpoint, train

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_resolution_flag(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
        return h, w
    except ValueError as exc:
        raise UsageError(f"resolution must look like 36x60, got {text!r}") from exc


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated float list, got {text!r}") from exc


def _args_dict(args: argparse.Namespace) -> dict:
    skip = {"handler", "from_manifest"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _require_empty_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")


def _load_data(args) -> list:
    samples = load_dataset(args.data, convention=args.convention, side=args.side)
    if not samples:
        raise DataError(f"dataset at {args.data} is empty after side={args.side} filtering")
    return samples


_OVERRIDE_KEYS = {
    "variant": "model.variant",
    "alpha": "loss.alpha",
    "beta": "loss.beta",
    "lr0": "train.lr0",
    "batch_size": "train.batch_size",
    "epochs": "train.epochs",
    "feature_dim": "model.feature_dim",
    "channels": "model.channels",
    "seed": "train.seed",
}


def _effective_config(args, samples):
    values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    for attr, key in _OVERRIDE_KEYS.items():
        flag = getattr(args, attr, None)
        if flag is not None:
            values[key] = str(flag)
    resolution = samples[0].image.shape if samples else None
    return build_train_config(values, default_resolution=resolution)


def _add_train_flags(parser) -> None:
    parser.add_argument("--config", help="key=value config file (flags override it)")
    parser.add_argument("--variant", help="model variant (drnet, two_stream, diff_nn, no_ad, no_sc, no_diff)")
    parser.add_argument("--alpha", help="angle-vs-L1 mix in [0,1]")
    parser.add_argument("--beta", help="head-vs-guidance mix in [0,1]")
    parser.add_argument("--lr0", help="initial learning rate")
    parser.add_argument("--batch-size", dest="batch_size", help="training batch size")
    parser.add_argument("--epochs", help="number of training epochs")
    parser.add_argument("--feature-dim", dest="feature_dim", help="backbone feature dimension")
    parser.add_argument("--channels", help="comma-separated conv channels, e.g. 16,32,64")
    parser.add_argument("--seed", help="base seed for the whole run")


def _add_data_flags(parser) -> None:
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--side", default="all", choices=["left", "right", "all"])
    parser.add_argument("--convention", default="camera", choices=["camera", "mirrored"])


def cmd_synth(args) -> None:
    if args.subjects < 2:
        raise UsageError(
            f"--subjects must be >= 2 (training needs two subjects, and the lopo "
            f"protocol needs >= 3); got {args.subjects}"
        )
    if args.per_subject < 4:
        raise UsageError(
            f"--per-subject must be >= 4 (same-subject pairing needs >= 2 candidates on "
            f"each side of a train/eval split); got {args.per_subject}"
        )
    out = Path(args.out)
    _require_empty_out(out, args.force)
    write_manifest(
        out,
        RunManifest(
            command="synth",
            args=_args_dict(args),
            config={},
            dataset_fingerprint=None,
            seed=args.seed,
            outputs=["labels.csv"],
        ),
    )
    samples = synth_generate(
        args.subjects, args.per_subject, resolution=args.resolution, seed=args.seed
    )
    if args.noisy_fraction:
        samples = with_noisy_fraction(samples, args.noisy_fraction, args.seed)
    save_dataset(samples, out)
    log.info("wrote %d images to %s", len(samples), out)


def cmd_train(args) -> None:
    samples = _load_data(args)
    cfg = _effective_config(args, samples)
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="train",
            args=_args_dict(args),
            config=config_snapshot(cfg),
            dataset_fingerprint=dataset_fingerprint(args.data),
            seed=cfg.seed,
            outputs=["model.ckpt", "history.csv"],
        ),
    )
    model, history = train(cfg, samples)
    save_checkpoint(model, out / "model.ckpt")
    write_text_atomic(out / "history.csv", history_to_csv(history))
    log.info("trained %s for %d epochs -> %s", cfg.variant.value, len(history), out)


def cmd_eval(args) -> None:
    samples = _load_data(args)
    model = load_checkpoint(args.checkpoint, expected_variant=args.variant)
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="eval",
            args=_args_dict(args),
            config={"model.variant": model.variant.value},
            dataset_fingerprint=dataset_fingerprint(args.data),
            seed=args.seed,
            outputs=["metrics.csv", "summary.md"],
        ),
    )
    if args.policy == "both":
        result = noise_distance(
            model, samples, seed=args.seed, noise_mode=args.noise_mode,
            noise_fraction=args.noise_fraction,
        )
        metrics, summary = noise_metrics_csv(result), noise_summary_md(result)
    else:
        report = evaluate(
            model, samples, guidance_policy=args.policy, seed=args.seed,
            noise_mode=args.noise_mode, noise_fraction=args.noise_fraction,
        )
        metrics, summary = eval_metrics_csv(report), eval_summary_md(report)
    write_text_atomic(out / "metrics.csv", metrics)
    write_text_atomic(out / "summary.md", summary)


def cmd_sweep(args) -> None:
    samples = _load_data(args)
    cfg = _effective_config(args, samples)
    alphas = _parse_float_list(args.alphas)
    betas = _parse_float_list(args.betas)
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="sweep",
            args=_args_dict(args),
            config=config_snapshot(cfg),
            dataset_fingerprint=dataset_fingerprint(args.data),
            seed=cfg.seed,
            outputs=["metrics.csv", "summary.md"],
        ),
    )
    result = sweep_alpha_beta(
        cfg, samples, alphas, betas, eval_fraction=args.eval_fraction, jobs=args.jobs
    )
    write_text_atomic(out / "metrics.csv", sweep_metrics_csv(result))
    write_text_atomic(out / "summary.md", sweep_summary_md(result))
    if len(result.grid) < len(alphas) * len(betas):
        raise NumericError(
            f"sweep finished with {len(alphas) * len(betas) - len(result.grid)} failed cells"
        )


def cmd_ablate(args) -> None:
    samples = _load_data(args)
    cfg = _effective_config(args, samples)
    sides = [s.strip() for s in args.sides.split(",") if s.strip()]
    for side in sides:
        if side not in ("left", "right", "all"):
            raise UsageError(f"--sides entries must be left, right, or all; got {side!r}")
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="ablate",
            args=_args_dict(args),
            config=config_snapshot(cfg),
            dataset_fingerprint=dataset_fingerprint(args.data),
            seed=cfg.seed,
            outputs=["metrics.csv", "summary.md"],
        ),
    )
    reports_by_side: dict[str, dict] = {}
    failures_by_side: dict[str, dict] = {}
    for side in sides:
        subset = samples if side == "all" else [s for s in samples if s.side == side]
        if not subset:
            reports_by_side[side] = {}
            failures_by_side[side] = {"(all)": "side filter left no samples"}
            continue
        try:
            reports, failures = ablation_battery(
                cfg, subset, eval_fraction=args.eval_fraction, jobs=args.jobs
            )
        except DataError as exc:
            reports_by_side[side] = {}
            failures_by_side[side] = {"(all)": str(exc)}
            continue
        reports_by_side[side] = reports
        failures_by_side[side] = {v.value: m for v, m in failures.items()}
    write_text_atomic(out / "metrics.csv", ablate_metrics_csv(reports_by_side))
    write_text_atomic(out / "summary.md", ablate_summary_md(reports_by_side, failures_by_side))


def cmd_lopo(args) -> None:
    samples = _load_data(args)
    cfg = _effective_config(args, samples)
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="lopo",
            args=_args_dict(args),
            config=config_snapshot(cfg),
            dataset_fingerprint=dataset_fingerprint(args.data),
            seed=cfg.seed,
            outputs=["metrics.csv", "summary.md"],
        ),
    )
    reports, failures = leave_one_person_out(cfg, samples, jobs=args.jobs)
    write_text_atomic(out / "metrics.csv", lopo_metrics_csv(reports))
    write_text_atomic(out / "summary.md", lopo_summary_md(reports, failures))
    if not reports:
        raise DataError(f"all {len(failures)} folds failed; see summary.md")


def cmd_report(args) -> None:
    runs = []
    for run_dir in args.run_dirs:
        manifest = read_manifest(run_dir)
        if manifest.command not in ("eval", "sweep", "lopo"):
            raise UsageError(
                f"run {run_dir} has type {manifest.command!r}; report merges eval, sweep, "
                "and lopo runs (ablate summaries are already comparisons)"
            )
        metrics_path = Path(run_dir) / "metrics.csv"
        if not metrics_path.is_file():
            raise DataError(f"run {run_dir} has no metrics.csv")
        with open(metrics_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        runs.append((manifest, rows))
    out = Path(args.out)
    write_manifest(
        out,
        RunManifest(
            command="report",
            args=_args_dict(args),
            config={},
            dataset_fingerprint=None,
            seed=None,
            outputs=["comparison.md", "box_plot.csv", "surface.csv"],
        ),
    )
    comparison, box_csv, surface_csv = merge_report(runs)
    write_text_atomic(out / "comparison.md", comparison)
    write_text_atomic(out / "box_plot.csv", box_csv)
    write_text_atomic(out / "surface.csv", surface_csv)


def build_parser() -> _Parser:
    parser = _Parser(prog="drgaze", description="Differential-residual gaze estimation toolkit")
    parser.add_argument("--version", action="version", version=f"drgaze {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--from-manifest", dest="from_manifest", default=None,
                       help="replay the arguments recorded in a previous run manifest")
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--per-subject", dest="per_subject", type=int, required=True)
    p.add_argument("--resolution", type=_parse_resolution_flag, default=DEFAULT_RESOLUTION)
    p.add_argument("--noisy-fraction", dest="noisy_fraction", type=float, default=0.0,
                   help="degrade this fraction of images (blink/occlusion/blank), like real capture noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = add("train", cmd_train, "train a model variant")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default=None, help="require the checkpoint to hold this variant")
    p.add_argument("--policy", default="random_seeded",
                   choices=["random_seeded", "fixed_noisy", "both"])
    p.add_argument("--noise-mode", dest="noise_mode", default=None,
                   choices=["blank", "occlude_half", "blink"])
    p.add_argument("--noise-fraction", dest="noise_fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "alpha/beta grid sweep (retrains per cell)")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--betas", default="0.25,0.5,0.75,1")
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=0.25)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, "train and compare all model variants")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--sides", default="all", help="comma list of side filters (left,right,all)")
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=0.25)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("lopo", cmd_lopo, "leave-one-person-out protocol")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "merge completed runs into a comparison document")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)

    return parser


def _apply_manifest(args: argparse.Namespace) -> argparse.Namespace:
    manifest = read_manifest(args.from_manifest)
    if manifest.command != args.command:
        raise UsageError(
            f"manifest records a {manifest.command!r} run, but {args.command!r} was invoked"
        )
    replayed = dict(manifest.args)
    replayed["out"] = args.out  # everything else replays exactly
    merged = argparse.Namespace(**replayed)
    merged.handler = args.handler
    merged.command = args.command
    return merged


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "from_manifest", None):
            args = _apply_manifest(args)
        args.handler(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, ShapeError, MissingLabelError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, DegenerateOutputError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
