"""Evaluation protocols: per-subject angular error, noise robustness,
leave-one-person-out, the alpha/beta sweep, and the variant ablation battery.

Guidance labels are never read at evaluation time except by the diff_nn
variant, whose inference genuinely depends on them; reads go through an
instrumented accessor so tests can assert the independence.
"""

from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import torch

from .data import (
    NOISE_MODES,
    PairSampler,
    group_by_subject,
    inject_noise,
    split_samples,
)
from .errors import DataError
from .geometry import angular_error
from .losses import LossWeights
from .models import ModelVariant, images_to_tensor
from .seeding import derive_seed
from .training import TrainConfig, train

log = logging.getLogger(__name__)

GUIDANCE_POLICIES = ("random_seeded", "fixed_noisy")

ABLATION_VARIANTS = (
    ModelVariant.DRNET,
    ModelVariant.DIFF_NN,
    ModelVariant.NO_SC,
    ModelVariant.NO_AD,
    ModelVariant.NO_DIFF,
    ModelVariant.TWO_STREAM,
)

_GUIDANCE_READS = 0


def guidance_label_reads() -> int:
    """Instrumentation: guidance labels read during evaluation since last reset."""
    return _GUIDANCE_READS


def reset_guidance_label_reads() -> None:
    global _GUIDANCE_READS
    _GUIDANCE_READS = 0


def _read_guidance_labels(pairs) -> np.ndarray:
    global _GUIDANCE_READS
    _GUIDANCE_READS += len(pairs)
    return np.stack([p.guidance.gaze for p in pairs])


@dataclass
class EvalReport:
    """Per-subject mean angular errors plus the sample-weighted overall mean."""

    per_subject: dict[str, float]
    per_subject_counts: dict[str, int]
    overall_mean: float
    n_samples: int
    guidance_policy: str
    noise_mode: str | None = None

    def __post_init__(self):
        for subject, err in self.per_subject.items():
            if not 0.0 <= err <= 180.0:
                raise ValueError(f"subject {subject!r} error {err} outside [0, 180]")
        total = sum(self.per_subject_counts.values())
        if total != self.n_samples:
            raise ValueError("per-subject counts do not sum to n_samples")
        weighted = (
            sum(self.per_subject[s] * self.per_subject_counts[s] for s in self.per_subject) / total
        )
        if abs(weighted - self.overall_mean) > 1e-9:
            raise ValueError(
                f"overall_mean {self.overall_mean} != sample-weighted mean {weighted}"
            )


def _model_dtype(model) -> torch.dtype:
    try:
        return next(model.parameters()).dtype
    except StopIteration:
        return torch.float32


def _predict(model, pairs, batch_size: int) -> np.ndarray:
    dtype = _model_dtype(model)
    preds = []
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            batch = pairs[i : i + batch_size]
            test = images_to_tensor([p.test.image for p in batch], dtype=dtype)
            guidance = images_to_tensor([p.guidance.image for p in batch], dtype=dtype)
            if getattr(model, "requires_guidance_label", False):
                labels = torch.as_tensor(_read_guidance_labels(batch), dtype=dtype)
                out = model(test, guidance, labels)
            else:
                out = model(test, guidance)
            preds.append(out.gaze.detach().cpu().numpy().astype(np.float64))
    return np.concatenate(preds, axis=0)


def predict_pairs(model, pairs, batch_size: int = 256) -> np.ndarray:
    """Predict gaze vectors for explicit test/guidance pairs (frozen model)."""
    model.eval()
    return _predict(model, pairs, batch_size)


def evaluate(
    model,
    samples,
    guidance_policy: str = "random_seeded",
    seed: int = 0,
    noise_mode: str | None = None,
    noise_fraction: float = 1.0,
    batch_size: int = 256,
) -> EvalReport:
    """Per-subject angular error under a guidance policy.

    random_seeded draws one same-subject guidance image per test image.
    fixed_noisy keeps the same draws but degrades the guidance image
    (``noise_mode`` fixes one injection mode, default mixes all three;
    ``noise_fraction`` controls how many guidance images are degraded).
    """
    if guidance_policy not in GUIDANCE_POLICIES:
        raise DataError(f"unknown guidance policy {guidance_policy!r}; choose {GUIDANCE_POLICIES}")
    if noise_mode is not None and noise_mode not in NOISE_MODES:
        raise DataError(f"unknown noise mode {noise_mode!r}; choose {NOISE_MODES}")
    if not 0.0 <= noise_fraction <= 1.0:
        raise DataError("noise_fraction must lie in [0, 1]")
    groups = group_by_subject(samples)
    thin = sorted(s for s, m in groups.items() if len(m) < 2)
    if thin:
        raise DataError(f"evaluation needs >= 2 samples per subject; too few for: {thin}")

    pairs = PairSampler(samples, "eval", derive_seed(seed, "pairs")).eval_pairs()
    report_mode = None
    if guidance_policy == "fixed_noisy":
        report_mode = noise_mode or "mixed"
        noisy_pairs = []
        for i, pair in enumerate(pairs):
            rng = np.random.default_rng(derive_seed(seed, "noisemode", i))
            if rng.random() < noise_fraction:
                mode = noise_mode or str(rng.choice(NOISE_MODES))
                pair = replace(pair, guidance=inject_noise(pair.guidance, mode, derive_seed(seed, "noise", i)))
            noisy_pairs.append(pair)
        pairs = noisy_pairs

    model.eval()
    preds = _predict(model, pairs, batch_size)
    errors = angular_error(preds, np.stack([p.test.gaze for p in pairs]))

    per_subject: dict[str, list[float]] = {}
    for pair, err in zip(pairs, errors):
        per_subject.setdefault(pair.test.subject, []).append(float(err))
    means = {s: float(np.mean(v)) for s, v in sorted(per_subject.items())}
    counts = {s: len(v) for s, v in sorted(per_subject.items())}
    return EvalReport(
        per_subject=means,
        per_subject_counts=counts,
        overall_mean=float(np.mean(errors)),
        n_samples=len(pairs),
        guidance_policy=guidance_policy,
        noise_mode=report_mode,
    )


@dataclass
class NoiseDistanceResult:
    """Per-subject |error(noisy guidance) - error(clean guidance)| and its mean."""

    per_subject: dict[str, float]
    mean: float
    normal: EvalReport
    noisy: EvalReport


def noise_distance(
    model,
    samples,
    seed: int = 0,
    noise_mode: str | None = None,
    noise_fraction: float = 1.0,
) -> NoiseDistanceResult:
    """Guidance-noise sensitivity: evaluate both policies over identical pairs."""
    normal = evaluate(model, samples, "random_seeded", seed=seed)
    noisy = evaluate(
        model, samples, "fixed_noisy", seed=seed, noise_mode=noise_mode, noise_fraction=noise_fraction
    )
    per_subject = {
        s: abs(noisy.per_subject[s] - normal.per_subject[s]) for s in normal.per_subject
    }
    return NoiseDistanceResult(
        per_subject=per_subject,
        mean=float(np.mean(list(per_subject.values()))),
        normal=normal,
        noisy=noisy,
    )


def _lopo_fold(args):
    cfg, samples, subject = args
    others = [s for s in samples if s.subject != subject]
    members = [s for s in samples if s.subject == subject]
    fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, "lopo", subject))
    model, _ = train(fold_cfg, others)
    report = evaluate(model, members, "random_seeded", seed=derive_seed(cfg.seed, "lopo-eval", subject))
    return subject, report


def leave_one_person_out(
    cfg: TrainConfig, samples, jobs: int = 1
) -> tuple[dict[str, EvalReport], dict[str, str]]:
    """Train on all subjects but one, evaluate on the held-out subject, repeat.

    Fold failures are isolated: they land in the returned failure map instead
    of aborting the remaining folds.
    """
    subjects = sorted(group_by_subject(samples))
    if len(subjects) < 3:
        raise DataError(f"leave-one-person-out needs >= 3 subjects, got {len(subjects)}")
    tasks = [(cfg, samples, subject) for subject in subjects]
    reports: dict[str, EvalReport] = {}
    failures: dict[str, str] = {}
    for subject, outcome in _run_tasks(_lopo_fold, tasks, jobs, key=lambda t: t[2]):
        if isinstance(outcome, EvalReport):
            reports[subject] = outcome
        else:
            failures[subject] = outcome
            log.error("fold %s failed: %s", subject, outcome)
    return reports, failures


def _run_tasks(fn, tasks, jobs, key):
    """Run fold/cell tasks, catching per-task failures; parallel when jobs > 1.

    Workers use the spawn start method: forking a process whose torch thread
    pool is already warm can deadlock.
    """
    if jobs <= 1:
        for task in tasks:
            try:
                yield fn(task)
            except Exception as exc:  # noqa: BLE001 - failures are reported per task
                yield key(task), f"{type(exc).__name__}: {exc}"
        return
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
        futures = [(key(task), pool.submit(fn, task)) for task in tasks]
        for task_key, future in futures:
            try:
                yield future.result()
            except Exception as exc:  # noqa: BLE001
                yield task_key, f"{type(exc).__name__}: {exc}"


def sweep_cell_seed(base_seed: int, alpha: float, beta: float) -> int:
    """Seed for one sweep cell; cells are independent yet reproducible."""
    return derive_seed(base_seed, "sweep", float(alpha), float(beta))


def _sweep_cell(args):
    cfg, train_split, eval_split, alpha, beta = args
    cell_cfg = replace(
        cfg, weights=LossWeights(alpha=alpha, beta=beta), seed=sweep_cell_seed(cfg.seed, alpha, beta)
    )
    model, _ = train(cell_cfg, train_split)
    report = evaluate(
        model, eval_split, "random_seeded", seed=derive_seed(cfg.seed, "sweep-eval", float(alpha), float(beta))
    )
    return (alpha, beta), report.overall_mean


@dataclass
class SweepResult:
    """Grid of mean angular errors plus the winning cell.

    Ties break toward larger alpha, then larger beta.
    """

    grid: dict[tuple[float, float], float]
    best_cell: tuple[float, float] | None

    def __post_init__(self):
        if self.best_cell is not None and self.grid[self.best_cell] != min(self.grid.values()):
            raise ValueError("best_cell does not attain the grid minimum")


def best_cell_of(grid: dict[tuple[float, float], float]) -> tuple[float, float] | None:
    if not grid:
        return None
    return min(grid, key=lambda ab: (grid[ab], -ab[0], -ab[1]))


def sweep_alpha_beta(
    cfg: TrainConfig,
    samples,
    alphas,
    betas,
    eval_fraction: float = 0.25,
    jobs: int = 1,
) -> SweepResult:
    """Retrain per (alpha, beta) cell and evaluate on a shared held-out split.

    The weights enter training, not inference, so every cell is a fresh run;
    failed cells are recorded as absent rather than aborting the sweep.
    """
    alphas = [float(a) for a in alphas]
    betas = [float(b) for b in betas]
    if not alphas or not betas:
        raise DataError("alpha and beta grids must be non-empty")
    for v in alphas + betas:
        if not 0.0 <= v <= 1.0:
            raise DataError(f"grid value {v} outside [0, 1]")
    train_split, eval_split = split_samples(samples, eval_fraction, derive_seed(cfg.seed, "sweep-split"))
    tasks = [(cfg, train_split, eval_split, a, b) for a in alphas for b in betas]
    grid: dict[tuple[float, float], float] = {}
    for cell, outcome in _run_tasks(_sweep_cell, tasks, jobs, key=lambda t: (t[3], t[4])):
        if isinstance(outcome, float):
            grid[cell] = outcome
        else:
            log.error("sweep cell %s failed: %s", cell, outcome)
    return SweepResult(grid=grid, best_cell=best_cell_of(grid))


def _ablate_variant(args):
    cfg, train_split, eval_split, variant = args
    model, _ = train(replace(cfg, variant=variant), train_split)
    report = evaluate(model, eval_split, "random_seeded", seed=derive_seed(cfg.seed, "ablate-eval"))
    return variant, report


def ablation_battery(
    cfg: TrainConfig,
    samples,
    variants=ABLATION_VARIANTS,
    eval_fraction: float = 0.25,
    jobs: int = 1,
) -> tuple[dict[ModelVariant, EvalReport], dict[ModelVariant, str]]:
    """Train and evaluate every variant under one shared split, seed, and policy."""
    train_split, eval_split = split_samples(samples, eval_fraction, derive_seed(cfg.seed, "ablate-split"))
    tasks = [(cfg, train_split, eval_split, ModelVariant(v)) for v in variants]
    reports: dict[ModelVariant, EvalReport] = {}
    failures: dict[ModelVariant, str] = {}
    for variant, outcome in _run_tasks(_ablate_variant, tasks, jobs, key=lambda t: t[3]):
        if isinstance(outcome, EvalReport):
            reports[variant] = outcome
        else:
            failures[variant] = outcome
            log.error("ablation variant %s failed: %s", variant, outcome)
    return reports, failures
