"""Training loop: pair sampling, forward, combined loss, Adam step, LR decay.

One epoch visits every training sample once as the test image, with a freshly
drawn same-subject guidance image. Variants with a differential branch train
on the combined objective; variants without one train on the head loss alone
and never evaluate the guidance term. Runs are bit-reproducible from the
config seed.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .data import Pair, PairSampler, Sample, group_by_subject
from .errors import CheckpointError, DataError, NumericError
from .geometry import angular_error
from .models import BackboneConfig, GazeModel, ModelVariant, build_model, images_to_tensor
from .seeding import derive_seed

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DGZCKPT1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    variant: ModelVariant = ModelVariant.DRNET
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    lr0: float = 0.01
    lr_decay: float = 0.1
    decay_every: int = 5
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    # Clip survives the arccos gradient blowup early in training; None disables.
    grad_clip: float | None = 10.0
    early_stop_patience: int = 5
    early_stop_tolerance: float = 0.01  # degrees
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("decay_every, batch_size, and epochs must be >= 1")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    la: float
    lb: float
    total: float
    train_angular_error: float


HISTORY_HEADER = "epoch,lr,la,lb,total,train_angular_error"


def history_to_csv(history: list[EpochRecord]) -> str:
    lines = [HISTORY_HEADER]
    for r in history:
        lines.append(
            f"{r.epoch},{r.lr!r},{r.la!r},{r.lb!r},{r.total!r},{r.train_angular_error!r}"
        )
    return "\n".join(lines) + "\n"


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * lr_decay^(epoch // decay_every), by repeated multiplication.

    Iterated products keep the decimal-friendly defaults exact
    (0.01 -> 0.001 -> 0.0001), which a pow() formulation does not.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    lr = cfg.lr0
    for _ in range(epoch // cfg.decay_every):
        lr *= cfg.lr_decay
    return lr


def guidance_label_of(pair) -> np.ndarray:
    """Label accessor for guidance-side supervision; patchable in tests."""
    return pair.guidance.gaze


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _validate_dataset(samples) -> None:
    groups = group_by_subject(samples)
    eligible = {s: m for s, m in groups.items() if len(m) >= 2}
    if len(eligible) < 2:
        raise DataError(
            f"training needs >= 2 subjects with >= 2 samples each; "
            f"got {len(eligible)} eligible of {len(groups)} subjects"
        )


def _early_stop_split(samples, cfg) -> tuple[list[Sample], list[Sample]]:
    if cfg.early_stop_patience == 0:
        return list(samples), []
    rng_seed = derive_seed(cfg.seed, "val")
    train: list[Sample] = []
    held: list[Sample] = []
    for subject, members in group_by_subject(samples).items():
        if len(members) < 4:
            train.extend(members)
            continue
        rng = np.random.default_rng(derive_seed(rng_seed, subject))
        n_val = max(1, int(round(cfg.val_fraction * len(members))))
        n_val = min(n_val, len(members) - 2)
        picks = set(rng.choice(len(members), size=n_val, replace=False).tolist())
        for i, s in enumerate(members):
            (held if i in picks else train).append(s)
    return train, held


def _labels_tensor(gazes, dtype) -> torch.Tensor:
    return torch.as_tensor(np.stack(gazes), dtype=dtype)


def _forward_batch(model: GazeModel, batch, need_guidance_labels: bool):
    dtype = next(model.parameters()).dtype
    test_imgs = images_to_tensor([p.test.image for p in batch], dtype=dtype)
    guid_imgs = images_to_tensor([p.guidance.image for p in batch], dtype=dtype)
    guid_labels = None
    if need_guidance_labels:
        guid_labels = _labels_tensor([guidance_label_of(p) for p in batch], dtype)
    if model.requires_guidance_label:
        out = model(test_imgs, guid_imgs, guid_labels)
    else:
        out = model(test_imgs, guid_imgs)
    return out, guid_labels


def _holdout_error(model, val_samples, train_groups, seed, batch_size) -> float:
    was_training = model.training
    model.eval()
    rng = np.random.default_rng(derive_seed(seed, "earlystop"))
    pairs = []
    for s in val_samples:
        candidates = train_groups[s.subject]
        pairs.append(Pair(test=s, guidance=candidates[int(rng.integers(len(candidates)))]))
    errs = []
    with torch.no_grad():
        for batch in _batches(pairs, batch_size):
            out, _ = _forward_batch(model, batch, model.requires_guidance_label)
            preds = out.gaze.cpu().numpy()
            labels = np.stack([p.test.gaze for p in batch])
            errs.append(angular_error(preds, labels))
    if was_training:
        model.train()
    return float(np.concatenate(errs).mean())


def train(cfg: TrainConfig, samples) -> tuple[GazeModel, list[EpochRecord]]:
    """Train a model variant on the given samples.

    Returns the frozen (eval-mode) model and the per-epoch history. Guidance
    labels are consumed only by the guidance-angle term (and by the diff_nn
    forward pass, which is that variant's defining dependency).
    """
    _validate_dataset(samples)
    torch.manual_seed(derive_seed(cfg.seed, "torch"))
    model = build_model(cfg.variant, cfg.backbone, derive_seed(cfg.seed, "init"))
    model.meta.update(alpha=cfg.weights.alpha, beta=cfg.weights.beta, seed=cfg.seed)

    train_samples, val_samples = _early_stop_split(samples, cfg)
    train_groups = group_by_subject(train_samples)
    val_samples = [s for s in val_samples if s.subject in train_groups]
    sampler = PairSampler(train_samples, "train", derive_seed(cfg.seed, "pairs"))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=(0.9, 0.999), eps=1e-8)

    beta = cfg.weights.beta
    use_la = model.has_diff_path and beta < 1.0
    history: list[EpochRecord] = []
    best_val = math.inf
    stale = 0

    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        sum_la = sum_lb = sum_total = sum_ang = 0.0
        n_seen = 0
        for batch_idx, batch in enumerate(_batches(sampler.epoch_pairs(epoch), cfg.batch_size)):
            need_labels = model.requires_guidance_label or use_la
            out, guid_labels = _forward_batch(model, batch, need_labels)
            test_labels = _labels_tensor([p.test.gaze for p in batch], out.gaze.dtype)

            lb_t = losses.lb(out.gaze, test_labels, cfg.weights.alpha)
            if use_la:
                la_t = losses.la(out.diff, test_labels, guid_labels)
                per_sample = (1.0 - beta) * la_t + beta * lb_t
            else:
                la_t = None
                per_sample = lb_t
            loss = per_sample.mean()
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
                    f"la={None if la_t is None else la_t.detach().tolist()}, "
                    f"lb={lb_t.detach().tolist()}"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()

            with torch.no_grad():
                ang = angular_error(
                    out.gaze.detach().cpu().numpy(), np.stack([p.test.gaze for p in batch])
                )
            n = len(batch)
            n_seen += n
            sum_lb += float(lb_t.detach().sum())
            sum_total += float(per_sample.detach().sum())
            sum_ang += float(np.sum(ang))
            if la_t is not None:
                sum_la += float(la_t.detach().sum())

        history.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                la=sum_la / n_seen if use_la else float("nan"),
                lb=sum_lb / n_seen,
                total=sum_total / n_seen,
                train_angular_error=sum_ang / n_seen,
            )
        )

        if val_samples and cfg.early_stop_patience > 0:
            val_err = _holdout_error(
                model, val_samples, train_groups, derive_seed(cfg.seed, "val-eval"), cfg.batch_size
            )
            log.info("epoch %d: lr=%g holdout=%.3f deg", epoch, lr, val_err)
            if best_val - val_err > cfg.early_stop_tolerance:
                best_val = val_err
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    log.info("early stop after epoch %d (%d stagnant epochs)", epoch, stale)
                    break

    model.eval()
    return model, history


def save_checkpoint(model: GazeModel, path) -> None:
    """Write a single-file archive: versioned JSON header plus raw weight bytes."""
    state = model.state_dict()
    manifest = []
    buffers = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        buffers.append(arr.tobytes(order="C"))
    header = {
        "format_version": CHECKPOINT_VERSION,
        "variant": model.variant.value,
        "backbone": model.config.to_dict(),
        "seed": model.meta.get("seed", 0),
        "alpha": model.meta.get("alpha"),
        "beta": model.meta.get("beta"),
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for buf in buffers:
            fh.write(buf)
    tmp.replace(path)


def load_checkpoint(path, expected_variant: ModelVariant | str | None = None) -> GazeModel:
    """Load a checkpoint, rejecting version or variant mismatches."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a gaze checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if offset + header_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    offset += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"is not supported (expected {CHECKPOINT_VERSION})"
        )
    variant = ModelVariant(header["variant"])
    if expected_variant is not None and variant != ModelVariant(expected_variant):
        raise CheckpointError(
            f"{path}: checkpoint holds variant {variant.value!r}, "
            f"requested {ModelVariant(expected_variant).value!r}"
        )
    model = build_model(variant, BackboneConfig.from_dict(header["backbone"]), seed=0)
    state = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated weight data at {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after weight data")
    model.load_state_dict(state)
    model.meta.update(seed=header.get("seed", 0), alpha=header.get("alpha"), beta=header.get("beta"))
    model.eval()
    return model


def untrained_reference(cfg: TrainConfig) -> GazeModel:
    """The model exactly as training would initialize it, with no steps taken."""
    model = build_model(cfg.variant, cfg.backbone, derive_seed(cfg.seed, "init"))
    model.meta.update(alpha=cfg.weights.alpha, beta=cfg.weights.beta, seed=cfg.seed)
    model.eval()
    return model
