"""Shared test utilities: finite-difference oracles and benchmark builders."""

import numpy as np
import torch

from drgaze import TrainConfig, synth_generate, with_noisy_fraction
from drgaze.data import split_samples
from drgaze.models import BackboneConfig, ModelVariant


def central_difference_gradient(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Componentwise central finite differences of a scalar function."""
    grad = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        up = x.copy()
        down = x.copy()
        up.flat[i] += h
        down.flat[i] -= h
        grad.flat[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def autograd_gradient(loss_fn, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of loss_fn with respect to its tensor argument."""
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    loss_fn(t).backward()
    return t.grad.numpy()


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(numeric)), 1e-8)
    return float(np.linalg.norm(analytic - numeric)) / denom


def sample_loss_points(rng: np.random.Generator, n: int, max_abs_dot: float = 0.99):
    """Random vector pairs away from the parallel/antiparallel singularities
    and away from the L1 kinks (no near-zero component differences)."""
    points = []
    while len(points) < n:
        g = rng.normal(0.0, 1.0, 3)
        g_hat = rng.normal(0.0, 1.0, 3)
        dot = g @ g_hat / (np.linalg.norm(g) * np.linalg.norm(g_hat))
        if abs(dot) >= max_abs_dot or np.any(np.abs(g - g_hat) < 1e-2):
            continue
        points.append((g, g_hat))
    return points


TINY_RESOLUTION = (18, 30)


def tiny_backbone(resolution=TINY_RESOLUTION) -> BackboneConfig:
    return BackboneConfig(resolution=resolution, channels=(4,), feature_dim=8, diff_hidden=8)


def tiny_config(variant="drnet", **kw) -> TrainConfig:
    defaults = dict(
        variant=ModelVariant(variant),
        batch_size=16,
        epochs=2,
        seed=3,
        backbone=tiny_backbone(),
        early_stop_patience=0,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def noise_benchmark(seed: int):
    """The desk-scale guidance-noise benchmark: synthetic subjects whose
    training split contains degraded frames, as real capture sessions do."""
    samples = synth_generate(6, 100, seed=1000 + seed)
    train_split, eval_split = split_samples(samples, 0.25, seed)
    train_split = with_noisy_fraction(train_split, 0.2, seed)
    return train_split, eval_split


def benchmark_train_config(variant: str, seed: int) -> TrainConfig:
    return TrainConfig(variant=ModelVariant(variant), epochs=15, batch_size=64, seed=seed)
