"""Scikit-learn style estimator wrapping the training and evaluation pipeline.

The wrapper keeps constructor arguments verbatim (so ``get_params`` /
``set_params`` / ``clone`` work) and operates on lists of :class:`~drgaze.data.Sample`,
which carry the subject grouping the pairing protocol needs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import PairSampler, validate_sample
from .evaluation import evaluate, predict_pairs
from .losses import LossWeights
from .models import BackboneConfig, ModelVariant
from .seeding import derive_seed
from .training import TrainConfig, train


class GazeEstimator(BaseEstimator):
    """Trainable gaze regressor with a fit/predict/score surface.

    Parameters mirror the run configuration; the image resolution is inferred
    from the samples passed to :meth:`fit`.
    """

    def __init__(
        self,
        variant="drnet",
        alpha=0.75,
        beta=0.75,
        lr0=0.01,
        lr_decay=0.1,
        decay_every=5,
        batch_size=128,
        epochs=30,
        seed=0,
        feature_dim=64,
        channels=(16, 32, 64),
        grad_clip=10.0,
        early_stop_patience=5,
    ):
        self.variant = variant
        self.alpha = alpha
        self.beta = beta
        self.lr0 = lr0
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.feature_dim = feature_dim
        self.channels = channels
        self.grad_clip = grad_clip
        self.early_stop_patience = early_stop_patience

    def _config(self, resolution) -> TrainConfig:
        return TrainConfig(
            variant=ModelVariant(self.variant),
            weights=LossWeights(alpha=self.alpha, beta=self.beta),
            lr0=self.lr0,
            lr_decay=self.lr_decay,
            decay_every=self.decay_every,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            backbone=BackboneConfig(
                resolution=tuple(resolution),
                channels=tuple(self.channels),
                feature_dim=self.feature_dim,
            ),
            grad_clip=self.grad_clip,
            early_stop_patience=self.early_stop_patience,
        )

    def fit(self, samples, y=None):
        """Train on a list of samples (labels travel inside the samples)."""
        if not samples:
            raise ValueError("fit requires a non-empty list of samples")
        for s in samples:
            validate_sample(s)
        cfg = self._config(samples[0].image.shape)
        self.config_ = cfg
        self.model_, self.history_ = train(cfg, samples)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this GazeEstimator is not fitted yet; call fit first")

    def predict(self, samples, seed: int = 0) -> np.ndarray:
        """Predicted gaze vectors, one row per sample.

        Guidance images are drawn per subject with the seeded eval policy, so
        predictions are reproducible from (model, samples, seed).
        """
        self._check_fitted()
        pairs = PairSampler(samples, "eval", derive_seed(seed, "pairs")).eval_pairs()
        preds = predict_pairs(self.model_, pairs, batch_size=max(1, self.batch_size))
        by_id = {id(p.test): row for p, row in zip(pairs, preds)}
        try:
            return np.stack([by_id[id(s)] for s in samples])
        except KeyError:
            raise ValueError(
                "predict needs every subject to have >= 2 samples (same-subject guidance)"
            ) from None

    def score(self, samples, y=None, seed: int = 0) -> float:
        """Negative mean angular error in degrees (greater is better)."""
        self._check_fitted()
        report = evaluate(
            self.model_, samples, "random_seeded", seed=seed, batch_size=max(1, self.batch_size)
        )
        return -report.overall_mean
