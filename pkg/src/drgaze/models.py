"""Gaze regression heads: the differential-residual model and its ablations.

All variants share one convolutional feature extractor applied to both the
test and the guidance eye image. The full model decomposes the prediction as
gaze = sc + ad(diff), i.e. a plain per-subject regression plus an auxiliary
correction derived from the test/guidance difference, summed through a
shortcut connection over 1-D vectors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import MissingLabelError, ShapeError


class ModelVariant(str, enum.Enum):
    DRNET = "drnet"
    TWO_STREAM = "two_stream"
    DIFF_NN = "diff_nn"
    NO_AD = "no_ad"
    NO_SC = "no_sc"
    NO_DIFF = "no_diff"


@dataclass(frozen=True)
class BackboneConfig:
    """Size knobs for the reference backbone and head widths.

    These are declared defaults for desk-scale training, not tuned values.
    ``ad_input`` selects what the auxiliary stack consumes: the differential
    3-vector itself ("vector", the default) or the differential branch's
    hidden features ("features").
    """

    resolution: tuple[int, int] = (36, 60)
    channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 64
    diff_hidden: int = 64
    ad_hidden: int = 16
    ad_input: str = "vector"

    def __post_init__(self):
        if self.ad_input not in ("vector", "features"):
            raise ValueError(f"ad_input must be 'vector' or 'features', got {self.ad_input!r}")

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "channels": list(self.channels),
            "feature_dim": self.feature_dim,
            "diff_hidden": self.diff_hidden,
            "ad_hidden": self.ad_hidden,
            "ad_input": self.ad_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(
            resolution=tuple(d["resolution"]),
            channels=tuple(d["channels"]),
            feature_dim=int(d["feature_dim"]),
            diff_hidden=int(d["diff_hidden"]),
            ad_hidden=int(d["ad_hidden"]),
            ad_input=str(d.get("ad_input", "vector")),
        )


@dataclass
class ModelOutput:
    """Per-branch outputs of a forward pass; absent branches stay None."""

    gaze: torch.Tensor
    diff: torch.Tensor | None = None
    sc: torch.Tensor | None = None
    aux: torch.Tensor | None = None


class FeatureExtractor(nn.Module):
    """Stacked conv-BN-ReLU blocks plus one fully connected projection."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.resolution = config.resolution
        blocks = []
        in_ch = 1
        for out_ch in config.channels:
            blocks += [
                nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
            ]
            in_ch = out_ch
        self.blocks = nn.Sequential(*blocks)
        with torch.no_grad():
            probe = self.blocks(torch.zeros(1, 1, *config.resolution))
        self.project = nn.Linear(int(probe.numel()), config.feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected images of shape (B, 1, H, W), received {tuple(x.shape)}")
        if tuple(x.shape[-2:]) != tuple(self.resolution):
            raise ShapeError(
                f"expected resolution {tuple(self.resolution)}, received {tuple(x.shape[-2:])}"
            )
        h = self.blocks(x)
        return self.project(h.flatten(1))


class DiffModule(nn.Module):
    """Fully connected layers over concatenated test/guidance features -> 3-vector."""

    def __init__(self, feature_dim: int, hidden: int):
        super().__init__()
        self.trunk = nn.Sequential(nn.Linear(2 * feature_dim, hidden), nn.ReLU())
        self.head = nn.Linear(hidden, 3)

    def forward(self, f_test: torch.Tensor, f_guidance: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(torch.cat([f_test, f_guidance], dim=-1)))

    def forward_with_hidden(self, f_test, f_guidance) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.trunk(torch.cat([f_test, f_guidance], dim=-1))
        return self.head(hidden), hidden


class AdModule(nn.Module):
    """Small fully connected stack converting a vector into the auxiliary term.

    When used as the residual on top of the shortcut branch, the final layer
    starts zeroed so training begins at gaze = sc.
    """

    def __init__(self, in_dim: int, hidden: int, zero_last: bool):
        super().__init__()
        self.zero_last = zero_last
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 3),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ScModule(nn.Module):
    """Single fully connected projection from the test feature to a 3-vector."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.fc = nn.Linear(feature_dim, 3)

    def forward(self, f_test: torch.Tensor) -> torch.Tensor:
        return self.fc(f_test)


class GazeModel(nn.Module):
    """Base class: shared extractor, variant flags, checkpoint metadata.

    Instances are single-writer: training mutates weights from one thread;
    a frozen (eval-mode) instance is safe for concurrent inference.
    """

    variant: ModelVariant
    requires_guidance_label = False
    has_diff_path = True

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.extractor = FeatureExtractor(config)
        self.meta = {"seed": 0, "alpha": None, "beta": None}

    def features(self, test, guidance):
        return self.extractor(test), self.extractor(guidance)


class DrnetModel(GazeModel):
    variant = ModelVariant.DRNET

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.diff = DiffModule(config.feature_dim, config.diff_hidden)
        ad_in = 3 if config.ad_input == "vector" else config.diff_hidden
        self.ad = AdModule(ad_in, config.ad_hidden, zero_last=True)
        self.sc = ScModule(config.feature_dim)

    def forward(self, test, guidance) -> ModelOutput:
        f_test, f_guidance = self.features(test, guidance)
        d, hidden = self.diff.forward_with_hidden(f_test, f_guidance)
        aux = self.ad(d if self.config.ad_input == "vector" else hidden)
        sc = self.sc(f_test)
        return ModelOutput(gaze=sc + aux, diff=d, sc=sc, aux=aux)


class TwoStreamModel(GazeModel):
    """Baseline regressing gaze from concatenated features, no decomposition."""

    variant = ModelVariant.TWO_STREAM
    has_diff_path = False

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.head = nn.Sequential(
            nn.Linear(2 * config.feature_dim, config.diff_hidden),
            nn.ReLU(),
            nn.Linear(config.diff_hidden, 3),
        )

    def forward(self, test, guidance) -> ModelOutput:
        f_test, f_guidance = self.features(test, guidance)
        return ModelOutput(gaze=self.head(torch.cat([f_test, f_guidance], dim=-1)))


class DiffNnModel(GazeModel):
    """Baseline predicting only the difference; needs the guidance label at inference."""

    variant = ModelVariant.DIFF_NN
    requires_guidance_label = True

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.diff = DiffModule(config.feature_dim, config.diff_hidden)

    def forward(self, test, guidance, guidance_label) -> ModelOutput:
        if guidance_label is None:
            raise MissingLabelError("diff_nn inference requires the guidance gaze label")
        f_test, f_guidance = self.features(test, guidance)
        d = self.diff(f_test, f_guidance)
        return ModelOutput(gaze=d + guidance_label, diff=d)


class NoAdModel(GazeModel):
    """Ablation replacing the auxiliary stack by a learned scalar mix."""

    variant = ModelVariant.NO_AD

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.diff = DiffModule(config.feature_dim, config.diff_hidden)
        self.sc = ScModule(config.feature_dim)
        self.gamma = nn.Parameter(torch.tensor(0.5))

    def forward(self, test, guidance) -> ModelOutput:
        f_test, f_guidance = self.features(test, guidance)
        d = self.diff(f_test, f_guidance)
        sc = self.sc(f_test)
        return ModelOutput(gaze=self.gamma * sc + (1.0 - self.gamma) * d, diff=d, sc=sc)


class NoScModel(GazeModel):
    """Ablation keeping only the differential path."""

    variant = ModelVariant.NO_SC

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.diff = DiffModule(config.feature_dim, config.diff_hidden)
        ad_in = 3 if config.ad_input == "vector" else config.diff_hidden
        # The auxiliary stack is the whole head here, so it must not start at zero.
        self.ad = AdModule(ad_in, config.ad_hidden, zero_last=False)

    def forward(self, test, guidance) -> ModelOutput:
        f_test, f_guidance = self.features(test, guidance)
        d, hidden = self.diff.forward_with_hidden(f_test, f_guidance)
        aux = self.ad(d if self.config.ad_input == "vector" else hidden)
        return ModelOutput(gaze=aux, diff=d, aux=aux)


class NoDiffModel(GazeModel):
    """Ablation without the differential path; guidance images are ignored."""

    variant = ModelVariant.NO_DIFF
    has_diff_path = False

    def __init__(self, config: BackboneConfig):
        super().__init__(config)
        self.sc = ScModule(config.feature_dim)
        self.ad = AdModule(config.feature_dim, config.ad_hidden, zero_last=True)

    def forward(self, test, guidance=None) -> ModelOutput:
        f_test = self.extractor(test)
        aux = self.ad(f_test)
        sc = self.sc(f_test)
        return ModelOutput(gaze=sc + aux, sc=sc, aux=aux)


_MODEL_CLASSES = {
    ModelVariant.DRNET: DrnetModel,
    ModelVariant.TWO_STREAM: TwoStreamModel,
    ModelVariant.DIFF_NN: DiffNnModel,
    ModelVariant.NO_AD: NoAdModel,
    ModelVariant.NO_SC: NoScModel,
    ModelVariant.NO_DIFF: NoDiffModel,
}


def initialize_weights(model: GazeModel, seed: int) -> None:
    """Deterministically initialize all parameters from a numpy generator.

    Conv/linear weights draw from a fan-in-scaled zero-mean normal, biases are
    zero, batch-norm affine parameters start at identity. Auxiliary stacks
    flagged ``zero_last`` get a zeroed final layer so the residual starts off.
    """
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=tuple(module.weight.shape))
                module.weight.copy_(torch.from_numpy(w))
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Linear):
                fan_in = module.in_features
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=tuple(module.weight.shape))
                module.weight.copy_(torch.from_numpy(w))
                module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.reset_running_stats()
        # Zeroing happens after the draw so the rng stream does not depend on flags.
        for module in model.modules():
            if isinstance(module, AdModule) and module.zero_last:
                last = module.net[-1]
                last.weight.zero_()
                last.bias.zero_()
        if isinstance(model, NoAdModel):
            model.gamma.fill_(0.5)
    model.meta["seed"] = seed


def build_model(variant: ModelVariant | str, config: BackboneConfig, seed: int) -> GazeModel:
    """Construct and deterministically initialize a model variant."""
    variant = ModelVariant(variant)
    model = _MODEL_CLASSES[variant](config)
    initialize_weights(model, seed)
    return model


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack (H, W) arrays into the (B, 1, H, W) tensor the models expect."""
    arr = np.stack([np.asarray(im) for im in images])
    return torch.as_tensor(arr, dtype=dtype).unsqueeze(1)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
