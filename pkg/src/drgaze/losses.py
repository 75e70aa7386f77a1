"""Training losses for 3-vector gaze regression.

The magnitude loss is a componentwise L1 gap; the angle loss is the arccos of
the normalized dot product. Both combine into the weighted head loss (alpha)
and, together with the guidance-angle consistency term, into the total
training objective (beta). Predictions are free 3-vectors: nothing is
re-normalized before loss evaluation, the angle loss normalizes internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateOutputError

NORM_EPS = 1e-12
# Clamp bound used only inside gradients: the acos derivative diverges at +-1.
GRAD_DOT_LIMIT = 1.0 - 1e-7

_LA_CALLS = 0


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: alpha blends angle vs. L1, beta blends head vs. guidance terms."""

    alpha: float = 0.75
    beta: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")


class _ClampedAcos(torch.autograd.Function):
    """acos with an exact [-1, 1] clamp forward and a clamped-denominator backward.

    The forward value is the true angle (identical inputs give exactly 0);
    only the gradient denominator is pulled away from the singularity.
    """

    @staticmethod
    def forward(ctx, dot):
        ctx.save_for_backward(dot)
        return torch.acos(dot.clamp(-1.0, 1.0))

    @staticmethod
    def backward(ctx, grad_output):
        (dot,) = ctx.saved_tensors
        safe = dot.clamp(-GRAD_DOT_LIMIT, GRAD_DOT_LIMIT)
        return -grad_output / torch.sqrt(1.0 - safe * safe)


def _as_vectors(v, name: str) -> torch.Tensor:
    if not torch.is_tensor(v):
        v = torch.as_tensor(v, dtype=torch.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"{name} must have 3 components in the last axis, got {tuple(v.shape)}")
    return v


def _angle_between(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if bool((na.detach() < NORM_EPS).any()) or bool((nb.detach() < NORM_EPS).any()):
        raise DegenerateOutputError("zero-norm vector fed to an angle loss")
    dot = (a * b).sum(dim=-1) / (na * nb)
    return _ClampedAcos.apply(dot)


def l_original(g, g_hat, norm: str = "l1", space: str = "vector") -> torch.Tensor:
    """Componentwise gap between prediction and target.

    Defaults to L1 over 3-vector components. ``norm`` ("l1"/"l2") and
    ``space`` ("vector"/"pitchyaw") exist for sensitivity studies only; the
    pitchyaw space measures the gap between the two angle pairs instead.
    """
    g = _as_vectors(g, "g")
    g_hat = _as_vectors(g_hat, "g_hat")
    if space == "pitchyaw":
        g = _to_pitchyaw(g)
        g_hat = _to_pitchyaw(g_hat)
    elif space != "vector":
        raise ValueError(f"unknown space {space!r}")
    diff = g - g_hat
    if norm == "l1":
        return diff.abs().sum(dim=-1)
    if norm == "l2":
        return diff.norm(dim=-1)
    raise ValueError(f"unknown norm {norm!r}")


def _to_pitchyaw(v: torch.Tensor) -> torch.Tensor:
    n = v.norm(dim=-1, keepdim=True)
    if bool((n.detach() < NORM_EPS).any()):
        raise DegenerateOutputError("zero-norm vector cannot be expressed as pitch/yaw")
    u = v / n
    pitch = -torch.asin(u[..., 1].clamp(-1.0, 1.0))
    yaw = torch.atan2(-u[..., 0], -u[..., 2])
    return torch.stack([pitch, yaw], dim=-1)


def l_new(g, g_hat) -> torch.Tensor:
    """Angle (radians) between prediction and target directions."""
    return _angle_between(_as_vectors(g, "g"), _as_vectors(g_hat, "g_hat"))


def lb(g, g_hat, alpha: float) -> torch.Tensor:
    """alpha-weighted blend of the angle loss and the L1 loss."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * l_new(g, g_hat) + (1.0 - alpha) * l_original(g, g_hat)


def la(g_diff, g_hat_test, g_hat_guidance) -> torch.Tensor:
    """Guidance-angle consistency of the differential branch.

    Matches the angle between the differential output and the guidance label
    to the angle between the test label and the guidance label. This is the
    only place the training objective reads a guidance label.
    """
    global _LA_CALLS
    _LA_CALLS += 1
    g_diff = _as_vectors(g_diff, "g_diff")
    g_hat_test = _as_vectors(g_hat_test, "g_hat_test")
    g_hat_guidance = _as_vectors(g_hat_guidance, "g_hat_guidance")
    angle_diff = _angle_between(g_diff, g_hat_guidance)
    angle_test = _angle_between(g_hat_test, g_hat_guidance)
    return (angle_diff - angle_test).abs()


def total_loss(g, g_diff, g_hat_test, g_hat_guidance, weights: LossWeights) -> torch.Tensor:
    """(1 - beta) * la + beta * lb.

    The beta endpoints skip the unused term entirely, so beta = 1 never
    touches guidance labels and beta = 0 never touches the head loss.
    """
    if weights.beta == 1.0:
        return lb(g, g_hat_test, weights.alpha)
    if weights.beta == 0.0:
        return la(g_diff, g_hat_test, g_hat_guidance)
    return (1.0 - weights.beta) * la(g_diff, g_hat_test, g_hat_guidance) + weights.beta * lb(
        g, g_hat_test, weights.alpha
    )


def la_call_count() -> int:
    """Instrumentation: number of guidance-term evaluations since the last reset."""
    return _LA_CALLS


def reset_la_call_count() -> None:
    global _LA_CALLS
    _LA_CALLS = 0
