"""Attack objective: feature divergence plus a smoothness penalty.

The divergence term pushes the victim's intermediate features away from
their clean-texture values, but only on the rows that are still close:
per layer, the key set keeps the feature rows whose clean/adversarial
cosine is at most ``delta``, and the loss is the weighted mean cosine over
that set. Rows already far away stop contributing, which concentrates the
gradient on the stubborn directions.

The smoothness term is squared-difference total variation over
horizontally and vertically adjacent pixels, optionally restricted to
pairs whose both endpoints are inside a mask. The attack applies it to
the rendered foreground by default; a config switch moves it onto the
texture itself (the objective is stated both ways in different places,
so both forms ship).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import torch

from .errors import ShapeMismatch
from .victims import FeatureStack

log = logging.getLogger(__name__)

__all__ = [
    "AttackConfig",
    "KeyFeatureSet",
    "row_cosine",
    "select_key_features",
    "feature_divergence_loss",
    "smoothness_loss",
    "total_objective",
]

DEFAULT_LAYER_WEIGHTS = {"encoder": 0.4, "projector": 0.6}


@dataclass
class AttackConfig:
    """Objective knobs.

    ``smooth_on`` selects what the smoothness penalty sees: the rendered
    image masked to the vehicle ("render", the default) or the texture
    ("texture"). ``reselect_every`` is the refresh cadence of the key
    feature sets in optimizer iterations; 1 recomputes them every step.
    """

    delta: float = 0.8
    layer_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LAYER_WEIGHTS))
    # measured on the shipped fixtures: 1e-4 puts the smoothness gradient at
    # roughly a quarter of the divergence gradient; 1e-2 buries divergence 25x
    lambda_smooth: float = 1e-4
    smooth_on: str = "render"
    reselect_every: int = 1

    def __post_init__(self):
        if not -1.0 <= self.delta <= 1.0:
            raise ShapeMismatch(f"delta must be a cosine threshold in [-1, 1], got {self.delta}")
        if self.lambda_smooth < 0:
            raise ShapeMismatch(f"lambda_smooth must be nonnegative, got {self.lambda_smooth}")
        if self.smooth_on not in ("render", "texture"):
            raise ShapeMismatch(f"smooth_on must be 'render' or 'texture', got {self.smooth_on!r}")
        if self.reselect_every < 1:
            raise ShapeMismatch(f"reselect_every must be at least 1, got {self.reselect_every}")
        if not self.layer_weights:
            raise ShapeMismatch("layer_weights must not be empty")
        for name, w in self.layer_weights.items():
            if w < 0:
                raise ShapeMismatch(f"layer weight for {name!r} must be nonnegative, got {w}")
        if all(w == 0 for w in self.layer_weights.values()):
            raise ShapeMismatch("at least one layer weight must be positive")


@dataclass
class KeyFeatureSet:
    """Per-layer row indices the divergence loss averages over, tagged with
    the optimizer iteration they were selected at."""

    indices: dict[str, torch.Tensor]
    snapshot_iteration: int = 0

    def sizes(self) -> dict[str, int]:
        return {k: int(v.numel()) for k, v in self.indices.items()}


def row_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of corresponding rows of two (N, C) tensors,
    clamped to [-1, 1]. A zero row yields cosine 0."""
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatch(
            f"row_cosine expects matching (N, C) tensors, got {tuple(a.shape)} and {tuple(b.shape)}"
        )
    eps = torch.finfo(a.dtype).tiny
    dot = (a * b).sum(dim=1)
    denom = (a.norm(dim=1) * b.norm(dim=1)).clamp_min(eps)
    return (dot / denom).clamp(-1.0, 1.0)


def select_key_features(
    clean: FeatureStack,
    adv: FeatureStack,
    delta: float,
    iteration: int = 0,
) -> KeyFeatureSet:
    """Rows whose clean/adversarial cosine is still at most ``delta``."""
    indices = {}
    for name, c in clean.layers.items():
        a = adv[name]
        cos = row_cosine(c.detach(), a.detach())
        indices[name] = torch.nonzero(cos <= delta, as_tuple=False).flatten()
    return KeyFeatureSet(indices, snapshot_iteration=iteration)


def feature_divergence_loss(
    clean: FeatureStack,
    adv: FeatureStack,
    keys: KeyFeatureSet,
    layer_weights: dict[str, float] | None = None,
) -> torch.Tensor:
    """Weighted mean cosine over the key rows of each layer.

    Minimizing this drives the selected rows away from their clean
    directions. A layer with an empty key set contributes 0 and logs a
    warning: nothing is left to push there.
    """
    weights = dict(DEFAULT_LAYER_WEIGHTS) if layer_weights is None else layer_weights
    total = None
    for name, alpha in weights.items():
        c = clean[name].detach()
        a = adv[name]
        idx = keys.indices.get(name)
        if idx is None:
            raise ShapeMismatch(f"key set has no entry for layer {name!r}")
        if idx.numel() == 0:
            log.warning("layer %s: key feature set is empty, contributing 0", name)
            continue
        if idx.numel() and int(idx.max()) >= c.shape[0]:
            raise ShapeMismatch(f"key index {int(idx.max())} out of range for layer {name!r}")
        cos = row_cosine(c[idx], a[idx])
        term = alpha * cos.mean()
        total = term if total is None else total + term
    if total is None:
        ref = next(iter(adv.layers.values()))
        return torch.zeros((), dtype=ref.dtype)
    return total


def smoothness_loss(image: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Sum of squared differences between horizontally and vertically
    adjacent pixels, over all channels and in-bounds pairs. With ``mask``,
    only pairs whose both endpoints are masked-in count. A single-pixel
    image has no pairs and scores 0."""
    if image.ndim == 2:
        image = image.unsqueeze(-1)
    if image.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) image, got {tuple(image.shape)}")
    dx = image[:, :-1, :] - image[:, 1:, :]
    dy = image[:-1, :, :] - image[1:, :, :]
    if mask is not None:
        if mask.shape != image.shape[:2]:
            raise ShapeMismatch(f"mask {tuple(mask.shape)} vs image {tuple(image.shape[:2])}")
        mx = (mask[:, :-1] & mask[:, 1:]).unsqueeze(-1)
        my = (mask[:-1, :] & mask[1:, :]).unsqueeze(-1)
        dx = dx * mx
        dy = dy * my
    return (dx * dx).sum() + (dy * dy).sum()


def total_objective(
    clean: FeatureStack,
    adv: FeatureStack,
    keys: KeyFeatureSet,
    adv_image: torch.Tensor,
    config: AttackConfig,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """The per-draw minimization target: divergence plus weighted
    smoothness of ``adv_image`` (the rendered view or the texture,
    whichever the config selected)."""
    div = feature_divergence_loss(clean, adv, keys, config.layer_weights)
    smooth = smoothness_loss(adv_image, mask=mask)
    return div + config.lambda_smooth * smooth
