"""Surrogate vision-language driving model and the victim adapter contract.

The attack only needs three things from a victim: named intermediate
feature maps that are differentiable with respect to the input image, a
deterministic caption for a (image, prompt) pair, and a declaration of
which layers are attackable. ``Victim`` pins that contract; the shipped
``SurrogateVictim`` is a small fixed-weight network that satisfies it on
CPU in milliseconds, so the full pipeline is testable without an external
model server.

Surrogate forward pass, all torch:
  patch embed   16x16 conv, 224x224x3 -> 196 tokens x 64 channels
  mixer blocks  4 tanh residual blocks, alternating channel / token mixing
  encoder out   the 196 x 64 token grid                 (layer "encoder")
  projector     learned 196->32 token pool, 64->128 channel lift, tanh
  projector out the 32 x 128 projected grid             (layer "projector")
  caption head  scenario routed nearest-prototype lookup over a closed
                caption bank; greedy, temperature-free

Weights are drawn once from a seeded generator and never trained; the
checkpoint format exists so a run can pin the exact victim it attacked.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from pathlib import Path

from .errors import (
    EmptyText,
    FormatError,
    IoError,
    LayerNotExposed,
    ShapeMismatch,
    VersionError,
    VictimUnavailable,
)

__all__ = [
    "FeatureStack",
    "VictimSpec",
    "Victim",
    "SurrogateVictim",
    "SCENARIOS",
    "CAPTION_BANKS",
    "route_scenario",
    "extract_features",
    "generate",
    "feature_stats",
    "save_victim",
    "load_victim",
    "get_victim",
    "available_victims",
]

CHECKPOINT_MAGIC = b"ACVICTIM"
CHECKPOINT_VERSION = 1

PATCH = 16
TOKENS = 196          # (224 / 16) ** 2
ENC_DIM = 64
PROJ_TOKENS = 32
PROJ_DIM = 128
N_BLOCKS = 4


@dataclass
class FeatureStack:
    """Per-layer feature tensors for one image.

    ``layers`` preserves extraction order (encoder before projector);
    ``provenance`` records which victim produced the stack and a digest of
    the input image, so cached stacks are attributable.
    """

    layers: dict[str, torch.Tensor]
    provenance: str = ""

    def __getitem__(self, name: str) -> torch.Tensor:
        if name not in self.layers:
            raise LayerNotExposed(f"layer {name!r} not in feature stack {sorted(self.layers)}")
        return self.layers[name]

    def detach(self) -> "FeatureStack":
        return FeatureStack({k: v.detach() for k, v in self.layers.items()}, self.provenance)


@dataclass(frozen=True)
class VictimSpec:
    name: str
    input_size: tuple[int, int]
    attack_layers: tuple[str, ...]
    prompt_template: str = "scene: {image}\nquestion: {prompt}\nanswer:"


class Victim:
    """Adapter contract; see docs/victims.md for plugging in a real model."""

    spec: VictimSpec

    def extract_features(self, image: torch.Tensor, layers=None) -> FeatureStack:
        raise NotImplementedError

    def generate(self, image: torch.Tensor, prompt: str) -> str:
        raise NotImplementedError

    def feature_stats(self, images) -> dict[str, dict[str, float]]:
        """Scalar mean and variance over all feature entries of every image
        in the set, per layer; the feature-distribution diagnostic."""
        images = list(images)
        if not images:
            raise ShapeMismatch("feature_stats needs at least one image")
        pooled: dict[str, list[torch.Tensor]] = {}
        for image in images:
            stack = self.extract_features(image)
            for name, feat in stack.layers.items():
                pooled.setdefault(name, []).append(feat.detach().flatten())
        out = {}
        for name, chunks in pooled.items():
            flat = torch.cat(chunks)
            out[name] = {
                "mean": float(flat.mean()),
                "variance": float(flat.var(unbiased=False)),
            }
        return out


# ---------------------------------------------------------------------------
# Scenario routing and caption banks
# ---------------------------------------------------------------------------

SCENARIOS = ("planning", "prediction", "perception")

_SCENARIO_KEYWORDS = {
    "planning": ("plan", "should", "action", "maneuver", "decide", "do next"),
    "prediction": ("predict", "will", "going to", "expect", "happen", "motion"),
    "perception": ("describe", "see", "scene", "visible", "objects", "ahead"),
}

CAPTION_BANKS: dict[str, tuple[str, ...]] = {
    "planning": (
        "proceed straight at current speed",
        "slow down and prepare to stop",
        "stop and wait for the vehicle ahead",
        "change lanes to the left",
        "change lanes to the right",
        "accelerate and overtake",
        "yield to crossing traffic",
        "turn around at the next opportunity",
    ),
    "prediction": (
        "the vehicle ahead will keep its lane and speed",
        "the vehicle ahead will brake suddenly",
        "the vehicle ahead will turn left",
        "the vehicle ahead will turn right",
        "the vehicle ahead will pull over and stop",
        "the vehicle ahead will accelerate away",
        "the vehicle ahead will reverse",
        "the vehicle ahead will remain parked",
    ),
    "perception": (
        "a car is parked on the road ahead",
        "a vehicle is driving ahead in the same lane",
        "the road ahead is clear",
        "an obstacle is blocking the lane",
        "a truck is approaching in the oncoming lane",
        "pedestrians are crossing near the vehicle",
        "a motorcycle is passing on the right",
        "debris is scattered across the road",
    ),
}


def route_scenario(prompt: str) -> str:
    """Map a free-form prompt onto one of the closed caption banks."""
    low = prompt.lower()
    for scenario in ("prediction", "planning", "perception"):
        if any(kw in low for kw in _SCENARIO_KEYWORDS[scenario]):
            return scenario
    return "perception"


# ---------------------------------------------------------------------------
# Surrogate model
# ---------------------------------------------------------------------------


def _init_weights(seed: int) -> dict[str, torch.Tensor]:
    g = torch.Generator().manual_seed(seed)

    def randn(*shape, scale):
        return (torch.randn(*shape, generator=g, dtype=torch.float64) * scale).to(torch.float32)

    w: dict[str, torch.Tensor] = {}
    w["patch_w"] = randn(ENC_DIM, 3, PATCH, PATCH, scale=1.0 / (3 * PATCH * PATCH) ** 0.5)
    w["patch_b"] = torch.zeros(ENC_DIM)
    w["pos"] = randn(TOKENS, ENC_DIM, scale=0.02)
    for i in range(N_BLOCKS):
        if i % 2 == 0:
            w[f"blk{i}_a"] = randn(ENC_DIM, ENC_DIM, scale=1.0 / ENC_DIM**0.5)
            w[f"blk{i}_b"] = randn(ENC_DIM, ENC_DIM, scale=1.0 / ENC_DIM**0.5)
        else:
            w[f"blk{i}_a"] = randn(TOKENS, TOKENS, scale=1.0 / TOKENS**0.5)
    w["pool"] = randn(PROJ_TOKENS, TOKENS, scale=1.0 / TOKENS**0.5)
    w["proj_w"] = randn(ENC_DIM, PROJ_DIM, scale=1.0 / ENC_DIM**0.5)
    w["proj_b"] = torch.zeros(PROJ_DIM)
    for scenario, bank in CAPTION_BANKS.items():
        w[f"proto_{scenario}"] = randn(len(bank), PROJ_DIM, scale=1.0)
    for t in w.values():
        t.requires_grad_(False)
    return w


class SurrogateVictim(Victim):
    def __init__(self, weights: dict[str, torch.Tensor], seed: int):
        self.weights = weights
        self.seed = seed
        self.spec = VictimSpec(
            name="surrogate-vlm",
            input_size=(224, 224),
            attack_layers=("encoder", "projector"),
        )

    @classmethod
    def create(cls, seed: int = 0) -> "SurrogateVictim":
        return cls(_init_weights(seed), seed)

    # -- forward ------------------------------------------------------------

    def _forward(self, image: torch.Tensor) -> dict[str, torch.Tensor]:
        h, w = self.spec.input_size
        if image.shape != (h, w, 3):
            raise ShapeMismatch(f"victim expects {(h, w, 3)} images, got {tuple(image.shape)}")
        x = (image.to(torch.float32) * 2.0 - 1.0).permute(2, 0, 1).unsqueeze(0)
        tokens = F.conv2d(x, self.weights["patch_w"], self.weights["patch_b"], stride=PATCH)
        tokens = tokens.flatten(2).squeeze(0).transpose(0, 1)   # (196, 64)
        tokens = tokens + self.weights["pos"]
        for i in range(N_BLOCKS):
            if i % 2 == 0:
                tokens = tokens + torch.tanh(tokens @ self.weights[f"blk{i}_a"]) @ self.weights[f"blk{i}_b"]
            else:
                tokens = tokens + self.weights[f"blk{i}_a"] @ torch.tanh(tokens)
        encoder = tokens
        pooled = self.weights["pool"] @ encoder                 # (32, 64)
        projector = torch.tanh(pooled @ self.weights["proj_w"] + self.weights["proj_b"])
        return {"encoder": encoder, "projector": projector}

    # -- contract -----------------------------------------------------------

    def extract_features(self, image: torch.Tensor, layers=None) -> FeatureStack:
        feats = self._forward(image)
        wanted = tuple(layers) if layers is not None else self.spec.attack_layers
        out = {}
        for name in wanted:
            if name not in feats:
                raise LayerNotExposed(f"victim exposes {sorted(feats)}, not {name!r}")
            out[name] = feats[name]
        digest = hashlib.sha1(image.detach().cpu().numpy().tobytes()).hexdigest()[:12]
        return FeatureStack(out, provenance=f"{self.spec.name}:{digest}")

    def generate(self, image: torch.Tensor, prompt: str) -> str:
        if not prompt or not prompt.strip():
            raise EmptyText("prompt must be nonempty")
        scenario = route_scenario(prompt)
        with torch.no_grad():
            feats = self._forward(image)
            descriptor = feats["projector"].mean(dim=0)          # (128,)
            protos = self.weights[f"proto_{scenario}"]
            sims = F.cosine_similarity(protos, descriptor.unsqueeze(0), dim=1)
            idx = int(torch.argmax(sims))
        return CAPTION_BANKS[scenario][idx]


# Functional forms of the victim contract, for callers that prefer
# free functions over methods.


def extract_features(victim: Victim, image: torch.Tensor, layers=None) -> FeatureStack:
    return victim.extract_features(image, layers=layers)


def generate(victim: Victim, image: torch.Tensor, prompt: str) -> str:
    return victim.generate(image, prompt)


def feature_stats(victim: Victim, images) -> dict[str, dict[str, float]]:
    return victim.feature_stats(images)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_victim(victim: SurrogateVictim, path) -> None:
    """Binary checkpoint: 8-byte magic, uint32 version, npz payload."""
    buf = io.BytesIO()
    arrays = {k: v.numpy() for k, v in victim.weights.items()}
    arrays["__seed__"] = np.array([victim.seed], dtype=np.int64)
    np.savez(buf, **arrays)
    try:
        with open(Path(path), "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write victim checkpoint to {path}: {exc}") from exc


def load_victim(path) -> SurrogateVictim:
    path = Path(path)
    if not path.exists():
        raise IoError(f"victim checkpoint not found: {path}")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read victim checkpoint {path}: {exc}") from exc
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a victim checkpoint")
    (version,) = struct.unpack("<I", raw[len(CHECKPOINT_MAGIC) : len(CHECKPOINT_MAGIC) + 4])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        payload = np.load(io.BytesIO(raw[len(CHECKPOINT_MAGIC) + 4 :]))
        seed = int(payload["__seed__"][0])
        weights = {
            k: torch.from_numpy(np.array(payload[k])) for k in payload.files if k != "__seed__"
        }
    except Exception as exc:
        raise FormatError(f"cannot parse victim checkpoint {path}: {exc}") from exc
    for t in weights.values():
        t.requires_grad_(False)
    return SurrogateVictim(weights, seed)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_VICTIM_BUILDERS = {
    "surrogate-vlm": SurrogateVictim.create,
}


def available_victims() -> tuple[str, ...]:
    return tuple(sorted(_VICTIM_BUILDERS))


def get_victim(name: str, seed: int = 0) -> Victim:
    if name not in _VICTIM_BUILDERS:
        raise VictimUnavailable(
            f"no victim named {name!r}; available: {', '.join(available_victims())}"
        )
    return _VICTIM_BUILDERS[name](seed=seed)
