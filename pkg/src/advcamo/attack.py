"""Texture optimization loop.

Plain projected gradient descent on the texture: every step draws a batch
of viewpoints with paired transform parameters, renders the current
texture into each, pushes clean and adversarial composites through the
same transform, and minimizes the feature divergence objective. After
each update the texture clamps back into [0, 1].

Clean features are deterministic per (sample, transform), so they are
computed once and cached; only the adversarial branch carries gradients.

State checkpoints are versioned binary files so a run can stop and resume
mid-schedule, including the sampler's RNG stream.
"""
from __future__ import annotations

import io
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, FormatError, IoError, NonFiniteLoss, VersionError
from .geometry import toy_car_paint
from .losses import (
    AttackConfig,
    feature_divergence_loss,
    select_key_features,
    smoothness_loss,
)
from .rendering import SceneSample, render
from .sampling import (
    DatasetManifest,
    SamplingPolicy,
    epoch_draw_count,
    sample_batch,
)
from .scenes import SampleStore
from .texture import TextureMap, export_texture, import_texture
from .transforms import DEFAULT_SCHEDULE, ScheduleEntry, apply_phi
from .victims import FeatureStack, Victim, get_victim

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "RunState",
    "init_texture",
    "step",
    "run",
    "save_state",
    "load_state",
    "latest_checkpoint",
]

STATE_MAGIC = b"ACATTACK"
STATE_VERSION = 1

INIT_MODES = ("random_uniform", "gray", "from_file")


@dataclass
class RunConfig:
    """Everything a run needs besides the dataset itself.

    The objective scalars live in ``attack``, the viewpoint draw policy in
    ``sampling``, and the multi-scale schedule alongside; the remaining
    fields drive the outer loop.
    """

    attack: AttackConfig = field(default_factory=AttackConfig)
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    schedule: tuple[ScheduleEntry, ...] = DEFAULT_SCHEDULE
    learning_rate: float = 0.1
    update_rule: str = "sign"
    max_epochs: int = 5
    checkpoint_every: int = 60  # iterations between checkpoints
    seed: int = 0
    texture_resolution: tuple[int, int] = (512, 512)
    init_mode: str = "random_uniform"
    init_path: str | None = None
    victim_name: str = "surrogate-vlm"
    victim_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.update_rule not in ("sign", "raw"):
            raise ConfigError(f"update_rule must be 'sign' or 'raw', got {self.update_rule!r}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.init_mode == "from_file" and not self.init_path:
            raise ConfigError("init_mode 'from_file' needs init_path")
        if not self.schedule:
            raise ConfigError("transform schedule must not be empty")
        h, w = self.texture_resolution
        if h < 2 or w < 2:
            raise ConfigError(f"texture resolution must be at least 2x2, got {self.texture_resolution}")

    def to_json(self) -> dict:
        return {
            "attack": {
                "delta": self.attack.delta,
                "layer_weights": dict(self.attack.layer_weights),
                "lambda_smooth": self.attack.lambda_smooth,
                "smooth_on": self.attack.smooth_on,
                "reselect_every": self.attack.reselect_every,
            },
            "sampling": {
                "pitch_weights": {str(k): v for k, v in self.sampling.pitch_weights.items()},
                "batch_size": self.sampling.batch_size,
                "seed": self.sampling.seed,
            },
            "schedule": [
                [e.crop_fraction, e.weight, list(e.output_size), e.label] for e in self.schedule
            ],
            "learning_rate": self.learning_rate,
            "update_rule": self.update_rule,
            "max_epochs": self.max_epochs,
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
            "texture_resolution": list(self.texture_resolution),
            "init_mode": self.init_mode,
            "init_path": self.init_path,
            "victim_name": self.victim_name,
            "victim_seed": self.victim_seed,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "RunConfig":
        a = rec["attack"]
        s = rec["sampling"]
        return cls(
            attack=AttackConfig(
                delta=float(a["delta"]),
                layer_weights={str(k): float(v) for k, v in a["layer_weights"].items()},
                lambda_smooth=float(a["lambda_smooth"]),
                smooth_on=str(a["smooth_on"]),
                reselect_every=int(a["reselect_every"]),
            ),
            sampling=SamplingPolicy(
                pitch_weights={float(k): float(v) for k, v in s["pitch_weights"].items()},
                batch_size=int(s["batch_size"]),
                seed=int(s.get("seed", 0)),
            ),
            schedule=tuple(
                ScheduleEntry(float(f), float(w), tuple(size), str(label))
                for f, w, size, label in rec["schedule"]
            ),
            learning_rate=float(rec["learning_rate"]),
            update_rule=str(rec.get("update_rule", "sign")),
            max_epochs=int(rec["max_epochs"]),
            checkpoint_every=int(rec["checkpoint_every"]),
            seed=int(rec["seed"]),
            texture_resolution=tuple(rec["texture_resolution"]),
            init_mode=str(rec["init_mode"]),
            init_path=rec.get("init_path"),
            victim_name=str(rec["victim_name"]),
            victim_seed=int(rec["victim_seed"]),
        )


@dataclass
class RunState:
    config: RunConfig
    texture: TextureMap
    epoch: int                  # completed epochs
    iteration: int              # completed gradient steps
    rng: np.random.Generator
    history: list[dict] = field(default_factory=list)


def init_texture(
    resolution: tuple[int, int],
    mode: str = "random_uniform",
    rng: np.random.Generator | None = None,
    path=None,
) -> TextureMap:
    """Starting texture. A random start already disagrees with the clean
    features everywhere, so key sets are full at step zero. ``from_file``
    loads ``path`` (the file fixes the resolution)."""
    if mode == "random_uniform":
        if rng is None:
            rng = np.random.default_rng()
        h, w = resolution
        texels = torch.from_numpy(rng.random((h, w, 3))).to(torch.float32)
    elif mode == "gray":
        h, w = resolution
        texels = torch.full((h, w, 3), 0.5, dtype=torch.float32)
    elif mode == "from_file":
        if path is None:
            raise ConfigError("init_texture mode 'from_file' needs a path")
        return import_texture(path)
    else:
        raise ConfigError(f"init mode must be one of {INIT_MODES}, got {mode!r}")
    return TextureMap(texels)


def _clean_features(
    victim: Victim,
    clean_texture: TextureMap,
    sample: SceneSample,
    params,
    cache: dict,
) -> FeatureStack:
    key = (sample.sample_id, params.scale_label, round(params.crop_fraction, 9), params.output_size)
    if key not in cache:
        with torch.no_grad():
            img = render(sample, clean_texture)
            img = apply_phi(img, params)
            cache[key] = victim.extract_features(img).detach()
    return cache[key]


def step(
    state: RunState,
    batch,
    victim: Victim,
    config: RunConfig,
    clean_texture: TextureMap,
    learning_rate: float | None = None,
    clean_cache: dict | None = None,
    key_cache: dict | None = None,
) -> RunState:
    """One gradient step over a batch of (sample, transform) pairs.

    Updates the texture in place (descent step then clamp to [0, 1]),
    appends a history record, and bumps the iteration counter. The clean
    and adversarial branches share each pair's transform draw.
    ``learning_rate`` overrides the config's rate, zero included (useful
    for logging losses without moving the texture). ``key_cache`` holds
    the last key feature set per (sample, scale); a cached set younger
    than the reselect cadence is reused instead of recomputed.
    """
    if not batch:
        raise FormatError("step needs a nonempty batch")
    if learning_rate is None:
        learning_rate = config.learning_rate
    if clean_cache is None:
        clean_cache = {}
    if key_cache is None:
        key_cache = {}
    attack_cfg = config.attack
    texels = state.texture.texels
    if not texels.requires_grad:
        texels.requires_grad_(True)

    for entry in config.schedule:
        if tuple(entry.output_size) != tuple(victim.spec.input_size):
            raise ConfigError(
                f"schedule entry {entry.scale_label!r} outputs {entry.output_size}, "
                f"victim expects {victim.spec.input_size}"
            )
    total = None
    div_total = 0.0
    smooth_total = 0.0
    key_accum: dict[str, float] = {}

    for sample, params in batch:
        clean_stack = _clean_features(victim, clean_texture, sample, params, clean_cache)

        adv_scene = render(sample, state.texture)
        adv_img = apply_phi(adv_scene, params)
        adv_stack = victim.extract_features(adv_img)

        key_id = (sample.sample_id, params.scale_label)
        cached = key_cache.get(key_id)
        if cached is not None and state.iteration - cached.snapshot_iteration < attack_cfg.reselect_every:
            key_set = cached
        else:
            key_set = select_key_features(clean_stack, adv_stack, attack_cfg.delta, state.iteration)
            key_cache[key_id] = key_set
        div = feature_divergence_loss(clean_stack, adv_stack, key_set, attack_cfg.layer_weights)
        if attack_cfg.smooth_on == "texture":
            smooth = smoothness_loss(texels)
        else:
            smooth = smoothness_loss(adv_scene, mask=sample.mask)
        objective = div + attack_cfg.lambda_smooth * smooth

        total = objective if total is None else total + objective
        div_total += float(div.detach())
        smooth_total += float(smooth.detach())
        for name, n in key_set.sizes().items():
            key_accum[name] = key_accum.get(name, 0.0) + n

    n = len(batch)
    loss = total / n
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"objective is {float(loss)}")

    if texels.grad is not None:
        texels.grad = None
    loss.backward()
    with torch.no_grad():
        if texels.grad is not None:
            if config.update_rule == "sign":
                # per-texel step of exactly lr: raw gradients on a texture this
                # large are ~1e-5/texel and would never move it off init
                texels -= learning_rate * texels.grad.sign()
            else:
                texels -= learning_rate * texels.grad
        texels.clamp_(0.0, 1.0)
    texels.grad = None

    state.iteration += 1
    state.history.append(
        {
            "iteration": state.iteration,
            "loss": float(loss.detach()),
            "divergence": div_total / n,
            "smoothness": smooth_total / n,
            "key_sizes": {k: v / n for k, v in key_accum.items()},
        }
    )
    return state


def latest_checkpoint(out_dir) -> Path | None:
    """Newest indexed checkpoint under ``out_dir``, falling back to the
    final ``state.bin`` if the run already completed."""
    out_dir = Path(out_dir)
    best = None
    best_idx = -1
    ckpt_dir = out_dir / "checkpoints"
    if ckpt_dir.is_dir():
        for p in ckpt_dir.glob("step_*.bin"):
            m = re.fullmatch(r"step_(\d+)\.bin", p.name)
            if m and int(m.group(1)) > best_idx:
                best_idx = int(m.group(1))
                best = p
    if (out_dir / "state.bin").exists():
        final = load_state(out_dir / "state.bin")
        if final.iteration > best_idx:
            best = out_dir / "state.bin"
    return best


def run(
    config: RunConfig,
    manifest: DatasetManifest,
    victim: Victim | None = None,
    out_dir=None,
    clean_texture: TextureMap | None = None,
    resume: bool = False,
) -> RunState:
    """Full optimization schedule; returns the final state (texture inside).

    An epoch is ceil(len(manifest) / batch_size) weighted draws. With an
    ``out_dir``, an indexed checkpoint (state + texture PNG) lands every
    ``checkpoint_every`` iterations plus a final state.bin / adv_texture.png
    / history.jsonl at the root; ``resume`` continues from the newest
    checkpoint instead of starting over.
    """
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    if victim is None:
        victim = get_victim(config.victim_name, seed=config.victim_seed)
    if clean_texture is None:
        clean_texture = toy_car_paint(config.texture_resolution)

    if resume:
        if out_dir is None:
            raise ConfigError("resume needs an out_dir to read checkpoints from")
        ckpt = latest_checkpoint(out_dir)
        if ckpt is None:
            raise IoError(f"no checkpoint to resume from under {out_dir}")
        state = load_state(ckpt)
        if state.config.to_json() != config.to_json():
            log.warning("resuming with a config that differs from the checkpointed one")
        state.config = config
    else:
        rng = np.random.default_rng(config.seed)
        texture = init_texture(config.texture_resolution, config.init_mode, rng, config.init_path)
        state = RunState(config=config, texture=texture, epoch=0, iteration=0, rng=rng)

    state.texture.texels.requires_grad_(True)
    store = SampleStore(manifest)
    steps_per_epoch = epoch_draw_count(len(manifest), config.sampling.batch_size)
    if resume:
        # trust the iteration counter over the stored epoch: an indexed
        # checkpoint written on the last step of an epoch predates the bump
        state.epoch = state.iteration // steps_per_epoch
    first_epoch = state.epoch
    done_in_epoch = state.iteration - first_epoch * steps_per_epoch
    clean_cache: dict = {}
    key_cache: dict = {}

    for epoch in range(first_epoch, config.max_epochs):
        start = done_in_epoch if epoch == first_epoch else 0
        for _ in range(start, steps_per_epoch):
            batch = sample_batch(
                manifest, config.sampling, config.schedule, state.rng, loader=store.load
            )
            step(state, batch, victim, config, clean_texture,
                 clean_cache=clean_cache, key_cache=key_cache)
            if out_dir is not None and state.iteration % config.checkpoint_every == 0:
                tag = f"step_{state.iteration:06d}"
                save_state(state, out_dir / "checkpoints" / f"{tag}.bin")
                export_texture(state.texture, out_dir / "checkpoints" / f"{tag}.png")
        state.epoch = epoch + 1
        log.info(
            "epoch %d/%d: loss %.4f",
            state.epoch,
            config.max_epochs,
            state.history[-1]["loss"],
        )

    if out_dir is not None:
        save_state(state, out_dir / "state.bin")
        export_texture(state.texture, out_dir / "adv_texture.png")
        with open(out_dir / "history.jsonl", "w") as fh:
            for rec in state.history:
                fh.write(json.dumps(rec) + "\n")
    return state


# ---------------------------------------------------------------------------
# State persistence
# ---------------------------------------------------------------------------


def save_state(state: RunState, path) -> None:
    buf = io.BytesIO()
    np.savez(
        buf,
        texels=state.texture.texels.detach().numpy().astype(np.float32),
        epoch=np.array([state.epoch], dtype=np.int64),
        iteration=np.array([state.iteration], dtype=np.int64),
        rng_json=np.frombuffer(json.dumps(state.rng.bit_generator.state).encode(), dtype=np.uint8),
        history_json=np.frombuffer(json.dumps(state.history).encode(), dtype=np.uint8),
        config_json=np.frombuffer(json.dumps(state.config.to_json()).encode(), dtype=np.uint8),
    )
    try:
        with open(Path(path), "wb") as fh:
            fh.write(STATE_MAGIC)
            fh.write(struct.pack("<I", STATE_VERSION))
            fh.write(buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write attack state to {path}: {exc}") from exc


def load_state(path) -> RunState:
    path = Path(path)
    if not path.exists():
        raise IoError(f"attack state not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(STATE_MAGIC) + 4 or raw[: len(STATE_MAGIC)] != STATE_MAGIC:
        raise FormatError(f"{path} is not an attack state file")
    (version,) = struct.unpack("<I", raw[len(STATE_MAGIC) : len(STATE_MAGIC) + 4])
    if version != STATE_VERSION:
        raise VersionError(f"state version {version}, expected {STATE_VERSION}")
    try:
        payload = np.load(io.BytesIO(raw[len(STATE_MAGIC) + 4 :]))
        texels = torch.from_numpy(np.array(payload["texels"]))
        epoch = int(payload["epoch"][0])
        iteration = int(payload["iteration"][0])
        rng_state = json.loads(bytes(payload["rng_json"]).decode())
        history = json.loads(bytes(payload["history_json"]).decode())
        config = RunConfig.from_json(json.loads(bytes(payload["config_json"]).decode()))
    except VersionError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot parse attack state {path}: {exc}") from exc
    rng = np.random.default_rng(0)
    rng.bit_generator.state = rng_state
    return RunState(
        config=config,
        texture=TextureMap(texels),
        epoch=epoch,
        iteration=iteration,
        rng=rng,
        history=history,
    )
