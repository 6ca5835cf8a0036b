"""Two-stage training loop, losses, and evaluation.

Stage 1 freezes the decoder stack and trains only the parameters the active
scheme bolted on (fusers, projection adapters); stage 2 unfreezes the stack
and trains everything. The 3D provider is not a model parameter and stays
frozen throughout. ``one_stage`` collapses the schedule into a single phase
over the combined epoch budget at the stage-2 learning rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .errors import ConfigError, ContractError
from .geometry import CameraRig, rig_camera_tokens
from .layers import Linear
from .model import Model, ModelConfig
from .optim import AdamState, clip_global_norm
from .scene import (
    Feature3D,
    ProviderTables,
    SceneConfig,
    SceneSample,
    TokenLayout,
    build_sequence,
    provide_3d,
)


@dataclass(frozen=True)
class StageConfig:
    epochs: int = 2
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


@dataclass(frozen=True)
class TrainConfig:
    stage1: StageConfig = StageConfig(6, 3e-3)
    stage2: StageConfig = StageConfig(6, 1.5e-3)
    batch_size: int = 24
    seed: int = 0
    one_stage: bool = False
    distill_weight: float = 0.5
    clip_norm: float = 1.0
    holdout_frac: float = 0.2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.holdout_frac < 1.0):
            raise ConfigError(f"holdout_frac must lie in [0, 1), got {self.holdout_frac}")
        if self.distill_weight < 0.0:
            raise ConfigError(f"distill_weight must be >= 0, got {self.distill_weight}")
        if self.clip_norm <= 0.0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["stage1"] = StageConfig(**d["stage1"])
        d["stage2"] = StageConfig(**d["stage2"])
        return cls(**d)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def ce_loss(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of (B, V) logits against integer targets."""
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ContractError(f"ce_loss: logits {logits.shape} vs targets {targets.shape}")
    return ad.mul_scalar(ad.mean_all(ad.pick(ad.log_softmax_lastdim(logits), targets)), -1.0)


def distill_loss(final_visual: Tensor, feat3d: Feature3D, proj: Linear) -> Tensor:
    """Cosine alignment of per-view pooled visual states with pooled 3D patches.

    Both sides are pooled per view, the visual side is projected into 3D
    feature space, and each vector is epsilon-guard normalized; the 3D side
    is a detached constant. Returns mean(1 - cos) over (batch, view), so 0
    means identical directions, 1 orthogonal, 2 opposite.
    """
    b, c = feat3d.values.shape[0], feat3d.values.shape[1]
    if final_visual.shape[0] != b or final_visual.shape[1] % c != 0:
        raise ContractError(
            f"distill_loss: visual {final_visual.shape} does not tile over {c} views"
        )
    per_view = final_visual.shape[1] // c
    pooled2d = ad.mean_axis(
        ad.reshape(final_visual, (b, c, per_view, final_visual.shape[2])), 2
    )
    z = ad.normalize_lastdim(proj(pooled2d))
    pooled3d = feat3d.values[:, :, feat3d.patch_start :, :].mean(axis=2)
    norms = np.sqrt((pooled3d * pooled3d).sum(axis=-1, keepdims=True))
    target = pooled3d / (norms + 1e-8)
    cos = ad.sum_axis(ad.mul_const(z, target), -1)
    return ad.add_scalar(ad.mul_scalar(ad.mean_all(cos), -1.0), 1.0)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    """Whole-corpus provider outputs, precomputed once."""

    inputs: np.ndarray  # (N, L, D2)
    feats: np.ndarray  # (N, C, N1, D1)
    targets: np.ndarray  # (N,)
    layout: TokenLayout
    cam_tokens: np.ndarray  # (C, 16)
    registers: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def batch_features(self, idx: np.ndarray) -> Feature3D:
        return Feature3D(values=self.feats[idx], registers=self.registers)


def prepare(
    samples: list[SceneSample], tables: ProviderTables, cfg: SceneConfig, rig: CameraRig
) -> Prepared:
    if not samples:
        raise ConfigError("cannot prepare an empty corpus")
    inputs, feats, targets = [], [], []
    layout = None
    for s in samples:
        tok, layout, target = build_sequence(s, tables, cfg)
        inputs.append(tok)
        feats.append(provide_3d(s, tables, cfg, rig).values)
        targets.append(target)
    return Prepared(
        inputs=np.concatenate(inputs, axis=0),
        feats=np.concatenate(feats, axis=0),
        targets=np.asarray(targets, dtype=np.intp),
        layout=layout,
        cam_tokens=rig_camera_tokens(rig),
        registers=cfg.registers,
    )


def model_config_for(cfg: SceneConfig, layout: TokenLayout, **overrides) -> ModelConfig:
    base = dict(
        embed_dim=cfg.embed_dim,
        feat3d_dim=cfg.feat3d_dim,
        vocab=cfg.views,
        max_len=layout.length,
    )
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------

def _batches(order: np.ndarray, size: int):
    for lo in range(0, len(order), size):
        yield order[lo : lo + size]


def split_indices(n: int, holdout_frac: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic split: leading samples train, trailing samples hold out."""
    n_hold = int(round(n * holdout_frac))
    n_hold = min(n_hold, n - 1) if n > 1 else 0
    return np.arange(n - n_hold), np.arange(n - n_hold, n)


def evaluate(model: Model, data: Prepared, idx: np.ndarray | None = None, batch_size: int = 256):
    """(accuracy, mean cross-entropy) over the given indices."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)
    if idx.size == 0:
        raise ContractError("evaluate: empty index set")
    hits, ce_sum = 0, 0.0
    for batch in _batches(idx, batch_size):
        fr = model.forward(data.inputs[batch], data.batch_features(batch), data.cam_tokens)
        preds = np.argmax(fr.logits.data, axis=1)
        hits += int((preds == data.targets[batch]).sum())
        ce_sum += float(ce_loss(fr.logits, data.targets[batch]).data) * len(batch)
    return hits / idx.size, ce_sum / idx.size


def train(model: Model, data: Prepared, tcfg: TrainConfig) -> list[dict]:
    """Run the staged schedule; returns one history row per epoch."""
    if len(data) == 0:
        raise ConfigError("cannot train on an empty corpus")
    train_idx, hold_idx = split_indices(len(data), tcfg.holdout_frac)
    eval_idx = hold_idx if hold_idx.size else train_idx
    rng = np.random.default_rng(np.random.SeedSequence((int(tcfg.seed), 3)))
    distill = model.scfg.scheme == "distill"
    if tcfg.one_stage:
        stages = [("single", StageConfig(tcfg.stage1.epochs + tcfg.stage2.epochs, tcfg.stage2.lr), True)]
    else:
        stages = [("stage1", tcfg.stage1, False), ("stage2", tcfg.stage2, True)]
    history: list[dict] = []
    epoch_no = 0
    for stage_name, stage, train_stack in stages:
        model.set_stage(train_stack=train_stack, train_adapters=True)
        params = model.parameters()
        if not any(p.trainable for p in params):
            continue  # baseline has no adapters: its adapter-only stage is a no-op
        opt = AdamState(params, lr=stage.lr)
        # adapter-only phase keeps a flat (hot) rate: late-layer adapters
        # transition late, and a decayed rate stalls them.  Full-model
        # phases decay to a 10% floor instead; late oscillation otherwise
        # undoes the fit on the synthetic task.
        batches_per_epoch = max(1, -(-train_idx.size // tcfg.batch_size))
        total_steps = max(1, stage.epochs * batches_per_epoch)
        step_no = 0
        for _ in range(stage.epochs):
            epoch_no += 1
            order = rng.permutation(train_idx)
            loss_sum = 0.0
            for batch in _batches(order, tcfg.batch_size):
                feat = data.batch_features(batch)
                fr = model.forward(data.inputs[batch], feat, data.cam_tokens)
                loss = ce_loss(fr.logits, data.targets[batch])
                if distill and tcfg.distill_weight > 0.0:
                    aux = distill_loss(fr.final_visual, feat, model.proj)
                    loss = ad.add(loss, ad.mul_scalar(aux, tcfg.distill_weight))
                backward(loss)
                clip_global_norm(params, tcfg.clip_norm)
                ramp = min(1.0, (step_no + 1) / max(1, int(0.05 * total_steps)))
                if train_stack:
                    frac = step_no / total_steps
                    decay = 0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * frac))
                else:
                    decay = 1.0
                opt.lr = stage.lr * ramp * decay
                opt.step()
                step_no += 1
                loss_sum += float(loss.data) * len(batch)
            acc, holdout_ce = evaluate(model, data, eval_idx)
            history.append(
                {
                    "epoch": epoch_no,
                    "stage": stage_name,
                    "train_loss": loss_sum / len(train_idx),
                    "holdout_acc": acc,
                    "holdout_ce": holdout_ce,
                }
            )
    model.set_stage(train_stack=True, train_adapters=True)
    return history
