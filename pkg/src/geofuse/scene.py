"""Synthetic multi-view scenes with frozen 2D and 3D token providers.

A scene scatters a few objects around the ego origin, one azimuth sector per
view. The answer to the fixed query ("which view holds the nearest object")
is the view index of the object with the smallest distance to the origin.

The 2D encoder is deliberately geometry-blind: every image token is a fixed
embedding of (appearance id, within-view slot) and carries no position or
distance information. The 3D provider lifts (noisy) lidar-frame coordinates
of the per-view patch grid into feature space through a fixed random linear
map, prepends a camera token built from the view's img2lidar transform, and
inserts constant register rows. Both providers are frozen: their tables
derive from ``provider_seed`` alone and never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError, ContractError, GenerationError
from .geometry import CameraRig, default_rig, rig_camera_tokens

# Objects sit close to the horizontal plane; angular placement keeps a strip
# of the sector boundary clear so the nearest-view assignment is unambiguous.
_AZIMUTH_INSET = 0.8
_ELEVATION_RANGE = (-0.05, 0.35)


@dataclass(frozen=True)
class SceneConfig:
    views: int = 3
    patches_per_view: int = 8
    objects_per_view: tuple[int, int] = (2, 2)
    radius: tuple[float, float] = (2.0, 12.0)
    margin: float = 4.0
    noise_sigma: float = 0.01
    n_appearance: int = 4
    registers: int = 1
    feat3d_dim: int = 128
    embed_dim: int = 64
    special_tokens: int = 2
    text_tokens: int = 6
    background_radius: tuple[float, float] = (25.0, 40.0)
    provider_seed: int = 2026
    max_attempts: int = 200

    def __post_init__(self):
        object.__setattr__(self, "objects_per_view", tuple(self.objects_per_view))
        object.__setattr__(self, "radius", tuple(float(r) for r in self.radius))
        object.__setattr__(
            self, "background_radius", tuple(float(r) for r in self.background_radius)
        )
        lo, hi = self.objects_per_view
        if self.views < 2:
            raise ConfigError(f"the task needs >= 2 views to classify, got {self.views}")
        if self.patches_per_view < 1:
            raise ConfigError(f"patches_per_view must be >= 1, got {self.patches_per_view}")
        if not (0 <= lo <= hi <= self.patches_per_view) or hi < 1:
            raise ConfigError(f"objects_per_view {self.objects_per_view} out of range")
        if not (0.0 < self.radius[0] < self.radius[1]):
            raise ConfigError(f"radius range {self.radius} is not increasing and positive")
        if self.margin < 0.0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.n_appearance < 1:
            raise ConfigError(f"n_appearance must be >= 1, got {self.n_appearance}")
        if self.registers < 0:
            raise ConfigError(f"registers must be >= 0, got {self.registers}")
        if self.feat3d_dim < 3 or self.embed_dim < 1:
            raise ConfigError(
                f"feature dims too small: feat3d_dim={self.feat3d_dim}, embed_dim={self.embed_dim}"
            )
        if self.special_tokens < 0 or self.text_tokens < 1:
            raise ConfigError("need text_tokens >= 1 (the answer slot) and special_tokens >= 0")
        if not (self.radius[1] < self.background_radius[0] < self.background_radius[1]):
            raise ConfigError(
                f"background_radius {self.background_radius} must start beyond object radius "
                f"{self.radius[1]} so backgrounds are never nearest"
            )
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")

    @property
    def tokens_per_view(self) -> int:
        """3D tokens per view: camera + registers + patches."""
        return 1 + self.registers + self.patches_per_view

    @property
    def sequence_length(self) -> int:
        return self.views * self.patches_per_view + self.special_tokens + self.text_tokens

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


@dataclass(frozen=True)
class SceneObject:
    position: np.ndarray  # (3,) lidar-frame meters
    appearance: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class SceneSample:
    objects: tuple[SceneObject, ...]
    slots: tuple[int, ...]  # within-view patch slot per object
    visibility: np.ndarray  # (n_objects, views) bool, one view per generated object
    label: int  # view index holding the nearest object
    seed: int

    def __post_init__(self):
        vis = np.asarray(self.visibility, dtype=bool)
        object.__setattr__(self, "visibility", vis)
        if vis.shape[0] != len(self.objects) or len(self.slots) != len(self.objects):
            raise ContractError("visibility/slots rows must match the object count")


@dataclass(frozen=True)
class TokenLayout:
    """Position bookkeeping for one assembled input sequence."""

    views: int
    image_per_view: int
    special_tokens: int
    text_tokens: int

    @property
    def image_count(self) -> int:
        return self.views * self.image_per_view

    @property
    def length(self) -> int:
        return self.image_count + self.special_tokens + self.text_tokens

    @property
    def prefix_length(self) -> int:
        """Image + special tokens; attention is bidirectional over this span."""
        return self.image_count + self.special_tokens

    @property
    def answer_position(self) -> int:
        return self.length - 1

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.length, dtype=np.uint8)
        m[: self.image_count] = 1
        return m

    @property
    def image_indices(self) -> np.ndarray:
        return np.arange(self.image_count)

    def view_block(self, view: int) -> slice:
        lo = view * self.image_per_view
        return slice(lo, lo + self.image_per_view)


@dataclass(frozen=True)
class Feature3D:
    """Per-view 3D token grids, shape (B, C, tokens_per_view, feat3d_dim).

    Token 0 of each view is the camera slot, the next ``registers`` rows are
    constants, and the remaining rows are the patch grid.
    """

    values: np.ndarray
    registers: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 4:
            raise ContractError(f"Feature3D values must be 4-d, got shape {v.shape}")
        if v.shape[2] < 1 + self.registers + 1:
            raise ContractError("Feature3D needs a camera row, registers, and >=1 patch row")

    @property
    def patch_start(self) -> int:
        return 1 + self.registers

    @property
    def patch_count(self) -> int:
        return self.values.shape[2] - self.patch_start

    @property
    def camera_index(self) -> int:
        return 0


def stack_features(feats: list[Feature3D]) -> Feature3D:
    return Feature3D(np.concatenate([f.values for f in feats], axis=0), feats[0].registers)


def sample_seed_for(root_seed: int, index: int) -> int:
    """Splittable, well-mixed per-sample seed."""
    return int(np.random.SeedSequence((int(root_seed), int(index))).generate_state(1, np.uint64)[0])


def _sector_direction(rng: np.random.Generator, view: int, views: int) -> np.ndarray:
    half = np.pi / views
    az = 2.0 * np.pi * view / views + rng.uniform(-half * _AZIMUTH_INSET, half * _AZIMUTH_INSET)
    el = rng.uniform(*_ELEVATION_RANGE)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def generate_scene(cfg: SceneConfig, seed: int) -> SceneSample:
    """Rejection-sample a scene whose two nearest objects are at least ``margin`` apart."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
    views = cfg.views
    kmin, kmax = cfg.objects_per_view
    for _ in range(cfg.max_attempts):
        counts = rng.integers(kmin, kmax + 1, size=views)
        total = int(counts.sum())
        if total == 0:
            continue  # no objects -> no nearest-object label; resample
        dists = rng.uniform(cfg.radius[0], cfg.radius[1], size=total)
        if total >= 2:
            two_nearest = np.sort(dists)[:2]
            if two_nearest[1] - two_nearest[0] < cfg.margin:
                continue
        appearances = rng.integers(1, cfg.n_appearance + 1, size=total)
        objects: list[SceneObject] = []
        slots: list[int] = []
        view_of = np.empty(total, dtype=int)
        i = 0
        for c in range(views):
            chosen = rng.choice(cfg.patches_per_view, size=counts[c], replace=False)
            for s in chosen:
                direction = _sector_direction(rng, c, views)
                objects.append(SceneObject(position=dists[i] * direction, appearance=int(appearances[i])))
                slots.append(int(s))
                view_of[i] = c
                i += 1
        visibility = np.zeros((total, views), dtype=bool)
        visibility[np.arange(total), view_of] = True
        label = int(view_of[int(np.argmin(dists))])
        return SceneSample(
            objects=tuple(objects),
            slots=tuple(slots),
            visibility=visibility,
            label=label,
            seed=int(seed),
        )
    raise GenerationError(
        f"could not satisfy margin {cfg.margin} within {cfg.max_attempts} attempts (seed {seed})"
    )


def generate_corpus(cfg: SceneConfig, n_samples: int, root_seed: int) -> list[SceneSample]:
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    return [generate_scene(cfg, sample_seed_for(root_seed, i)) for i in range(n_samples)]


class ProviderTables:
    """Frozen embedding/lift tables; every array derives from provider_seed."""

    def __init__(self, cfg: SceneConfig):
        rng = np.random.default_rng(np.random.SeedSequence((int(cfg.provider_seed), 0)))
        d2, d1 = cfg.embed_dim, cfg.feat3d_dim
        self.appearance_table = Parameter(
            0.5 * rng.standard_normal((cfg.n_appearance + 1, d2)), "provider.appearance", trainable=False
        )
        self.slot_table = Parameter(
            0.5 * rng.standard_normal((cfg.patches_per_view, d2)), "provider.slot", trainable=False
        )
        self.special_table = Parameter(
            0.5 * rng.standard_normal((max(cfg.special_tokens, 1), d2)), "provider.special", trainable=False
        )
        self.text_table = Parameter(
            0.5 * rng.standard_normal((cfg.text_tokens, d2)), "provider.text", trainable=False
        )
        self.lift_pos = Parameter(
            rng.standard_normal((3, d1)) / np.sqrt(3.0), "provider.lift_pos", trainable=False
        )
        self.lift_cam = Parameter(
            0.25 * rng.standard_normal((16, d1)), "provider.lift_cam", trainable=False
        )
        self.register_rows = Parameter(
            0.5 * rng.standard_normal((max(cfg.registers, 1), d1)), "provider.registers", trainable=False
        )
        self.cfg = cfg

    def parameters(self) -> list[Parameter]:
        return [
            self.appearance_table,
            self.slot_table,
            self.special_table,
            self.text_table,
            self.lift_pos,
            self.lift_cam,
            self.register_rows,
        ]


def _occupancy(sample: SceneSample):
    """Yield (object, view, slot) triples for every visible placement."""
    for o, obj in enumerate(sample.objects):
        for c in np.flatnonzero(sample.visibility[o]):
            yield obj, int(c), sample.slots[o]


def encode_2d(sample: SceneSample, tables: ProviderTables, cfg: SceneConfig) -> np.ndarray:
    """Geometry-blind image tokens, shape (1, views * patches, embed_dim).

    Token (view, slot) embeds only (appearance id, slot); appearance id 0
    marks an empty slot. Object positions never enter.
    """
    app_grid = np.zeros((cfg.views, cfg.patches_per_view), dtype=int)
    for obj, view, slot in _occupancy(sample):
        if not 0 <= obj.appearance <= cfg.n_appearance:
            raise GenerationError(
                f"appearance id {obj.appearance} outside table 0..{cfg.n_appearance}"
            )
        app_grid[view, slot] = obj.appearance
    tokens = tables.appearance_table.value[app_grid] + tables.slot_table.value[None, :, :]
    return tokens.reshape(1, cfg.views * cfg.patches_per_view, cfg.embed_dim)


def provide_3d(
    sample: SceneSample, tables: ProviderTables, cfg: SceneConfig, rig: CameraRig
) -> Feature3D:
    """Frozen 3D token grids for one sample, shape (1, C, 1+r+P, feat3d_dim).

    Patch rows lift (position / max object radius) through the fixed linear
    map, plus N(0, sigma^2) noise drawn from the sample seed. Slots without an
    object hold a far background point from the same view sector.
    """
    if len(rig) != cfg.views:
        raise ConfigError(f"rig has {len(rig)} views, scene config expects {cfg.views}")
    bg_rng = np.random.default_rng(np.random.SeedSequence((int(sample.seed), 1)))
    pos_grid = np.empty((cfg.views, cfg.patches_per_view, 3))
    for c in range(cfg.views):
        for s in range(cfg.patches_per_view):
            r = bg_rng.uniform(*cfg.background_radius)
            pos_grid[c, s] = r * _sector_direction(bg_rng, c, cfg.views)
    for obj, view, slot in _occupancy(sample):
        pos_grid[view, slot] = obj.position
    feats = (pos_grid / cfg.radius[1]) @ tables.lift_pos.value
    if cfg.noise_sigma > 0.0:
        noise_rng = np.random.default_rng(np.random.SeedSequence((int(sample.seed), 2)))
        feats = feats + cfg.noise_sigma * noise_rng.standard_normal(feats.shape)
    values = np.zeros((1, cfg.views, cfg.tokens_per_view, cfg.feat3d_dim))
    values[0, :, 0, :] = rig_camera_tokens(rig) @ tables.lift_cam.value
    if cfg.registers:
        values[0, :, 1 : 1 + cfg.registers, :] = tables.register_rows.value[None, : cfg.registers]
    values[0, :, 1 + cfg.registers :, :] = feats
    return Feature3D(values=values, registers=cfg.registers)


def build_sequence(
    sample: SceneSample, tables: ProviderTables, cfg: SceneConfig
) -> tuple[np.ndarray, TokenLayout, int]:
    """Assemble (tokens, layout, answer id) for one sample.

    Image tokens come first in per-view contiguous blocks, then the fixed
    special tokens, then the fixed query text; the answer is read at the
    final position.
    """
    layout = TokenLayout(
        views=cfg.views,
        image_per_view=cfg.patches_per_view,
        special_tokens=cfg.special_tokens,
        text_tokens=cfg.text_tokens,
    )
    parts = [encode_2d(sample, tables, cfg)]
    if cfg.special_tokens:
        parts.append(tables.special_table.value[None, : cfg.special_tokens])
    parts.append(tables.text_table.value[None])
    tokens = np.concatenate(parts, axis=1)
    if tokens.shape != (1, layout.length, cfg.embed_dim):
        raise ContractError(f"assembled sequence {tokens.shape} != (1, {layout.length}, {cfg.embed_dim})")
    return tokens, layout, sample.label


__all__ = [
    "SceneConfig",
    "SceneObject",
    "SceneSample",
    "TokenLayout",
    "Feature3D",
    "ProviderTables",
    "default_rig",
    "stack_features",
    "sample_seed_for",
    "generate_scene",
    "generate_corpus",
    "encode_2d",
    "provide_3d",
    "build_sequence",
]
