"""Toy multi-view decoder with hierarchical cross-view 3D feature injection.

The decoder is a pre-norm transformer over a fixed token layout: per-view
image blocks, a few special tokens, then the fixed query text, with the
answer read at the final position. Attention is bidirectional over the
image+special prefix and causal over the text tail.

Fusion schemes
--------------
baseline  plain decoder, 3D features ignored.
swap      image-token inputs replaced by projected, resampled 3D patches.
distill   plain forward; final-layer visual states are exposed so training
          can align them with pooled 3D features.
add       projected, resampled 3D patches added to the image-token inputs.
prefuse   one cross-view fuser applied to the embedded input, then a plain stack.
inject    a per-layer cross-view fuser enhances the input of every decoder
          layer listed in ``inject_layers`` (all of them by default).

Each fuser queries with down-projected visual rows, attends over
down-projected 3D tokens of all views (per-view camera embeddings added at
each view's first 3D row), and lifts the result back to decoder width
through a zero-initialized projection, so every scheme that injects starts
out exactly equal to the baseline. Injection writes only image-mask rows.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, constant
from .errors import ConfigError, ContractError, ValidationError
from .layers import MASK_VALUE, Linear, LayerNorm, Mlp, Module, MultiHeadCrossAttention
from .scene import Feature3D, TokenLayout

SCHEMES = ("baseline", "swap", "distill", "add", "prefuse", "inject")


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "inject"
    use_residual: bool = True
    share_fuser: bool = False
    use_attention: bool = True
    use_camera: bool = True
    inject_layers: tuple[int, ...] | None = None  # None -> every layer
    scale: int = 4  # fuser width = feat3d_dim // scale
    heads: int = 8

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.scale < 1 or self.heads < 1:
            raise ConfigError(f"scale and heads must be positive, got {self.scale}, {self.heads}")
        if self.inject_layers is not None:
            layers = tuple(int(i) for i in self.inject_layers)
            if len(set(layers)) != len(layers):
                raise ConfigError(f"inject_layers has duplicates: {layers}")
            object.__setattr__(self, "inject_layers", layers)

    def resolved_layers(self, n_layers: int) -> tuple[int, ...]:
        layers = self.inject_layers if self.inject_layers is not None else tuple(range(1, n_layers + 1))
        for i in layers:
            if not (1 <= i <= n_layers):
                raise ConfigError(f"inject layer {i} outside 1..{n_layers}")
        return tuple(sorted(layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["inject_layers"] is not None:
            d["inject_layers"] = list(d["inject_layers"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SchemeConfig":
        d = dict(d)
        if d.get("inject_layers") is not None:
            d["inject_layers"] = tuple(d["inject_layers"])
        return cls(**d)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    embed_dim: int = 64
    decoder_heads: int = 8
    ffn_mult: int = 2
    fuser_hidden: int = 64
    feat3d_dim: int = 128
    vocab: int = 3
    max_len: int = 56

    def __post_init__(self):
        for name in ("layers", "embed_dim", "decoder_heads", "ffn_mult", "fuser_hidden", "feat3d_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")
        if self.embed_dim % self.decoder_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by decoder_heads {self.decoder_heads}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def build_attn_mask(layout: TokenLayout) -> np.ndarray:
    """Additive (L, L) mask: bidirectional over the prefix, causal over text."""
    L, P = layout.length, layout.prefix_length
    mask = np.full((L, L), MASK_VALUE)
    mask[:P, :P] = 0.0
    for i in range(P, L):
        mask[i, : i + 1] = 0.0
    return mask


def extract_visual(x: Tensor, layout: TokenLayout) -> Tensor:
    """Rows of x at image-mask positions, shape (B, C*N2, D)."""
    if x.ndim != 3 or x.shape[1] != layout.length:
        raise ContractError(f"extract_visual: states {x.shape} do not match layout length {layout.length}")
    return ad.gather_rows(x, layout.image_indices)


def inject(x: Tensor, layout: TokenLayout, enhanced: Tensor, use_residual: bool) -> Tensor:
    """Write enhanced rows back at image-mask positions, all others untouched."""
    if x.ndim != 3 or x.shape[1] != layout.length:
        raise ContractError(f"inject: states {x.shape} do not match layout length {layout.length}")
    if use_residual:
        enhanced = ad.add(ad.gather_rows(x, layout.image_indices), enhanced)
    return ad.put_rows(x, layout.image_indices, enhanced)


def resample_patches(feat3d: Feature3D, n_target: int) -> np.ndarray:
    """Per-view patch rows linearly resampled to n_target tokens per view.

    Camera and register rows are dropped. Returns (B, C*n_target, D1).
    """
    patches = feat3d.values[:, :, feat3d.patch_start :, :]
    b, c, p, d = patches.shape
    if p < 2:
        raise ContractError(f"resample needs >= 2 patch rows per view, got {p}")
    if n_target < 1:
        raise ContractError(f"resample target must be >= 1, got {n_target}")
    if p == n_target:
        out = patches
    else:
        w = np.zeros((n_target, p))
        positions = np.linspace(0.0, p - 1.0, n_target)
        lo = np.minimum(np.floor(positions).astype(int), p - 2)
        frac = positions - lo
        w[np.arange(n_target), lo] = 1.0 - frac
        w[np.arange(n_target), lo + 1] += frac
        out = np.einsum("tp,bcpd->bctd", w, patches)
    return out.reshape(b, c * n_target, d)


class CrossViewFuser(Module):
    """One cross-view enhancement module (queries 2D, keys/values 3D)."""

    def __init__(self, mcfg: ModelConfig, scfg: SchemeConfig, rng: np.random.Generator, name: str):
        d1, d2 = mcfg.feat3d_dim, mcfg.embed_dim
        if d1 % scfg.scale != 0:
            raise ConfigError(f"feat3d_dim {d1} not divisible by fuser scale {scfg.scale}")
        ds = d1 // scfg.scale
        self.q_ln = LayerNorm(d2, f"{name}.qln")
        self.down_q = Mlp(d2, mcfg.fuser_hidden, ds, rng, f"{name}.down_q")
        self.down_kv = Mlp(d1, mcfg.fuser_hidden, ds, rng, f"{name}.down_kv")
        self.cam_mlp = Mlp(16, mcfg.fuser_hidden, ds, rng, f"{name}.cam") if scfg.use_camera else None
        self.attn = (
            MultiHeadCrossAttention(ds, scfg.heads, rng, f"{name}.attn") if scfg.use_attention else None
        )
        self.up = Linear(ds, d2, rng, f"{name}.up", zero_init=True)
        self.width = ds
        self.use_camera = scfg.use_camera

    def __call__(self, visual: Tensor, feat3d: Feature3D, cam_tokens: np.ndarray | None) -> Tensor:
        b, c, n1, d1 = feat3d.values.shape
        if visual.shape[0] != b or visual.shape[1] % c != 0:
            raise ContractError(f"fuser: visual {visual.shape} does not tile over {c} views")
        per_view = visual.shape[1] // c
        kv = self.down_kv(constant(feat3d.values.reshape(b, c * n1, d1)))
        if self.use_camera:
            if cam_tokens is None:
                raise ConfigError("use_camera is set but no camera tokens were provided")
            cam_rows = ad.expand_leading(self.cam_mlp(constant(cam_tokens)), b)
            cam_idx = np.arange(c) * n1
            kv = ad.put_rows(kv, cam_idx, ad.add(ad.gather_rows(kv, cam_idx), cam_rows))
        q = self.down_q(self.q_ln(visual))
        if self.attn is not None:
            fused = self.attn(q, kv, kv)
        else:
            # attention-free surrogate: per-view mean of keys, broadcast over
            # that view's queries, added elementwise to the queries
            means = ad.mean_axis(ad.reshape(kv, (b, c, n1, self.width)), 2)
            tiled = ad.reshape(ad.expand_axis(means, 2, per_view), (b, c * per_view, self.width))
            fused = ad.add(q, tiled)
        return self.up(fused)


class DecoderLayer(Module):
    def __init__(self, mcfg: ModelConfig, rng: np.random.Generator, name: str):
        d = mcfg.embed_dim
        self.ln1 = LayerNorm(d, f"{name}.ln1")
        self.attn = MultiHeadCrossAttention(d, mcfg.decoder_heads, rng, f"{name}.attn")
        self.ln2 = LayerNorm(d, f"{name}.ln2")
        self.fc1 = Linear(d, d * mcfg.ffn_mult, rng, f"{name}.fc1")
        self.fc2 = Linear(d * mcfg.ffn_mult, d, rng, f"{name}.fc2")
        # shrink the residual-branch writes so the stream keeps a flat scale
        # across depth; without this, late-layer injection reads ~3x weaker
        shrink = 1.0 / math.sqrt(2.0 * mcfg.layers)
        self.attn.wo.w.value *= shrink
        self.fc2.w.value *= shrink

    def __call__(self, x: Tensor, attn_mask: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = ad.add(x, self.attn(h, h, h, attn_mask=attn_mask))
        h = self.ln2(x)
        return ad.add(x, self.fc2(ad.relu(self.fc1(h))))


class DecoderStack(Module):
    """Plain pre-norm stack: positions, layers, final norm, answer head."""

    def __init__(self, mcfg: ModelConfig, rng: np.random.Generator):
        self.pos = Parameter(np.zeros((mcfg.max_len, mcfg.embed_dim)), "stack.pos")
        self.blocks = [DecoderLayer(mcfg, rng, f"stack.layer{i}") for i in range(1, mcfg.layers + 1)]
        self.final_ln = LayerNorm(mcfg.embed_dim, "stack.final_ln")
        self.head = Linear(mcfg.embed_dim, mcfg.vocab, rng, "stack.head")
        self.cfg = mcfg

    def embed(self, inputs: np.ndarray, layout: TokenLayout) -> Tensor:
        b, length, d = inputs.shape
        if length != layout.length or d != self.cfg.embed_dim:
            raise ContractError(f"inputs {inputs.shape} do not match layout/{self.cfg.embed_dim}")
        if layout.length > self.cfg.max_len:
            raise ConfigError(f"sequence length {layout.length} exceeds model max_len {self.cfg.max_len}")
        pos = self.pos.tensor()
        if layout.length < self.cfg.max_len:
            pos = ad.reshape(
                ad.gather_rows(ad.reshape(pos, (1,) + pos.shape), np.arange(layout.length)),
                (layout.length, self.cfg.embed_dim),
            )
        return ad.add(constant(inputs), ad.expand_leading(pos, b))


@dataclass
class ForwardResult:
    logits: Tensor  # (B, vocab) at the answer position
    final_visual: Tensor | None = None  # (B, C*N2, D2) post-final-layer image rows
    position_logits: Tensor | None = None  # (B, L, vocab) when requested
    taps: list[tuple[np.ndarray, np.ndarray]] | None = None  # (before, after) per injection


class Model(Module):
    """Decoder stack plus whatever the active scheme bolts on."""

    def __init__(self, mcfg: ModelConfig, scfg: SchemeConfig, layout: TokenLayout, seed: int = 0):
        if layout.length > mcfg.max_len:
            raise ConfigError(f"layout length {layout.length} exceeds max_len {mcfg.max_len}")
        # separate init streams so every scheme shares the identical stack
        rng_stack = np.random.default_rng(np.random.SeedSequence((int(seed), 0)))
        rng_fuse = np.random.default_rng(np.random.SeedSequence((int(seed), 1)))
        self.mcfg = mcfg
        self.scfg = scfg
        self.layout = layout
        self.stack = DecoderStack(mcfg, rng_stack)
        self.attn_mask = build_attn_mask(layout)
        self.inject_points: tuple[int, ...] = ()
        self.fusers: list[CrossViewFuser] = []
        self.proj: Linear | None = None
        scheme = scfg.scheme
        if scheme == "inject":
            self.inject_points = scfg.resolved_layers(mcfg.layers)
            n_fusers = 1 if scfg.share_fuser else len(self.inject_points)
            self.fusers = [
                CrossViewFuser(mcfg, scfg, rng_fuse, f"fuser{k}") for k in range(n_fusers)
            ]
        elif scheme == "prefuse":
            self.fusers = [CrossViewFuser(mcfg, scfg, rng_fuse, "fuser0")]
        elif scheme == "swap" or scheme == "add":
            self.proj = Linear(mcfg.feat3d_dim, mcfg.embed_dim, rng_fuse, "adapter.proj")
        elif scheme == "distill":
            self.proj = Linear(mcfg.embed_dim, mcfg.feat3d_dim, rng_fuse, "adapter.distill_proj")

    # -- parameter groups ---------------------------------------------------

    def stack_parameters(self) -> list[Parameter]:
        return self.stack.parameters()

    def adapter_parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for f in self.fusers:
            out.extend(f.parameters())
        if self.proj is not None:
            out.extend(self.proj.parameters())
        return out

    def parameters(self) -> list[Parameter]:
        return self.stack_parameters() + self.adapter_parameters()

    def set_stage(self, train_stack: bool, train_adapters: bool) -> None:
        for p in self.stack_parameters():
            p.trainable = train_stack
        for p in self.adapter_parameters():
            p.trainable = train_adapters

    def _fuser_for(self, k: int) -> CrossViewFuser:
        return self.fusers[0] if self.scfg.share_fuser else self.fusers[k]

    # -- forward ------------------------------------------------------------

    def forward(
        self,
        inputs: np.ndarray,
        feat3d: Feature3D | None,
        cam_tokens: np.ndarray | None,
        want_visual: bool = False,
        want_position_logits: bool = False,
        collect_taps: bool = False,
    ) -> ForwardResult:
        scheme = self.scfg.scheme
        layout = self.layout
        if scheme != "baseline" and scheme != "distill" and feat3d is None:
            raise ContractError(f"scheme {scheme!r} needs 3D features")
        taps: list[tuple[np.ndarray, np.ndarray]] = []

        def traced_inject(x: Tensor, rows: Tensor) -> Tensor:
            out = inject(x, layout, rows, self.scfg.use_residual)
            if collect_taps:
                taps.append((x.data, out.data))
            return out

        x = self.stack.embed(inputs, layout)
        if scheme == "swap" or scheme == "add":
            resampled = constant(resample_patches(feat3d, layout.image_per_view))
            proj_rows = self.proj(resampled)
            if scheme == "add":
                proj_rows = ad.add(ad.gather_rows(x, layout.image_indices), proj_rows)
            before = x.data
            x = ad.put_rows(x, layout.image_indices, proj_rows)
            if collect_taps:
                taps.append((before, x.data))
        elif scheme == "prefuse":
            rows = self._fuser_for(0)(extract_visual(x, layout), feat3d, cam_tokens)
            x = traced_inject(x, rows)
        point_index = 0
        for i, block in enumerate(self.stack.blocks, start=1):
            if scheme == "inject" and point_index < len(self.inject_points) and self.inject_points[point_index] == i:
                rows = self._fuser_for(point_index)(extract_visual(x, layout), feat3d, cam_tokens)
                x = traced_inject(x, rows)
                point_index += 1
            x = block(x, self.attn_mask)
        final_visual = extract_visual(x, layout) if (want_visual or scheme == "distill") else None
        normed = self.stack.final_ln(x)
        answer = ad.reshape(
            ad.gather_rows(normed, np.array([layout.answer_position])), (inputs.shape[0], self.mcfg.embed_dim)
        )
        logits = self.stack.head(answer)
        position_logits = self.stack.head(normed) if want_position_logits else None
        return ForwardResult(
            logits=logits,
            final_visual=final_visual,
            position_logits=position_logits,
            taps=taps if collect_taps else None,
        )


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 version, u64 header length, JSON header
# (configs, layout, parameter manifest), then raw f64 buffers in order
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"GFCP"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")


def _layout_dict(layout: TokenLayout) -> dict:
    return {
        "views": layout.views,
        "image_per_view": layout.image_per_view,
        "special_tokens": layout.special_tokens,
        "text_tokens": layout.text_tokens,
    }


def save_checkpoint(path: str | Path, model: Model) -> None:
    params = model.parameters()
    header = {
        "model": model.mcfg.to_dict(),
        "scheme": model.scfg.to_dict(),
        "layout": _layout_dict(model.layout),
        "params": [[p.name, list(p.shape)] for p in params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path, model: Model) -> None:
    """Load values into an already-built model; any config mismatch refuses."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValidationError(f"checkpoint truncated: {path}")
    magic, version, hlen = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise ValidationError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[_CKPT_HEADER.size : _CKPT_HEADER.size + hlen])
    if header["model"] != model.mcfg.to_dict() or header["scheme"] != model.scfg.to_dict():
        raise ConfigError("checkpoint configuration does not match the built model")
    if header["layout"] != _layout_dict(model.layout):
        raise ConfigError("checkpoint token layout does not match the built model")
    by_name = {p.name: p for p in model.parameters()}
    offset = _CKPT_HEADER.size + hlen
    for name, shape in header["params"]:
        shape = tuple(shape)
        if name not in by_name or by_name[name].shape != shape:
            raise ConfigError(f"checkpoint parameter {name} {shape} not present in the model")
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ValidationError(f"checkpoint truncated inside parameter {name}")
        by_name[name].value[...] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape)
        offset = end
    if offset != len(raw):
        raise ValidationError(f"checkpoint has {len(raw) - offset} trailing bytes")


def read_checkpoint_header(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValidationError(f"checkpoint truncated: {path}")
    magic, version, hlen = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise ValidationError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    if _CKPT_HEADER.size + hlen > len(raw):
        raise ValidationError(f"checkpoint header truncated: {path}")
    return json.loads(raw[_CKPT_HEADER.size : _CKPT_HEADER.size + hlen])


def load_model(path: str | Path) -> Model:
    """Rebuild a model from a checkpoint's own config echo, then load weights."""
    header = read_checkpoint_header(path)
    model = Model(
        ModelConfig.from_dict(header["model"]),
        SchemeConfig.from_dict(header["scheme"]),
        TokenLayout(**header["layout"]),
    )
    load_checkpoint(path, model)
    return model
