"""Binary corpus container plus its JSON manifest.

Layout (all little-endian): a fixed header (magic ``CVGE``, u32 version,
u64 sample count, u32 views, u32 patches per view), then one record per
sample: u64 seed, u32 label, u32 object count, and per object three f64
position components, u32 appearance id, u32 view index, u32 slot index.

The sibling ``.json`` manifest carries the resolved scene config, the rig,
the root seed, and a sha256 checksum of the binary file; loading verifies
the checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import CameraRig, CameraView
from .scene import SceneConfig, SceneObject, SceneSample

MAGIC = b"CVGE"
VERSION = 1

_HEADER = struct.Struct("<4sIQII")
_RECORD = struct.Struct("<QII")
_OBJECT = struct.Struct("<dddIII")


def manifest_path(bin_path: str | Path) -> Path:
    return Path(bin_path).with_suffix(".json")


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "views": [
            {
                "K": v.K.reshape(-1).tolist(),
                "R": v.R.reshape(-1).tolist(),
                "t": v.t.tolist(),
                "orig_size": list(v.orig_size),
                "target_size": list(v.target_size),
            }
            for v in rig.views
        ]
    }


def rig_from_dict(d: dict) -> CameraRig:
    views = []
    for v in d["views"]:
        views.append(
            CameraView(
                K=np.asarray(v["K"], dtype=np.float64).reshape(3, 3),
                R=np.asarray(v["R"], dtype=np.float64).reshape(3, 3),
                t=np.asarray(v["t"], dtype=np.float64),
                orig_size=tuple(v["orig_size"]),
                target_size=tuple(v["target_size"]),
            )
        )
    return CameraRig(views=tuple(views))


def save_corpus(
    bin_path: str | Path,
    samples: list[SceneSample],
    cfg: SceneConfig,
    rig: CameraRig,
    root_seed: int,
) -> dict:
    """Write the binary corpus and its manifest; returns the manifest dict."""
    bin_path = Path(bin_path)
    chunks = [_HEADER.pack(MAGIC, VERSION, len(samples), cfg.views, cfg.patches_per_view)]
    for s in samples:
        chunks.append(_RECORD.pack(s.seed, s.label, len(s.objects)))
        views = np.argmax(s.visibility, axis=1)
        for obj, view, slot in zip(s.objects, views, s.slots):
            x, y, z = (float(v) for v in obj.position)
            chunks.append(_OBJECT.pack(x, y, z, obj.appearance, int(view), slot))
    payload = b"".join(chunks)
    bin_path.write_bytes(payload)
    manifest = {
        "format": {"magic": MAGIC.decode("ascii"), "version": VERSION},
        "n_samples": len(samples),
        "root_seed": int(root_seed),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "scene": cfg.to_dict(),
        "rig": rig_to_dict(rig),
    }
    manifest_path(bin_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_corpus(bin_path: str | Path) -> tuple[list[SceneSample], SceneConfig, CameraRig, dict]:
    """Read (samples, scene config, rig, manifest); checksum and header are verified."""
    bin_path = Path(bin_path)
    mpath = manifest_path(bin_path)
    if not bin_path.exists():
        raise ValidationError(f"corpus file not found: {bin_path}")
    if not mpath.exists():
        raise ValidationError(f"corpus manifest not found beside the binary: {mpath}")
    manifest = json.loads(mpath.read_text())
    payload = bin_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest.get("sha256"):
        raise ValidationError(f"corpus checksum mismatch for {bin_path}")
    if len(payload) < _HEADER.size:
        raise ValidationError(f"corpus file truncated: {bin_path}")
    magic, version, n_samples, views, patches = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise ValidationError(f"bad corpus magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValidationError(f"unsupported corpus version {version}, expected {VERSION}")
    cfg = SceneConfig.from_dict(manifest["scene"])
    if cfg.views != views or cfg.patches_per_view != patches:
        raise ValidationError("corpus header counts disagree with the manifest scene config")
    rig = rig_from_dict(manifest["rig"])
    samples: list[SceneSample] = []
    offset = _HEADER.size
    for _ in range(n_samples):
        seed, label, n_obj = _RECORD.unpack_from(payload, offset)
        offset += _RECORD.size
        objects, slots = [], []
        visibility = np.zeros((n_obj, views), dtype=bool)
        for o in range(n_obj):
            x, y, z, appearance, view, slot = _OBJECT.unpack_from(payload, offset)
            offset += _OBJECT.size
            objects.append(SceneObject(position=np.array([x, y, z]), appearance=appearance))
            slots.append(slot)
            visibility[o, view] = True
        samples.append(
            SceneSample(
                objects=tuple(objects),
                slots=tuple(slots),
                visibility=visibility,
                label=label,
                seed=seed,
            )
        )
    if offset != len(payload):
        raise ValidationError(f"corpus has {len(payload) - offset} trailing bytes")
    return samples, cfg, rig, manifest
