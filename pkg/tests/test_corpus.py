"""Binary corpus format: round-trip fidelity and corruption detection."""

import json
import struct

import numpy as np
import pytest

from geofuse.corpus import (
    MAGIC,
    VERSION,
    load_corpus,
    manifest_path,
    rig_from_dict,
    rig_to_dict,
    save_corpus,
)
from geofuse.errors import ValidationError
from geofuse.geometry import default_rig
from geofuse.scene import SceneConfig, generate_corpus


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    cfg = SceneConfig()
    rig = default_rig(cfg.views)
    samples = generate_corpus(cfg, 16, root_seed=5)
    path = tmp_path_factory.mktemp("corpus") / "corpus.bin"
    manifest = save_corpus(path, samples, cfg, rig, root_seed=5)
    return path, samples, cfg, rig, manifest


def test_magic_and_version_constants(small_corpus):
    path, *_ = small_corpus
    raw = path.read_bytes()
    assert raw[:4] == b"CVGE" == MAGIC
    assert struct.unpack_from("<I", raw, 4)[0] == VERSION


def test_roundtrip_is_exact(small_corpus):
    path, samples, cfg, rig, _ = small_corpus
    loaded, cfg2, rig2, manifest = load_corpus(path)
    assert cfg2 == cfg
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert a.seed == b.seed and a.label == b.label and a.slots == b.slots
        np.testing.assert_array_equal(a.visibility, b.visibility)
        for oa, ob in zip(a.objects, b.objects):
            np.testing.assert_array_equal(oa.position, ob.position)  # f64 bit-exact
            assert oa.appearance == ob.appearance
    for va, vb in zip(rig.views, rig2.views):
        np.testing.assert_array_equal(va.K, vb.K)
        np.testing.assert_array_equal(va.R, vb.R)
        np.testing.assert_array_equal(va.t, vb.t)
        assert va.orig_size == vb.orig_size and va.target_size == vb.target_size
    assert manifest["n_samples"] == 16 and manifest["root_seed"] == 5


def test_manifest_sits_beside_binary(small_corpus):
    path, *_ , manifest = small_corpus
    mpath = manifest_path(path)
    assert mpath == path.with_suffix(".json")
    on_disk = json.loads(mpath.read_text())
    assert on_disk == manifest
    assert on_disk["format"] == {"magic": "CVGE", "version": VERSION}


def test_rig_dict_roundtrip():
    rig = default_rig(4)
    again = rig_from_dict(rig_to_dict(rig))
    for a, b in zip(rig.views, again.views):
        np.testing.assert_array_equal(a.K, b.K)
        np.testing.assert_array_equal(a.R, b.R)


def write_variant(tmp_path, small_corpus, mutate):
    """Copy the corpus pair, apply mutate(payload) -> payload, fix nothing else."""
    src, *_ = small_corpus
    dst = tmp_path / "corpus.bin"
    dst.write_bytes(mutate(src.read_bytes()))
    manifest_path(dst).write_text(manifest_path(src).read_text())
    return dst


def test_checksum_mismatch_detected(tmp_path, small_corpus):
    def flip(payload):
        b = bytearray(payload)
        b[-1] ^= 0xFF
        return bytes(b)

    bad = write_variant(tmp_path, small_corpus, flip)
    with pytest.raises(ValidationError, match="checksum"):
        load_corpus(bad)


def rehash(path):
    """Recompute the manifest checksum so deeper validation layers are reached."""
    import hashlib

    m = json.loads(manifest_path(path).read_text())
    m["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest_path(path).write_text(json.dumps(m))


def test_bad_magic_detected(tmp_path, small_corpus):
    bad = write_variant(tmp_path, small_corpus, lambda p: b"NOPE" + p[4:])
    rehash(bad)
    with pytest.raises(ValidationError, match="magic"):
        load_corpus(bad)


def test_bad_version_detected(tmp_path, small_corpus):
    def bump(payload):
        return payload[:4] + struct.pack("<I", VERSION + 9) + payload[8:]

    bad = write_variant(tmp_path, small_corpus, bump)
    rehash(bad)
    with pytest.raises(ValidationError, match="version"):
        load_corpus(bad)


def test_truncation_detected(tmp_path, small_corpus):
    bad = write_variant(tmp_path, small_corpus, lambda p: p[: len(p) - 7])
    rehash(bad)
    with pytest.raises(ValidationError):
        load_corpus(bad)


def test_trailing_bytes_detected(tmp_path, small_corpus):
    bad = write_variant(tmp_path, small_corpus, lambda p: p + b"\0" * 3)
    rehash(bad)
    with pytest.raises(ValidationError, match="trailing"):
        load_corpus(bad)


def test_missing_files_reported(tmp_path, small_corpus):
    with pytest.raises(ValidationError, match="not found"):
        load_corpus(tmp_path / "nope.bin")
    src, *_ = small_corpus
    orphan = tmp_path / "orphan.bin"
    orphan.write_bytes(src.read_bytes())  # binary without its manifest
    with pytest.raises(ValidationError, match="manifest"):
        load_corpus(orphan)


def test_header_counts_must_match_manifest(tmp_path, small_corpus):
    src, _, cfg, _, _ = small_corpus
    dst = tmp_path / "corpus.bin"
    dst.write_bytes(src.read_bytes())
    m = json.loads(manifest_path(src).read_text())
    m["scene"] = dict(m["scene"], patches_per_view=cfg.patches_per_view + 1)
    manifest_path(dst).write_text(json.dumps(m))
    with pytest.raises(ValidationError, match="disagree"):
        load_corpus(dst)
