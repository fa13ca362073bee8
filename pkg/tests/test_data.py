import filecmp
import json

import numpy as np
import pytest

from groupemo.data import (CHECKPOINT_VERSION, Checkpoint, FeatureBundle, SyntheticSpec, collate,
                           generate_synthetic_dataset, hash_embedding, load_bundle, load_checkpoint, load_lexicons,
                           load_split, save_bundle, save_bundle_packed, save_checkpoint, synthesize_bundles,
                           synthetic_anchors)
from groupemo.errors import (ContractError, IncompatibleCheckpointError, LexiconError, ParseError,
                             ValidationError)


def bundle(faces=1, objects=0, dim=4, scales=2, label=0, fill=0.5, ident="b"):
    return FeatureBundle(ident, np.full((faces, dim), fill), np.full((objects, dim), fill),
                         np.full((scales, dim), fill), label)


def test_generation_is_deterministic(tmp_path):
    spec = SyntheticSpec(n_train=6, n_val=3, n_test=3, dim=5, scales=2)
    generate_synthetic_dataset(spec, tmp_path / "a")
    generate_synthetic_dataset(spec, tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for split in ("train", "val", "test"):
        assert not filecmp.dircmp(tmp_path / "a" / split, tmp_path / "b" / split).diff_files


def test_zero_noise_same_class_identical():
    spec = SyntheticSpec(n_train=9, n_val=0, n_test=0, dim=5, scales=2, noise=0.0)
    train = synthesize_bundles(spec)["train"]
    for a in train:
        for b in train:
            if a.label == b.label:
                np.testing.assert_array_equal(a.faces[0], b.faces[0])
                np.testing.assert_array_equal(a.scenes, b.scenes)


def test_nearest_anchor_separates_default_set():
    spec = SyntheticSpec(n_val=0, n_test=0)
    anchors = synthetic_anchors(spec)["faces"][:, 0]
    train = synthesize_bundles(spec)["train"]
    assert len(train) == 300
    predicted = [int(np.argmin(np.linalg.norm(anchors - b.faces.mean(axis=0), axis=1))) for b in train]
    assert predicted == [b.label for b in train]


def test_minimal_bundle_loads(tmp_path):
    save_bundle(bundle(faces=1, objects=0), tmp_path / "b.json")
    loaded = load_bundle(tmp_path / "b.json", dim=4, scales=2)
    assert loaded.faces.shape == (1, 4) and loaded.objects.shape == (0, 4)


def test_nan_face_rejected():
    b = bundle()
    b.faces[0, 1] = np.nan
    with pytest.raises(ValidationError):
        b.validate()


def test_wrong_width_rejected(tmp_path):
    save_bundle(bundle(dim=4), tmp_path / "b.json")
    with pytest.raises(ValidationError):
        load_bundle(tmp_path / "b.json", dim=5)


def test_malformed_bundle_reports_field(tmp_path):
    (tmp_path / "b.json").write_text(json.dumps({"id": "x", "label": 0, "faces": [[1, "a"]], "objects": [],
                                                 "scenes": [[1, 2]]}))
    with pytest.raises(ParseError, match="faces"):
        load_bundle(tmp_path / "b.json")


def test_generated_files_round_trip(tmp_path):
    spec = SyntheticSpec(n_train=4, n_val=0, n_test=0, dim=6, scales=3)
    generate_synthetic_dataset(spec, tmp_path)
    for mem, disk in zip(synthesize_bundles(spec)["train"], load_split(tmp_path, "train", 6, 3)):
        for name in ("faces", "objects", "scenes"):
            np.testing.assert_array_equal(getattr(mem, name), getattr(disk, name))
        assert (mem.id, mem.label) == (disk.id, disk.label)


def test_packed_round_trip(tmp_path):
    b = synthesize_bundles(SyntheticSpec(n_train=1, n_val=0, n_test=0, dim=6, scales=2, objects_min=2))["train"][0]
    save_bundle_packed(b, tmp_path / "b.bin")
    back = load_bundle(tmp_path / "b.bin")
    np.testing.assert_array_equal(back.objects, b.objects)
    assert back.id == b.id


def test_collate_pads_faces():
    batch = collate([bundle(faces=1, ident="a"), bundle(faces=3, ident="b")], 4)
    assert batch.faces.shape == (2, 3, 4)
    np.testing.assert_array_equal(batch.face_mask, [[True, False, False], [True, True, True]])
    np.testing.assert_array_equal(batch.faces[0, 1:], 0.0)


def test_collate_single_bundle():
    batch = collate([bundle(faces=2, objects=1)])
    assert batch.face_mask.all() and batch.object_mask.all()


def test_collate_rejects_mixed_widths():
    with pytest.raises(ContractError):
        collate([bundle(dim=4), bundle(dim=5)])


def test_default_lexicons():
    lex = load_lexicons(dim=50)
    assert [len(c.words) for c in lex.classes] == [12, 12, 12]
    assert lex.classes[0].words[:3] == ["Joy", "Unity", "Solidarity"]


def test_hash_embeddings_are_unit_and_stable():
    a = hash_embedding("Joy", 50)
    np.testing.assert_array_equal(a, hash_embedding("Joy", 50))
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert not np.allclose(a, hash_embedding("Grief", 50))


def _lexicon_doc(**override):
    doc = {name: {"lexicons": [{"word": f"{name}-a", "embedding": [1.0, 0.0]}]}
           for name in ("positive", "neutral", "negative")}
    doc.update(override)
    return doc


def test_lexicon_embeddings_from_file(tmp_path):
    (tmp_path / "lex.json").write_text(json.dumps(_lexicon_doc()))
    lex = load_lexicons(tmp_path / "lex.json", dim=2)
    np.testing.assert_array_equal(lex.classes[1].embeddings, [[1.0, 0.0]])


def test_malformed_lexicon_number_has_location(tmp_path):
    doc = _lexicon_doc(neutral={"lexicons": [{"word": "calm", "embedding": [1.0, "x"]}]})
    (tmp_path / "lex.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError, match=r"neutral\.lexicons\[0\]\.embedding\[1\]"):
        load_lexicons(tmp_path / "lex.json", dim=2)


def test_missing_lexicon_file(tmp_path):
    with pytest.raises(LexiconError):
        load_lexicons(tmp_path / "missing.json")


def _checkpoint():
    rng = np.random.default_rng(0)
    params = {"a": rng.standard_normal((3, 2)).astype(np.float32), "b": rng.standard_normal(4)}
    adam = {"t": 3, "epoch": 1, "m": {"a": np.ones((3, 2), np.float32)}, "v": {"a": np.zeros((3, 2), np.float32)}}
    return Checkpoint({"hidden": 8}, params, adam, {"mean": 0.1, "std": 0.2, "momentum": 0.9, "count": 2}, 1)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    ckpt = _checkpoint()
    save_checkpoint(ckpt, tmp_path / "c1.json")
    back = load_checkpoint(tmp_path / "c1.json")
    for name, arr in ckpt.params.items():
        assert back.params[name].dtype == arr.dtype
        assert back.params[name].tobytes() == arr.tobytes()
    save_checkpoint(back, tmp_path / "c2.json")
    assert (tmp_path / "c1.json").read_bytes() == (tmp_path / "c2.json").read_bytes()


def test_checkpoint_version_mismatch(tmp_path):
    save_checkpoint(_checkpoint(), tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["version"] = CHECKPOINT_VERSION + 1
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(tmp_path / "c.json")
