"""Feature bundles, synthetic data, lexicon files, batching and checkpoints.

On-disk formats (all JSON unless noted):

* bundle: ``{"id", "label", "faces": [[...]], "objects": [[...]], "scenes": [[...]]}``
* packed bundle (``.bin``): little-endian, see :func:`save_bundle_packed`
* manifest: ``{"format", "spec", "splits": {split: [relative paths]}}``
* lexicons: ``{"positive": {"class_embedding": [...], "lexicons": [{"word", "embedding"}]}, ...}``
* checkpoint: ``{"version", "config", "params", "adam_state", "sim_stats", "epoch", ...}``
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import CLASS_NAMES
from .errors import ContractError, IncompatibleCheckpointError, LexiconError, ParseError, ValidationError
from .esem import LexiconClass, LexiconSet

CHECKPOINT_VERSION = 1
PACKED_MAGIC = b"GEB1"


@dataclass
class FeatureBundle:
    id: str
    faces: np.ndarray
    objects: np.ndarray
    scenes: np.ndarray
    label: int

    @property
    def dim(self) -> int:
        return self.faces.shape[1]

    def validate(self, dim: int | None = None, scales: int | None = None) -> "FeatureBundle":
        if self.label not in (0, 1, 2):
            raise ValidationError(f"bundle {self.id}: label must be 0, 1 or 2, got {self.label!r}")
        for name in ("faces", "objects", "scenes"):
            arr = getattr(self, name)
            if arr.ndim != 2:
                raise ValidationError(f"bundle {self.id}: {name} must be a matrix, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"bundle {self.id}: {name} contains NaN or Inf")
        if self.faces.shape[0] < 1:
            raise ValidationError(f"bundle {self.id}: needs at least one face")
        if self.scenes.shape[0] < 1:
            raise ValidationError(f"bundle {self.id}: needs at least one scene scale")
        d = self.faces.shape[1]
        for name in ("objects", "scenes"):
            arr = getattr(self, name)
            if arr.shape[0] and arr.shape[1] != d:
                raise ValidationError(f"bundle {self.id}: {name} width {arr.shape[1]} != face width {d}")
        if dim is not None and d != dim:
            raise ValidationError(f"bundle {self.id}: feature width {d} != expected {dim}")
        if scales is not None and self.scenes.shape[0] != scales:
            raise ValidationError(f"bundle {self.id}: {self.scenes.shape[0]} scene scales != expected {scales}")
        return self

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "label": int(self.label), "faces": _rows(self.faces),
                "objects": _rows(self.objects), "scenes": _rows(self.scenes)}


def _rows(arr: np.ndarray) -> list[list[float]]:
    # repr of a float64 parses back to the same value
    return np.asarray(arr, dtype=np.float64).tolist()


def _matrix(raw: Any, name: str, where: str, width: int | None = None) -> np.ndarray:
    if not isinstance(raw, list):
        raise ParseError(f"{where}: field {name!r} must be a list of rows")
    if not raw:
        return np.zeros((0, width or 0))
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise ParseError(f"{where}: field {name!r} row {i} must be a list of numbers")
        rows.append(row)
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{where}: field {name!r} has rows of unequal length")
    return np.array(rows, dtype=np.float64)


def bundle_from_json(raw: Any, where: str = "<bundle>") -> FeatureBundle:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: top level must be an object")
    for key in ("id", "label", "faces", "objects", "scenes"):
        if key not in raw:
            raise ParseError(f"{where}: missing field {key!r}")
    if not isinstance(raw["id"], str):
        raise ParseError(f"{where}: field 'id' must be a string")
    if not isinstance(raw["label"], int) or isinstance(raw["label"], bool):
        raise ParseError(f"{where}: field 'label' must be an integer")
    faces = _matrix(raw["faces"], "faces", where)
    width = faces.shape[1] if faces.ndim == 2 else None
    objects = _matrix(raw["objects"], "objects", where, width)
    scenes = _matrix(raw["scenes"], "scenes", where, width)
    return FeatureBundle(raw["id"], faces, objects, scenes, raw["label"])


def save_bundle(bundle: FeatureBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle.to_json()))


def load_bundle(path: str | Path, dim: int | None = None, scales: int | None = None) -> FeatureBundle:
    """Read and validate one bundle (JSON, or packed binary for ``.bin``)."""
    path = Path(path)
    if path.suffix == ".bin":
        bundle = load_bundle_packed(path)
    else:
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        bundle = bundle_from_json(raw, str(path))
    return bundle.validate(dim, scales)


def save_bundle_packed(bundle: FeatureBundle, path: str | Path) -> None:
    """Packed layout: magic, u32 label, u32 id-length, id bytes, u32 I/J/K/D, then f32 faces, objects, scenes."""
    ident = bundle.id.encode()
    header = PACKED_MAGIC + struct.pack("<II", bundle.label, len(ident)) + ident
    dims = struct.pack("<IIII", bundle.faces.shape[0], bundle.objects.shape[0], bundle.scenes.shape[0], bundle.dim)
    body = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in (bundle.faces, bundle.objects, bundle.scenes))
    Path(path).write_bytes(header + dims + body)


def load_bundle_packed(path: str | Path) -> FeatureBundle:
    blob = Path(path).read_bytes()
    if blob[:4] != PACKED_MAGIC:
        raise ParseError(f"{path}: not a packed bundle (bad magic)")
    try:
        label, n_id = struct.unpack_from("<II", blob, 4)
        offset = 12 + n_id
        ident = blob[12:offset].decode()
        i, j, k, d = struct.unpack_from("<IIII", blob, offset)
        offset += 16
        arrays = []
        for rows in (i, j, k):
            count = rows * d
            arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(rows, d).astype(np.float64))
            offset += 4 * count
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated packed bundle ({exc})") from None
    return FeatureBundle(ident, *arrays, label)


# ------------------------------------------------------------------- batching


@dataclass
class Batch:
    faces: np.ndarray         # N x I x D, zero-padded
    face_mask: np.ndarray     # N x I
    objects: np.ndarray       # N x J x D (J may be 0)
    object_mask: np.ndarray   # N x J
    scenes: np.ndarray        # N x K x D
    labels: np.ndarray        # N
    face_counts: np.ndarray
    object_counts: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)


def collate(bundles: Sequence[FeatureBundle], batch_size: int | None = None, dtype=np.float32) -> Batch:
    n = len(bundles)
    if n < 1 or (batch_size is not None and n > batch_size):
        raise ContractError(f"collate: batch of {n} bundles outside [1, {batch_size}]")
    dims = {b.dim for b in bundles}
    if len(dims) != 1:
        raise ContractError(f"collate: mixed feature widths {sorted(dims)}")
    scales = {b.scenes.shape[0] for b in bundles}
    if len(scales) != 1:
        raise ContractError(f"collate: mixed scene scale counts {sorted(scales)}")
    d = dims.pop()
    face_counts = np.array([b.faces.shape[0] for b in bundles])
    object_counts = np.array([b.objects.shape[0] for b in bundles])
    i_max, j_max = int(face_counts.max()), int(object_counts.max())
    faces = np.zeros((n, i_max, d), dtype=dtype)
    objects = np.zeros((n, j_max, d), dtype=dtype)
    for idx, b in enumerate(bundles):
        faces[idx, : face_counts[idx]] = b.faces
        objects[idx, : object_counts[idx]] = b.objects
    return Batch(
        faces=faces,
        face_mask=np.arange(i_max)[None, :] < face_counts[:, None],
        objects=objects,
        object_mask=np.arange(j_max)[None, :] < object_counts[:, None],
        scenes=np.stack([b.scenes for b in bundles]).astype(dtype),
        labels=np.array([b.label for b in bundles], dtype=np.int64),
        face_counts=face_counts,
        object_counts=object_counts,
        ids=[b.id for b in bundles],
    )


# ------------------------------------------------------------ synthetic data


@dataclass
class SyntheticSpec:
    n_train: int = 300
    n_val: int = 90
    n_test: int = 90
    dim: int = 512
    scales: int = 4
    faces_min: int = 1
    faces_max: int = 4
    objects_min: int = 0
    objects_max: int = 3
    margin: float = 5.0
    noise: float = 0.1
    seed: int = 7

    def validate(self) -> "SyntheticSpec":
        if self.margin <= 0:
            raise ValidationError("synthetic spec: margin must be positive")
        if self.noise < 0:
            raise ValidationError("synthetic spec: noise must be non-negative")
        if not 1 <= self.faces_min <= self.faces_max:
            raise ValidationError("synthetic spec: need 1 <= faces_min <= faces_max")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ValidationError("synthetic spec: need 0 <= objects_min <= objects_max")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.dim < 1 or self.scales < 1:
            raise ValidationError("synthetic spec: counts and sizes must be positive")
        return self

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}


def synthetic_anchors(spec: SyntheticSpec) -> dict[str, np.ndarray]:
    """Per-cue class anchors: ``margin`` times a random unit direction, one per (cue, class)."""
    rng = np.random.default_rng([spec.seed, 0])
    anchors = {}
    for cue, rows in (("faces", 1), ("objects", 1), ("scenes", spec.scales)):
        directions = rng.standard_normal((3, rows, spec.dim))
        directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
        anchors[cue] = spec.margin * directions
    return anchors


def synthesize_bundles(spec: SyntheticSpec) -> dict[str, list[FeatureBundle]]:
    spec.validate()
    anchors = synthetic_anchors(spec)
    rng = np.random.default_rng([spec.seed, 1])
    splits: dict[str, list[FeatureBundle]] = {}
    for split, size in spec.split_sizes.items():
        bundles = []
        for idx in range(size):
            label = idx % 3
            n_faces = int(rng.integers(spec.faces_min, spec.faces_max + 1))
            n_objects = int(rng.integers(spec.objects_min, spec.objects_max + 1))

            def draw(cue: str, rows: int) -> np.ndarray:
                base = np.broadcast_to(anchors[cue][label], (rows, spec.dim)) if cue != "scenes" else anchors[cue][label]
                noisy = base + spec.noise * rng.standard_normal((rows, spec.dim))
                return noisy.astype(np.float32).astype(np.float64)

            bundles.append(FeatureBundle(
                id=f"{split}-{idx:06d}",
                faces=draw("faces", n_faces),
                objects=draw("objects", n_objects) if n_objects else np.zeros((0, spec.dim)),
                scenes=draw("scenes", spec.scales),
                label=label,
            ))
        splits[split] = bundles
    return splits


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write one JSON bundle per sample plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    splits = synthesize_bundles(spec)
    manifest: dict[str, Any] = {"format": "bundle-json", "spec": dataclasses.asdict(spec), "splits": {}}
    for split, bundles in splits.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        paths = []
        for bundle in bundles:
            rel = f"{split}/{bundle.id}.json"
            save_bundle(bundle, out / rel)
            paths.append(rel)
        manifest["splits"][split] = paths
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def load_manifest(data_dir: str | Path) -> dict[str, list[Path]]:
    root = Path(data_dir)
    path = root / "manifest.json" if root.is_dir() else root
    root = path.parent
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("splits"), dict):
        raise ParseError(f"{path}: missing field 'splits'")
    return {split: [root / p for p in paths] for split, paths in raw["splits"].items()}


def load_split(data_dir: str | Path, split: str, dim: int | None = None, scales: int | None = None) -> list[FeatureBundle]:
    manifest = load_manifest(data_dir)
    if split not in manifest:
        raise ValidationError(f"dataset has no split {split!r}; available: {sorted(manifest)}")
    return [load_bundle(p, dim, scales) for p in manifest[split]]


# ------------------------------------------------------------------ lexicons


def hash_embedding(word: str, dim: int) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding seeded by the word text."""
    seed = int.from_bytes(hashlib.sha256(word.encode("utf-8")).digest()[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return vec / np.linalg.norm(vec)


def default_lexicon_path() -> Path:
    return Path(str(resources.files("groupemo") / "data" / "default_lexicons.json"))


def _vector(raw: Any, where: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{where}: expected a non-empty list of numbers")
    for i, v in enumerate(raw):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ParseError(f"{where}[{i}]: malformed number {v!r}")
    return np.array(raw, dtype=np.float64)


def load_lexicons(path: str | Path | None = None, dim: int = 50) -> LexiconSet:
    """Parse a lexicon file; words without embeddings get ``hash_embedding(word, dim)``.

    When the file carries embeddings their width must equal ``dim``.
    """
    path = Path(path) if path else default_lexicon_path()
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise LexiconError(f"lexicon file not found: {path}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    classes = []
    for name in CLASS_NAMES:
        if name not in raw:
            raise ParseError(f"{path}: missing class key {name!r}")
        entry = raw[name]
        where = f"{path}:{name}"
        if not isinstance(entry, dict) or not isinstance(entry.get("lexicons"), list):
            raise ParseError(f"{where}: field 'lexicons' must be a list")
        class_word = entry.get("class_word", name.capitalize())
        if "class_embedding" in entry:
            class_vec = _vector(entry["class_embedding"], f"{where}.class_embedding")
        else:
            class_vec = hash_embedding(class_word, dim)
        words, vectors = [], []
        for m, item in enumerate(entry["lexicons"]):
            loc = f"{where}.lexicons[{m}]"
            if isinstance(item, str):
                item = {"word": item}
            if not isinstance(item, dict) or not isinstance(item.get("word"), str):
                raise ParseError(f"{loc}: field 'word' must be a string")
            words.append(item["word"])
            if "embedding" in item:
                vectors.append(_vector(item["embedding"], f"{loc}.embedding"))
            else:
                vectors.append(hash_embedding(item["word"], dim))
        for loc, vec in [(f"{where}.class_embedding", class_vec)] + [(f"{where}.{w}", v) for w, v in zip(words, vectors)]:
            if vec.shape != (dim,):
                raise ParseError(f"{loc}: embedding width {vec.shape[0]} != d_e {dim}")
        classes.append(LexiconClass(name, class_word, class_vec, words, np.array(vectors).reshape(len(words), dim)))
    return LexiconSet(tuple(classes)).validate()


# --------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    config: dict[str, Any]
    params: dict[str, np.ndarray]
    adam_state: dict[str, Any] | None = None
    sim_stats: dict[str, float] | None = None
    epoch: int = 0
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _encode_array(arr: np.ndarray) -> dict[str, Any]:
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "dtype": arr.dtype.name, "data": arr.ravel().tolist()}


def _decode_array(raw: dict[str, Any], where: str) -> np.ndarray:
    try:
        return np.array(raw["data"], dtype=raw.get("dtype", "float64")).reshape(raw["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"checkpoint {where}: malformed array ({exc})") from None


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    adam = None
    if ckpt.adam_state is not None:
        adam = {k: v for k, v in ckpt.adam_state.items() if k not in ("m", "v")}
        adam["m"] = {n: _encode_array(a) for n, a in ckpt.adam_state["m"].items()}
        adam["v"] = {n: _encode_array(a) for n, a in ckpt.adam_state["v"].items()}
    doc = {
        "version": ckpt.version,
        "config": ckpt.config,
        "params": {name: _encode_array(arr) for name, arr in ckpt.params.items()},
        "adam_state": adam,
        "sim_stats": ckpt.sim_stats,
        "epoch": ckpt.epoch,
        "extra": ckpt.extra,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"{path}: checkpoint version {doc.get('version')!r} != supported {CHECKPOINT_VERSION}")
    params = {name: _decode_array(raw, name) for name, raw in doc["params"].items()}
    adam = doc.get("adam_state")
    if adam is not None:
        adam = dict(adam)
        adam["m"] = {n: _decode_array(a, f"adam.m.{n}") for n, a in adam["m"].items()}
        adam["v"] = {n: _decode_array(a, f"adam.v.{n}") for n, a in adam["v"].items()}
    return Checkpoint(config=doc["config"], params=params, adam_state=adam, sim_stats=doc.get("sim_stats"),
                      epoch=int(doc.get("epoch", 0)), extra=doc.get("extra") or {}, version=doc["version"])
