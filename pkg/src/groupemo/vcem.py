"""Visual context encoding: scene-aware face mixing and visual fusion.

All functions take batched cue tensors with a leading sample axis ``N``:
faces ``N x I x d``, objects ``N x J x d``, scenes ``N x K x d`` plus boolean
row masks for the padded face/object rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InvalidMaskError
from .nn import EncoderBlock, EncoderStack, Linear, Module, scaled_dot_attention


class VisualEncoder(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, heads: int, depth: int = 4, ffn_mult: int = 4,
                 dropout: float = 0.1, gate_mode: str = "row", dtype=None):
        if gate_mode not in ("row", "scale"):
            raise ContractError(f"unknown gate mode {gate_mode!r}")
        self.gate_mode = gate_mode
        # query/key/value projections shared by every scene scale
        self.w_q = Linear(rng, hidden, hidden, bias=False, dtype=dtype)
        self.w_k = Linear(rng, hidden, hidden, bias=False, dtype=dtype)
        self.w_v = Linear(rng, hidden, hidden, bias=False, dtype=dtype)
        self.gate = Linear(rng, hidden, 1, dtype=dtype)
        self.mixer = EncoderBlock(rng, hidden, heads, ffn_mult, dropout, dtype)
        self.fusion = EncoderStack(rng, depth, hidden, heads, ffn_mult, dropout, dtype)

    def cam_parameters(self) -> dict[str, Tensor]:
        params = {}
        for part in ("w_q", "w_k", "w_v", "gate", "mixer"):
            params.update({f"{part}.{k}": v for k, v in getattr(self, part).named_parameters()})
        return params


class CueHeads(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, classes: int = 3, dtype=None):
        self.scene = Linear(rng, hidden, classes, dtype=dtype)
        self.face = Linear(rng, hidden, classes, dtype=dtype)
        self.object = Linear(rng, hidden, classes, dtype=dtype)


def _check_faces(face_mask: np.ndarray) -> None:
    if np.any(~np.asarray(face_mask, dtype=bool).any(axis=-1)):
        raise InvalidMaskError("every sample needs at least one valid face")


def _with_scene_rows(scene_rows: Tensor, face_rows: Tensor) -> Tensor:
    """(N,K,e) scene rows and (N,I,e) face rows -> (N,K,1+I,e), scene row first."""
    n, k, e = scene_rows.shape
    i = face_rows.shape[-2]
    faces_b = ad.broadcast_to(ad.reshape(face_rows, (n, 1, i, e)), (n, k, i, e))
    return ad.concat([ad.reshape(scene_rows, (n, k, 1, e)), faces_b], axis=-2)


def cam_cross_attention(scenes: Tensor, faces: Tensor, face_mask: np.ndarray, enc: VisualEncoder) -> Tensor:
    """Context-enhanced faces for every scale: N x K x (1+I) x d.

    Queries come from [scene_k; faces], keys and values from the faces only.
    """
    _check_faces(face_mask)
    queries = _with_scene_rows(enc.w_q(scenes), enc.w_q(faces))
    n, i, d = faces.shape
    keys = ad.reshape(enc.w_k(faces), (n, 1, i, d))
    values = ad.reshape(enc.w_v(faces), (n, 1, i, d))
    out, _ = scaled_dot_attention(queries, keys, values, np.asarray(face_mask, dtype=bool)[:, None, :])
    return out


def scale_gates(scenes: Tensor, faces: Tensor, face_mask: np.ndarray, enc: VisualEncoder) -> Tensor:
    """Sigmoid gates, N x K x (1+I) x 1 in "row" mode or N x K x 1 x 1 in "scale" mode."""
    rows = _with_scene_rows(scenes, faces)
    if enc.gate_mode == "row":
        return ad.sigmoid(enc.gate(rows))
    n, k = scenes.shape[:2]
    row_mask = np.concatenate([np.ones((n, 1), bool), np.asarray(face_mask, bool)], axis=1)
    pooled = ad.masked_mean_rows(rows, np.broadcast_to(row_mask[:, None, :], rows.shape[:-1]))
    return ad.reshape(ad.sigmoid(enc.gate(pooled)), (n, k, 1, 1))


def multiscale_gate_fuse(h_all: Tensor, scenes: Tensor, faces: Tensor, face_mask: np.ndarray,
                         enc: VisualEncoder) -> tuple[Tensor, Tensor]:
    """Gate-weighted sum over scales -> (v_f: N x (1+I) x d, gates)."""
    if h_all.shape[1] != scenes.shape[1]:
        raise ContractError(f"{h_all.shape[1]} context tensors for {scenes.shape[1]} scene scales")
    gates = scale_gates(scenes, faces, face_mask, enc)
    return ad.sum(gates * h_all, axis=1), gates


def mix_mask(face_mask: np.ndarray, scales: int) -> np.ndarray:
    n = face_mask.shape[0]
    return np.concatenate([np.ones((n, 1), bool), np.asarray(face_mask, bool), np.ones((n, scales), bool)], axis=1)


def face_scene_mix(v_f: Tensor, scenes: Tensor, face_mask: np.ndarray, enc: VisualEncoder, train: bool = False,
                   rng=None) -> tuple[Tensor, np.ndarray]:
    """One encoder block over [v_f; scenes] -> (N x (1+I+K) x d, row mask)."""
    tokens = ad.concat([v_f, scenes], axis=1)
    mask = mix_mask(face_mask, scenes.shape[1])
    return enc.mixer(tokens, mask, train, rng), mask


def _objects_or_placeholder(objects: Tensor, object_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    # a batch without any object rows gets one masked zero row so shapes stay non-empty
    if objects.shape[1] == 0:
        n, _, d = objects.shape
        return Tensor(np.zeros((n, 1, d)), dtype=objects.dtype), np.zeros((n, 1), bool)
    return objects, np.asarray(object_mask, bool)


def visual_fuse(v_fs: Tensor, v_fs_mask: np.ndarray, objects: Tensor, object_mask: np.ndarray,
                enc: VisualEncoder, train: bool = False, rng=None) -> Tensor:
    """Encoder stack over [v_fs; objects], masked mean over valid rows -> F_v (N x d)."""
    objects, object_mask = _objects_or_placeholder(objects, object_mask)
    tokens = ad.concat([v_fs, objects], axis=1)
    mask = np.concatenate([v_fs_mask, object_mask], axis=1)
    return ad.masked_mean_rows(enc.fusion(tokens, mask, train, rng), mask)


@dataclass
class VisualOutput:
    f_v: Tensor
    gates: Tensor | None = None
    context: Tensor | None = None


def encode_visual(faces: Tensor, face_mask: np.ndarray, objects: Tensor, object_mask: np.ndarray, scenes: Tensor,
                  enc: VisualEncoder, use_cam: bool = True, train: bool = False, rng=None) -> VisualOutput:
    """Full visual branch.  Without the mixer, raw [faces; scenes; objects] go straight to fusion."""
    _check_faces(face_mask)
    if not use_cam:
        n, k = scenes.shape[:2]
        tokens = ad.concat([faces, scenes], axis=1)
        mask = np.concatenate([np.asarray(face_mask, bool), np.ones((n, k), bool)], axis=1)
        return VisualOutput(visual_fuse(tokens, mask, objects, object_mask, enc, train, rng))
    h_all = cam_cross_attention(scenes, faces, face_mask, enc)
    v_f, gates = multiscale_gate_fuse(h_all, scenes, faces, face_mask, enc)
    v_fs, mask = face_scene_mix(v_f, scenes, face_mask, enc, train, rng)
    return VisualOutput(visual_fuse(v_fs, mask, objects, object_mask, enc, train, rng), gates, h_all)


@dataclass
class CueOutput:
    logits: dict[str, Tensor]
    pooled: dict[str, Tensor]
    object_valid: np.ndarray


def cue_logits(faces: Tensor, face_mask: np.ndarray, objects: Tensor, object_mask: np.ndarray, scenes: Tensor,
               heads: CueHeads) -> CueOutput:
    """Pool each raw cue set and classify it; samples without objects get zero object logits."""
    _check_faces(face_mask)
    objects, object_mask = _objects_or_placeholder(objects, object_mask)
    object_valid = object_mask.any(axis=1)
    pooled = {
        "scene": ad.mean_rows(scenes),
        "face": ad.masked_mean_rows(faces, face_mask),
        "object": ad.masked_mean_rows(objects, object_mask, allow_empty=True),
    }
    keep = Tensor(object_valid[:, None].astype(np.float64), dtype=objects.dtype)
    logits = {
        "scene": heads.scene(pooled["scene"]),
        "face": heads.face(pooled["face"]),
        "object": heads.object(pooled["object"]) * keep,
    }
    return CueOutput(logits, pooled, object_valid)
