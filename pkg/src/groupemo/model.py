"""The full group-emotion model and its ablation wirings.

Every variant shares one parameter layout (built in a fixed order from the
run seed); a variant only trains the parameter groups its wiring touches.

    B1        pooled raw cues -> per-cue heads; concatenated pools -> linear group head
    B2_noCAM  [faces; scenes; objects] -> fusion encoder -> F_v -> linear head
    B2        full visual branch -> F_v -> linear head
    B3        visual + semantic tokens, ungated, group encoder; no SAM
    B4_noSAM  similarity-gated tokens; no SAM
    B4_noSFF  ungated tokens; SAM on
    B4        gated tokens and SAM
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import Batch
from .errors import ContractError
from .esem import LexiconSet, SemanticEncoder, build_class_graph
from .nn import Linear, Module
from .objectives import LossReport, SamConfig, sam_loss, total_loss
from .vcem import CueHeads, VisualEncoder, cue_logits, encode_visual
from .vsim import InteractionModule, SimStats, group_encode, similarity_fuse

VARIANT_GROUPS = {
    "B1": ("cue_heads", "b1_head"),
    "B2_noCAM": ("cue_heads", "visual.fusion", "visual_head"),
    "B2": ("cue_heads", "visual", "visual_head"),
    "B3": ("cue_heads", "visual", "esem", "vsim"),
    "B4_noSAM": ("cue_heads", "visual", "esem", "vsim"),
    "B4_noSFF": ("cue_heads", "visual", "esem", "vsim"),
    "B4": ("cue_heads", "visual", "esem", "vsim"),
}


@dataclass
class ForwardOutput:
    group_logits: Tensor
    cue_logits: dict[str, Tensor]
    object_valid: np.ndarray
    fv: Tensor | None = None        # projected visual features, N x h
    ft: Tensor | None = None        # per-label projected semantic features, N x h
    ft_global: Tensor | None = None
    f_v: Tensor | None = None
    sim: Tensor | None = None
    gate: Tensor | None = None
    visual_gates: Tensor | None = None


class GroupEmotionModel(Module):
    def __init__(self, config: RunConfig, lexicons: LexiconSet):
        config.validate()
        self.config = config
        dtype = ad.DTYPES[config.precision]
        self.dtype = dtype
        if lexicons.dim != config.d_e:
            raise ContractError(f"lexicon embedding width {lexicons.dim} != d_e {config.d_e}")
        rng = np.random.default_rng([config.seed, 100])
        h = config.hidden
        common = dict(ffn_mult=config.ffn_mult, dropout=config.dropout, dtype=dtype)
        self.cue_heads = CueHeads(rng, h, dtype=dtype)
        self.b1_head = Linear(rng, 3 * h, 3, dtype=dtype)
        self.visual = VisualEncoder(rng, h, config.heads, config.fusion_depth, gate_mode=config.gate_mode, **common)
        self.visual_head = Linear(rng, h, 3, dtype=dtype)
        self.esem = SemanticEncoder(rng, config.d_e, config.semantic_width, h, config.dropout, config.esem_pool, dtype)
        self.vsim = InteractionModule(rng, h, config.heads, config.fusion_depth, **common)
        self.graphs = [build_class_graph(c) for c in lexicons.classes]
        self.sim_stats = SimStats(momentum=config.sim_momentum)
        self.sam_config = SamConfig(tau=config.tau, epsilon=config.sam_eps, alpha_literal=config.sam_alpha_literal)

    def variant_parameters(self, variant: str | None = None) -> dict[str, Tensor]:
        variant = variant or self.config.variant
        groups = VARIANT_GROUPS[variant]
        return {name: p for name, p in self.named_parameters()
                if any(name == g or name.startswith(g + ".") for g in groups)}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ContractError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ContractError(f"parameter {name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def semantic(self, train: bool = False, rng=None) -> tuple[list[Tensor], Tensor]:
        class_vectors = self.esem.encode_classes(self.graphs, train, rng)
        return class_vectors, self.esem.assemble(class_vectors)

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None,
                variant: str | None = None, update_stats: bool = True) -> ForwardOutput:
        variant = variant or self.config.variant
        dt = self.dtype
        faces = Tensor(batch.faces, dtype=dt)
        objects = Tensor(batch.objects, dtype=dt)
        scenes = Tensor(batch.scenes, dtype=dt)
        cues = cue_logits(faces, batch.face_mask, objects, batch.object_mask, scenes, self.cue_heads)
        if variant == "B1":
            pooled = ad.concat([cues.pooled["scene"], cues.pooled["face"], cues.pooled["object"]], axis=1)
            return ForwardOutput(self.b1_head(pooled), cues.logits, cues.object_valid)

        visual = encode_visual(faces, batch.face_mask, objects, batch.object_mask, scenes, self.visual,
                               use_cam=variant != "B2_noCAM", train=train, rng=rng)
        if variant in ("B2", "B2_noCAM"):
            return ForwardOutput(self.visual_head(visual.f_v), cues.logits, cues.object_valid, f_v=visual.f_v,
                                 visual_gates=visual.gates)

        class_vectors, f_t = self.semantic(train, rng)
        fv = self.vsim.visual_proj(visual.f_v)
        gated = variant in ("B4", "B4_noSAM")
        tokens, sim, gate = similarity_fuse(fv, f_t, self.sim_stats, train, gated=gated, update_stats=update_stats)
        _, logits = group_encode(tokens, self.vsim, train, rng)
        ft = self.esem.semantic_for_labels(class_vectors, batch.labels)
        return ForwardOutput(logits, cues.logits, cues.object_valid, fv=fv, ft=ft, ft_global=f_t, f_v=visual.f_v,
                             sim=sim, gate=gate, visual_gates=visual.gates)

    def losses(self, out: ForwardOutput, labels: np.ndarray, variant: str | None = None) -> tuple[Tensor, LossReport]:
        variant = variant or self.config.variant
        sam = None
        if variant in ("B4", "B4_noSFF"):
            sam = sam_loss(out.fv, out.ft, labels, self.sam_config)
        return total_loss(out.cue_logits, out.group_logits, labels, sam, out.object_valid)
