"""Emotion semantic encoding: lexicon tree, class similarity graphs, GCN refinement.

For each class the lexicon embeddings and the class embedding form a fully
connected graph weighted by (non-negative) cosine similarity.  Two GCN layers
refine the nodes; attention against the raw class embedding pools them, the
pooled vector is added back to every node, and mean + max pooling over nodes
gives the class vector.  The three class vectors, concatenated and projected,
form the global semantic representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateVectorError, LexiconError
from .nn import Linear, Module, gcn_layer, glorot_uniform


@dataclass
class LexiconClass:
    name: str
    class_word: str
    class_embedding: np.ndarray
    words: list[str]
    embeddings: np.ndarray  # M x d_e


@dataclass
class LexiconSet:
    classes: tuple[LexiconClass, ...]

    @property
    def dim(self) -> int:
        return self.classes[0].class_embedding.shape[0]

    def validate(self) -> "LexiconSet":
        if len(self.classes) != 3:
            raise LexiconError(f"expected 3 emotion classes, got {len(self.classes)}")
        dim = self.dim
        for c in self.classes:
            if not c.words:
                raise LexiconError(f"class {c.name!r} has no lexicons")
            seen = set()
            for w in c.words:
                if w in seen:
                    raise LexiconError(f"class {c.name!r}: duplicate lexicon {w!r}")
                seen.add(w)
            if c.class_embedding.shape != (dim,) or c.embeddings.shape != (len(c.words), dim):
                raise LexiconError(f"class {c.name!r}: embeddings do not share width {dim}")
        return self


@dataclass
class TreeNode:
    name: str
    children: list["TreeNode"] = field(default_factory=list)
    embedding: np.ndarray | None = None


@dataclass
class EmotionTree:
    root: TreeNode

    @property
    def classes(self) -> list[TreeNode]:
        return self.root.children

    def leaves(self, class_index: int) -> list[str]:
        return [leaf.name for leaf in self.root.children[class_index].children]

    def render(self) -> str:
        lines = [self.root.name]
        for ci, cls in enumerate(self.classes):
            last_cls = ci == len(self.classes) - 1
            dim = cls.embedding.shape[0] if cls.embedding is not None else 0
            lines.append(f"{'└── ' if last_cls else '├── '}{cls.name} ({len(cls.children)} lexicons, d_e={dim})")
            pad = "    " if last_cls else "│   "
            for li, leaf in enumerate(cls.children):
                lines.append(f"{pad}{'└── ' if li == len(cls.children) - 1 else '├── '}{leaf.name}")
        return "\n".join(lines)


def build_emotion_tree(lexicons: LexiconSet) -> EmotionTree:
    lexicons.validate()
    root = TreeNode("Emotion")
    for c in lexicons.classes:
        node = TreeNode(c.class_word, embedding=c.class_embedding)
        node.children = [TreeNode(w, embedding=e) for w, e in zip(c.words, c.embeddings)]
        root.children.append(node)
    return EmotionTree(root)


@dataclass
class ClassGraph:
    nodes: np.ndarray        # (M+1) x d_e, lexicons first, class embedding last
    adjacency: np.ndarray    # cosine affinities, clamped at 0, unit diagonal
    normalized: np.ndarray   # D^-1/2 A D^-1/2
    class_embedding: np.ndarray


def build_class_graph(lexicon_class: LexiconClass) -> ClassGraph:
    nodes = np.vstack([lexicon_class.embeddings, lexicon_class.class_embedding[None, :]]).astype(np.float64)
    norms = np.linalg.norm(nodes, axis=1)
    if np.any(norms <= ad.NORM_EPS):
        raise DegenerateVectorError(f"class {lexicon_class.name!r}: zero-norm embedding")
    unit = nodes / norms[:, None]
    adjacency = np.clip(unit @ unit.T, 0.0, 1.0)
    adjacency = (adjacency + adjacency.T) / 2.0
    np.fill_diagonal(adjacency, 1.0)
    inv_sqrt = 1.0 / np.sqrt(adjacency.sum(axis=1))
    normalized = adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
    normalized = (normalized + normalized.T) / 2.0
    return ClassGraph(nodes, adjacency, normalized, lexicon_class.class_embedding.astype(np.float64))


class SemanticEncoder(Module):
    """Two-layer GCN per class graph, attention pooling, and the semantic projection head.

    When the node width ``d_h`` differs from ``d_e`` a learned ``query`` matrix
    maps the raw class embedding into node space for the attention scores.
    """

    def __init__(self, rng: np.random.Generator, d_e: int, d_h: int, hidden: int, dropout: float = 0.1,
                 pool: str = "sum", dtype=None):
        dtype = dtype or ad.get_default_dtype()
        if pool not in ("sum", "concat"):
            raise ContractError(f"unknown class pooling {pool!r}")
        self.d_e, self.d_h, self.pool, self.dropout = d_e, d_h, pool, dropout
        self.gcn1 = Tensor(glorot_uniform(rng, d_e, d_h, dtype), requires_grad=True, dtype=dtype)
        self.gcn2 = Tensor(glorot_uniform(rng, d_h, d_h, dtype), requires_grad=True, dtype=dtype)
        self.query = (Tensor(glorot_uniform(rng, d_e, d_h, dtype), requires_grad=True, dtype=dtype)
                      if d_e != d_h else None)
        self.class_width = d_h if pool == "sum" else 2 * d_h
        self.sem_head = Linear(rng, 3 * self.class_width, hidden, dtype=dtype)

    def encode_class(self, graph: ClassGraph, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Class vector from one graph."""
        dtype = self.gcn1.dtype
        nodes = Tensor(graph.nodes, dtype=dtype)
        a_hat = Tensor(graph.normalized, dtype=dtype)
        h = gcn_layer(nodes, a_hat, self.gcn1)
        h = ad.dropout(h, self.dropout, rng, train)
        h = gcn_layer(h, a_hat, self.gcn2)
        query = Tensor(graph.class_embedding[None, :], dtype=dtype)
        if self.query is not None:
            query = ad.matmul(query, self.query)
        scores = ad.reshape(ad.matmul(h, ad.transpose(query)), (h.shape[0],))
        self.last_attention = ad.softmax(scores)
        pooled = ad.reshape(ad.matmul(ad.reshape(self.last_attention, (1, -1)), h), (h.shape[1],))
        fused = ad.broadcast_add(h, pooled)
        if self.pool == "sum":
            return ad.mean_rows(fused) + ad.max_rows(fused)
        return ad.concat([ad.mean_rows(fused), ad.max_rows(fused)], axis=0)

    def encode_classes(self, graphs: list[ClassGraph], train: bool = False, rng=None) -> list[Tensor]:
        return [self.encode_class(g, train, rng) for g in graphs]

    def assemble(self, class_vectors: list[Tensor]) -> Tensor:
        """Global semantic vector: project the (pos, neu, neg) concatenation."""
        if len(class_vectors) != 3:
            raise ContractError("assemble_semantic_rep needs exactly three class vectors")
        return self.sem_head(ad.concat(class_vectors, axis=0))

    def class_projections(self, class_vectors: list[Tensor]) -> Tensor:
        """3 x hidden: each class vector pushed through the head in its own slot, others zero."""
        w = self.sem_head.weight
        rows = []
        width = self.class_width
        for c, vec in enumerate(class_vectors):
            block = w[c * width:(c + 1) * width]
            rows.append(ad.reshape(ad.matmul(ad.reshape(vec, (1, -1)), block), (1, -1)))
        return ad.broadcast_add(ad.concat(rows, axis=0), self.sem_head.bias)

    def semantic_for_labels(self, class_vectors: list[Tensor], labels: np.ndarray) -> Tensor:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > 2):
            raise ContractError(f"labels must be in {{0, 1, 2}}, got {labels.tolist()}")
        return self.class_projections(class_vectors)[labels]


def encode_class_semantics(graph: ClassGraph, encoder: SemanticEncoder, train: bool = False, rng=None) -> Tensor:
    return encoder.encode_class(graph, train, rng)


def assemble_semantic_rep(f_pos: Tensor, f_neu: Tensor, f_neg: Tensor, encoder: SemanticEncoder) -> Tensor:
    return encoder.assemble([f_pos, f_neu, f_neg])


def class_semantic_for_label(label: int, class_vectors: list[Tensor], encoder: SemanticEncoder) -> Tensor:
    if label not in (0, 1, 2):
        raise ContractError(f"label must be 0, 1 or 2, got {label!r}")
    return encoder.class_projections(class_vectors)[label]
