"""Image-side relational graph encoder.

Pipeline per scene: project raw object/token features to the unified width,
augment each object with soft-attended text, score objects and keep the
top-scoring pool, build one star-shaped relational graph per pooled object
(relationship and attribute nodes from spatial neighbours, text nodes gated
by attention threshold), then pool every graph into a single vector with a
stacked graph convolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import (GraphNode, MultimodalRelationalGraph, MultimodalScene,
                   NODE_ATTRIBUTE, NODE_RELATIONSHIP, NODE_TEXT)
from .nets import DTYPE, Dense, ModelDims, make_param, reset_children, uniform_init_
from .rng import torch_generator

POOL_RULES = ("top_score", "center", "large", "random")


def attend_text(query: torch.Tensor, tokens: torch.Tensor | None
                ) -> tuple[torch.Tensor, torch.Tensor]:
    """Scaled-dot soft attention of one query over token embeddings.

    Empty token sets yield a zero vector and empty weights.
    """
    d = query.shape[-1]
    if tokens is None or tokens.numel() == 0:
        return torch.zeros(d, dtype=query.dtype), torch.zeros(0, dtype=query.dtype)
    if tokens.shape[-1] != d:
        raise ValueError(f"dimension mismatch: query {d}, tokens {tokens.shape[-1]}")
    scores = tokens @ query / math.sqrt(d)
    weights = torch.softmax(scores, dim=0)
    return weights @ tokens, weights


@dataclass
class AugmentedObject:
    """Object embedding concatenated with its attended text vector."""

    embedding: torch.Tensor   # (2d,)
    source_index: int


@dataclass
class CentralObjectPool:
    """Indices of the highest-scoring objects plus the full score vector."""

    indices: list[int]
    scores: torch.Tensor

    def validate(self) -> None:
        total = float(self.scores.detach().sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pool scores sum to {total}, expected 1")
        if len(self.indices) != min(len(self.indices), self.scores.shape[0]):
            raise ValueError("pool larger than object count")


def select_pool(scores: torch.Tensor, n_pool: int) -> CentralObjectPool:
    """Top-n_pool indices by score; ties break toward the lower index."""
    if n_pool < 1:
        raise ValueError("n_pool must be >= 1")
    order = torch.argsort(-scores, stable=True)
    take = min(n_pool, scores.shape[0])
    pool = CentralObjectPool(indices=[int(i) for i in order[:take]], scores=scores)
    pool.validate()
    return pool


class RelationalGraphEncoder(nn.Module):
    """All trainable pieces of the image side."""

    def __init__(self, dims: ModelDims, seed: int = 0):
        super().__init__()
        self.dims = dims
        d, d_raw = dims.d, dims.d_raw
        self.object_proj = Dense(d_raw, d)
        self.token_proj = Dense(d_raw, d)
        self.score_hidden = Dense(2 * d, d)
        self.score_out = Dense(d, 1)
        self.rel_weight = make_param(d, d)          # relationship nodes, no bias
        self.attr_weight = make_param(d, d + 4)     # attribute nodes over [feature, box]
        self.gcn_self = nn.ParameterList(make_param(d, d) for _ in range(dims.gcn_layers))
        self.gcn_node = nn.ParameterList(make_param(d, d) for _ in range(dims.gcn_layers))

        gen = torch_generator(seed, "init", "encoder")
        reset_children(self, gen)
        uniform_init_(self.rel_weight, d, gen)
        uniform_init_(self.attr_weight, d + 4, gen)
        for w0, w1 in zip(self.gcn_self, self.gcn_node):
            uniform_init_(w0, d, gen)
            uniform_init_(w1, d, gen)

    # -- projections ------------------------------------------------------

    def project_scene(self, scene: MultimodalScene):
        """Unified object embeddings, token embeddings and boxes as tensors."""
        obj_raw = torch.from_numpy(np.stack([o.feature for o in scene.objects]))
        boxes = torch.from_numpy(np.stack([o.box for o in scene.objects]))
        objects = self.object_proj(obj_raw)
        if scene.tokens:
            tok_raw = torch.from_numpy(np.stack([t.feature for t in scene.tokens]))
            tokens = self.token_proj(tok_raw)
        else:
            tokens = torch.zeros(0, self.dims.d, dtype=DTYPE)
        return objects, tokens, boxes

    # -- scoring and pooling ------------------------------------------------

    def _augment(self, objects: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        n, d = objects.shape
        if tokens.shape[0] == 0:
            attended = torch.zeros(n, d, dtype=objects.dtype)
        else:
            scores = objects @ tokens.T / math.sqrt(d)
            attended = torch.softmax(scores, dim=1) @ tokens
        return torch.cat([objects, attended], dim=1)

    def augment_objects(self, scene: MultimodalScene) -> list[AugmentedObject]:
        objects, tokens, _ = self.project_scene(scene)
        aug = self._augment(objects, tokens)
        return [AugmentedObject(embedding=aug[i], source_index=i) for i in range(aug.shape[0])]

    def _score(self, augmented: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(self.score_hidden(augmented))
        logits = self.score_out(hidden).squeeze(-1)
        return torch.softmax(logits, dim=0)

    def score_central_objects(self, augmented) -> torch.Tensor:
        """Softmax importance scores over the scene's augmented objects."""
        if isinstance(augmented, torch.Tensor):
            stacked = augmented
        else:
            if not augmented:
                raise ValueError("cannot score an empty object list")
            stacked = torch.stack([a.embedding for a in augmented])
        if stacked.shape[0] == 0:
            raise ValueError("cannot score an empty object list")
        return self._score(stacked)

    # -- graph construction --------------------------------------------------

    def _neighbour_indices(self, boxes: torch.Tensor, central_index: int, k_rel: int) -> list[int]:
        centers = boxes[:, :2] + boxes[:, 2:] / 2.0
        dist = ((centers - centers[central_index]) ** 2).sum(dim=1)
        order = torch.argsort(dist, stable=True)
        neighbours = [int(i) for i in order if int(i) != central_index]
        return neighbours[:k_rel]

    def _build(self, objects, tokens, boxes, token_weights_query, central_index,
               epsilon, k_rel, token_surfaces) -> MultimodalRelationalGraph:
        nodes: list[GraphNode] = []
        neighbours = self._neighbour_indices(boxes, central_index, k_rel)
        if neighbours:
            nb = torch.tensor(neighbours, dtype=torch.long)
            rel = objects[nb] @ self.rel_weight.T
            attr = torch.cat([objects[nb], boxes[nb]], dim=1) @ self.attr_weight.T
            for row in range(len(neighbours)):
                nodes.append(GraphNode(NODE_RELATIONSHIP, embedding=rel[row]))
                nodes.append(GraphNode(NODE_ATTRIBUTE, embedding=attr[row]))
        _, weights = attend_text(token_weights_query, tokens)
        gate = weights.detach()
        for j in range(weights.shape[0]):
            if float(gate[j]) > epsilon:
                nodes.append(GraphNode(NODE_TEXT, embedding=weights[j] * tokens[j],
                                       weight=float(gate[j]), surface=token_surfaces[j]))
        return MultimodalRelationalGraph(central=objects[central_index], nodes=nodes,
                                         central_index=central_index)

    def build_mrg(self, scene: MultimodalScene, central_index: int,
                  epsilon: float | None = None, k_rel: int | None = None
                  ) -> MultimodalRelationalGraph:
        """Relational graph of one central object.

        Relationship and attribute nodes come from the k_rel nearest other
        objects by box-center distance; text nodes keep exactly the tokens
        whose attention weight against the central object exceeds epsilon.
        """
        if not 0 <= central_index < len(scene.objects):
            raise ValueError(f"central index {central_index} out of range")
        epsilon = self.dims.epsilon if epsilon is None else epsilon
        k_rel = self.dims.k_rel if k_rel is None else k_rel
        objects, tokens, boxes = self.project_scene(scene)
        surfaces = [t.surface for t in scene.tokens]
        return self._build(objects, tokens, boxes, objects[central_index],
                           central_index, epsilon, k_rel, surfaces)

    # -- graph pooling ---------------------------------------------------------

    def encode_mrg(self, graph: MultimodalRelationalGraph) -> torch.Tensor:
        """Stacked graph convolution over the star graph.

        Each layer re-aggregates the (fixed) node messages into the central
        state: h <- relu(W0 h + sum_n W1 n).
        """
        h = graph.central
        if graph.nodes:
            stacked = torch.stack([n.embedding for n in graph.nodes])
        else:
            stacked = None
        for w0, w1 in zip(self.gcn_self, self.gcn_node):
            msg = w0 @ h
            if stacked is not None:
                msg = msg + (stacked @ w1.T).sum(dim=0)
            h = torch.relu(msg)
        return h

    # -- whole-image encodings ---------------------------------------------------

    def encode_image(self, scene: MultimodalScene, n_pool: int | None = None,
                     epsilon: float | None = None) -> list[torch.Tensor]:
        """One embedding per pooled central object (at most n_pool of them)."""
        n_pool = self.dims.n_pool if n_pool is None else n_pool
        pool = self.select_central_pool(scene, n_pool)
        return self.encode_pool(scene, pool.indices, epsilon)

    def select_central_pool(self, scene: MultimodalScene, n_pool: int | None = None
                            ) -> CentralObjectPool:
        n_pool = self.dims.n_pool if n_pool is None else n_pool
        objects, tokens, _ = self.project_scene(scene)
        scores = self._score(self._augment(objects, tokens))
        return select_pool(scores, n_pool)

    def encode_pool(self, scene: MultimodalScene, indices: list[int],
                    epsilon: float | None = None) -> list[torch.Tensor]:
        epsilon = self.dims.epsilon if epsilon is None else epsilon
        objects, tokens, boxes = self.project_scene(scene)
        surfaces = [t.surface for t in scene.tokens]
        out = []
        for idx in indices:
            graph = self._build(objects, tokens, boxes, objects[idx], idx,
                                epsilon, self.dims.k_rel, surfaces)
            out.append(self.encode_mrg(graph))
        return out

    def encode_image_weighted(self, scene: MultimodalScene,
                              epsilon: float | None = None) -> torch.Tensor:
        """Score-weighted mixture of every object's graph embedding.

        Hard top-k selection is piecewise constant in the scorer, so this
        relaxation is the only differentiable route through which the
        selection scorer learns during adversarial training.
        """
        epsilon = self.dims.epsilon if epsilon is None else epsilon
        objects, tokens, boxes = self.project_scene(scene)
        surfaces = [t.surface for t in scene.tokens]
        scores = self._score(self._augment(objects, tokens))
        embeddings = []
        for idx in range(len(scene.objects)):
            graph = self._build(objects, tokens, boxes, objects[idx], idx,
                                epsilon, self.dims.k_rel, surfaces)
            embeddings.append(self.encode_mrg(graph))
        return scores @ torch.stack(embeddings)

    # -- rule-based pools for the ablation arms -------------------------------------

    def pool_by_rule(self, scene: MultimodalScene, rule: str, n_pool: int | None = None,
                     rng: np.random.Generator | None = None) -> list[int]:
        """Alternative central-object selection rules used by the ablations."""
        n_pool = self.dims.n_pool if n_pool is None else n_pool
        n = len(scene.objects)
        take = min(n_pool, n)
        if rule == "top_score":
            return self.select_central_pool(scene, n_pool).indices
        if rule == "center":
            centers = scene.box_centers()
            dist = ((centers - 0.5) ** 2).sum(axis=1)
            return [int(i) for i in np.argsort(dist, kind="stable")[:take]]
        if rule == "large":
            boxes = np.stack([o.box for o in scene.objects])
            area = boxes[:, 2] * boxes[:, 3]
            return [int(i) for i in np.argsort(-area, kind="stable")[:take]]
        if rule == "random":
            if rng is None:
                raise ValueError("random rule needs an rng")
            return [int(i) for i in rng.permutation(n)[:take]]
        raise ValueError(f"unknown pool rule {rule!r}; expected one of {POOL_RULES}")
