"""Synthetic scene generator with a held-back pairing oracle.

Scenes are drawn from a latent relational template: small objects sit on
furniture, people stand near it, OCR tokens (brands, price tags) attach to
small objects, and filler objects (walls, floors) pad the scene without ever
being described. Object and token features are codebook vectors plus
box-conditioned noise, so the ground truth is known but never exposed to
training. Reference captions verbalize distinct sub-templates of the scene
and are reachable only through the evaluation interface.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import (ConceptObject, DataError, MultimodalScene, ObjectFeature,
                   ReferenceSet, SceneGraph, SceneSet, SentenceCorpus, TextToken)
from .grammar import (CLASS_FILLER, CLASS_PERSON, CLASS_SMALL, CLASS_SURFACE,
                      GrammarConfig, default_grammar, verbalize)
from .rng import np_rng, string_vector, substream


@dataclass
class SceneConfig:
    """Knobs for the scene generator; inventories come from the grammar."""

    grammar: GrammarConfig = field(default_factory=default_grammar)
    min_objects: int = 6
    max_objects: int = 12
    object_cap: int = 12     # hard cap on objects per scene
    token_cap: int = 8       # hard cap on OCR tokens per scene
    d_raw: int = 64
    feature_seed: int = 0    # keys the concept/token codebooks
    feature_noise: float = 0.05
    p_brand_token: float = 0.5
    p_price_token: float = 0.5
    max_references: int = 5

    def validate(self) -> None:
        if self.min_objects < 1 or self.min_objects > self.max_objects:
            raise DataError(f"empty object count range [{self.min_objects}, {self.max_objects}]")
        if self.max_objects > self.object_cap:
            raise DataError("max_objects exceeds object_cap")
        if self.token_cap < 0 or self.d_raw < 1:
            raise DataError("token_cap and d_raw must be nonnegative/positive")


def _concept_vector(noun: str, cfg: SceneConfig) -> np.ndarray:
    return string_vector(noun, cfg.d_raw, scale=1.0, salt=f"concept-{cfg.feature_seed}")


def _attribute_vector(adj: str, cfg: SceneConfig) -> np.ndarray:
    return string_vector(adj, cfg.d_raw, scale=0.5, salt=f"attribute-{cfg.feature_seed}")


def _token_vector(surface: str, cfg: SceneConfig) -> np.ndarray:
    return string_vector(surface, cfg.d_raw, scale=1.0, salt=f"ocr-{cfg.feature_seed}")


def _box_projection(cfg: SceneConfig, which: str) -> np.ndarray:
    rng = np_rng(cfg.feature_seed, "box-projection", which)
    return rng.standard_normal((cfg.d_raw, 4)) * 0.2


def _clamp_box(x, y, w, h) -> np.ndarray:
    w = float(np.clip(w, 0.01, 1.0))
    h = float(np.clip(h, 0.01, 1.0))
    x = float(np.clip(x, 0.0, 1.0 - w))
    y = float(np.clip(y, 0.0, 1.0 - h))
    return np.array([x, y, w, h], dtype=np.float64)


@dataclass
class _PlannedObject:
    cls: str
    noun: str
    adjective: str | None
    box: np.ndarray
    parent: int | None = None       # supporting surface index for smalls
    support: str | None = None      # "on" | "above"
    brand: str | None = None
    price: str | None = None


def _plan_objects(rng, cfg: SceneConfig) -> list[_PlannedObject]:
    g = cfg.grammar
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    n = min(n, cfg.object_cap)

    if n == 1:
        counts = {CLASS_SMALL: 1, CLASS_SURFACE: 0, CLASS_PERSON: 0, CLASS_FILLER: 0}
    else:
        n_surface = 1 if n < 6 else int(rng.integers(1, 3))
        n_person = int(rng.random() < 0.4) if n >= 5 and g.nouns.get(CLASS_PERSON) else 0
        rest = n - n_surface - n_person
        n_small = max(1, min(rest, int(rng.integers(2, 5))))
        counts = {CLASS_SURFACE: n_surface, CLASS_PERSON: n_person,
                  CLASS_SMALL: n_small, CLASS_FILLER: rest - n_small}

    planned: list[_PlannedObject] = []

    def pick(cls):
        ns = g.nouns[cls]
        return ns[int(rng.integers(0, len(ns)))]

    def pick_adj(cls, prob):
        adjs = g.adjectives.get(cls, ())
        if adjs and rng.random() < prob:
            return adjs[int(rng.integers(0, len(adjs)))]
        return None

    surface_indices = []
    for _ in range(counts[CLASS_SURFACE]):
        w = rng.uniform(0.3, 0.6)
        h = rng.uniform(0.2, 0.35)
        box = _clamp_box(rng.uniform(0, 1 - w), rng.uniform(0.55, 0.75), w, h)
        surface_indices.append(len(planned))
        planned.append(_PlannedObject(CLASS_SURFACE, pick(CLASS_SURFACE),
                                      pick_adj(CLASS_SURFACE, 0.5), box))

    for _ in range(counts[CLASS_SMALL]):
        w = rng.uniform(0.05, 0.18)
        h = rng.uniform(0.05, 0.18)
        parent = None
        support = None
        if surface_indices:
            parent = surface_indices[int(rng.integers(0, len(surface_indices)))]
            pb = planned[parent].box
            x = rng.uniform(pb[0], max(pb[0], pb[0] + pb[2] - w))
            if rng.random() < 0.75:
                support = "on"
                y = pb[1] - h
            else:
                support = "above"
                y = pb[1] - h - rng.uniform(0.05, 0.2)
        else:
            x = rng.uniform(0, 1 - w)
            y = rng.uniform(0.2, 0.7)
        obj = _PlannedObject(CLASS_SMALL, pick(CLASS_SMALL),
                             pick_adj(CLASS_SMALL, 0.8), _clamp_box(x, y, w, h),
                             parent=parent, support=support)
        if cfg.grammar.brands and rng.random() < cfg.p_brand_token:
            obj.brand = g.brands[int(rng.integers(0, len(g.brands)))]
        if cfg.grammar.prices and rng.random() < cfg.p_price_token:
            obj.price = g.prices[int(rng.integers(0, len(g.prices)))]
        planned.append(obj)

    for _ in range(counts[CLASS_PERSON]):
        w = rng.uniform(0.12, 0.25)
        h = rng.uniform(0.4, 0.65)
        box = _clamp_box(rng.uniform(0, 1 - w), rng.uniform(0.25, 1 - h), w, h)
        planned.append(_PlannedObject(CLASS_PERSON, pick(CLASS_PERSON),
                                      pick_adj(CLASS_PERSON, 0.5), box))

    for _ in range(counts[CLASS_FILLER]):
        w = rng.uniform(0.4, 0.9)
        h = rng.uniform(0.3, 0.9)
        box = _clamp_box(rng.uniform(0, 1 - w), rng.uniform(0, 1 - h), w, h)
        planned.append(_PlannedObject(CLASS_FILLER, pick(CLASS_FILLER), None, box))

    return planned


def _reference_captions(rng, planned: list[_PlannedObject], cfg: SceneConfig) -> list[str]:
    """Verbalize distinct sub-templates of the planned scene through the grammar."""
    g = cfg.grammar
    refs: list[str] = []

    def add(objects):
        tokens = verbalize(SceneGraph(objects=objects), g)
        text = " ".join(tokens)
        if text not in refs:
            refs.append(text)

    smalls = [p for p in planned if p.cls == CLASS_SMALL]
    persons = [p for p in planned if p.cls == CLASS_PERSON]

    rel_words = g.relation_words()
    for obj in smalls:
        attrs = (obj.adjective,) if obj.adjective else ()
        add([ConceptObject(obj.noun, "a", attributes=attrs)])
        if obj.parent is not None and obj.support in rel_words:
            subj = ConceptObject(obj.noun, "a", attributes=attrs, relations=(obj.support,))
            add([subj, ConceptObject(planned[obj.parent].noun, "a")])
        if obj.brand:
            add([ConceptObject(obj.noun, "a", texts=(obj.brand,))])
        if obj.price:
            add([ConceptObject(obj.noun, "the", texts=(obj.price,))])

    for person in persons:
        if smalls and "holding" in rel_words and rng.random() < 0.6:
            target = smalls[int(rng.integers(0, len(smalls)))]
            subj = ConceptObject(person.noun, "a", relations=("holding",))
            add([subj, ConceptObject(target.noun, "a")])
        attrs = (person.adjective,) if person.adjective else ()
        add([ConceptObject(person.noun, "a", attributes=attrs)])

    if not refs:   # degenerate scene: name the first object's concept
        first = planned[0]
        add([ConceptObject(first.noun, "a")])
    return refs[:cfg.max_references]


def generate_scene(seed: int, cfg: SceneConfig, scene_id: str | None = None
                   ) -> tuple[MultimodalScene, list[str]]:
    """One scene plus its reference captions (kept out of the training path)."""
    cfg.validate()
    rng = np_rng(seed, "scene")
    planned = _plan_objects(rng, cfg)

    noun_index = {n: i for i, n in enumerate(sorted(cfg.grammar.all_nouns()))}
    box_proj_obj = _box_projection(cfg, "object")
    box_proj_tok = _box_projection(cfg, "token")

    objects = []
    for p in planned:
        feat = _concept_vector(p.noun, cfg).copy()
        if p.adjective:
            feat += _attribute_vector(p.adjective, cfg)
        feat += box_proj_obj @ p.box
        feat += rng.standard_normal(cfg.d_raw) * cfg.feature_noise
        objects.append(ObjectFeature(feature=feat, box=p.box, label_id=noun_index[p.noun]))

    tokens = []
    for i, p in enumerate(planned):
        for surface in (p.brand, p.price):
            if surface is None or len(tokens) >= cfg.token_cap:
                continue
            box = _clamp_box(p.box[0] + rng.uniform(-0.02, 0.02),
                             p.box[1] - 0.04 + rng.uniform(-0.02, 0.02),
                             p.box[2] * 0.8, 0.04)
            feat = _token_vector(surface, cfg) + box_proj_tok @ box
            feat += rng.standard_normal(cfg.d_raw) * cfg.feature_noise
            tokens.append(TextToken(feature=feat, surface=surface, box=box))

    refs = _reference_captions(rng, planned, cfg)

    scene = MultimodalScene(objects=objects, tokens=tokens,
                            scene_id=scene_id or f"scene-{seed:016x}")
    scene.validate(object_cap=cfg.object_cap, token_cap=cfg.token_cap)
    return scene, refs


def generate_dataset(seed: int, cfg: SceneConfig, count: int
                     ) -> tuple[SceneSet, ReferenceSet]:
    """A scene set and its separately-stored reference oracle."""
    if count < 1:
        raise DataError("scene count must be >= 1")
    scenes = []
    references = {}
    for i in range(count):
        scene_id = f"scene-{i:05d}"
        scene, refs = generate_scene(substream(seed, "scene", i), cfg, scene_id=scene_id)
        scenes.append(scene)
        references[scene_id] = refs
    return SceneSet(scenes=scenes, seed=seed), ReferenceSet(references=references, seed=seed)


# ---------------------------------------------------------------------------
# Line-delimited text exports for inspection

def export_scenes_jsonl(scene_set: SceneSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scene_set:
            record = {
                "scene_id": scene.scene_id,
                "objects": [{"label_id": o.label_id, "box": [round(v, 4) for v in o.box]}
                            for o in scene.objects],
                "tokens": [{"surface": t.surface, "box": [round(v, 4) for v in t.box]}
                           for t in scene.tokens],
            }
            fh.write(json.dumps(record) + "\n")


def export_corpus_text(corpus: SentenceCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            fh.write(sent.text + "\n")
