"""Core domain types: scenes, corpora, vocabularies and graphs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import np_rng

# Special vocabulary ids, fixed for every vocabulary.
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

NODE_RELATIONSHIP = "relationship"
NODE_ATTRIBUTE = "attribute"
NODE_TEXT = "text"
NODE_CONCEPT = "concept-object"
NODE_KINDS = (NODE_RELATIONSHIP, NODE_ATTRIBUTE, NODE_TEXT, NODE_CONCEPT)


class DataError(ValueError):
    """Invalid domain object or configuration."""


@dataclass
class ObjectFeature:
    """One detected-object stand-in: raw feature, normalized box, hidden concept id."""

    feature: np.ndarray  # (d_raw,)
    box: np.ndarray      # (4,) x, y, w, h in [0, 1]
    label_id: int

    def validate(self) -> None:
        if not np.all(np.isfinite(self.feature)):
            raise DataError("object feature must be finite")
        box = np.asarray(self.box, dtype=np.float64)
        if box.shape != (4,) or np.any(box < 0.0) or np.any(box > 1.0):
            raise DataError("box coordinates must be 4 reals in [0, 1]")
        if self.label_id < 0:
            raise DataError("label_id must be >= 0")


@dataclass
class TextToken:
    """One OCR-token stand-in with its surface string."""

    feature: np.ndarray  # (d_raw,)
    surface: str
    box: np.ndarray      # (4,)

    def validate(self) -> None:
        if not self.surface:
            raise DataError("token surface must be non-empty")
        if not np.all(np.isfinite(self.feature)):
            raise DataError("token feature must be finite")


@dataclass
class MultimodalScene:
    """A bag of object features plus OCR tokens standing in for a text-rich image."""

    objects: list[ObjectFeature]
    tokens: list[TextToken]
    scene_id: str

    def validate(self, object_cap: int | None = None, token_cap: int | None = None) -> None:
        if not self.objects:
            raise DataError(f"scene {self.scene_id}: needs at least one object")
        if object_cap is not None and len(self.objects) > object_cap:
            raise DataError(f"scene {self.scene_id}: {len(self.objects)} objects exceeds cap {object_cap}")
        if token_cap is not None and len(self.tokens) > token_cap:
            raise DataError(f"scene {self.scene_id}: {len(self.tokens)} tokens exceeds cap {token_cap}")
        for obj in self.objects:
            obj.validate()
        for tok in self.tokens:
            tok.validate()

    def box_centers(self) -> np.ndarray:
        boxes = np.stack([o.box for o in self.objects])
        return boxes[:, :2] + boxes[:, 2:] / 2.0


@dataclass(frozen=True)
class Sentence:
    """Token surfaces plus a mask marking copy-slot positions (out-of-vocabulary)."""

    surfaces: tuple[str, ...]
    copy_mask: tuple[bool, ...]

    def __post_init__(self):
        if len(self.surfaces) != len(self.copy_mask):
            raise DataError("surfaces and copy_mask must have equal length")
        if not self.surfaces:
            raise DataError("sentence must have at least one token")

    @property
    def text(self) -> str:
        return " ".join(self.surfaces)


@dataclass
class SentenceCorpus:
    sentences: list[Sentence]
    grammar_seed: int
    max_len: int = 20

    def validate(self) -> None:
        for sent in self.sentences:
            if not 1 <= len(sent.surfaces) <= self.max_len:
                raise DataError(f"sentence length {len(sent.surfaces)} outside [1, {self.max_len}]")

    def words(self) -> set[str]:
        """All non-copy surfaces; copy slots are never vocabulary members."""
        out: set[str] = set()
        for sent in self.sentences:
            for surf, is_copy in zip(sent.surfaces, sent.copy_mask):
                if not is_copy:
                    out.add(surf)
        return out


@dataclass
class Vocabulary:
    """Closed word list with special tokens and a seeded embedding table."""

    words: tuple[str, ...]       # index == id; first four entries are the specials
    embeddings: np.ndarray       # (len(words), embedding_dim) float64
    word_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.word_to_id:
            self.word_to_id = {w: i for i, w in enumerate(self.words)}

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def embedding_dim(self) -> int:
        return int(self.embeddings.shape[1])

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def validate(self) -> None:
        if len(self.word_to_id) != len(self.words):
            raise DataError("word ids must be bijective")
        if self.words[:4] != SPECIAL_TOKENS:
            raise DataError("specials must be the first four ids")
        if self.size <= 0 or self.embedding_dim <= 0:
            raise DataError("vocabulary size and embedding_dim must be positive")
        if self.embeddings.shape[0] != self.size:
            raise DataError("embedding table row count must match vocabulary size")


def build_vocabulary(corpus: SentenceCorpus, embedding_dim: int) -> Vocabulary:
    """Vocabulary over corpus words plus specials, ids assigned lexicographically.

    The embedding table is drawn from a stream keyed by the corpus grammar
    seed, so two builds of the same corpus agree bit for bit.
    """
    if not corpus.sentences:
        raise DataError("cannot build a vocabulary from an empty corpus")
    if embedding_dim <= 0:
        raise DataError("embedding_dim must be positive")
    words = SPECIAL_TOKENS + tuple(sorted(corpus.words()))
    rng = np_rng(corpus.grammar_seed, "vocab-embeddings", embedding_dim)
    table = rng.standard_normal((len(words), embedding_dim)) * 0.1
    table[PAD_ID] = 0.0
    vocab = Vocabulary(words=words, embeddings=table.astype(np.float64))
    vocab.validate()
    return vocab


@dataclass
class GraphNode:
    """Typed graph node; the embedding is filled by whichever encoder owns it.

    Image-side nodes carry computed embeddings. Sentence-side nodes carry the
    surface word and are embedded lazily by the sentence encoder.
    """

    kind: str
    embedding: object = None   # torch tensor (d,) on the image side, None on the sentence side
    weight: float = 1.0
    surface: str | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise DataError(f"unknown node kind {self.kind!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise DataError("node weight must lie in [0, 1]")


@dataclass
class MultimodalRelationalGraph:
    """Star graph around one selected central object."""

    central: object            # torch tensor (d,)
    nodes: list[GraphNode]
    central_index: int = -1

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)


@dataclass
class ConceptObject:
    """One sentence-side object with its attached word-level nodes."""

    noun: str
    determiner: str
    attributes: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    texts: tuple[str, ...] = ()

    def attached_nodes(self) -> list[GraphNode]:
        nodes = [GraphNode(NODE_ATTRIBUTE, surface=a) for a in self.attributes]
        nodes += [GraphNode(NODE_RELATIONSHIP, surface=r) for r in self.relations]
        nodes += [GraphNode(NODE_TEXT, surface=t) for t in self.texts]
        return nodes


@dataclass
class SceneGraph:
    """Sentence-side graph: concept objects with attached relation/attribute/text nodes."""

    objects: list[ConceptObject]

    def validate(self) -> None:
        if not self.objects:
            raise DataError("scene graph needs at least one concept object")


@dataclass
class SceneSet:
    """Training-visible scene collection. Holds no reference captions by design."""

    scenes: list[MultimodalScene]
    seed: int

    def __iter__(self):
        return iter(self.scenes)

    def __len__(self):
        return len(self.scenes)


@dataclass
class ReferenceSet:
    """Held-back pairing oracle: per-scene reference captions, evaluation only."""

    references: dict[str, list[str]]
    seed: int

    def for_scene(self, scene_id: str) -> list[str]:
        if scene_id not in self.references:
            raise DataError(f"no references recorded for scene {scene_id}")
        return self.references[scene_id]


@dataclass
class TrainingData:
    """Everything the unpaired trainer may see. Reference captions are not reachable here."""

    scenes: SceneSet
    corpus: SentenceCorpus
    vocabulary: Vocabulary
