"""Controlled caption grammar: generation, parsing and verbalization.

The grammar is small enough to parse deterministically with one token of
lookahead and unambiguous by construction, so every generated sentence maps
to exactly one scene graph and back.

Sentence form:
    NP [REL NP]
    NP := DET [ADJ] NOUN [("of" BRAND) | ("costs" PRICE)]

Brand and price surfaces are copy slots: they are never vocabulary members
and must be emitted through the pointer branch of the decoder. A price is
any token matching ``\\d+.\\d\\d``; the introducer ("of" vs "costs") is fully
determined by that shape, which keeps parse -> verbalize an exact inverse.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .data import ConceptObject, DataError, SceneGraph, Sentence, SentenceCorpus
from .rng import np_rng

DETERMINERS = ("a", "the")
PRICE_RE = re.compile(r"^\d+\.\d{2}$")

CLASS_SMALL = "small"
CLASS_SURFACE = "surface"
CLASS_PERSON = "person"
CLASS_FILLER = "filler"


class GrammarError(DataError):
    """Bad grammar configuration."""


class ParseError(DataError):
    """Sentence not derivable by the grammar."""

    def __init__(self, position: int, token: str, expected: str):
        self.position = position   # 1-based token position
        self.token = token
        self.expected = expected
        super().__init__(f"parse error at token {position} ({token!r}): expected {expected}")


@dataclass(frozen=True)
class Relation:
    word: str
    subject_class: str
    object_class: str


@dataclass
class GrammarConfig:
    """Inventories and template probabilities for the controlled grammar."""

    nouns: dict[str, tuple[str, ...]]        # class -> nouns; fillers never verbalized
    adjectives: dict[str, tuple[str, ...]]   # class -> adjectives
    relations: tuple[Relation, ...]
    brands: tuple[str, ...]
    prices: tuple[str, ...]
    max_len: int = 20
    p_attribute: float = 0.5
    p_relation: float = 0.55
    p_brand: float = 0.3
    p_price: float = 0.3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        speakable = [n for cls, ns in self.nouns.items() if cls != CLASS_FILLER for n in ns]
        if not speakable:
            raise GrammarError("grammar has no terminal production: no verbalizable nouns")
        if self.max_len < 2:
            raise GrammarError("max_len must allow at least a determiner and a noun")
        reserved = self.reserved_words()
        for brand in self.brands:
            if brand in reserved:
                raise GrammarError(f"brand {brand!r} collides with a grammar word")
            if PRICE_RE.match(brand):
                raise GrammarError(f"brand {brand!r} looks like a price")
        for price in self.prices:
            if not PRICE_RE.match(price):
                raise GrammarError(f"price {price!r} must match d+.dd")
        for rel in self.relations:
            for cls in (rel.subject_class, rel.object_class):
                if cls not in self.nouns or not self.nouns[cls]:
                    raise GrammarError(f"relation {rel.word!r} references empty class {cls!r}")

    def reserved_words(self) -> set[str]:
        words = set(DETERMINERS) | {"of", "costs"}
        for ns in self.nouns.values():
            words.update(ns)
        for adjs in self.adjectives.values():
            words.update(adjs)
        words.update(r.word for r in self.relations)
        return words

    def all_nouns(self) -> set[str]:
        return {n for ns in self.nouns.values() for n in ns}

    def all_adjectives(self) -> set[str]:
        return {a for adjs in self.adjectives.values() for a in adjs}

    def relation_words(self) -> set[str]:
        return {r.word for r in self.relations}

    def noun_class(self, noun: str) -> str:
        for cls, ns in self.nouns.items():
            if noun in ns:
                return cls
        raise GrammarError(f"unknown noun {noun!r}")

    def relations_for_subject(self, cls: str) -> list[Relation]:
        return [r for r in self.relations if r.subject_class == cls]


def default_grammar(price_seed: int = 0, n_prices: int = 40) -> GrammarConfig:
    """The stock desk-scale inventory: small objects on furniture, people, signage."""
    rng = np_rng(price_seed, "prices")
    prices = []
    seen = set()
    while len(prices) < n_prices:
        p = f"{int(rng.integers(1, 30))}.{int(rng.integers(0, 100)):02d}"
        if p not in seen:
            seen.add(p)
            prices.append(p)
    return GrammarConfig(
        nouns={
            CLASS_SMALL: ("can", "bottle", "cup", "phone", "book", "box", "jar", "mug"),
            CLASS_SURFACE: ("desk", "table", "shelf", "counter"),
            CLASS_PERSON: ("lady", "man"),
            CLASS_FILLER: ("wall", "floor", "window", "curtain"),
        },
        adjectives={
            CLASS_SMALL: ("red", "green", "blue", "black", "white", "small", "big", "shiny"),
            CLASS_SURFACE: ("wooden", "metal", "round", "gray"),
            CLASS_PERSON: ("tall", "young"),
            CLASS_FILLER: (),
        },
        relations=(
            Relation("on", CLASS_SMALL, CLASS_SURFACE),
            Relation("above", CLASS_SMALL, CLASS_SURFACE),
            Relation("beside", CLASS_SMALL, CLASS_SMALL),
            Relation("holding", CLASS_PERSON, CLASS_SMALL),
            Relation("near", CLASS_PERSON, CLASS_SURFACE),
        ),
        brands=("monster", "sprite", "fanta", "dew", "cola", "oreo", "lays", "koko"),
        prices=tuple(prices),
    )


def is_price(surface: str) -> bool:
    return bool(PRICE_RE.match(surface))


# ---------------------------------------------------------------------------
# Parsing

class _Cursor:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.pos = 0   # 0-based internally; errors report 1-based

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: str):
        tok = self.peek()
        raise ParseError(self.pos + 1, tok if tok is not None else "<end>", expected)


def _parse_np(cur: _Cursor, grammar: GrammarConfig) -> ConceptObject:
    tok = cur.peek()
    if tok not in DETERMINERS:
        cur.fail("a determiner")
    determiner = cur.take()

    attributes: tuple[str, ...] = ()
    tok = cur.peek()
    if tok in grammar.all_adjectives():
        attributes = (cur.take(),)

    tok = cur.peek()
    if tok is None or tok not in grammar.all_nouns():
        cur.fail("a noun")
    noun = cur.take()

    texts: tuple[str, ...] = ()
    tok = cur.peek()
    if tok in ("of", "costs"):
        intro = cur.take()
        surf = cur.peek()
        if surf is None or surf in grammar.reserved_words():
            cur.fail("a copy surface")
        # introducer must match the surface shape, or round-trips would flip it
        if intro == "costs" and not is_price(surf):
            cur.fail("a price after 'costs'")
        if intro == "of" and is_price(surf):
            cur.fail("a non-price surface after 'of'")
        texts = (cur.take(),)

    return ConceptObject(noun=noun, determiner=determiner, attributes=attributes, texts=texts)


def parse_scene_graph(tokens, grammar: GrammarConfig) -> SceneGraph:
    """Parse one sentence of the controlled grammar into its scene graph.

    The relation word attaches to the subject (first) concept object,
    mirroring the image-side star topology.
    """
    cur = _Cursor(tokens)
    if cur.peek() is None:
        raise ParseError(1, "<end>", "a determiner")
    subject = _parse_np(cur, grammar)
    objects = [subject]
    if cur.peek() is not None:
        tok = cur.peek()
        if tok not in grammar.relation_words():
            cur.fail("a relation word or end of sentence")
        rel = cur.take()
        tail = _parse_np(cur, grammar)
        subject.relations = (rel,)
        objects.append(tail)
    if cur.peek() is not None:
        cur.fail("end of sentence")
    graph = SceneGraph(objects=objects)
    graph.validate()
    return graph


def verbalize(graph: SceneGraph, grammar: GrammarConfig) -> tuple[str, ...]:
    """Template inverse of parse_scene_graph: regenerate the token sequence."""
    if not 1 <= len(graph.objects) <= 2:
        raise GrammarError("verbalize expects one or two concept objects")

    def render_np(obj: ConceptObject) -> list[str]:
        out = [obj.determiner]
        out.extend(obj.attributes)
        out.append(obj.noun)
        for text in obj.texts:
            out.append("costs" if is_price(text) else "of")
            out.append(text)
        return out

    subject = graph.objects[0]
    tokens = render_np(subject)
    if len(graph.objects) == 2:
        if not subject.relations:
            raise GrammarError("two-object graph needs a relation on the subject")
        tokens.append(subject.relations[0])
        tokens.extend(render_np(graph.objects[1]))
    elif subject.relations:
        raise GrammarError("dangling relation with no second object")
    return tuple(tokens)


def sentence_copy_mask(surfaces, grammar: GrammarConfig) -> tuple[bool, ...]:
    """Copy positions are exactly the tokens following 'of' or 'costs'."""
    mask = [False] * len(surfaces)
    for i, tok in enumerate(surfaces):
        if i > 0 and surfaces[i - 1] in ("of", "costs"):
            mask[i] = True
    return tuple(mask)


# ---------------------------------------------------------------------------
# Sentence sampling

def sample_concept(rng: np.random.Generator, grammar: GrammarConfig, cls: str) -> str:
    ns = grammar.nouns[cls]
    return ns[int(rng.integers(0, len(ns)))]


def _maybe_attribute(rng, grammar: GrammarConfig, cls: str) -> tuple[str, ...]:
    adjs = grammar.adjectives.get(cls, ())
    if adjs and rng.random() < grammar.p_attribute:
        return (adjs[int(rng.integers(0, len(adjs)))],)
    return ()


def sample_sentence(rng: np.random.Generator, grammar: GrammarConfig) -> Sentence:
    """Draw one sentence; all choices come from the supplied rng stream."""
    speakable = [c for c in (CLASS_SMALL, CLASS_PERSON, CLASS_SURFACE)
                 if grammar.nouns.get(c)]
    weights = {CLASS_SMALL: 0.65, CLASS_PERSON: 0.2, CLASS_SURFACE: 0.15}
    probs = np.array([weights.get(c, 0.1) for c in speakable])
    probs /= probs.sum()
    cls = speakable[int(rng.choice(len(speakable), p=probs))]

    subject = ConceptObject(
        noun=sample_concept(rng, grammar, cls),
        determiner="a",
        attributes=_maybe_attribute(rng, grammar, cls),
    )
    objects = [subject]

    # price form excludes a relation and uses "the"; brand form allows one
    roll = rng.random()
    if cls == CLASS_SMALL and grammar.prices and roll < grammar.p_price:
        subject.texts = (grammar.prices[int(rng.integers(0, len(grammar.prices)))],)
        subject.determiner = "the"
        return _finish(objects, grammar)
    if cls == CLASS_SMALL and grammar.brands and roll < grammar.p_price + grammar.p_brand:
        subject.texts = (grammar.brands[int(rng.integers(0, len(grammar.brands)))],)

    candidates = grammar.relations_for_subject(cls)
    if candidates and rng.random() < grammar.p_relation:
        rel = candidates[int(rng.integers(0, len(candidates)))]
        if rel.subject_class == rel.object_class:
            # canonical order within a class keeps the flat graph encoding injective
            ns = grammar.nouns[rel.object_class]
            idx = ns.index(subject.noun)
            later = ns[idx + 1:]
            if not later:
                return _finish(objects, grammar)
            tail_noun = later[int(rng.integers(0, len(later)))]
        else:
            tail_noun = sample_concept(rng, grammar, rel.object_class)
        subject.relations = (rel.word,)
        objects.append(ConceptObject(noun=tail_noun, determiner="a"))
    return _finish(objects, grammar)


def _finish(objects, grammar: GrammarConfig) -> Sentence:
    surfaces = verbalize(SceneGraph(objects=objects), grammar)
    return Sentence(surfaces=surfaces, copy_mask=sentence_copy_mask(surfaces, grammar))


def generate_sentence_corpus(seed: int, grammar: GrammarConfig, count: int = 1000) -> SentenceCorpus:
    """Seeded corpus of grammar sentences, rejecting any draw over max_len.

    Rejection (rather than mid-sentence truncation) keeps every stored
    sentence parseable, which downstream training assumes.
    """
    if count < 1:
        raise GrammarError("corpus count must be >= 1")
    rng = np_rng(seed, "corpus")
    sentences = []
    while len(sentences) < count:
        sent = sample_sentence(rng, grammar)
        if len(sent.surfaces) <= grammar.max_len:
            sentences.append(sent)
    corpus = SentenceCorpus(sentences=sentences, grammar_seed=seed, max_len=grammar.max_len)
    corpus.validate()
    return corpus
