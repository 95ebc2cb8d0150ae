"""Captioning and diversity metrics.

Tokenization convention (shared with the test oracles): lowercase, split on
whitespace, strip punctuation only at token edges so interior characters
survive (a price like "17.88" keeps its dot, "desk." loses its period).

All metrics are pure functions of their token-sequence inputs and invariant
to caption order within a set.
"""
from __future__ import annotations

import json
import math
import string
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

_EDGE_CHARS = string.punctuation


class MetricError(ValueError):
    """Invalid metric input."""


def tokenize(text: str) -> tuple[str, ...]:
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_CHARS)
        if tok:
            out.append(tok)
    return tuple(out)


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU

def bleu(candidate, references, max_n: int = 4) -> float:
    """Sentence BLEU: clipped n-gram precision geometric mean times brevity penalty.

    No smoothing: any zero precision zeroes the score. Orders longer than the
    candidate are excluded from the geometric mean. The brevity penalty uses
    the reference length closest to the candidate's, ties resolved toward
    the shorter reference.
    """
    candidate = tuple(candidate)
    references = [tuple(r) for r in references]
    if not candidate:
        raise MetricError("empty candidate")
    if not references or any(not r for r in references):
        raise MetricError("empty reference")

    log_precisions = []
    for n in range(1, min(max_n, len(candidate)) + 1):
        cand = ngram_counts(candidate, n)
        total = sum(cand.values())
        clipped = 0
        for gram, count in cand.items():
            best = max(ngram_counts(r, n).get(gram, 0) for r in references)
            clipped += min(count, best)
        if clipped == 0:
            return 0.0
        log_precisions.append(math.log(clipped / total))

    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(sum(log_precisions) / len(log_precisions))


# ---------------------------------------------------------------------------
# CIDEr-D

class CiderScorer:
    """Corpus TF-IDF n-gram scorer with clipping and a Gaussian length penalty.

    Document frequency counts, per n-gram, the number of images whose
    reference set contains it; similarity per order n is
    sum(min(c_g, r_g) * r_g) / (|c| |r|), each order damped by
    exp(-(len_c - len_r)^2 / (2 sigma^2)), averaged over orders and
    references and scaled by 10.
    """

    def __init__(self, references_by_image: dict, n: int = 4, sigma: float = 6.0):
        if not references_by_image:
            raise MetricError("empty reference corpus")
        self.n = n
        self.sigma = sigma
        self.images = sorted(references_by_image)
        if len(self.images) < 2:
            warnings.warn("CIDEr IDF degenerates with fewer than 2 images", stacklevel=2)
        self.doc_freq: Counter = Counter()
        for image in self.images:
            seen = set()
            for ref in references_by_image[image]:
                for order in range(1, n + 1):
                    seen.update(ngram_counts(ref, order))
            self.doc_freq.update(seen)
        self.log_images = math.log(len(self.images))
        self._ref_vectors = {
            image: [self._vector(ref) for ref in references_by_image[image]]
            for image in self.images
        }

    def _vector(self, tokens):
        tokens = tuple(tokens)
        vec = [dict() for _ in range(self.n)]
        norm = [0.0] * self.n
        for order in range(1, self.n + 1):
            for gram, count in ngram_counts(tokens, order).items():
                idf = self.log_images - math.log(max(1.0, self.doc_freq.get(gram, 0)))
                value = count * idf
                vec[order - 1][gram] = value
                norm[order - 1] += value * value
        return vec, [math.sqrt(v) for v in norm], len(tokens)

    def _similarity(self, cand, ref) -> float:
        vec_c, norm_c, len_c = cand
        vec_r, norm_r, len_r = ref
        penalty = math.exp(-((len_c - len_r) ** 2) / (2.0 * self.sigma ** 2))
        total = 0.0
        for order in range(self.n):
            if norm_c[order] == 0.0 or norm_r[order] == 0.0:
                continue
            dot = sum(min(value, vec_r[order].get(gram, 0.0)) * vec_r[order].get(gram, 0.0)
                      for gram, value in vec_c[order].items())
            total += dot / (norm_c[order] * norm_r[order]) * penalty
        return total / self.n

    def score(self, candidate_tokens, image: str) -> float:
        """Per-image CIDEr-D of one candidate against that image's references."""
        if image not in self._ref_vectors:
            raise MetricError(f"image {image!r} not in the reference corpus")
        cand = self._vector(candidate_tokens)
        refs = self._ref_vectors[image]
        return 10.0 * sum(self._similarity(cand, r) for r in refs) / len(refs)


def cider(candidates_by_image: dict, references_by_image: dict,
          n: int = 4, sigma: float = 6.0) -> float:
    """Corpus-mean CIDEr-D of one candidate per image."""
    scorer = CiderScorer(references_by_image, n=n, sigma=sigma)
    missing = sorted(set(references_by_image) - set(candidates_by_image))
    if missing:
        raise MetricError(f"candidates missing for images: {missing}")
    return sum(scorer.score(candidates_by_image[img], img)
               for img in scorer.images) / len(scorer.images)


# ---------------------------------------------------------------------------
# Diversity metrics

def div_n(captions, n: int) -> float:
    """Unique n-grams across the caption set over the total word count."""
    captions = [tuple(c) for c in captions]
    total_words = sum(len(c) for c in captions)
    if not captions or total_words == 0:
        raise MetricError("caption set has no words")
    unique = set()
    for cap in captions:
        unique.update(ngram_counts(cap, n))
    return len(unique) / total_words


def re_4(captions) -> float:
    """Repeated 4-gram mass within captions, averaged over captions that have 4-grams."""
    ratios = []
    for cap in captions:
        counts = ngram_counts(tuple(cap), 4)
        total = sum(counts.values())
        if total == 0:
            continue
        repeated = sum(c - 1 for c in counts.values() if c > 1)
        ratios.append(repeated / total)
    if not ratios:
        return 0.0
    return sum(ratios) / len(ratios)


def _pair_similarity(a, b, sigma: float) -> float:
    """TF n-gram cosine averaged over orders both captions support, length-damped.

    IDF is deliberately omitted: document frequencies inside one caption set
    degenerate exactly on the identical-caption case the kernel must resolve.
    """
    a, b = tuple(a), tuple(b)
    n_eff = min(4, len(a), len(b))
    if n_eff == 0:
        return 0.0
    penalty = math.exp(-((len(a) - len(b)) ** 2) / (2.0 * sigma ** 2))
    total = 0.0
    for order in range(1, n_eff + 1):
        ca, cb = ngram_counts(a, order), ngram_counts(b, order)
        dot = sum(v * cb.get(g, 0) for g, v in ca.items())
        na = math.sqrt(sum(v * v for v in ca.values()))
        nb = math.sqrt(sum(v * v for v in cb.values()))
        total += dot / (na * nb) * penalty
    return total / n_eff


def self_cider(captions, sigma: float = 6.0) -> float:
    """Eigenvalue-spread diversity of the pairwise-similarity kernel.

    score = (sum_i sqrt(l_i) / sqrt(l_max) - 1) / (m - 1) over the kernel's
    (clamped) eigenvalues; 0 for m identical captions, 1 for m mutually
    dissimilar ones.
    """
    captions = [tuple(c) for c in captions]
    m = len(captions)
    if m < 2:
        raise MetricError("self_cider needs at least two captions")
    kernel = np.ones((m, m), dtype=np.float64)
    for i in range(m):
        for j in range(i + 1, m):
            kernel[i, j] = kernel[j, i] = _pair_similarity(captions[i], captions[j], sigma)
    eigenvalues = np.clip(np.linalg.eigvalsh(kernel), 0.0, None)
    top = float(eigenvalues.max())
    if top == 0.0:
        return 0.0
    # rank-deficient kernels must score exactly zero despite eig roundoff
    eigenvalues[eigenvalues < top * 1e-12] = 0.0
    ratio = float(np.sqrt(eigenvalues).sum() / math.sqrt(top))
    return float(np.clip((ratio - 1.0) / (m - 1), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Evaluation protocol

@dataclass
class EvaluationReport:
    """Per-run scores with per-image breakdown and config/seed provenance."""

    scores: dict[str, float]
    per_image: dict[str, dict[str, float]]
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name, value in self.scores.items():
            if not math.isfinite(value):
                raise MetricError(f"score {name} is not finite")
        for name in ("bleu", "div_1", "div_2", "re_4", "self_cider"):
            if name in self.scores and not -1e-12 <= self.scores[name] <= 1 + 1e-12:
                raise MetricError(f"score {name}={self.scores[name]} outside [0, 1]")
        if self.scores.get("cider", 0.0) < 0.0:
            raise MetricError("cider must be nonnegative")

    def to_json(self) -> str:
        return json.dumps({"scores": self.scores, "per_image": self.per_image,
                           "provenance": self.provenance}, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = ["metric        value", "------        -----"]
        for name in sorted(self.scores):
            lines.append(f"{name:<13} {self.scores[name]:.4f}")
        return "\n".join(lines) + "\n"


def evaluate_run(predictions: dict[str, list[str]], references: dict[str, list[str]],
                 n_pool: int | None = None, sigma: float = 6.0,
                 provenance: dict | None = None) -> EvaluationReport:
    """Score a full generation run against the held-back references.

    Captioning metrics (BLEU, CIDEr) take the best of each image's candidate
    set; diversity metrics use the whole set. Empty candidates score zero
    rather than erroring, so degenerate models stay measurable.
    """
    missing = sorted(set(references) - set(predictions))
    if missing:
        raise MetricError(f"predictions missing for images: {missing}")
    for image, caps in predictions.items():
        if image in references and not caps:
            raise MetricError(f"image {image} has no candidate captions")
        if n_pool is not None and image in references and len(caps) != n_pool:
            raise MetricError(f"image {image} has {len(caps)} captions, expected {n_pool}")

    images = sorted(references)
    ref_tokens = {img: [tokenize(r) for r in references[img]] for img in images}
    cand_tokens = {img: [tokenize(c) for c in predictions[img]] for img in images}
    scorer = CiderScorer(ref_tokens, sigma=sigma)

    per_image: dict[str, dict[str, float]] = {}
    for img in images:
        cands = cand_tokens[img]
        nonempty = [c for c in cands if c]
        bleu_best = max((bleu(c, ref_tokens[img]) for c in nonempty), default=0.0)
        cider_best = max((scorer.score(c, img) for c in nonempty), default=0.0)
        entry = {
            "bleu": bleu_best,
            "cider": cider_best,
            "div_1": div_n(nonempty, 1) if nonempty else 0.0,
            "div_2": div_n(nonempty, 2) if nonempty else 0.0,
            "re_4": re_4(nonempty),
            "self_cider": self_cider(nonempty, sigma) if len(nonempty) >= 2 else 0.0,
        }
        per_image[img] = entry

    scores = {key: sum(per_image[img][key] for img in images) / len(images)
              for key in ("bleu", "cider", "div_1", "div_2", "re_4", "self_cider")}
    report = EvaluationReport(scores=scores, per_image=per_image,
                              provenance=provenance or {})
    report.validate()
    return report


def read_predictions_jsonl(path) -> dict[str, list[str]]:
    """Line-delimited {image id, caption index, text} records."""
    by_image: dict[str, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            by_image.setdefault(record["scene_id"], []).append(
                (int(record["index"]), record["text"]))
    return {image: [text for _, text in sorted(entries)]
            for image, entries in by_image.items()}
