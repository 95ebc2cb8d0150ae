"""Sentence auto-encoder: scene-graph encoding and copy-capable decoding.

Sentences are parsed into scene graphs, pooled into a single vector with an
independent graph convolution, then reconstructed by a gated recurrent
decoder whose every step chooses between the fixed vocabulary and a dynamic
set of copy candidates scored by a bilinear pointer head. The pointer is how
out-of-vocabulary surfaces (prices, brands) are emitted verbatim.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import (BOS_ID, EOS_ID, UNK_ID, DataError, MultimodalScene,
                   SceneGraph, Sentence, SentenceCorpus, Vocabulary)
from .grammar import GrammarConfig, parse_scene_graph
from .nets import DTYPE, Dense, LstmCell, ModelDims, make_param, reset_children, uniform_init_
from .rng import np_rng, string_vector, torch_generator


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class CopyCandidateSet:
    """Ordered copy surfaces with their fixed embeddings.

    Candidate embeddings come from the deterministic surface embedder in both
    pretraining and inference, so the frozen pointer head sees the same
    distribution either way.
    """

    surfaces: tuple[str, ...]
    embeddings: torch.Tensor   # (C, d)

    @classmethod
    def from_surfaces(cls, surfaces, d: int) -> "CopyCandidateSet":
        uniq = list(dict.fromkeys(surfaces))
        if uniq:
            emb = torch.from_numpy(np.stack([string_vector(s, d) for s in uniq]))
        else:
            emb = torch.zeros(0, d, dtype=DTYPE)
        return cls(surfaces=tuple(uniq), embeddings=emb)

    @classmethod
    def from_sentence(cls, sentence: Sentence, d: int) -> "CopyCandidateSet":
        return cls.from_surfaces(
            [s for s, c in zip(sentence.surfaces, sentence.copy_mask) if c], d)

    @classmethod
    def from_scene(cls, scene: MultimodalScene, d: int) -> "CopyCandidateSet":
        return cls.from_surfaces([t.surface for t in scene.tokens], d)

    def index_of(self, surface: str) -> int:
        try:
            return self.surfaces.index(surface)
        except ValueError:
            raise DataError(f"surface {surface!r} not among copy candidates") from None

    def __len__(self):
        return len(self.surfaces)


@dataclass
class DecodedSentence:
    """Decoder output: offset-coded tokens (id >= vocab size means copy index)."""

    token_ids: list[int]
    surfaces: list[str]
    ended: bool            # True when the end token was produced before the cap
    vocab_size: int

    @property
    def text(self) -> str:
        return " ".join(self.surfaces)

    def copy_positions(self) -> list[int]:
        return [i for i, t in enumerate(self.token_ids) if t >= self.vocab_size]


def sentence_nll_from_logits(logits: torch.Tensor, targets: torch.Tensor,
                             mask: torch.Tensor) -> torch.Tensor:
    """Sum of -log P(target) over unmasked positions, softmax over the last axis.

    logits (B, T, V+C), targets (B, T) long, mask (B, T) {0,1}. The returned
    vector has one nonnegative entry per batch row.
    """
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum(dim=1)


class SentenceAutoEncoder(nn.Module):
    """Graph encoder plus decoder; the whole bundle freezes after pretraining."""

    def __init__(self, vocab: Vocabulary, dims: ModelDims, seed: int = 0):
        super().__init__()
        if vocab.embedding_dim != dims.d:
            raise DataError(f"vocabulary embedding dim {vocab.embedding_dim} "
                            f"must equal model width {dims.d}")
        self.vocab = vocab
        self.dims = dims
        d, e = dims.d, dims.e
        self.embed = make_param(vocab.size, d)
        self.graph_self = make_param(e, d)   # concept-object projection
        self.graph_node = make_param(e, d)   # attached-node projection
        self.cell = LstmCell(d + e, d)
        self.vocab_head = Dense(d, vocab.size)
        self.pointer = make_param(d, d)      # bilinear(hidden, candidate)
        self.pointer_bias = make_param(1)

        gen = torch_generator(seed, "init", "autoencoder")
        reset_children(self, gen)
        uniform_init_(self.graph_self, d, gen)
        uniform_init_(self.graph_node, d, gen)
        uniform_init_(self.pointer, d, gen)
        with torch.no_grad():
            self.pointer_bias.zero_()
            self.embed.copy_(torch.from_numpy(vocab.embeddings))
        self._surface_cache: dict[str, torch.Tensor] = {}

    # -- embeddings ------------------------------------------------------------

    def surface_embedding(self, surface: str) -> torch.Tensor:
        if surface not in self._surface_cache:
            self._surface_cache[surface] = torch.from_numpy(
                string_vector(surface, self.dims.d))
        return self._surface_cache[surface]

    def word_embedding(self, word: str) -> torch.Tensor:
        return self.embed[self.vocab.id_of(word)]

    def embed_token_sequence(self, sentence: Sentence) -> torch.Tensor:
        """(T, d) rows: vocabulary embeddings, surface embeddings at copy slots."""
        rows = []
        for surf, is_copy in zip(sentence.surfaces, sentence.copy_mask):
            rows.append(self.surface_embedding(surf) if is_copy
                        else self.word_embedding(surf))
        return torch.stack(rows)

    # -- scene-graph encoding -----------------------------------------------------

    def encode_scene_graph(self, graph: SceneGraph) -> torch.Tensor:
        """relu of the summed object and attachment projections, averaged over objects."""
        if not graph.objects:
            raise DataError("cannot encode an empty scene graph")
        total = torch.zeros(self.dims.e, dtype=DTYPE)
        for obj in graph.objects:
            total = total + self.graph_self @ self.word_embedding(obj.noun)
            for node in obj.attached_nodes():
                vec = (self.surface_embedding(node.surface) if node.kind == "text"
                       else self.word_embedding(node.surface))
                total = total + self.graph_node @ vec
        return torch.relu(total) / len(graph.objects)

    def encode_graphs(self, graphs: list[SceneGraph]) -> torch.Tensor:
        return torch.stack([self.encode_scene_graph(g) for g in graphs])

    # -- decoding -------------------------------------------------------------

    def decode_step(self, state, g: torch.Tensor, candidates: CopyCandidateSet,
                    prev_embedding: torch.Tensor | None = None):
        """One decoder step conditioned on the graph embedding at every step.

        Returns (next_state, vocab_scores, copy_scores); the greedy token is
        the argmax over their concatenation.
        """
        if prev_embedding is None:
            prev_embedding = self.embed[BOS_ID]
        x = torch.cat([prev_embedding, g]).unsqueeze(0)
        if state is None:
            state = self.cell.initial_state(1)
        h, c = self.cell(x, state)
        vocab_scores = self.vocab_head(h).squeeze(0)
        if len(candidates):
            copy_scores = (h @ self.pointer @ candidates.embeddings.T).squeeze(0) \
                + self.pointer_bias
        else:
            copy_scores = torch.zeros(0, dtype=DTYPE)
        return (h, c), vocab_scores, copy_scores

    def _batched_logits(self, g: torch.Tensor, cand_emb: torch.Tensor,
                        cand_mask: torch.Tensor, prev_emb: torch.Tensor, state):
        """Shared step math for the batched paths. cand_mask is 1 at real candidates."""
        x = torch.cat([prev_emb, g], dim=1)
        h, c = self.cell(x, state)
        vocab_scores = self.vocab_head(h)
        if cand_emb.shape[1]:
            copy = torch.bmm(cand_emb, (h @ self.pointer).unsqueeze(-1)).squeeze(-1)
            copy = copy + self.pointer_bias
            copy = copy.masked_fill(cand_mask == 0, -1e30)
            logits = torch.cat([vocab_scores, copy], dim=1)
        else:
            logits = vocab_scores
        return (h, c), logits

    def resolve_target(self, sentence: Sentence, candidates: CopyCandidateSet) -> list[int]:
        """Offset-coded target ids; copy tokens index past the vocabulary."""
        ids = []
        for surf, is_copy in zip(sentence.surfaces, sentence.copy_mask):
            if is_copy:
                ids.append(self.vocab.size + candidates.index_of(surf))
            else:
                wid = self.vocab.id_of(surf)
                if wid == UNK_ID and surf != self.vocab.words[UNK_ID]:
                    raise DataError(f"token {surf!r} missing from vocabulary "
                                    "and not marked as a copy slot")
                ids.append(wid)
        return ids

    def caption_nll(self, g: torch.Tensor, candidates: CopyCandidateSet,
                    target: Sentence) -> torch.Tensor:
        """Teacher-forced reconstruction loss; the end token is the final scored position."""
        ids = self.resolve_target(target, candidates)
        batch = _DecodeBatch.build(self, [ids], [candidates], [g])
        return self._teacher_forced_nll(batch)[0]

    def _teacher_forced_nll(self, batch: "_DecodeBatch") -> torch.Tensor:
        state = self.cell.initial_state(batch.size)
        losses = []
        logits_per_step = []
        for t in range(batch.steps):
            state, logits = self._batched_logits(batch.g, batch.cand_emb,
                                                 batch.cand_mask,
                                                 batch.inputs[:, t, :], state)
            logits_per_step.append(logits)
        logits = torch.stack(logits_per_step, dim=1)
        if logits.shape[-1] < batch.targets.max() + 1:
            raise DataError("target id outside the available score range")
        return sentence_nll_from_logits(logits, batch.targets, batch.mask)

    def greedy_decode(self, g: torch.Tensor, candidates: CopyCandidateSet,
                      max_len: int | None = None) -> DecodedSentence:
        return self.greedy_decode_batch(g.unsqueeze(0), [candidates], max_len)[0]

    def greedy_decode_batch(self, g: torch.Tensor, candidates: list[CopyCandidateSet],
                            max_len: int | None = None) -> list[DecodedSentence]:
        """Argmax decoding until the end token or the length cap."""
        max_len = self.dims.max_len if max_len is None else max_len
        size = g.shape[0]
        cand_emb, cand_mask = _pad_candidates(candidates, self.dims.d)
        state = self.cell.initial_state(size)
        prev = self.embed[BOS_ID].expand(size, -1)
        done = torch.zeros(size, dtype=torch.bool)
        ids_out: list[list[int]] = [[] for _ in range(size)]
        with torch.no_grad():
            for _ in range(max_len):
                state, logits = self._batched_logits(g, cand_emb, cand_mask, prev, state)
                picked = logits.argmax(dim=1)
                next_prev = prev.clone()
                for b in range(size):
                    if done[b]:
                        continue
                    tid = int(picked[b])
                    if tid == EOS_ID:
                        done[b] = True
                        continue
                    ids_out[b].append(tid)
                    if tid < self.vocab.size:
                        next_prev[b] = self.embed[tid]
                    else:
                        next_prev[b] = cand_emb[b, tid - self.vocab.size]
                prev = next_prev
                if bool(done.all()):
                    break
        out = []
        for b in range(size):
            surfaces = [self.vocab.words[t] if t < self.vocab.size
                        else candidates[b].surfaces[t - self.vocab.size]
                        for t in ids_out[b]]
            out.append(DecodedSentence(token_ids=ids_out[b], surfaces=surfaces,
                                       ended=bool(done[b]), vocab_size=self.vocab.size))
        return out

    def soft_decode(self, g: torch.Tensor, candidates: list[CopyCandidateSet],
                    max_len: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Differentiable decode: each step emits the probability-weighted embedding.

        Greedy argmax still decides the stopping point; gradients flow through
        the embedding mixtures, which also feed back as the next input.
        """
        size = g.shape[0]
        cand_emb, cand_mask = _pad_candidates(candidates, self.dims.d)
        state = self.cell.initial_state(size)
        prev = self.embed[BOS_ID].expand(size, -1)
        lengths = torch.zeros(size, dtype=torch.long)
        done = torch.zeros(size, dtype=torch.bool)
        mixtures = []
        for _ in range(max_len):
            state, logits = self._batched_logits(g, cand_emb, cand_mask, prev, state)
            probs = torch.softmax(logits, dim=1)
            mix = probs[:, :self.vocab.size] @ self.embed
            if cand_emb.shape[1]:
                mix = mix + torch.bmm(probs[:, self.vocab.size:].unsqueeze(1),
                                      cand_emb).squeeze(1)
            mixtures.append(mix)
            picked = logits.argmax(dim=1)
            ends_now = (picked == EOS_ID) & ~done
            # a sentence must keep at least its first step
            still_open = ~done & ~(ends_now & (lengths > 0))
            lengths = lengths + still_open.long()
            done = done | ends_now
            prev = mix
            if bool(done.all()):
                break
        lengths = torch.clamp(lengths, min=1)
        return torch.stack(mixtures, dim=1), lengths


@dataclass
class _DecodeBatch:
    """Padded teacher-forcing batch."""

    g: torch.Tensor          # (B, e)
    inputs: torch.Tensor     # (B, T, d) previous-token embeddings, starting at BOS
    targets: torch.Tensor    # (B, T) long, EOS appended, PAD after
    mask: torch.Tensor       # (B, T)
    cand_emb: torch.Tensor   # (B, C, d)
    cand_mask: torch.Tensor  # (B, C)
    size: int = field(init=False)
    steps: int = field(init=False)

    def __post_init__(self):
        self.size, self.steps = self.targets.shape

    @classmethod
    def build(cls, model: SentenceAutoEncoder, id_seqs: list[list[int]],
              candidates: list[CopyCandidateSet], gs) -> "_DecodeBatch":
        size = len(id_seqs)
        steps = max(len(ids) for ids in id_seqs) + 1   # closing end token
        d = model.dims.d
        v = model.vocab.size
        cand_emb, cand_mask = _pad_candidates(candidates, d)
        inputs = torch.zeros(size, steps, d, dtype=DTYPE)
        targets = torch.zeros(size, steps, dtype=torch.long)
        mask = torch.zeros(size, steps, dtype=DTYPE)
        for b, ids in enumerate(id_seqs):
            prev = [model.embed[BOS_ID]]
            for t in ids:
                prev.append(model.embed[t] if t < v else cand_emb[b, t - v])
            inputs[b, :len(prev), :] = torch.stack(prev)
            targets[b, :len(ids)] = torch.tensor(ids, dtype=torch.long)
            targets[b, len(ids)] = EOS_ID
            mask[b, :len(ids) + 1] = 1.0
        g = gs if isinstance(gs, torch.Tensor) else torch.stack(list(gs))
        return cls(g=g, inputs=inputs, targets=targets, mask=mask,
                   cand_emb=cand_emb, cand_mask=cand_mask)


def _pad_candidates(candidates: list[CopyCandidateSet], d: int):
    c_max = max((len(c) for c in candidates), default=0)
    size = len(candidates)
    emb = torch.zeros(size, c_max, d, dtype=DTYPE)
    mask = torch.zeros(size, c_max, dtype=DTYPE)
    for b, cand in enumerate(candidates):
        if len(cand):
            emb[b, :len(cand), :] = cand.embeddings
            mask[b, :len(cand)] = 1.0
    return emb, mask


# ---------------------------------------------------------------------------
# Pretraining

@dataclass
class PretrainResult:
    model: SentenceAutoEncoder
    curve: list[dict]          # per-epoch {epoch, loss, exact_match}
    exact_match: float
    epochs_run: int


def reconstruction_exact_match(model: SentenceAutoEncoder, corpus: SentenceCorpus,
                               grammar: GrammarConfig,
                               indices: list[int] | None = None) -> float:
    """Fraction of sentences reproduced token for token by greedy decoding."""
    sentences = corpus.sentences if indices is None \
        else [corpus.sentences[i] for i in indices]
    graphs = [parse_scene_graph(s.surfaces, grammar) for s in sentences]
    cands = [CopyCandidateSet.from_sentence(s, model.dims.d) for s in sentences]
    with torch.no_grad():
        g = model.encode_graphs(graphs)
        decoded = model.greedy_decode_batch(g, cands)
    hits = sum(tuple(dec.surfaces) == sent.surfaces
               for dec, sent in zip(decoded, sentences))
    return hits / len(sentences)


def pointer_usage(model: SentenceAutoEncoder, corpus: SentenceCorpus,
                  grammar: GrammarConfig) -> float:
    """Share of copy-slot target positions emitted through the pointer branch."""
    sentences = [s for s in corpus.sentences if any(s.copy_mask)]
    if not sentences:
        return 1.0
    graphs = [parse_scene_graph(s.surfaces, grammar) for s in sentences]
    cands = [CopyCandidateSet.from_sentence(s, model.dims.d) for s in sentences]
    with torch.no_grad():
        g = model.encode_graphs(graphs)
        decoded = model.greedy_decode_batch(g, cands)
    total = hit = 0
    for dec, sent in zip(decoded, sentences):
        for pos, is_copy in enumerate(sent.copy_mask):
            if not is_copy:
                continue
            total += 1
            if pos < len(dec.token_ids) and dec.token_ids[pos] >= model.vocab.size \
                    and dec.surfaces[pos] == sent.surfaces[pos]:
                hit += 1
    return hit / total if total else 1.0


def pretrain_autoencoder(corpus: SentenceCorpus, vocab: Vocabulary,
                         grammar: GrammarConfig, dims: ModelDims, *,
                         epochs: int = 200, batch_size: int = 32, lr: float = 1e-3,
                         grad_clip: float = 5.0, seed: int = 0,
                         early_stop: bool = True, sample_size: int = 256
                         ) -> PretrainResult:
    """Reconstruction training of the sentence auto-encoder.

    Deterministic given the seed: init, batch order and the early-stop rule
    all come from named substreams.
    """
    model = SentenceAutoEncoder(vocab, dims, seed=seed)
    graphs = [parse_scene_graph(s.surfaces, grammar) for s in corpus.sentences]
    cands = [CopyCandidateSet.from_sentence(s, dims.d) for s in corpus.sentences]
    targets = [model.resolve_target(s, c) for s, c in zip(corpus.sentences, cands)]

    n = len(corpus.sentences)
    rng = np_rng(seed, "pretrain", "shuffle")
    sample = list(rng.choice(n, size=min(sample_size, n), replace=False))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    curve = []
    exact = 0.0
    epochs_run = 0

    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            batch = _DecodeBatch.build(
                model, [targets[i] for i in idx], [cands[i] for i in idx],
                model.encode_graphs([graphs[i] for i in idx]))
            loss = model._teacher_forced_nll(batch).mean()
            if not torch.isfinite(loss):
                raise DivergenceError("non-finite reconstruction loss",
                                      {"epoch": epoch, "loss": float(loss)})
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)
        epoch_loss /= n
        if epoch_loss > 1e6:
            raise DivergenceError("reconstruction loss exploded",
                                  {"epoch": epoch, "loss": epoch_loss})
        exact = reconstruction_exact_match(model, corpus, grammar, sample)
        curve.append({"epoch": epoch, "loss": epoch_loss, "exact_match": exact})
        epochs_run = epoch + 1
        if early_stop and exact == 1.0:
            exact = reconstruction_exact_match(model, corpus, grammar)
            curve[-1]["exact_match"] = exact
            if exact == 1.0:
                break
    if not (early_stop and exact == 1.0):
        exact = reconstruction_exact_match(model, corpus, grammar)
    return PretrainResult(model=model, curve=curve, exact_match=exact,
                          epochs_run=epochs_run)
