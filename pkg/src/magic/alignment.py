"""Unpaired adversarial alignment of image and sentence embedding spaces.

A Wasserstein critic per domain (gradient-penalty constrained) estimates the
transport gap between mapped image embeddings and sentence-graph embeddings;
two nonlinear mappers are trained cycle-consistently against those critics;
a bidirectional-recurrent language discriminator then refines the mappers
and the image encoder on softly decoded captions. The pretrained sentence
decoder stays frozen throughout and acts as the supervision signal.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .autoencoder import (CopyCandidateSet, DecodedSentence, DivergenceError,
                          SentenceAutoEncoder)
from .data import (DataError, MultimodalScene, SceneSet, Sentence,
                   SentenceCorpus, Vocabulary)
from .encoder import RelationalGraphEncoder
from .grammar import GrammarConfig, parse_scene_graph
from .nets import (DTYPE, Dense, LstmCell, ModelDims, load_numpy_state,
                   reset_children, state_to_numpy)
from .rng import np_rng, torch_generator


LEAKY_SLOPE = 0.2   # scale-covariant activations: graph embeddings are large


class DomainMapper(nn.Module):
    """Two-layer nonlinear map between the embedding spaces."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int):
        super().__init__()
        self.lift = Dense(in_dim, hidden)
        self.drop = Dense(hidden, out_dim)

    def forward(self, x):
        return self.drop(torch.nn.functional.leaky_relu(self.lift(x), LEAKY_SLOPE))


class Critic(nn.Module):
    """Scalar-valued network whose expectation gap estimates the domain distance."""

    def __init__(self, dim: int, hidden: int, gp_weight: float = 10.0):
        super().__init__()
        self.gp_weight = gp_weight
        self.layer1 = Dense(dim, hidden)
        self.layer2 = Dense(hidden, hidden)
        self.head = Dense(hidden, 1)

    def forward(self, x):
        h = torch.nn.functional.leaky_relu(self.layer1(x), LEAKY_SLOPE)
        h = torch.nn.functional.leaky_relu(self.layer2(h), LEAKY_SLOPE)
        return self.head(h).squeeze(-1)


class LanguageDiscriminator(nn.Module):
    """Bidirectional recurrent encoder with a sigmoid head over sentence embeddings."""

    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.forward_cell = LstmCell(d, hidden)
        self.backward_cell = LstmCell(d, hidden)
        self.head = Dense(2 * hidden, 1)

    def forward(self, sequences: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """P(real structure) per sequence; sequences (B, T, d), lengths (B,)."""
        size, steps, _ = sequences.shape
        mask = (torch.arange(steps).unsqueeze(0) < lengths.unsqueeze(1)).to(DTYPE)

        h, c = self.forward_cell.initial_state(size)
        final_fwd = torch.zeros(size, self.forward_cell.hidden_size, dtype=DTYPE)
        for t in range(steps):
            h_new, c_new = self.forward_cell(sequences[:, t, :], (h, c))
            keep = mask[:, t].unsqueeze(1)
            h = keep * h_new + (1 - keep) * h
            c = keep * c_new + (1 - keep) * c
            final_fwd = torch.where((lengths - 1).unsqueeze(1) == t, h, final_fwd)

        h, c = self.backward_cell.initial_state(size)
        for t in reversed(range(steps)):
            h_new, c_new = self.backward_cell(sequences[:, t, :], (h, c))
            keep = mask[:, t].unsqueeze(1)
            h = keep * h_new + (1 - keep) * h
            c = keep * c_new + (1 - keep) * c
        final_bwd = h

        logit = self.head(torch.cat([final_fwd, final_bwd], dim=1)).squeeze(-1)
        return torch.sigmoid(logit)


# ---------------------------------------------------------------------------
# Losses

def critic_gap(critic: Critic, real: torch.Tensor, fake: torch.Tensor) -> float:
    """mean D(real) - mean D(fake), the logged expectation gap."""
    with torch.no_grad():
        return float(critic(real).mean() - critic(fake).mean())


def critic_loss(critic: Critic, real: torch.Tensor, fake: torch.Tensor,
                gp_weight: float | None = None, mix: torch.Tensor | None = None,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """Loss for one critic maximization step, gradient penalty included.

    -(mean D(real) - mean D(fake)) + gp_weight * mean((|grad D(interp)| - 1)^2).
    `mix` supplies the interpolation coefficients explicitly; otherwise they
    come from `generator`.
    """
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("critic batches must be non-empty")
    if real.shape[-1] != fake.shape[-1]:
        raise ValueError(f"dimension mismatch: real {real.shape[-1]}, fake {fake.shape[-1]}")
    if gp_weight is None:
        gp_weight = critic.gp_weight
    gap_term = -(critic(real).mean() - critic(fake).mean())

    n = min(real.shape[0], fake.shape[0])
    if mix is None:
        mix = torch.rand(n, 1, dtype=DTYPE, generator=generator)
    # the penalty needs the critic's input gradient even when the caller only
    # wants the loss value, so grad mode is forced on for this block
    with torch.enable_grad():
        interp = (mix * real[:n] + (1.0 - mix) * fake[:n]).detach().requires_grad_(True)
        d_out = critic(interp)
        grads, = torch.autograd.grad(d_out.sum(), interp, create_graph=True)
        penalty = ((grads.norm(dim=1) - 1.0) ** 2).mean()
    return gap_term + gp_weight * penalty


def generator_adversarial_loss(critic: Critic, fake: torch.Tensor) -> torch.Tensor:
    """Generator-side term: -mean D(fake)."""
    return -critic(fake).mean()


def cycle_reconstruction(image_batch, sentence_batch, to_sentence: DomainMapper,
                         to_image: DomainMapper) -> torch.Tensor:
    """Mean absolute two-directional round-trip error (element mean)."""
    back_i = to_image(to_sentence(image_batch))
    back_s = to_sentence(to_image(sentence_batch))
    return (back_i - image_batch).abs().mean() + (back_s - sentence_batch).abs().mean()


def cycle_alignment_loss(image_batch: torch.Tensor, sentence_batch: torch.Tensor,
                         to_sentence: DomainMapper, to_image: DomainMapper,
                         critic_image: Critic, critic_sentence: Critic,
                         lambda_a: float, lambda_c: float) -> torch.Tensor:
    """Generator-side alignment objective.

    lambda_a * (adv(image->sentence) + adv(sentence->image) + lambda_c * cycle);
    the adversarial pieces are -mean D(mapped), the cycle piece the mean L1
    round-trip error in both directions.
    """
    if image_batch.numel() == 0 or sentence_batch.numel() == 0:
        raise ValueError("alignment batches must be non-empty")
    if lambda_a == 0.0:
        return torch.zeros((), dtype=DTYPE)
    adv = generator_adversarial_loss(critic_sentence, to_sentence(image_batch)) \
        + generator_adversarial_loss(critic_image, to_image(sentence_batch))
    cyc = cycle_reconstruction(image_batch, sentence_batch, to_sentence, to_image)
    return lambda_a * (adv + lambda_c * cyc)


def corrupt_sentence(sentence: Sentence, rng: np.random.Generator) -> Sentence:
    """Structure-breaking negative: shuffled word order or a duplicated phrase.

    Output always differs from the input; one-token sentences (and sentences
    whose tokens are all identical) fall back to phrase repetition.
    """
    n = len(sentence.surfaces)
    shufflable = n >= 2 and len(set(sentence.surfaces)) >= 2
    if shufflable and rng.random() < 0.5:
        while True:
            perm = rng.permutation(n)
            surfaces = tuple(sentence.surfaces[i] for i in perm)
            if surfaces != sentence.surfaces:
                return Sentence(surfaces=surfaces,
                                copy_mask=tuple(sentence.copy_mask[i] for i in perm))
    start = int(rng.integers(0, n))
    length = int(rng.integers(1, min(3, n - start) + 1))
    end = start + length
    surfaces = sentence.surfaces[:end] + sentence.surfaces[start:end] + sentence.surfaces[end:]
    mask = sentence.copy_mask[:end] + sentence.copy_mask[start:end] + sentence.copy_mask[end:]
    return Sentence(surfaces=surfaces, copy_mask=mask)


def language_discriminator_loss(disc: LanguageDiscriminator,
                                real_seqs: torch.Tensor, real_lengths: torch.Tensor,
                                corrupted_seqs: torch.Tensor, corrupted_lengths: torch.Tensor,
                                lambda_l: float) -> torch.Tensor:
    """Discriminator-side binary cross-entropy, weighted by lambda_l."""
    if lambda_l == 0.0:
        return torch.zeros((), dtype=DTYPE)
    p_real = disc(real_seqs, real_lengths).clamp(1e-12, 1 - 1e-12)
    p_fake = disc(corrupted_seqs, corrupted_lengths).clamp(1e-12, 1 - 1e-12)
    return lambda_l * (-(torch.log(p_real).mean()) - torch.log(1 - p_fake).mean())


def generator_language_loss(disc: LanguageDiscriminator, seqs: torch.Tensor,
                            lengths: torch.Tensor, lambda_l: float) -> torch.Tensor:
    """Generator-side fluency term on decoded captions: -mean log D(generated)."""
    if lambda_l == 0.0:
        return torch.zeros((), dtype=DTYPE)
    p = disc(seqs, lengths).clamp(1e-12, 1 - 1e-12)
    return lambda_l * (-(torch.log(p).mean()))


def pack_sentence_embeddings(model: SentenceAutoEncoder, sentences: list[Sentence]):
    """Padded (B, T, d) token-embedding batch plus lengths for the discriminator."""
    seqs = [model.embed_token_sequence(s) for s in sentences]
    steps = max(s.shape[0] for s in seqs)
    out = torch.zeros(len(seqs), steps, model.dims.d, dtype=DTYPE)
    lengths = torch.zeros(len(seqs), dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :s.shape[0], :] = s
        lengths[i] = s.shape[0]
    return out, lengths


# ---------------------------------------------------------------------------
# Language-discriminator pretraining

@dataclass
class DiscriminatorResult:
    disc: LanguageDiscriminator
    holdout_accuracy: float
    curve: list[dict]


def pretrain_language_discriminator(corpus: SentenceCorpus, autoencoder: SentenceAutoEncoder,
                                    *, epochs: int = 25, batch_size: int = 16,
                                    lr: float = 2e-3, holdout: float = 0.2,
                                    seed: int = 0) -> DiscriminatorResult:
    """Train real-vs-corrupted classification; report held-out accuracy."""
    dims = autoencoder.dims
    disc = LanguageDiscriminator(dims.d, dims.disc_hidden)
    reset_children(disc, torch_generator(seed, "init", "lang-disc"))

    rng = np_rng(seed, "lang-disc")
    n = len(corpus.sentences)
    perm = rng.permutation(n)
    n_hold = max(1, int(n * holdout))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        raise DataError("corpus too small to split for discriminator training")

    optimizer = torch.optim.Adam(disc.parameters(), lr=lr)
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(len(train_idx))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), batch_size):
            idx = [corpus.sentences[train_idx[i]] for i in order[start:start + batch_size]]
            corrupted = [corrupt_sentence(s, rng) for s in idx]
            with torch.no_grad():
                real_seq, real_len = pack_sentence_embeddings(autoencoder, idx)
                fake_seq, fake_len = pack_sentence_embeddings(autoencoder, corrupted)
            loss = language_discriminator_loss(disc, real_seq, real_len,
                                               fake_seq, fake_len, 1.0)
            if not torch.isfinite(loss):
                raise DivergenceError("non-finite discriminator loss", {"epoch": epoch})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        curve.append({"epoch": epoch, "loss": epoch_loss / max(batches, 1)})

    held = [corpus.sentences[i] for i in hold_idx]
    held_corrupted = [corrupt_sentence(s, rng) for s in held]
    with torch.no_grad():
        real_seq, real_len = pack_sentence_embeddings(autoencoder, held)
        fake_seq, fake_len = pack_sentence_embeddings(autoencoder, held_corrupted)
        correct = float((disc(real_seq, real_len) > 0.5).to(DTYPE).sum()
                        + (disc(fake_seq, fake_len) <= 0.5).to(DTYPE).sum())
    accuracy = correct / (2 * len(held))
    return DiscriminatorResult(disc=disc, holdout_accuracy=accuracy, curve=curve)


# ---------------------------------------------------------------------------
# The full model bundle

class CaptionModel(nn.Module):
    """Every parameter group of the captioning system in one serializable bundle."""

    def __init__(self, encoder: RelationalGraphEncoder, autoencoder: SentenceAutoEncoder,
                 to_sentence: DomainMapper, to_image: DomainMapper,
                 critic_image: Critic, critic_sentence: Critic,
                 lang_disc: LanguageDiscriminator):
        super().__init__()
        self.encoder = encoder
        self.autoencoder = autoencoder
        self.to_sentence = to_sentence
        self.to_image = to_image
        self.critic_image = critic_image
        self.critic_sentence = critic_sentence
        self.lang_disc = lang_disc

    @property
    def dims(self) -> ModelDims:
        return self.encoder.dims

    @property
    def vocab(self) -> Vocabulary:
        return self.autoencoder.vocab

    @classmethod
    def initialize(cls, vocab: Vocabulary, dims: ModelDims, seed: int,
                   autoencoder: SentenceAutoEncoder | None = None,
                   lang_disc: LanguageDiscriminator | None = None,
                   gp_weight: float = 10.0) -> "CaptionModel":
        encoder = RelationalGraphEncoder(dims, seed=seed)
        if autoencoder is None:
            autoencoder = SentenceAutoEncoder(vocab, dims, seed=seed)
        to_sentence = DomainMapper(dims.d, dims.e, dims.mapper_hidden)
        to_image = DomainMapper(dims.e, dims.d, dims.mapper_hidden)
        gen = torch_generator(seed, "init", "mappers")
        reset_children(to_sentence, gen)
        reset_children(to_image, gen)
        critic_image = Critic(dims.d, dims.critic_hidden, gp_weight)
        critic_sentence = Critic(dims.e, dims.critic_hidden, gp_weight)
        gen = torch_generator(seed, "init", "critics")
        reset_children(critic_image, gen)
        reset_children(critic_sentence, gen)
        if lang_disc is None:
            lang_disc = LanguageDiscriminator(dims.d, dims.disc_hidden)
            reset_children(lang_disc, torch_generator(seed, "init", "lang-disc"))
        return cls(encoder, autoencoder, to_sentence, to_image,
                   critic_image, critic_sentence, lang_disc)

    # -- persistence --------------------------------------------------------

    def to_tree(self) -> dict:
        dims_dict = asdict(self.dims)
        return {
            "dims": dims_dict,
            "gp_weight": self.critic_image.gp_weight,
            "vocab": {"words": list(self.vocab.words), "embeddings": self.vocab.embeddings},
            "state": state_to_numpy(self),
        }

    @classmethod
    def from_tree(cls, tree: dict) -> "CaptionModel":
        vocab = Vocabulary(words=tuple(tree["vocab"]["words"]),
                           embeddings=tree["vocab"]["embeddings"])
        dims = ModelDims(**tree["dims"])
        model = cls.initialize(vocab, dims, seed=0, gp_weight=float(tree["gp_weight"]))
        load_numpy_state(model, tree["state"])
        return model


def generate_captions(scene: MultimodalScene, model: CaptionModel,
                      n_pool: int | None = None, rule: str = "top_score",
                      rng: np.random.Generator | None = None) -> list[DecodedSentence]:
    """Map each pooled graph embedding to sentence space and decode greedily.

    Copy candidates are the scene's own token surfaces; `rule` switches the
    central-object selection for the ablation arms.
    """
    n_pool = model.dims.n_pool if n_pool is None else n_pool
    with torch.no_grad():
        indices = model.encoder.pool_by_rule(scene, rule, n_pool, rng=rng)
        embeddings = model.encoder.encode_pool(scene, indices)
        mapped = model.to_sentence(torch.stack(embeddings))
        candidates = CopyCandidateSet.from_scene(scene, model.dims.d)
        return model.autoencoder.greedy_decode_batch(
            mapped, [candidates] * mapped.shape[0])


# ---------------------------------------------------------------------------
# Staged adversarial training

@dataclass
class AlignmentHyperparams:
    lambda_a: float = 1.0
    lambda_c: float = 10.0
    lambda_l: float = 0.5
    gp_weight: float = 10.0
    n_critic: int = 5
    iterations: int = 2000
    batch_scenes: int = 16
    score_scenes: int = 8      # sub-batch for the score-weighted relaxation
    decode_scenes: int = 6     # sub-batch for the language refinement step
    decode_len: int = 12
    generator_lr: float = 1e-4
    critic_lr: float = 2e-4
    adam_betas: tuple = (0.5, 0.9)
    grad_clip: float = 5.0
    divergence_limit: float = 1e6
    snapshot_every: int = 25

    def validate(self) -> None:
        for name in ("lambda_a", "lambda_c", "lambda_l", "gp_weight"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be nonnegative")
        if self.n_critic < 1:
            raise DataError("n_critic must be >= 1")
        if self.iterations < 1 or self.batch_scenes < 1:
            raise DataError("iterations and batch_scenes must be >= 1")


@dataclass
class TrajectoryRow:
    iteration: int
    critic_loss_image: float
    critic_loss_sentence: float
    gap_image: float
    gap_sentence: float
    alignment_loss: float
    cycle_term: float
    score_term: float
    language_term: float

    FIELDS = ("iteration", "critic_loss_image", "critic_loss_sentence",
              "gap_image", "gap_sentence", "alignment_loss", "cycle_term",
              "score_term", "language_term")

    def as_list(self):
        return [getattr(self, f) for f in self.FIELDS]


def _encode_scene_batch(encoder: RelationalGraphEncoder, scenes: list[MultimodalScene],
                        n_pool: int) -> torch.Tensor:
    rows = []
    for scene in scenes:
        rows.extend(encoder.encode_image(scene, n_pool))
    return torch.stack(rows)


def train_magic(scenes: SceneSet, corpus: SentenceCorpus,
                autoencoder: SentenceAutoEncoder, lang_disc: LanguageDiscriminator,
                grammar: GrammarConfig, hyper: AlignmentHyperparams,
                seed: int = 0, dims: ModelDims | None = None,
                log_every: int = 1) -> tuple[CaptionModel, list[TrajectoryRow]]:
    """Cascaded adversarial training with the decoder frozen.

    Per iteration: (a) n_critic Wasserstein critic steps on both domains over
    detached embeddings, (b) one mapper+encoder step on the cycle-consistent
    alignment objective plus the score-weighted relaxation that reaches the
    selection scorer, (c) one mapper+encoder refinement step against the
    (frozen) language discriminator on softly decoded captions.
    """
    hyper.validate()
    dims = autoencoder.dims if dims is None else dims
    model = CaptionModel.initialize(autoencoder.vocab, dims, seed,
                                    autoencoder=autoencoder, lang_disc=lang_disc,
                                    gp_weight=hyper.gp_weight)
    encoder = model.encoder

    # the pretrained decoder and discriminator are the fixed supervision signal
    for p in model.autoencoder.parameters():
        p.requires_grad_(False)
    for p in model.lang_disc.parameters():
        p.requires_grad_(False)

    with torch.no_grad():
        graphs = [parse_scene_graph(s.surfaces, grammar) for s in corpus.sentences]
        sentence_bank = model.autoencoder.encode_graphs(graphs)

    scene_list = list(scenes)
    scene_candidates = [CopyCandidateSet.from_scene(s, dims.d) for s in scene_list]

    gen_params = list(encoder.parameters()) \
        + list(model.to_sentence.parameters()) + list(model.to_image.parameters())
    opt_gen = torch.optim.Adam(gen_params, lr=hyper.generator_lr, betas=hyper.adam_betas)
    opt_ci = torch.optim.Adam(model.critic_image.parameters(), lr=hyper.critic_lr,
                              betas=hyper.adam_betas)
    opt_cs = torch.optim.Adam(model.critic_sentence.parameters(), lr=hyper.critic_lr,
                              betas=hyper.adam_betas)

    rng = np_rng(seed, "train", "batches")
    mix_gen = torch_generator(seed, "train", "critic-mix")
    trajectory: list[TrajectoryRow] = []
    snapshot = copy.deepcopy(model.state_dict())
    align_on = hyper.lambda_a > 0.0
    language_on = hyper.lambda_l > 0.0

    def sample_scenes(k):
        idx = rng.choice(len(scene_list), size=min(k, len(scene_list)), replace=False)
        return [int(i) for i in idx]

    def check(value: float, label: str, iteration: int):
        if not np.isfinite(value) or abs(value) > hyper.divergence_limit:
            raise DivergenceError(
                f"{label} diverged at iteration {iteration}: {value}",
                {"iteration": iteration, "term": label, "value": value,
                 "snapshot": snapshot})

    for iteration in range(hyper.iterations):
        row = TrajectoryRow(iteration, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        batch_idx = sample_scenes(hyper.batch_scenes)
        batch = [scene_list[i] for i in batch_idx]

        if align_on:
            with torch.no_grad():
                image_bank = _encode_scene_batch(encoder, batch, dims.n_pool)
            m = image_bank.shape[0]

            # (a) critics
            gaps_i, gaps_s, cl_i, cl_s = [], [], [], []
            for _ in range(hyper.n_critic):
                rows = torch.from_numpy(rng.choice(len(sentence_bank), size=m))
                real_s = sentence_bank[rows]
                with torch.no_grad():
                    fake_s = model.to_sentence(image_bank)
                    fake_i = model.to_image(real_s)
                gaps_s.append(critic_gap(model.critic_sentence, real_s, fake_s))
                loss_cs = critic_loss(model.critic_sentence, real_s, fake_s,
                                      hyper.gp_weight, generator=mix_gen)
                opt_cs.zero_grad()
                loss_cs.backward()
                opt_cs.step()
                gaps_i.append(critic_gap(model.critic_image, image_bank, fake_i))
                loss_ci = critic_loss(model.critic_image, image_bank, fake_i,
                                      hyper.gp_weight, generator=mix_gen)
                opt_ci.zero_grad()
                loss_ci.backward()
                opt_ci.step()
                cl_s.append(float(loss_cs.detach()))
                cl_i.append(float(loss_ci.detach()))
            row.gap_image = float(np.mean(gaps_i))
            row.gap_sentence = float(np.mean(gaps_s))
            row.critic_loss_image = float(np.mean(cl_i))
            row.critic_loss_sentence = float(np.mean(cl_s))

            # (b) mappers + encoder on alignment plus the scorer relaxation
            image_live = _encode_scene_batch(encoder, batch, dims.n_pool)
            rows = torch.from_numpy(rng.choice(len(sentence_bank), size=image_live.shape[0]))
            real_s = sentence_bank[rows]
            align = cycle_alignment_loss(image_live, real_s,
                                         model.to_sentence, model.to_image,
                                         model.critic_image, model.critic_sentence,
                                         hyper.lambda_a, hyper.lambda_c)
            with torch.no_grad():
                row.cycle_term = float(cycle_reconstruction(
                    image_live, real_s, model.to_sentence, model.to_image))
            score_idx = sample_scenes(hyper.score_scenes)
            mixtures = torch.stack([encoder.encode_image_weighted(scene_list[i])
                                    for i in score_idx])
            score_term = hyper.lambda_a * generator_adversarial_loss(
                model.critic_sentence, model.to_sentence(mixtures))
            total = align + score_term
            opt_gen.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(gen_params, hyper.grad_clip)
            opt_gen.step()
            row.alignment_loss = float(align.detach())
            row.score_term = float(score_term.detach())

        # (c) language refinement of encoder + mappers
        if language_on:
            dec_idx = sample_scenes(hyper.decode_scenes)
            dec_embeddings = []
            dec_candidates = []
            for i in dec_idx:
                embs = encoder.encode_image(scene_list[i], dims.n_pool)
                dec_embeddings.extend(embs)
                dec_candidates.extend([scene_candidates[i]] * len(embs))
            mapped = model.to_sentence(torch.stack(dec_embeddings))
            seqs, lengths = model.autoencoder.soft_decode(mapped, dec_candidates,
                                                          hyper.decode_len)
            lang = generator_language_loss(model.lang_disc, seqs, lengths, hyper.lambda_l)
            opt_gen.zero_grad()
            lang.backward()
            torch.nn.utils.clip_grad_norm_(gen_params, hyper.grad_clip)
            opt_gen.step()
            row.language_term = float(lang.detach())

        for label in ("critic_loss_image", "critic_loss_sentence", "alignment_loss",
                      "score_term", "language_term", "cycle_term"):
            check(getattr(row, label), label, iteration)
        if iteration % log_every == 0 or iteration == hyper.iterations - 1:
            trajectory.append(row)
        if hyper.snapshot_every and iteration % hyper.snapshot_every == 0:
            snapshot = copy.deepcopy(model.state_dict())

    return model, trajectory
