"""Command-line entry point: synth | pretrain | train | generate | eval | ablate.

Every command is a pure function of its config plus seed: identical inputs
rewrite identical bytes. Exit codes: 0 success, 1 config validation,
2 training divergence, 3 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import torch

from .alignment import (AlignmentHyperparams, CaptionModel, DivergenceError,
                        generate_captions, pretrain_language_discriminator,
                        train_magic)
from .autoencoder import pretrain_autoencoder
from .bundle import BundleError, load_bundle, save_bundle
from .config import ConfigError, RunConfig, load_config
from .data import DataError, TrainingData, build_vocabulary
from .encoder import POOL_RULES
from .grammar import generate_sentence_corpus
from .metrics import MetricError, evaluate_run, read_predictions_jsonl
from .rng import np_rng, substream
from .world import (SceneConfig, export_corpus_text, export_scenes_jsonl,
                    generate_dataset)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


def _scene_config(config: RunConfig) -> SceneConfig:
    d = config.data
    return SceneConfig(grammar=config.grammar(), min_objects=d.min_objects,
                       max_objects=d.max_objects, object_cap=d.object_cap,
                       token_cap=d.token_cap, d_raw=d.d_raw,
                       feature_seed=substream(config.seed, "features"),
                       feature_noise=d.feature_noise,
                       p_brand_token=d.p_brand_token, p_price_token=d.p_price_token,
                       max_references=d.max_references)


def load_training_data(data_dir: str) -> TrainingData:
    """The training-visible artifacts; reference captions live elsewhere."""
    return TrainingData(
        scenes=load_bundle(os.path.join(data_dir, "scenes.mgb"), "scene_set"),
        corpus=load_bundle(os.path.join(data_dir, "corpus.mgb"), "corpus"),
        vocabulary=load_bundle(os.path.join(data_dir, "vocab.mgb"), "vocabulary"),
    )


def cmd_synth(config: RunConfig) -> int:
    scene_cfg = _scene_config(config)
    grammar = config.grammar()
    data_dir, eval_dir = config.data_dir(), config.eval_dir()
    os.makedirs(data_dir, exist_ok=True)
    os.makedirs(eval_dir, exist_ok=True)

    corpus = generate_sentence_corpus(substream(config.seed, "corpus"), grammar,
                                      count=config.data.num_sentences)
    vocab = build_vocabulary(corpus, embedding_dim=config.model.d)
    train_scenes, _ = generate_dataset(substream(config.seed, "train-scenes"),
                                       scene_cfg, config.data.num_scenes)
    eval_scenes, references = generate_dataset(substream(config.seed, "eval-scenes"),
                                               scene_cfg, config.data.num_eval_scenes)

    save_bundle(os.path.join(data_dir, "scenes.mgb"), train_scenes)
    save_bundle(os.path.join(data_dir, "corpus.mgb"), corpus)
    save_bundle(os.path.join(data_dir, "vocab.mgb"), vocab)
    save_bundle(os.path.join(eval_dir, "scenes.mgb"), eval_scenes)
    save_bundle(os.path.join(eval_dir, "references.mgb"), references)
    if config.data.export_text:
        export_scenes_jsonl(train_scenes, os.path.join(data_dir, "scenes.jsonl"))
        export_corpus_text(corpus, os.path.join(data_dir, "corpus.txt"))
    print(f"synth: {config.data.num_scenes} train scenes, "
          f"{config.data.num_eval_scenes} eval scenes, "
          f"{len(corpus.sentences)} sentences, vocab {vocab.size}")
    return EXIT_OK


def cmd_pretrain(config: RunConfig) -> int:
    data = load_training_data(config.data_dir())
    run_dir = config.run_dir()
    os.makedirs(run_dir, exist_ok=True)
    p = config.pretrain

    result = pretrain_autoencoder(
        data.corpus, data.vocabulary, config.grammar(), config.dims(),
        epochs=p.epochs, batch_size=p.batch_size, lr=p.lr, grad_clip=p.grad_clip,
        seed=substream(config.seed, "pretrain"), early_stop=p.early_stop,
        sample_size=p.sample_size)
    disc = pretrain_language_discriminator(
        data.corpus, result.model, epochs=p.disc_epochs, batch_size=p.disc_batch_size,
        lr=p.disc_lr, holdout=p.disc_holdout, seed=substream(config.seed, "lang-disc"))

    checkpoint = CaptionModel.initialize(data.vocabulary, config.dims(), seed=0,
                                         autoencoder=result.model, lang_disc=disc.disc)
    save_bundle(os.path.join(run_dir, "pretrained.mgb"), checkpoint)
    with open(os.path.join(run_dir, "pretrain_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "exact_match"])
        for row in result.curve:
            writer.writerow([row["epoch"], row["loss"], row["exact_match"]])
    report = {"epochs_run": result.epochs_run, "exact_match": result.exact_match,
              "final_loss": result.curve[-1]["loss"] if result.curve else None,
              "discriminator_holdout_accuracy": disc.holdout_accuracy,
              "curve": result.curve}
    with open(os.path.join(run_dir, "recon_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"pretrain: exact match {result.exact_match:.3f} after {result.epochs_run} epochs; "
          f"discriminator holdout accuracy {disc.holdout_accuracy:.3f}")
    return EXIT_OK


def _alignment_hyper(config: RunConfig) -> AlignmentHyperparams:
    a = config.align
    return AlignmentHyperparams(
        lambda_a=a.lambda_a, lambda_c=a.lambda_c, lambda_l=a.lambda_l,
        gp_weight=a.gp_weight, n_critic=a.n_critic, iterations=a.iterations,
        batch_scenes=a.batch_scenes, score_scenes=a.score_scenes,
        decode_scenes=a.decode_scenes, decode_len=a.decode_len,
        generator_lr=a.generator_lr, critic_lr=a.critic_lr, grad_clip=a.grad_clip)


def cmd_train(config: RunConfig) -> int:
    data = load_training_data(config.data_dir())
    run_dir = config.run_dir()
    pretrained_path = os.path.join(run_dir, "pretrained.mgb")
    if not os.path.exists(pretrained_path):
        raise BundleError(f"missing pretrained checkpoint {pretrained_path}; "
                          "run `magic pretrain` first")
    pretrained = load_bundle(pretrained_path, "model")

    try:
        model, trajectory = train_magic(
            data.scenes, data.corpus, pretrained.autoencoder, pretrained.lang_disc,
            config.grammar(), _alignment_hyper(config),
            seed=substream(config.seed, "train"), dims=config.dims(),
            log_every=config.align.log_every)
    except DivergenceError as exc:
        snapshot = exc.diagnostics.get("snapshot")
        if snapshot is not None:
            fallback = CaptionModel.initialize(data.vocabulary, config.dims(), seed=0,
                                               autoencoder=pretrained.autoencoder,
                                               lang_disc=pretrained.lang_disc)
            fallback.load_state_dict(snapshot)
            save_bundle(os.path.join(run_dir, "model.diverged.mgb"), fallback)
        raise

    save_bundle(os.path.join(run_dir, "model.mgb"), model)
    with open(os.path.join(run_dir, "trajectory.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(trajectory[0].FIELDS))
        for row in trajectory:
            writer.writerow(row.as_list())
    print(f"train: {config.align.iterations} iterations; final gaps "
          f"image {trajectory[-1].gap_image:+.4f} sentence {trajectory[-1].gap_sentence:+.4f}")
    return EXIT_OK


def _write_predictions(path, scenes, model: CaptionModel, n_pool: int,
                       rule: str = "top_score", rng=None) -> dict[str, list[str]]:
    predictions: dict[str, list[str]] = {}
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            decoded = generate_captions(scene, model, n_pool=n_pool, rule=rule, rng=rng)
            texts = [d.text for d in decoded]
            while len(texts) < n_pool:   # scenes with fewer objects than the pool
                texts.append(texts[-1] if texts else "")
            predictions[scene.scene_id] = texts
            for index, text in enumerate(texts):
                fh.write(json.dumps({"scene_id": scene.scene_id,
                                     "index": index, "text": text}) + "\n")
    return predictions


def cmd_generate(config: RunConfig) -> int:
    run_dir = config.run_dir()
    model_path = os.path.join(run_dir, "model.mgb")
    if not os.path.exists(model_path):
        raise BundleError(f"missing trained model {model_path}; run `magic train` first")
    model = load_bundle(model_path, "model")
    scenes = load_bundle(os.path.join(config.eval_dir(), "scenes.mgb"), "scene_set")
    path = os.path.join(run_dir, "predictions.jsonl")
    _write_predictions(path, scenes, model, config.model.n_pool)
    print(f"generate: {len(scenes)} scenes x {config.model.n_pool} captions -> {path}")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    run_dir = config.run_dir()
    predictions = read_predictions_jsonl(os.path.join(run_dir, "predictions.jsonl"))
    references = load_bundle(os.path.join(config.eval_dir(), "references.mgb"), "references")
    report = evaluate_run(predictions, references.references,
                          n_pool=config.model.n_pool, sigma=config.metrics.sigma,
                          provenance={"seed": config.seed, "config": config.echo()})
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(run_dir, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    print(report.to_text())
    return EXIT_OK


def cmd_ablate(config: RunConfig) -> int:
    """Pool-size sweep crossed with the central-object selection rules.

    All arms share the trained model; only the selection rule and pool size
    change at generation time. A failing arm is recorded and skipped.
    """
    run_dir = config.run_dir()
    model = load_bundle(os.path.join(run_dir, "model.mgb"), "model")
    scenes = load_bundle(os.path.join(config.eval_dir(), "scenes.mgb"), "scene_set")
    references = load_bundle(os.path.join(config.eval_dir(), "references.mgb"), "references")

    rows = []
    for rule in POOL_RULES:
        for n_pool in (1, 2, 3, 4, 5):
            arm = {"rule": rule, "n_pool": n_pool}
            try:
                rng = np_rng(config.seed, "ablate", rule, n_pool)
                predictions = {}
                for scene in scenes:
                    decoded = generate_captions(scene, model, n_pool=n_pool,
                                                rule=rule, rng=rng)
                    texts = [d.text for d in decoded]
                    while len(texts) < n_pool:
                        texts.append(texts[-1] if texts else "")
                    predictions[scene.scene_id] = texts
                report = evaluate_run(predictions, references.references,
                                      n_pool=n_pool, sigma=config.metrics.sigma)
                arm.update(report.scores)
                arm["status"] = "ok"
            except (MetricError, DataError, ValueError) as exc:
                arm["status"] = f"failed: {exc}"
            rows.append(arm)

    with open(os.path.join(run_dir, "ablation.json"), "w") as fh:
        json.dump({"seed": config.seed, "arms": rows}, fh, indent=2, sort_keys=True)
    header = f"{'rule':<12} {'n_pool':>6} {'bleu':>8} {'cider':>8} {'div_2':>8} {'self_cider':>11}"
    lines = [header, "-" * len(header)]
    for arm in rows:
        if arm["status"] == "ok":
            lines.append(f"{arm['rule']:<12} {arm['n_pool']:>6} {arm['bleu']:>8.4f} "
                         f"{arm['cider']:>8.4f} {arm['div_2']:>8.4f} {arm['self_cider']:>11.4f}")
        else:
            lines.append(f"{arm['rule']:<12} {arm['n_pool']:>6} {arm['status']}")
    table = "\n".join(lines) + "\n"
    with open(os.path.join(run_dir, "ablation.txt"), "w") as fh:
        fh.write(table)
    print(table)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train,
            "generate": cmd_generate, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="magic",
        description="Diverse unpaired captioning of synthetic text-rich scenes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")
    args = parser.parse_args(argv)

    torch.set_num_threads(1)   # bit-exact reruns regardless of host core count
    try:
        config = load_config(args.config, overrides=args.overrides)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BundleError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
