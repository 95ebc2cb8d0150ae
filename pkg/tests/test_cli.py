"""End-to-end command behavior on a miniature configuration."""
import json
import os

import pytest
import yaml

from magic.cli import main
from magic.bundle import load_bundle, read_bundle_kind

TINY = {
    "seed": 5,
    "data": {
        "grammar": "default",
        "num_scenes": 6,
        "num_eval_scenes": 3,
        "min_objects": 3,
        "max_objects": 5,
        "d_raw": 8,
        "num_sentences": 24,
    },
    "model": {"d": 12, "e": 12, "n_pool": 2, "k_rel": 2,
              "critic_hidden": 8, "disc_hidden": 8},
    "pretrain": {"epochs": 3, "batch_size": 8, "early_stop": False,
                 "disc_epochs": 2},
    "align": {"iterations": 4, "batch_scenes": 3, "n_critic": 2,
              "score_scenes": 2, "decode_scenes": 2, "decode_len": 5},
}


def write_config(tmp_path, overrides=None, name="config.yaml"):
    tree = json.loads(json.dumps(TINY))   # deep copy
    tree["workdir"] = str(tmp_path / "work")
    for key, value in (overrides or {}).items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree))
    return path


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """synth + pretrain + train once; later commands reuse the artifacts."""
    tmp_path = tmp_path_factory.mktemp("cli")
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config)]) == 0
    assert main(["pretrain", "--config", str(config)]) == 0
    assert main(["train", "--config", str(config)]) == 0
    return tmp_path, config


def test_synth_writes_three_training_bundles_and_separate_references(tmp_path):
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config)]) == 0
    data_dir = tmp_path / "work" / "data"
    bundles = sorted(p.name for p in data_dir.glob("*.mgb"))
    assert bundles == ["corpus.mgb", "scenes.mgb", "vocab.mgb"]
    assert (tmp_path / "work" / "eval" / "references.mgb").exists()
    assert (tmp_path / "work" / "eval" / "scenes.mgb").exists()
    # inspection exports
    assert (data_dir / "scenes.jsonl").exists()
    assert (data_dir / "corpus.txt").exists()


def test_synth_idempotent_bytes(tmp_path):
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config)]) == 0
    data_dir = tmp_path / "work" / "data"
    first = {p.name: p.read_bytes() for p in data_dir.glob("*.mgb")}
    assert main(["synth", "--config", str(config)]) == 0
    second = {p.name: p.read_bytes() for p in data_dir.glob("*.mgb")}
    assert first == second


def test_synth_honors_counts(tmp_path):
    config = write_config(tmp_path, {"data.num_scenes": 9, "data.num_sentences": 17})
    assert main(["synth", "--config", str(config)]) == 0
    scenes = load_bundle(tmp_path / "work" / "data" / "scenes.mgb", "scene_set")
    corpus = load_bundle(tmp_path / "work" / "data" / "corpus.mgb", "corpus")
    assert len(scenes) == 9
    assert len(corpus.sentences) == 17
    lines = (tmp_path / "work" / "data" / "scenes.jsonl").read_text().splitlines()
    assert len(lines) == 9


def test_missing_grammar_is_a_validation_error(tmp_path, capsys):
    config = write_config(tmp_path)
    tree = yaml.safe_load(config.read_text())
    del tree["data"]["grammar"]
    config.write_text(yaml.safe_dump(tree))
    code = main(["synth", "--config", str(config)])
    assert code == 1
    assert "grammar" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path, capsys):
    config = write_config(tmp_path, {"model.typo_field": 3})
    code = main(["synth", "--config", str(config)])
    assert code == 1
    assert "typo_field" in capsys.readouterr().err


def test_set_override_and_magic_seed_env(tmp_path, monkeypatch):
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config),
                 "--set", "data.num_scenes=4"]) == 0
    scenes = load_bundle(tmp_path / "work" / "data" / "scenes.mgb", "scene_set")
    assert len(scenes) == 4

    monkeypatch.setenv("MAGIC_SEED", "99")
    assert main(["synth", "--config", str(config)]) == 0
    scenes_99 = load_bundle(tmp_path / "work" / "data" / "scenes.mgb", "scene_set")
    assert scenes_99.seed != scenes.seed

    monkeypatch.setenv("MAGIC_SEED", "not-an-int")
    assert main(["synth", "--config", str(config)]) == 1


def test_pretrain_outputs_and_curve_rows(pipeline_dir):
    tmp_path, config = pipeline_dir
    run = tmp_path / "work" / "run"
    assert read_bundle_kind(run / "pretrained.mgb") == "model"
    rows = (run / "pretrain_curve.csv").read_text().strip().splitlines()
    assert rows[0] == "epoch,loss,exact_match"
    assert len(rows) - 1 == TINY["pretrain"]["epochs"]   # one row per epoch run
    report = json.loads((run / "recon_report.json").read_text())
    assert report["epochs_run"] == TINY["pretrain"]["epochs"]


def test_train_missing_checkpoint_is_explicit_io_error(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config)]) == 0
    code = main(["train", "--config", str(config)])
    assert code == 3
    assert "pretrained" in capsys.readouterr().err


def test_train_generate_eval_ablate_chain(pipeline_dir):
    tmp_path, config = pipeline_dir
    run = tmp_path / "work" / "run"
    assert (run / "model.mgb").exists()
    rows = (run / "trajectory.csv").read_text().strip().splitlines()
    assert len(rows) - 1 == TINY["align"]["iterations"]

    assert main(["generate", "--config", str(config)]) == 0
    lines = (run / "predictions.jsonl").read_text().strip().splitlines()
    assert len(lines) == TINY["data"]["num_eval_scenes"] * TINY["model"]["n_pool"]
    record = json.loads(lines[0])
    assert set(record) == {"scene_id", "index", "text"}

    assert main(["eval", "--config", str(config)]) == 0
    report = json.loads((run / "report.json").read_text())
    assert set(report["scores"]) == {"bleu", "cider", "div_1", "div_2",
                                     "re_4", "self_cider"}
    assert (run / "report.txt").exists()

    assert main(["ablate", "--config", str(config)]) == 0
    ablation = json.loads((run / "ablation.json").read_text())
    arms = {(a["rule"], a["n_pool"]) for a in ablation["arms"]}
    assert {r for r, _ in arms} == {"top_score", "center", "large", "random"}
    assert {n for _, n in arms} == {1, 2, 3, 4, 5}
    assert len(ablation["arms"]) == 20
    assert all(a["status"] == "ok" for a in ablation["arms"])


def test_ablate_random_arm_reproducible(pipeline_dir):
    tmp_path, config = pipeline_dir
    run = tmp_path / "work" / "run"
    first = (run / "ablation.json").read_bytes() if (run / "ablation.json").exists() else None
    assert main(["ablate", "--config", str(config)]) == 0
    second = (run / "ablation.json").read_bytes()
    if first is not None:
        assert first == second
    assert main(["ablate", "--config", str(config)]) == 0
    assert (run / "ablation.json").read_bytes() == second


def test_divergence_exits_2_and_saves_last_checkpoint(tmp_path, capsys):
    config = write_config(tmp_path, {"align.critic_lr": 1e15,
                                     "align.iterations": 30})
    assert main(["synth", "--config", str(config)]) == 0
    assert main(["pretrain", "--config", str(config)]) == 0
    code = main(["train", "--config", str(config)])
    assert code == 2
    assert "diverged" in capsys.readouterr().err
    assert (tmp_path / "work" / "run" / "model.diverged.mgb").exists()


def test_pretrain_divergence_exits_2(tmp_path, capsys):
    config = write_config(tmp_path, {"pretrain.lr": 1e18})
    assert main(["synth", "--config", str(config)]) == 0
    code = main(["pretrain", "--config", str(config)])
    assert code == 2
    assert "diverged" in capsys.readouterr().err


def test_train_bit_identical_reruns(tmp_path):
    config = write_config(tmp_path)
    assert main(["synth", "--config", str(config)]) == 0
    assert main(["pretrain", "--config", str(config)]) == 0
    run = tmp_path / "work" / "run"
    assert main(["train", "--config", str(config)]) == 0
    first_model = (run / "model.mgb").read_bytes()
    first_curve = (run / "trajectory.csv").read_bytes()
    assert main(["train", "--config", str(config)]) == 0
    assert (run / "model.mgb").read_bytes() == first_model
    assert (run / "trajectory.csv").read_bytes() == first_curve
