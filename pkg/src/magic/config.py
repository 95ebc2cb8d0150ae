"""Run configuration: YAML files, dotted overrides, strict validation.

Unknown keys are rejected with their full path so typos fail fast; every
command takes the same RunConfig and reads the sections it needs.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

import yaml

from .grammar import GrammarConfig, Relation, default_grammar
from .nets import ModelDims
from .rng import substream


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass
class DataSection:
    grammar: object = None          # required: "default" or an inventory mapping
    num_scenes: int = 500
    num_eval_scenes: int = 100
    min_objects: int = 6
    max_objects: int = 12
    object_cap: int = 12
    token_cap: int = 8
    d_raw: int = 64
    feature_noise: float = 0.05
    p_brand_token: float = 0.5
    p_price_token: float = 0.5
    max_references: int = 5
    num_sentences: int = 1000
    export_text: bool = True


@dataclass
class ModelSection:
    d: int = 128
    e: int | None = None
    n_pool: int = 3
    epsilon: float = 0.1
    k_rel: int = 5
    gcn_layers: int = 2
    mapper_hidden: int | None = None
    critic_hidden: int = 64
    disc_hidden: int = 64
    max_len: int = 20


@dataclass
class PretrainSection:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    grad_clip: float = 5.0
    early_stop: bool = True
    sample_size: int = 256
    disc_epochs: int = 25
    disc_batch_size: int = 16
    disc_lr: float = 2e-3
    disc_holdout: float = 0.2


@dataclass
class AlignSection:
    lambda_a: float = 1.0
    lambda_c: float = 10.0
    lambda_l: float = 0.5
    gp_weight: float = 10.0
    n_critic: int = 5
    iterations: int = 2000
    batch_scenes: int = 16
    score_scenes: int = 8
    decode_scenes: int = 6
    decode_len: int = 12
    generator_lr: float = 1e-4
    critic_lr: float = 2e-4
    grad_clip: float = 5.0
    log_every: int = 1


@dataclass
class MetricsSection:
    sigma: float = 6.0


@dataclass
class RunConfig:
    seed: int = 0
    workdir: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    align: AlignSection = field(default_factory=AlignSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    # -- derived views ---------------------------------------------------

    def dims(self) -> ModelDims:
        m = self.model
        return ModelDims(d=m.d, e=m.e, d_raw=self.data.d_raw, n_pool=m.n_pool,
                         epsilon=m.epsilon, k_rel=m.k_rel, gcn_layers=m.gcn_layers,
                         mapper_hidden=m.mapper_hidden, critic_hidden=m.critic_hidden,
                         disc_hidden=m.disc_hidden, max_len=m.max_len)

    def grammar(self) -> GrammarConfig:
        return build_grammar(self.data.grammar, substream(self.seed, "grammar-prices"))

    def data_dir(self) -> str:
        return os.path.join(self.workdir, "data")

    def eval_dir(self) -> str:
        return os.path.join(self.workdir, "eval")

    def run_dir(self) -> str:
        return os.path.join(self.workdir, "run")

    def echo(self) -> dict:
        tree = dataclasses.asdict(self)
        return tree


def build_grammar(spec, price_seed: int) -> GrammarConfig:
    """Turn the config's grammar section into a GrammarConfig."""
    if spec is None:
        raise ConfigError("data.grammar is required (use 'default' or an inventory mapping)")
    if spec == "default":
        return default_grammar(price_seed=price_seed)
    if not isinstance(spec, dict):
        raise ConfigError("data.grammar must be 'default' or a mapping")
    known = {"nouns", "adjectives", "relations", "brands", "prices", "n_prices",
             "max_len", "p_attribute", "p_relation", "p_brand", "p_price"}
    unknown = sorted(set(spec) - known)
    if unknown:
        raise ConfigError(f"unknown grammar keys: {unknown}")
    base = default_grammar(price_seed=price_seed, n_prices=int(spec.get("n_prices", 40)))
    kwargs = dict(
        nouns={cls: tuple(ns) for cls, ns in spec.get("nouns", base.nouns).items()},
        adjectives={cls: tuple(a) for cls, a in spec.get("adjectives", base.adjectives).items()},
        relations=tuple(Relation(*r) for r in spec["relations"]) if "relations" in spec
        else base.relations,
        brands=tuple(spec.get("brands", base.brands)),
        prices=tuple(str(p) for p in spec.get("prices", base.prices)),
    )
    for name in ("max_len", "p_attribute", "p_relation", "p_brand", "p_price"):
        if name in spec:
            kwargs[name] = spec[name]
    try:
        return GrammarConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid grammar: {exc}") from exc


def _coerce(value, annotation):
    # annotations are strings under `from __future__ import annotations`
    if annotation in (float, "float") and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build_section(cls, tree: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(tree) - set(known))
    if unknown:
        raise ConfigError(f"unknown key {path}{unknown[0]!r}")
    kwargs = {name: _coerce(value, known[name].type) for name, value in tree.items()}
    return cls(**kwargs)


_SECTIONS = {"data": DataSection, "model": ModelSection, "pretrain": PretrainSection,
             "align": AlignSection, "metrics": MetricsSection}


def config_from_dict(tree: dict) -> RunConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    top_known = {"seed", "workdir"} | set(_SECTIONS)
    unknown = sorted(set(tree) - top_known)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    kwargs = {}
    for key in ("seed", "workdir"):
        if key in tree:
            kwargs[key] = tree[key]
    for key, cls in _SECTIONS.items():
        section_tree = tree.get(key, {})
        if not isinstance(section_tree, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        kwargs[key] = _build_section(cls, section_tree, f"{key}.")
    config = RunConfig(**kwargs)
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    if not isinstance(config.seed, int):
        raise ConfigError("seed must be an integer")
    d = config.data
    if d.grammar is None:
        raise ConfigError("data.grammar is required (use 'default' or an inventory mapping)")
    if d.min_objects < 1 or d.min_objects > d.max_objects:
        raise ConfigError(f"data: empty object range [{d.min_objects}, {d.max_objects}]")
    if d.num_scenes < 1 or d.num_sentences < 1:
        raise ConfigError("data.num_scenes and data.num_sentences must be positive")
    m = config.model
    for name in ("d", "n_pool", "k_rel", "gcn_layers", "max_len"):
        if getattr(m, name) < 1:
            raise ConfigError(f"model.{name} must be positive")
    if not 0.0 < m.epsilon <= 1.0:
        raise ConfigError("model.epsilon must lie in (0, 1]")
    a = config.align
    for name in ("lambda_a", "lambda_c", "lambda_l", "gp_weight"):
        if getattr(a, name) < 0:
            raise ConfigError(f"align.{name} must be nonnegative")
    if a.n_critic < 1:
        raise ConfigError("align.n_critic must be >= 1")
    config.grammar()   # raises ConfigError on a bad inventory


def apply_override(tree: dict, dotted: str) -> None:
    """Apply one 'a.b.c=value' assignment onto the raw config mapping."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} must look like key=value")
    key, _, raw = dotted.partition("=")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {dotted!r} has an empty key")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends through a scalar")
    node[parts[-1]] = value


def load_config(path, overrides=(), env=None) -> RunConfig:
    """Load, override and validate a run configuration.

    The MAGIC_SEED environment variable, when set, wins over the file seed.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    for dotted in overrides:
        apply_override(tree, dotted)
    env = os.environ if env is None else env
    if env.get("MAGIC_SEED"):
        try:
            tree["seed"] = int(env["MAGIC_SEED"])
        except ValueError as exc:
            raise ConfigError(f"MAGIC_SEED must be an integer: {env['MAGIC_SEED']!r}") from exc
    return config_from_dict(tree)
