"""Diverse, unpaired captioning of synthetic text-rich scenes."""

from .alignment import (AlignmentHyperparams, CaptionModel, Critic,
                        DomainMapper, LanguageDiscriminator, corrupt_sentence,
                        critic_gap, critic_loss, cycle_alignment_loss,
                        generate_captions, generator_adversarial_loss,
                        generator_language_loss, language_discriminator_loss,
                        pretrain_language_discriminator, train_magic)
from .autoencoder import (CopyCandidateSet, DecodedSentence, DivergenceError,
                          SentenceAutoEncoder, pretrain_autoencoder)
from .bundle import (BundleChecksumError, BundleError, BundleFormatError,
                     BundleIOError, BundleKindError, BundleVersionError,
                     load_bundle, save_bundle)
from .config import ConfigError, RunConfig, load_config
from .data import (DataError, GraphNode, MultimodalRelationalGraph,
                   MultimodalScene, ObjectFeature, ReferenceSet, SceneGraph,
                   SceneSet, Sentence, SentenceCorpus, TextToken, TrainingData,
                   Vocabulary, build_vocabulary)
from .encoder import (AugmentedObject, CentralObjectPool,
                      RelationalGraphEncoder, attend_text, select_pool)
from .grammar import (GrammarConfig, ParseError, default_grammar,
                      generate_sentence_corpus, parse_scene_graph, verbalize)
from .metrics import (EvaluationReport, MetricError, bleu, cider, div_n,
                      evaluate_run, re_4, self_cider, tokenize)
from .nets import ModelDims
from .world import SceneConfig, generate_dataset, generate_scene

__version__ = "0.1.0"
