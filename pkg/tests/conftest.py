import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)   # reduction order must not depend on the host

from magic import ModelDims, build_vocabulary, default_grammar, generate_sentence_corpus


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def small_corpus(grammar):
    return generate_sentence_corpus(1234, grammar, count=60)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocabulary(small_corpus, embedding_dim=16)


@pytest.fixture(scope="session")
def tiny_dims():
    return ModelDims(d=16, e=12, d_raw=8, n_pool=2, epsilon=0.1, k_rel=3,
                     gcn_layers=2, critic_hidden=10, disc_hidden=10, max_len=20)
