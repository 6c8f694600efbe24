import numpy as np
import pytest
import torch

from coca_cxr.corpus_generator import GenConfig, build_subdatasets, generate_pairs, write_corpus
from coca_cxr.model import ModelConfig, Vocabulary, build_model
from coca_cxr.training import ExperimentConfig, SubDatasets


@pytest.fixture
def vocab():
    return Vocabulary.default()


@pytest.fixture
def tiny_config(vocab):
    return ModelConfig.tiny(vocab_size=len(vocab), max_text_len=48)


@pytest.fixture
def tiny_model(tiny_config):
    model = build_model(tiny_config, seed=0, dtype=torch.float64)
    model.eval()
    return model


@pytest.fixture
def image_pair():
    rng = np.random.default_rng(0)
    return rng.random((16, 16)), rng.random((16, 16))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """40 small pairs with a 25% held-out split, written with their sub-datasets."""
    out = tmp_path_factory.mktemp("corpus")
    config = GenConfig(image_side=16, seed=3, holdout_fraction=0.25)
    pairs = generate_pairs(40, config)
    records = write_corpus(pairs, str(out))
    build_subdatasets(records, str(out))
    Vocabulary.default().save(str(out / "vocab.txt"))
    return {"dir": str(out), "pairs": pairs, "records": records, "config": config}


@pytest.fixture
def tiny_data(tiny_corpus):
    return SubDatasets.from_directory(tiny_corpus["dir"], side=16)


def tiny_experiment(iterations=(4, 3, 3), seed=0, dtype="float64"):
    return ExperimentConfig(
        model=ModelConfig.tiny(max_text_len=48),
        stages=[{"stage": s, "iterations": n, "batch_size": 4, "log_every": 2}
                for s, n in zip((1, 2, 3), iterations)],
        seed=seed,
        dtype=dtype,
    )


@pytest.fixture
def experiment_factory():
    return tiny_experiment
