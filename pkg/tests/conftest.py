import numpy as np
import pytest

from symode.datasets import GenConfig, build_sample, sample_to_record, vocab_for


@pytest.fixture(scope="session")
def toy_config():
    """Small, fast generation config with the 2-digit vocabulary."""
    return GenConfig(
        d_max=2,
        dimension_weights=(1.0, 1.0),
        max_depth=2,
        max_binary_ops=2,
        n_points=30,
        t_span=6.0,
        mantissa_digits=2,
        noise_levels=(0.0,),
    )


@pytest.fixture(scope="session")
def toy_vocab(toy_config):
    return vocab_for(toy_config)


@pytest.fixture(scope="session")
def toy_records(toy_config, toy_vocab):
    """A handful of accepted dataset records for model-side tests."""
    records = []
    seed = 0
    while len(records) < 8 and seed < 200:
        result = build_sample(toy_config, seed)
        seed += 1
        if hasattr(result, "system"):
            records.append(sample_to_record(result, toy_vocab))
    assert len(records) == 8
    return records
