import numpy as np
import pytest

from uqpen.core import seeded_stream
from uqpen.dataset import GeneratorConfig, generate
from uqpen.model import Architecture, ConvBlock, TcnConfig


def tiny_arch(class_count=4, steps=16, channels=13):
    return Architecture(
        input_steps=steps,
        input_channels=channels,
        conv_blocks=[ConvBlock(6, 4, 0.2), ConvBlock(6, 3, 0.3)],
        tcn=TcnConfig(5, 3, [1, 2]),
        class_count=class_count,
    )


@pytest.fixture
def arch():
    return tiny_arch()


@pytest.fixture(scope="session")
def small_config():
    return GeneratorConfig(
        class_count=4,
        confusable_pairs=[(0, 1)],
        writers_right=4,
        writers_left=2,
        samples_per_writer_per_class=2,
        seed=11,
    )


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return generate(small_config)


def random_draws(rng, s, k):
    """``(s, k)`` softmax rows with a spread of sharp and flat distributions."""
    logits = rng.normal((s, k)) * rng.uniform(0.1, 8.0)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return seeded_stream(1234)
