import numpy as np
import pytest

from utils.config import TrainingSettings
from utils.lineproc import LineImage, LineSample
from utils.model import Codec
from utils.netspec import instantiate, parse_spec

TINY_SPEC = "conv=2:3x3,pool=2x2,lstm=4,dropout=0.0"
TINY_HEIGHT = 8


@pytest.fixture
def tiny_settings():
    return TrainingSettings(
        batch_size=4,
        learning_rate=1e-2,
        augment=1,
        patience=2,
        max_epochs=2,
        min_eval_samples=1,
        val_fraction=0.2,
        input_height=TINY_HEIGHT,
        max_steps=3,
    )


@pytest.fixture
def tiny_model():
    return instantiate(parse_spec(TINY_SPEC), TINY_HEIGHT, Codec(("a", "b", "c")), np.random.default_rng(0))


@pytest.fixture
def make_line():
    """Random line image factory: make_line(width, source_id=..., seed=...)"""
    def factory(width=24, source_id=("ms", "p0", "l0"), seed=0, height=TINY_HEIGHT):
        rng = np.random.default_rng(seed)
        return LineImage(rng.uniform(0.0, 1.0, size=(height, width)), source_id)
    return factory


@pytest.fixture
def make_samples(make_line):
    """
    Transcribed line factory

    make_samples(texts, manuscript="ms", pages=1) spreads the texts round-robin
    over `pages` pages named p0, p1, ...
    """
    def factory(texts, manuscript="ms", pages=1, width=24):
        samples = []
        for index, text in enumerate(texts):
            source_id = (manuscript, f"p{index % pages}", f"l{index:03d}")
            samples.append(LineSample(make_line(width, source_id, seed=index), text))
        return samples
    return factory
