import logging

import numpy as np
import pytest

from utils.config import (
    DEF_SPEC,
    LOG_ENV_VAR,
    RunConfig,
    TrainingSettings,
    configure_logging,
    derive_rng,
    load_config,
    spawn_seed,
)
from utils.errors import InputError


def test_training_defaults():
    settings = TrainingSettings()
    assert (settings.batch_size, settings.learning_rate, settings.epsilon) == (16, 1e-3, 1e-7)
    assert (settings.weight_decay, settings.ema_decay) == (1e-5, 0.99)
    assert (settings.augment, settings.cutoff, settings.patience, settings.max_epochs) == (5, 150, 5, 100)
    assert settings.max_steps is None
    assert RunConfig().spec == DEF_SPEC


def write_ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_config_sections(tmp_path):
    path = write_ini(tmp_path, """
[run]
seed = 5
sizes = 1, 2
full_ensemble = yes
jobs = 3

[training]
batch_size = 4
learning_rate = 0.01
max_steps = 10
binarize = otsu
variants = wolf, graynorm

[synth]
n_manuscripts = 2
writer_jitter = 0.25
""")
    config = load_config(path)
    assert (config.seed, config.sizes, config.full_ensemble, config.jobs) == (5, (1, 2), True, 3)
    assert (config.training.batch_size, config.training.learning_rate) == (4, 0.01)
    assert config.training.max_steps == 10
    assert config.training.binarize == "otsu"
    assert config.training.variants == ("wolf", "graynorm")
    assert (config.synth.n_manuscripts, config.synth.writer_jitter) == (2, 0.25)
    assert config.synth.pages_per_ms == 12


def test_load_config_keeps_base(tmp_path):
    base = RunConfig(seed=9, jobs=2)
    config = load_config(write_ini(tmp_path, "[training]\naugment = 0\n"), base)
    assert (config.seed, config.jobs, config.training.augment) == (9, 2, 0)


@pytest.mark.parametrize(
    "text, message",
    [
        ("[model]\nlayers = 3\n", "unknown config section"),
        ("[training]\nlayers = 3\n", "unknown config key"),
        ("[training]\nbinarize = niblack\n", "unknown binarization"),
        ("[training]\nvariants = otsu, niblack\n", "unknown binarization variant"),
    ],
)
def test_load_config_rejects(tmp_path, text, message):
    with pytest.raises(InputError, match=message):
        load_config(write_ini(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(InputError, match="not found"):
        load_config(tmp_path / "absent.ini")


def test_derived_streams():
    first = derive_rng(7, "ms", "fs", 2).integers(0, 10**6, size=5)
    again = derive_rng(7, "ms", "fs", 2).integers(0, 10**6, size=5)
    other_key = derive_rng(7, "ms", "pt", 2).integers(0, 10**6, size=5)
    other_seed = derive_rng(8, "ms", "fs", 2).integers(0, 10**6, size=5)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other_key)
    assert not np.array_equal(first, other_seed)


def test_derive_rng_needs_a_seed():
    with pytest.raises(InputError, match="seed"):
        derive_rng(None, "x")


def test_spawn_seed_range():
    rng = np.random.default_rng(0)
    seeds = [spawn_seed(rng) for _ in range(100)]
    assert all(0 <= s < 2**31 - 1 for s in seeds)


def test_configure_logging(monkeypatch):
    monkeypatch.setenv(LOG_ENV_VAR, "debug")
    assert configure_logging() == logging.DEBUG
    assert configure_logging("info") == logging.INFO
    assert configure_logging("chatty") == logging.WARNING
    monkeypatch.delenv(LOG_ENV_VAR)
    assert configure_logging() == logging.WARNING
