import configparser
import logging
import os
import sys
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from utils.errors import InputError

DEF_SPEC = "conv=40:3x3,pool=2x2,conv=60:3x3,pool=2x2,lstm=200,dropout=0.5"
DEEP3_SPEC = (
    "conv=40:3x3,pool=2x2,conv=60:3x3,pool=2x2,conv=120:3x3,pool=2x2,"
    "lstm=200,lstm=200,lstm=200,dropout=0.5"
)
BINARIZE_METHODS = ("otsu", "sauvola", "wolf", "graynorm")
LOG_ENV_VAR = "SCRIPTINE_LOG"

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingSettings:
    """Hyperparameters of one training run (early-stopped, EMA, 5x augmented)"""
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    weight_decay: float = 1e-5
    ema_decay: float = 0.99
    augment: int = 5
    cutoff: int = 150
    patience: int = 5
    max_epochs: int = 100
    min_eval_samples: int = 1000
    val_fraction: float = 0.1
    input_height: int = 48
    binarize: str = "sauvola"
    # extra binarizations of every training line, added as augmentation
    variants: tuple = ()
    dtype: str = "float32"
    # desk-scale cap on optimizer steps per run; None trains until early stopping
    max_steps: int | None = None


@dataclass(frozen=True)
class SynthSettings:
    n_manuscripts: int = 4
    pages_per_ms: int = 12
    lines_per_page: int = 8
    alphabet_size: int = 20
    writer_jitter: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    input_path: str | None = None
    output_path: str = "out"
    spec: str = DEF_SPEC
    training: TrainingSettings = field(default_factory=TrainingSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)
    jobs: int = 1
    sizes: tuple = (2, 4, 8)
    full_ensemble: bool = False


def configure_logging(level=None):
    """
    Install a stderr handler at the level named by SCRIPTINE_LOG (default WARNING)

    Parameters:
    level: Optional explicit level name overriding the environment

    Returns:
    int: The numeric level that was applied
    """
    name = (level or os.environ.get(LOG_ENV_VAR, "WARNING")).upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(
        level=numeric,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    return numeric


def derive_rng(seed, *keys):
    """
    Create an independent random stream keyed by (seed, keys)

    String keys are folded in through CRC32 so the stream does not depend on
    Python's per-process hash randomization.

    Parameters:
    seed: Global experiment seed
    keys: Any number of int or str run identifiers

    Returns:
    numpy.random.Generator: The derived stream
    """
    if seed is None:
        raise InputError("a seed is required for stochastic operations")
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(rng):
    """Draw a child seed from a stream, for handing work to another process"""
    return int(rng.integers(0, 2**31 - 1))


def _coerce(value, template):
    if isinstance(template, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    if isinstance(template, tuple):
        parts = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(int(p) if p.lstrip("-").isdigit() else p for p in parts)
    return value.strip()


def _apply_section(obj, section):
    updates = {}
    known = {f.name: f for f in fields(obj)}
    for key, raw in section.items():
        if key not in known:
            raise InputError(f"unknown config key '{key}' in section [{section.name}]")
        current = getattr(obj, key)
        if current is None:
            updates[key] = int(raw) if key in ("seed", "max_steps") else raw.strip()
        else:
            updates[key] = _coerce(raw, current)
    return replace(obj, **updates)


def load_config(path, base=None):
    """
    Load an INI-style experiment config

    Parameters:
    path: Path to a file with optional [run], [training] and [synth] sections
    base: RunConfig to start from (defaults when omitted)

    Returns:
    RunConfig: The merged configuration
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")

    config = base or RunConfig()
    for name in parser.sections():
        if name not in ("run", "training", "synth"):
            raise InputError(f"unknown config section [{name}]")

    if parser.has_section("training"):
        config = replace(config, training=_apply_section(config.training, parser["training"]))
    if parser.has_section("synth"):
        config = replace(config, synth=_apply_section(config.synth, parser["synth"]))
    if parser.has_section("run"):
        config = _apply_section(config, parser["run"])

    if config.training.binarize not in BINARIZE_METHODS:
        raise InputError(f"unknown binarization method '{config.training.binarize}'")
    unknown = [m for m in config.training.variants if m not in BINARIZE_METHODS]
    if unknown:
        raise InputError(f"unknown binarization variant(s): {', '.join(unknown)}")
    logger.debug(f"Loaded config from {path}: {config}")
    return config
