"""Codec and ModelParams: the portable unit of pretraining and finetuning."""

from dataclasses import dataclass, field, replace

import numpy as np

from utils.errors import InputError

BLANK = 0


@dataclass(frozen=True)
class Codec:
    """Ordered character table. Index 0 is the CTC blank; chars[i] has index i+1."""
    chars: tuple = ()

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise InputError("codec characters must be unique")
        if any(len(c) != 1 for c in self.chars):
            raise InputError("codec entries must be single characters")

    @classmethod
    def from_texts(cls, texts):
        return cls(tuple(sorted({c for text in texts for c in text})))

    @property
    def size(self):
        return len(self.chars)

    def missing(self, texts):
        known = set(self.chars)
        return sorted({c for text in texts for c in text if c not in known})

    def extended(self, new_chars):
        """Append characters not yet present; existing indices never move"""
        known = set(self.chars)
        added = [c for c in new_chars if c not in known]
        return Codec(self.chars + tuple(dict.fromkeys(added)))

    def encode(self, text):
        index = {c: i + 1 for i, c in enumerate(self.chars)}
        try:
            return [index[c] for c in text]
        except KeyError as e:
            raise InputError(f"character {e.args[0]!r} not in codec") from None

    def decode(self, indices):
        return "".join(self.chars[i - 1] for i in indices if i != BLANK)


@dataclass(frozen=True)
class TrainMeta:
    samples_seen: int = 0
    epochs: int = 0


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    All trainable tensors of a recognizer plus its blueprint

    Treated as an immutable value: training produces new instances, arrays are
    never modified in place.
    """
    spec: object
    codec: Codec
    input_height: int
    tensors: dict
    ema_tensors: dict
    train_meta: TrainMeta = field(default_factory=TrainMeta)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def parameter_count(self):
        return int(sum(t.size for t in self.tensors.values()))

    def with_tensors(self, tensors, ema_tensors=None, train_meta=None):
        return replace(
            self,
            tensors=tensors,
            ema_tensors=self.ema_tensors if ema_tensors is None else ema_tensors,
            train_meta=self.train_meta if train_meta is None else train_meta,
        )

    def inference_view(self):
        """The same model with EMA weights in place of the raw tensors"""
        return replace(self, tensors=self.ema_tensors)

    def astype(self, dtype):
        return replace(
            self,
            tensors={k: v.astype(dtype) for k, v in self.tensors.items()},
            ema_tensors={k: v.astype(dtype) for k, v in self.ema_tensors.items()},
        )

    def identical_to(self, other):
        """Bit-level equality of codec, shapes and every tensor"""
        if self.codec != other.codec or self.input_height != other.input_height:
            return False
        if self.tensors.keys() != other.tensors.keys():
            return False
        return all(
            np.array_equal(self.tensors[k], other.tensors[k])
            and np.array_equal(self.ema_tensors[k], other.ema_tensors[k])
            for k in self.tensors
        )
