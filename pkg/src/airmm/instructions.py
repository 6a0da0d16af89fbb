"""Task vocabulary, task table, and instruction token blocks.

An instruction is three learnable prefix rows followed by the embeddings of
a two-slot task keyword looked up in the (frozen) backbone embedding table.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .errors import ConfigError, VocabularyError
from .layers import normal_param
from .numerics import Tensor, concat

PAD = "<pad>"
KEYWORD_SLOTS = 2
PREFIX_TOKENS = 3
SHARED_KEYWORD = "user information"

_WORDS = (
    PAD, "position", "LOS", "status", "precoding", "beam", "selection", "path", "loss", "user", "information",
    # filler words for backbone pretraining
    "the", "a", "of", "this", "from", "to", "and", "for", "with", "in", "is", "what", "please", "infer",
    "predict", "estimate", "report", "channel", "map", "signal", "antenna", "base", "station", "frequency",
    "power", "angle", "delay", "area", "building", "strong", "weak", "high", "low", "gain", "array", "matrix",
    "vector", "index", "value", "best", "optimal", "data", "link", "downlink", "uplink", "carrier", "noise",
    "street", "then", "again", "at", "cell", "rate",
)


class Vocab:
    """Closed word-level vocabulary; lookups are case-insensitive."""

    def __init__(self, words=_WORDS):
        words = list(words)
        if words[0] != PAD or len(set(w.lower() for w in words)) != len(words):
            raise ConfigError("vocabulary must start with PAD and have unique words")
        self.words = tuple(words)
        self._ids = MappingProxyType({w.lower(): i for i, w in enumerate(words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word.lower() in self._ids

    def id(self, word: str) -> int:
        try:
            return self._ids[word.lower()]
        except KeyError:
            raise VocabularyError(f"word not in vocabulary: {word!r}") from None

    @property
    def word_to_id(self) -> dict:
        return {w: i for i, w in enumerate(self.words)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.word_to_id, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_word_to_id(cls, mapping: dict) -> "Vocab":
        return cls([w for w, _ in sorted(mapping.items(), key=lambda kv: kv[1])])


VOCAB = Vocab()


def tokenize(text: str, vocab: Vocab = VOCAB, pad_to: int | None = KEYWORD_SLOTS) -> list[int]:
    """Word ids for ``text``; padded with PAD up to ``pad_to`` slots when given."""
    ids = [vocab.id(w) for w in text.split()]
    if pad_to is not None:
        if len(ids) > pad_to:
            raise VocabularyError(f"{text!r} needs {len(ids)} tokens, only {pad_to} keyword slots")
        ids += [vocab.id(PAD)] * (pad_to - len(ids))
    return ids


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    keyword: str
    modality: str  # "channel" or "environment"
    out_dim: int
    loss: str
    metric: str


TASK_ORDER = ("positioning", "los_nlos", "precoding", "beam_selection", "path_loss")
MODALITIES = ("channel", "environment")


def task_specs(n_t: int) -> dict[str, TaskSpec]:
    """The five downstream tasks with their modality routing and head widths."""
    table = [
        TaskSpec("positioning", "position", "channel", 2, "mse", "cdf90_m"),
        TaskSpec("los_nlos", "LOS status", "channel", 2, "cross_entropy", "accuracy"),
        TaskSpec("precoding", "precoding", "channel", 2 * n_t, "sgcs", "sgcs"),
        TaskSpec("beam_selection", "beam selection", "environment", n_t, "focal", "top1"),
        TaskSpec("path_loss", "path loss", "environment", 1, "mse", "rmse_db"),
    ]
    return {t.task_id: t for t in table}


class PrefixPrompt:
    """Learnable 3 x d_model prefix per task, or a single shared one."""

    def __init__(self, d_model: int, gen: np.random.Generator, tasks=TASK_ORDER, shared: bool = False,
                 dtype=np.float32):
        self.shared = shared
        keys = ("shared",) if shared else tuple(tasks)
        self.embeddings = {k: normal_param(gen, (PREFIX_TOKENS, d_model), 0.02, dtype, f"prefix.{k}") for k in keys}

    def for_task(self, task_id: str) -> Tensor:
        return self.embeddings["shared" if self.shared else task_id]

    def parameters(self) -> list[Tensor]:
        return list(self.embeddings.values())


def build_instruction(task: TaskSpec, prefix: PrefixPrompt | None, embed_table: Tensor,
                      vocab: Vocab = VOCAB, shared_keyword: bool = False) -> Tensor:
    """Instruction block: prefix rows (if any) then the two keyword-slot embeddings.

    With ``prefix=None`` the block is only the two keyword rows.  With
    ``shared_keyword`` every task gets the same "user information" keyword.
    """
    if embed_table.shape[0] != len(vocab):
        raise ConfigError(f"embedding table has {embed_table.shape[0]} rows, vocabulary {len(vocab)}")
    keyword = SHARED_KEYWORD if shared_keyword else task.keyword
    ids = np.array(tokenize(keyword, vocab))
    # a constant: keyword rows never receive gradient
    kw = Tensor(embed_table.data[ids])
    if prefix is None:
        return kw
    return concat([prefix.for_task(task.task_id), kw], axis=0)
