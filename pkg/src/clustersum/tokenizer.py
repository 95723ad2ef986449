"""Corpus-driven vocabulary and document encoding.

Word-level tokenization: text is lowercased and split into ``\\w+`` runs,
punctuation discarded. Every encoded document is framed as
``[CLS] tokens... [SEP]`` and truncated to the configured maximum length.
The five special tokens occupy fixed low ids.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; whitespace and punctuation are separators."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Immutable token/id mapping with fixed special-token ids."""

    token_to_id: dict[str, int]
    id_to_token: list[str]

    pad_id: int = PAD_ID
    unk_id: int = UNK_ID
    cls_id: int = CLS_ID
    sep_id: int = SEP_ID
    mask_id: int = MASK_ID

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token_for(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIAL_TOKENS)

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the id, specials first."""
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary file {path} does not start with the special tokens")
        return cls(token_to_id={t: i for i, t in enumerate(tokens)}, id_to_token=tokens)


def build_vocab(corpus: Iterable[str], max_size: int, min_count: int = 1) -> Vocabulary:
    """Rank tokens by frequency (ties lexicographic) and keep the top ones.

    ``max_size`` bounds the total vocabulary including the five specials.
    """
    if max_size <= len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must exceed {len(SPECIAL_TOKENS)}, got {max_size}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    kept = ranked[: max_size - len(SPECIAL_TOKENS)]
    id_to_token = list(SPECIAL_TOKENS) + kept
    return Vocabulary(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
    )


@dataclass
class EncodedDocument:
    """A document as a token-id sequence framed by [CLS] and [SEP]."""

    doc_id: str
    ids: list[int]
    label: int | None = None

    @property
    def body(self) -> list[int]:
        return self.ids[1:-1]


def encode(
    text: str,
    vocab: Vocabulary,
    max_len: int,
    doc_id: str = "",
    label: int | None = None,
) -> EncodedDocument:
    """Tokenize, map unknowns to [UNK], truncate, and frame with specials."""
    if max_len < 2:
        raise ValueError(f"max_len must be at least 2, got {max_len}")
    body = [vocab.id_for(t) for t in tokenize(text)][: max_len - 2]
    return EncodedDocument(doc_id=doc_id, ids=[vocab.cls_id] + body + [vocab.sep_id], label=label)


def decode(ids: Sequence[int], vocab: Vocabulary, skip_special: bool = True) -> str:
    tokens = [
        vocab.token_for(i)
        for i in ids
        if not (skip_special and vocab.is_special(i))
    ]
    return " ".join(tokens)


def mask_for_mlm(
    doc: EncodedDocument,
    rate: float = 0.15,
    rng: np.random.Generator | None = None,
    vocab: Vocabulary | None = None,
    bert_corruption: bool = False,
) -> tuple[list[int], list[int], list[int]]:
    """Mask a random subset of body positions for masked-token prediction.

    Selects ``round(rate * body_length)`` positions, at least one, uniformly
    among non-special body positions. By default every selected token is
    replaced with [MASK]; with ``bert_corruption`` the replacement is
    80% [MASK] / 10% random token / 10% unchanged (requires ``vocab``).

    Returns ``(masked_ids, positions, original_ids)`` with positions sorted.
    """
    if rng is None:
        raise ValueError("mask_for_mlm needs an explicit rng for reproducibility")
    body_len = len(doc.ids) - 2
    if body_len < 1:
        raise ValueError(f"document {doc.doc_id!r} has no body tokens to mask")
    count = max(1, round(rate * body_len))
    positions = sorted(rng.choice(np.arange(1, body_len + 1), size=count, replace=False).tolist())
    masked = list(doc.ids)
    originals = [doc.ids[p] for p in positions]
    for p in positions:
        if bert_corruption:
            if vocab is None:
                raise ValueError("bert_corruption needs the vocabulary for random replacements")
            roll = rng.random()
            if roll < 0.8:
                masked[p] = MASK_ID
            elif roll < 0.9 and vocab.size > len(SPECIAL_TOKENS):
                masked[p] = int(rng.integers(len(SPECIAL_TOKENS), vocab.size))
            # else: keep the original token
        else:
            masked[p] = MASK_ID
    return masked, positions, originals
