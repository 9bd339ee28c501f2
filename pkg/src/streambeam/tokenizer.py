"""Longest-match subword tokenizer over a fixed vocabulary.

Tokens never span a word boundary: boundary characters are always emitted
as single-character tokens and matching restarts after each of them. That
makes tokenization of a prefix ending at a boundary independent of whatever
text follows.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .events import WORD_BOUNDARY_CHARS

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (BOS, EOS, UNK)


class Vocabulary:
    """Immutable token table. Ids 0, 1, 2 are BOS, EOS and UNK."""

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        seen: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if not tok:
                raise ValueError(f"empty token at id {i}")
            if tok in seen:
                raise ValueError(f"duplicate token {tok!r}")
            if i >= 3 and len(tok) > 1 and any(c in WORD_BOUNDARY_CHARS for c in tok):
                raise ValueError(f"token {tok!r} contains a word boundary")
            seen[tok] = i
        self._tokens = tuple(tokens)
        self._ids = seen
        self.max_len = max((len(t) for t in self._tokens[3:]), default=1)

    bos_id = 0
    eos_id = 1
    unk_id = 2

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n").rstrip("\r") for line in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:3]) != SPECIALS:
            raise ValueError(f"{path}: first three lines must be {', '.join(SPECIALS)}")
        return cls(lines)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")

    @classmethod
    def build(cls, words: Iterable[str] = (), alphabet: Iterable[str] = ()) -> "Vocabulary":
        """Specials, then every alphabet character, then whole-word entries.

        Characters of the words are added to the alphabet automatically so
        that any text made of those words tokenizes without UNK.
        """
        words = [w for w in dict.fromkeys(words) if w]
        chars = dict.fromkeys(alphabet)
        for w in words:
            chars.update(dict.fromkeys(w))
        entries = list(SPECIALS) + sorted(c for c in chars if c not in SPECIALS)
        entries += [w for w in words if len(w) > 1 and w not in entries]
        return cls(entries)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def __repr__(self) -> str:
        return f"Vocabulary(n={len(self)})"

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id {token_id} out of range for vocabulary of size {len(self)}")
        return self._tokens[token_id]

    def is_special(self, token_id: int) -> bool:
        return token_id < 3


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    has_unk: bool = field(default=False, compare=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def _tokenize_word(vocab: Vocabulary, word: str, out: list[int]) -> bool:
    has_unk = False
    i = 0
    while i < len(word):
        for j in range(min(len(word), i + vocab.max_len), i, -1):
            tid = vocab.id_of(word[i:j])
            if tid is not None and tid >= 3:
                out.append(tid)
                i = j
                break
        else:
            out.append(vocab.unk_id)
            has_unk = True
            i += 1
    return has_unk


def tokenize(vocab: Vocabulary, text: str) -> TokenSeq:
    out: list[int] = []
    has_unk = False
    start = 0
    for i, ch in enumerate(text):
        if ch in WORD_BOUNDARY_CHARS:
            has_unk |= _tokenize_word(vocab, text[start:i], out)
            has_unk |= _tokenize_word(vocab, ch, out)
            start = i + 1
    has_unk |= _tokenize_word(vocab, text[start:], out)
    return TokenSeq(tuple(out), has_unk)


def detokenize(vocab: Vocabulary, seq: TokenSeq | Sequence[int], *, skip_special: bool = False) -> str:
    ids = seq.ids if isinstance(seq, TokenSeq) else seq
    parts = []
    for tid in ids:
        tok = vocab.token_of(tid)
        if skip_special and tid < 3:
            continue
        parts.append(tok)
    return "".join(parts)
