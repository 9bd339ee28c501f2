"""Intermediate/final event protocol shared by the ASR input and MT output sides.

An ASR session produces two kinds of events. An *intermediate* carries the
current guess for everything after the last final point and may be replaced
by the next event; a *final* carries text that will never change. The
concatenation of all final texts is the session transcript.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

# Whitespace plus ASCII punctuation that separates words, and the common
# Unicode variants of the same marks.
WORD_BOUNDARY_CHARS = frozenset(
    " \t\n\r\u00a0"
    ".,;:!?\"'()"
    "¿¡"  # inverted ? and !
    "«»"  # guillemets
    "‘’“”"  # curly quotes
    "…"  # ellipsis
    "、。，！？"  # CJK comma/period, fullwidth , ! ?
)

SENTENCE_TERMINATORS = frozenset(".?!")

_SENTENCE_RE = re.compile(r"[^.?!]*[.?!]+|[^.?!]+\Z")


class EventKind(str, enum.Enum):
    INTERMEDIATE = "intermediate"
    FINAL = "final"


@dataclass(frozen=True)
class AsrEvent:
    kind: EventKind
    text: str
    seq_no: int
    timestamp_ms: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "text": self.text,
                "seq_no": self.seq_no,
                "timestamp_ms": self.timestamp_ms,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_dict(cls, obj: dict) -> "AsrEvent":
        kind = EventKind(obj["kind"])
        text = obj["text"]
        seq_no = obj["seq_no"]
        timestamp_ms = obj.get("timestamp_ms", 0)
        if not isinstance(text, str):
            raise ValueError("'text' must be a string")
        if not isinstance(seq_no, int) or isinstance(seq_no, bool):
            raise ValueError("'seq_no' must be an integer")
        if not isinstance(timestamp_ms, int) or timestamp_ms < 0:
            raise ValueError("'timestamp_ms' must be a non-negative integer")
        return cls(kind, text, seq_no, timestamp_ms)


@dataclass(frozen=True)
class TranslationEvent:
    """One MT output event.

    ``source_reads`` is the number of source tokens the decoder had consumed
    for the current sentence when the event was produced. ``sentence_id`` and
    ``source_words`` are bookkeeping used by the latency metrics.
    """

    kind: EventKind
    text: str
    source_reads: int
    sentence_id: int = 0
    source_words: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "text": self.text,
            "source_reads": self.source_reads,
            "sentence_id": self.sentence_id,
            "source_words": self.source_words,
        }


@dataclass(frozen=True)
class SourceSplit:
    stable: str
    unstable: str


def is_word_boundary(ch: str) -> bool:
    return ch in WORD_BOUNDARY_CHARS


def split_stable_prefix(text: str) -> SourceSplit:
    """Split ``text`` after its last word-boundary character.

    Everything up to and including the last space or punctuation mark is
    stable: its tokenization cannot change when more text arrives. The
    trailing word fragment is not.
    """
    for i in range(len(text) - 1, -1, -1):
        if text[i] in WORD_BOUNDARY_CHARS:
            return SourceSplit(text[: i + 1], text[i + 1 :])
    return SourceSplit("", text)


def accumulate_final(session_buffer: str, event: AsrEvent) -> str:
    if event.kind is not EventKind.FINAL:
        raise ValueError("accumulate_final only accepts final events")
    return session_buffer + event.text


def detect_sentence_end(text: str) -> bool:
    stripped = text.rstrip(" ")
    return bool(stripped) and stripped[-1] in SENTENCE_TERMINATORS


def segment_sentences(text: str) -> list[tuple[str, bool]]:
    """Cut ``text`` after every run of sentence terminators.

    Returns ``(piece, ends_sentence)`` pairs whose concatenation is ``text``.
    Whitespace following a terminator belongs to the next piece.
    """
    return [(m.group(0), m.group(0)[-1] in SENTENCE_TERMINATORS) for m in _SENTENCE_RE.finditer(text)]


def read_events_jsonl(lines: Iterable[str]) -> Iterator[AsrEvent]:
    """Parse a JSONL event log; errors carry the 1-based line number."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield AsrEvent.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise EventLogError(lineno, str(exc)) from exc


class EventLogError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
