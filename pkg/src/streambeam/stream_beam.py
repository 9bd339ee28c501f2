"""Streaming beam search for simultaneous translation.

All hypotheses in the beam have read the same source tokens. Hypotheses
whose write probability reaches the threshold are expanded by every
vocabulary token and the best ``k`` candidates (expanded writers together
with the hypotheses waiting to read) are kept; this repeats until every kept
hypothesis wants to read, and then one source token is read for all of them.

Output is emitted in two flavours. The longest token prefix shared by the
whole beam can no longer change and is emitted as final; the remainder of
the best hypothesis is emitted as intermediate. Speculative input (ASR
intermediates, trailing word fragments) is decoded from a checkpoint that is
rewound afterwards, so it never influences the finals.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable

from .events import (
    AsrEvent,
    EventKind,
    TranslationEvent,
    segment_sentences,
    split_stable_prefix,
)
from .model import DecoderOutput, ModelState, SimultaneousModel
from .tokenizer import Vocabulary, detokenize, tokenize


@dataclass(frozen=True)
class EngineConfig:
    beam_size: int = 1
    write_threshold: float = 0.5
    len_a: float = 1.5
    len_b: float = 5.0
    # per-hypothesis expansion limit (best tokens only); None expands all
    max_expansions: int | None = None

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 <= self.write_threshold <= 1.0:
            raise ValueError("write_threshold must lie in [0, 1]")
        if self.max_expansions is not None and self.max_expansions < 1:
            raise ValueError("max_expansions must be >= 1")

    def length_cap(self, source_tokens: int) -> int:
        return math.floor(self.len_a * source_tokens + self.len_b)

    @classmethod
    def from_json(cls, path: str | os.PathLike, **overrides) -> "EngineConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    sum_log_prob: float
    state: ModelState
    finished: bool = False
    # decoder output for the next position, valid until the next read
    pending: tuple[DecoderOutput, ModelState] | None = field(default=None, compare=False)

    @property
    def reads(self) -> int:
        return self.state.read_count


def score(hyp: Hypothesis) -> float:
    """Length-normalized log probability; the write probability plays no part."""
    return hyp.sum_log_prob / max(1, len(hyp.tokens))


def _common_prefix(seqs: list[tuple[int, ...]]) -> tuple[int, ...]:
    first = seqs[0]
    n = min(len(s) for s in seqs)
    i = 0
    while i < n and all(s[i] == first[i] for s in seqs):
        i += 1
    return first[:i]


@dataclass(frozen=True)
class _Snapshot:
    beam: tuple[Hypothesis, ...]
    emitted_final_tokens: tuple[int, ...]
    source_tokens_read: tuple[int, ...]


class SearchState:
    """Beam search state for one sentence.

    Operations mutate the state in place. Hypotheses and model states are
    immutable, so a checkpoint only has to hold on to the current tuples.
    """

    def __init__(self, model: SimultaneousModel, config: EngineConfig):
        self.model = model
        self.config = config
        self.k = config.beam_size
        self.beam: list[Hypothesis] = [Hypothesis((), 0.0, model.initial_state())]
        self.emitted_final_tokens: tuple[int, ...] = ()
        self.source_tokens_read: tuple[int, ...] = ()
        self.saved: _Snapshot | None = None

    @property
    def vocab(self) -> Vocabulary:
        return self.model.vocab

    @property
    def eos_read(self) -> bool:
        return bool(self.source_tokens_read) and self.source_tokens_read[-1] == self.vocab.eos_id

    @property
    def source_len(self) -> int:
        """Source tokens read, not counting the input EOS."""
        return len(self.source_tokens_read) - int(self.eos_read)

    def live(self) -> list[Hypothesis]:
        return [h for h in self.beam if not h.finished]

    def best(self) -> Hypothesis:
        # max() keeps the first of equal scores, i.e. the earlier hypothesis
        return max(self.beam, key=score)

    def snapshot(self) -> _Snapshot:
        return _Snapshot(tuple(self.beam), self.emitted_final_tokens, self.source_tokens_read)

    # -- decoding --------------------------------------------------------

    def _evaluate(self) -> None:
        todo = [i for i, h in enumerate(self.beam) if not h.finished and h.pending is None]
        if not todo:
            return
        hyps = [self.beam[i] for i in todo]
        last = [h.tokens[-1] if h.tokens else self.vocab.bos_id for h in hyps]
        results = self.model.decoder_step_batched([h.state for h in hyps], last)
        for i, res in zip(todo, results):
            self.beam[i] = replace(self.beam[i], pending=res)

    def _wants_write(self, hyp: Hypothesis, force: bool) -> bool:
        if hyp.finished:
            return False
        if force:
            return True
        if len(hyp.tokens) >= self.config.length_cap(self.source_len):
            return False
        return hyp.pending[0].write_prob >= self.config.write_threshold

    def _children(self, hyp: Hypothesis) -> list[Hypothesis]:
        out, new_state = hyp.pending
        lp = out.log_probs
        eos = self.vocab.eos_id
        allow_eos = self.eos_read
        cap = self.config.length_cap(self.source_len)
        order: Iterable[int] = [
            t for t in range(len(lp)) if lp[t] != -math.inf and (allow_eos or t != eos)
        ]
        if self.config.max_expansions is not None:
            # stable ordering so ties keep the lower token id
            order = sorted(order, key=lambda t: -lp[t])[: self.config.max_expansions]
            order = sorted(order)
        children = []
        for tok in order:
            logp = float(lp[tok])
            tokens = hyp.tokens + (tok,)
            finished = tok == eos or (allow_eos and len(tokens) >= cap)
            children.append(Hypothesis(tokens, hyp.sum_log_prob + logp, new_state, finished))
        return children

    def expand_writers(self, force: bool = False) -> None:
        """Expand writing hypotheses until every kept one wants to read.

        With ``force`` the write probability is ignored and expansion runs
        until every kept hypothesis is finished.
        """
        if not self.live():
            return
        if force:
            cap = self.config.length_cap(self.source_len)
            self.beam = [
                replace(h, finished=True) if not h.finished and len(h.tokens) >= cap else h for h in self.beam
            ]
        while True:
            self._evaluate()
            writers = [h for h in self.beam if self._wants_write(h, force)]
            if not writers:
                return
            candidates = [h for h in self.beam if not self._wants_write(h, force)]
            for h in writers:
                candidates.extend(self._children(h))
            candidates.sort(key=score, reverse=True)
            self.beam = candidates[: self.k]
            if not self.beam:
                raise RuntimeError("beam became empty; the model assigns no probability to any token")

    def read_token(self, token: int) -> None:
        if not 0 <= token < len(self.vocab):
            raise ValueError(f"token id {token} out of range for vocabulary of size {len(self.vocab)}")
        if self.eos_read:
            raise ValueError("the input EOS has already been read")
        for h in self.live():
            if h.pending is not None and self._wants_write(h, False):
                raise ValueError("read_token called while a hypothesis still wants to write")
        live_idx = [i for i, h in enumerate(self.beam) if not h.finished]
        states = self.model.encoder_append_shared([self.beam[i].state for i in live_idx], token)
        for i, s in zip(live_idx, states):
            self.beam[i] = replace(self.beam[i], state=s, pending=None)
        self.source_tokens_read += (token,)

    def feed(self, tokens: Iterable[int]) -> None:
        for tok in tokens:
            self.read_token(tok)
            self.expand_writers()

    # -- output ----------------------------------------------------------

    def _event(self, kind: EventKind, tokens: tuple[int, ...]) -> TranslationEvent:
        text = detokenize(self.vocab, tokens, skip_special=True)
        return TranslationEvent(kind, text, len(self.source_tokens_read))

    def emit_final(self) -> TranslationEvent | None:
        prefix = _common_prefix([h.tokens for h in self.beam])
        if len(prefix) <= len(self.emitted_final_tokens):
            return None
        new = prefix[len(self.emitted_final_tokens) :]
        self.emitted_final_tokens = prefix
        return self._event(EventKind.FINAL, new)

    def emit_intermediate(self) -> TranslationEvent:
        best = self.best()
        return self._event(EventKind.INTERMEDIATE, best.tokens[len(self.emitted_final_tokens) :])

    def checkpoint(self) -> None:
        self.saved = self.snapshot()

    def rewind(self) -> None:
        if self.saved is None:
            raise ValueError("no checkpoint to rewind to")
        self.beam = list(self.saved.beam)
        self.emitted_final_tokens = self.saved.emitted_final_tokens
        self.source_tokens_read = self.saved.source_tokens_read

    def finalize_sentence(self) -> list[TranslationEvent]:
        """Write until the beam is finished, then finalize the best hypothesis."""
        if not self.eos_read:
            raise ValueError("finalize_sentence requires the input EOS to be read")
        self.expand_writers(force=True)
        best = self.best()
        self.beam = [best]
        event = self.emit_final()
        return [event] if event is not None else []


def decode_tokens(model: SimultaneousModel, config: EngineConfig, source: Iterable[int]) -> SearchState:
    """Decode a complete token sequence (EOS appended) and return the final state."""
    state = SearchState(model, config)
    state.feed(source)
    state.read_token(model.vocab.eos_id)
    state.finalize_sentence()
    return state


# -- event-driven session ---------------------------------------------------


@dataclass
class SentenceRecord:
    sentence_id: int
    source: str
    translation: str = ""


class StreamingTranslator:
    """Turns a stream of ASR events into a stream of translation events.

    Each input event yields any new final output followed by exactly one
    intermediate carrying the best hypothesis beyond the finals. A sentence
    terminator in finalized input closes the sentence: the input EOS is read,
    the beam is written out and the next sentence starts from a fresh state.
    """

    separator = " "
    state_class = SearchState

    def __init__(self, model: SimultaneousModel, config: EngineConfig):
        self.model = model
        self.config = config
        self.state = self.state_class(model, config)
        self.state.checkpoint()
        self.pending = ""  # finalized ASR text that does not end at a word boundary
        self.sentence_id = 0
        self.sentence_source = ""
        self.sentence_output = ""
        self.finals = ""
        self.sentences: list[SentenceRecord] = []
        self.last_seq_no: int | None = None

    @property
    def vocab(self) -> Vocabulary:
        return self.model.vocab

    def _at_sentence_start(self, state: SearchState) -> bool:
        return not state.source_tokens_read

    def _source_words(self) -> int:
        return len(self.sentence_source.split())

    def _stamp(self, ev: TranslationEvent) -> TranslationEvent:
        return replace(ev, sentence_id=self.sentence_id, source_words=self._source_words())

    def _final(self, ev: TranslationEvent | None, out: list[TranslationEvent]) -> None:
        if ev is None or not ev.text:
            return
        ev = self._stamp(ev)
        self.finals += ev.text
        self.sentence_output += ev.text
        out.append(ev)

    def _sentence_text(self, done: list[TranslationEvent], before: str) -> str:
        text = "".join(e.text for e in done)
        full = before + text
        if full and not full[-1].isspace():
            text += self.separator
        return text

    def _close_sentence(self, out: list[TranslationEvent]) -> None:
        state = self.state
        state.read_token(self.vocab.eos_id)
        text = self._sentence_text(state.finalize_sentence(), self.sentence_output)
        self._final(TranslationEvent(EventKind.FINAL, text, len(state.source_tokens_read)), out)
        self.sentences.append(SentenceRecord(self.sentence_id, self.sentence_source.strip(), self.sentence_output))
        self.sentence_id += 1
        self.sentence_source = ""
        self.sentence_output = ""
        self.state = self.state_class(self.model, self.config)
        self.state.checkpoint()

    def _consume_stable(self, text: str, out: list[TranslationEvent]) -> None:
        for piece, ends in segment_sentences(text):
            if self._at_sentence_start(self.state):
                piece = piece.lstrip()
            if piece:
                self.sentence_source += piece
                self.state.feed(tokenize(self.vocab, piece).ids)
                self._final(self.state.emit_final(), out)
            if ends and self.state.source_tokens_read:
                self._close_sentence(out)

    def _speculate(self, text: str) -> TranslationEvent:
        """Decode ``text`` from the checkpoint, report the result, rewind."""
        state = self.state
        display = ""
        work = state
        for piece, ends in segment_sentences(text):
            if self._at_sentence_start(work):
                piece = piece.lstrip()
            if piece:
                work.feed(tokenize(self.vocab, piece).ids)
            if ends and work.source_tokens_read:
                work.read_token(self.vocab.eos_id)
                before = self.sentence_output if work is state else ""
                display += self._sentence_text(work.finalize_sentence(), before)
                # later sentences of the speculative text are throwaway states
                work = self.state_class(self.model, self.config)
        display += work.emit_intermediate().text
        state.rewind()
        return self._stamp(TranslationEvent(EventKind.INTERMEDIATE, display, len(state.source_tokens_read)))

    def _check_seq(self, event: AsrEvent) -> None:
        if self.last_seq_no is not None and event.seq_no <= self.last_seq_no:
            raise ValueError(f"event seq_no {event.seq_no} does not follow {self.last_seq_no}")
        self.last_seq_no = event.seq_no

    def process_event(self, event: AsrEvent) -> list[TranslationEvent]:
        self._check_seq(event)
        out: list[TranslationEvent] = []
        if event.kind is EventKind.FINAL:
            split = split_stable_prefix(self.pending + event.text)
            self._consume_stable(split.stable, out)
            self.pending = split.unstable
            self.state.checkpoint()
            out.append(self._speculate(self.pending))
        else:
            out.append(self._speculate(self.pending + event.text))
        return out

    def finish(self) -> list[TranslationEvent]:
        """End of stream: treat leftover input as stable and close the sentence."""
        out: list[TranslationEvent] = []
        if self.pending:
            self._consume_stable(self.pending, out)
            self.pending = ""
        if self.state.source_tokens_read:
            self._close_sentence(out)
        self.state.checkpoint()
        return out
