"""Non-streaming beam search and the repeated-retranslation baseline.

The baseline fakes simultaneity with a full-sentence model: every incoming
event triggers a complete retranslation of the sentence received so far,
and the display is rewritten with the new result. Its cost grows
quadratically with sentence length.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from .events import AsrEvent, EventKind, TranslationEvent, segment_sentences
from .model import SimultaneousModel
from .stream_beam import EngineConfig, Hypothesis, SentenceRecord, score
from .tokenizer import detokenize, tokenize


def beam_search_full(model: SimultaneousModel, source: Sequence[int], k: int, cap: int) -> tuple[int, ...]:
    """Classic beam search with all input encoded before the first decoder step.

    ``source`` should end with EOS. The write probability is ignored.
    Candidates are ranked by length-normalized log probability; those ending
    in EOS or reaching ``cap`` tokens are set aside, the first ``k``
    unfinished ones continue. Search stops once ``k`` hypotheses finished.
    """
    if not source:
        raise ValueError("empty input")
    if k < 1:
        raise ValueError("k must be >= 1")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    eos = model.vocab.eos_id
    state = model.initial_state()
    for tok in source:
        state = model.encoder_append(state, tok)

    beam = [Hypothesis((), 0.0, state)]
    finished: list[Hypothesis] = []
    while beam and len(finished) < k:
        last = [h.tokens[-1] if h.tokens else model.vocab.bos_id for h in beam]
        results = model.decoder_step_batched([h.state for h in beam], last)
        candidates = []
        for h, (out, new_state) in zip(beam, results):
            for tok, logp in enumerate(out.log_probs.tolist()):
                if logp == float("-inf"):
                    continue
                candidates.append(Hypothesis(h.tokens + (tok,), h.sum_log_prob + logp, new_state))
        candidates.sort(key=score, reverse=True)
        beam = []
        for c in candidates:
            if c.tokens[-1] == eos or len(c.tokens) >= cap:
                finished.append(replace(c, finished=True))
            else:
                beam.append(c)
                if len(beam) == k:
                    break
    return max(finished, key=score).tokens


class RetranslationSession:
    """Fake streaming: retranslate the current sentence on every event."""

    separator = " "

    def __init__(self, model: SimultaneousModel, config: EngineConfig):
        self.model = model
        self.config = config
        self.sentence_text = ""  # finalized ASR text of the open sentence
        self.sentence_id = 0
        self.sentences: list[SentenceRecord] = []
        self.last_seq_no: int | None = None
        self.decodes = 0

    @property
    def vocab(self):
        return self.model.vocab

    def translate(self, text: str) -> str:
        ids = tokenize(self.vocab, text).ids + (self.vocab.eos_id,)
        cap = self.config.length_cap(len(ids) - 1)
        out = beam_search_full(self.model, ids, self.config.beam_size, cap)
        self.decodes += 1
        return detokenize(self.vocab, out, skip_special=True)

    def _with_separator(self, text: str) -> str:
        return text + self.separator if text and not text[-1].isspace() else text

    def _translate_pieces(self, text: str, finalize: bool) -> tuple[list[TranslationEvent], str, str]:
        """Translate each sentence in ``text``.

        Returns final events for completed sentences (only when ``finalize``),
        the display text for the rest and the unfinished source remainder.
        """
        finals: list[TranslationEvent] = []
        display = ""
        remainder = ""
        sentence_id = self.sentence_id
        for piece, ends in segment_sentences(text):
            piece = piece.lstrip()
            if not piece:
                continue
            if not ends:
                remainder = piece
                display += self.translate(piece)
                break
            translation = self._with_separator(self.translate(piece))
            n_tokens = len(tokenize(self.vocab, piece)) + 1
            if finalize:
                finals.append(
                    TranslationEvent(EventKind.FINAL, translation, n_tokens, sentence_id, len(piece.split()))
                )
                self.sentences.append(SentenceRecord(sentence_id, piece.strip(), translation))
                sentence_id += 1
            else:
                display += translation
        if finalize:
            self.sentence_id = sentence_id
        return finals, display, remainder

    def retranslate_on_event(self, event: AsrEvent) -> list[TranslationEvent]:
        if self.last_seq_no is not None and event.seq_no <= self.last_seq_no:
            raise ValueError(f"event seq_no {event.seq_no} does not follow {self.last_seq_no}")
        self.last_seq_no = event.seq_no
        out: list[TranslationEvent] = []
        if event.kind is EventKind.FINAL:
            finals, display, remainder = self._translate_pieces(self.sentence_text + event.text, finalize=True)
            out.extend(finals)
            self.sentence_text = remainder
        else:
            if self.sentence_text or event.text.strip():
                _, display, remainder = self._translate_pieces(self.sentence_text + event.text, finalize=False)
            else:
                display, remainder = "", ""
        # a completed sentence with nothing after it needs no display rewrite
        if remainder or event.kind is EventKind.INTERMEDIATE:
            n_tokens = len(tokenize(self.vocab, remainder))
            out.append(
                TranslationEvent(
                    EventKind.INTERMEDIATE, display, n_tokens, self.sentence_id, len(remainder.split())
                )
            )
        return out

    process_event = retranslate_on_event

    def finish(self) -> list[TranslationEvent]:
        out: list[TranslationEvent] = []
        text = self.sentence_text.strip()
        if text:
            translation = self._with_separator(self.translate(text))
            n_tokens = len(tokenize(self.vocab, text)) + 1
            out.append(TranslationEvent(EventKind.FINAL, translation, n_tokens, self.sentence_id, len(text.split())))
            self.sentences.append(SentenceRecord(self.sentence_id, text, translation))
            self.sentence_id += 1
        self.sentence_text = ""
        return out
