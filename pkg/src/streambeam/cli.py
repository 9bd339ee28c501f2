"""Replay and benchmark harness.

Feeds an ASR event log (or plain sentences split into word-by-word finals)
through the streaming engine or the retranslation baseline and writes a
metrics report plus the full output and display traces.

    streambeam --mode streaming --beam 2 --sentences src.txt --refs ref.txt --out runs/b2
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .baseline import RetranslationSession
from .events import AsrEvent, EventKind, EventLogError, TranslationEvent, WORD_BOUNDARY_CHARS, read_events_jsonl
from .metrics import CostCounters, DisplayTrace, LagTrace, MetricsReport, average_lag, bleu, char_flicker
from .model import SyntheticModel, SyntheticModelConfig
from .stream_beam import EngineConfig, SentenceRecord, StreamingTranslator
from .tokenizer import Vocabulary

log = logging.getLogger("streambeam")

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_CONFIG_ERROR = 3


class InputError(Exception):
    pass


class ConfigError(Exception):
    pass


@dataclass
class RunSpec:
    mode: str
    beam_size: int
    output_dir: str
    events_file: str | None = None
    sentences_file: str | None = None
    model_config_path: str | None = None
    references_path: str | None = None
    write_threshold: float = 0.5
    len_a: float = 1.5
    len_b: float = 5.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("streaming", "retranslate"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.beam_size < 1:
            raise ConfigError("beam size must be >= 1")
        if (self.events_file is None) == (self.sentences_file is None):
            raise ConfigError("exactly one of events_file and sentences_file is required")


def simulate_word_feed(sentence: str, start_seq: int = 0) -> list[AsrEvent]:
    """One final event per whitespace-separated word, each but the last followed by a space."""
    words = sentence.split()
    return [
        AsrEvent(EventKind.FINAL, w if i == len(words) - 1 else w + " ", start_seq + i)
        for i, w in enumerate(words)
    ]


@dataclass
class RunResult:
    report: MetricsReport
    steps: list[tuple[int, list[TranslationEvent]]]
    display: list[tuple[int, int, str]]  # (seq_no, sentence_id, display)
    sentences: list[SentenceRecord]


def _load_events(spec: RunSpec) -> list[AsrEvent]:
    try:
        if spec.events_file is not None:
            with open(spec.events_file, encoding="utf-8") as fh:
                return list(read_events_jsonl(fh))
        with open(spec.sentences_file, encoding="utf-8") as fh:
            events: list[AsrEvent] = []
            for line in fh:
                if line.strip():
                    events.extend(simulate_word_feed(line.strip(), len(events)))
            return events
    except EventLogError as exc:
        raise InputError(f"{spec.events_file}: {exc}") from exc
    except OSError as exc:
        raise InputError(str(exc)) from exc


def vocabulary_for(texts: Iterable[str]) -> Vocabulary:
    """Characters and whole words of ``texts``; used when no vocabulary file is given."""
    words: list[str] = []
    chars: set[str] = set()
    for text in texts:
        chars.update(text)
        word = ""
        for ch in text:
            if ch in WORD_BOUNDARY_CHARS:
                words.append(word)
                word = ""
            else:
                word += ch
        words.append(word)
    return Vocabulary.build(sorted(set(words)), chars | {" "})


def _build_model(spec: RunSpec, events: list[AsrEvent]) -> SyntheticModel:
    try:
        if spec.model_config_path is None:
            config = SyntheticModelConfig(seed=spec.seed or 0, vocab=vocabulary_for(e.text for e in events))
        else:
            with open(spec.model_config_path, encoding="utf-8") as fh:
                has_vocab = "vocab_path" in json.load(fh)
            vocab = None if has_vocab else vocabulary_for(e.text for e in events)
            config = SyntheticModelConfig.from_json(spec.model_config_path, vocab=vocab, seed=spec.seed)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"model config: {exc}") from exc
    return SyntheticModel(config, CostCounters())


def _lag_traces(events: Sequence[TranslationEvent], sentences: Sequence[SentenceRecord]) -> list[LagTrace]:
    finals: dict[int, list[TranslationEvent]] = {}
    for ev in events:
        if ev.kind is EventKind.FINAL:
            finals.setdefault(ev.sentence_id, []).append(ev)
    traces = []
    for rec in sentences:
        source_len = len(rec.source.split())
        target_len = len(rec.translation.split())
        if source_len == 0 or target_len == 0:
            continue
        delays: list[int] = []
        text = ""
        evs = finals.get(rec.sentence_id, [])
        for j, ev in enumerate(evs):
            text += ev.text
            complete = len(text.split())
            if j < len(evs) - 1 and text and not text[-1].isspace():
                complete -= 1  # last word may still grow
            g = min(ev.source_words, source_len) if j < len(evs) - 1 else source_len
            delays.extend([g] * (complete - len(delays)))
        traces.append(LagTrace(tuple(delays), source_len, target_len))
    return traces


def _per_sentence_flicker(display: Sequence[tuple[int, int, str]], n_sentences: int) -> list[float]:
    """Flicker of the display writes made while each recorded sentence was open."""
    pairs: dict[int, list[tuple[str, str]]] = {}
    prev: str | None = None
    for _, sid, text in display:
        if prev is not None:
            pairs.setdefault(sid, []).append((prev, text))
        prev = text
    out = []
    for sid in range(n_sentences):
        values = [char_flicker([a, b]) for a, b in pairs.get(sid, []) if a]
        out.append(sum(values) / len(values) if values else 0.0)
    return out


def _read_references(path: str) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.strip() for line in fh if line.strip()]
    except OSError as exc:
        raise InputError(f"references: {exc}") from exc


def execute(spec: RunSpec, events: list[AsrEvent]) -> RunResult:
    """Run one session over ``events`` and compute the metrics."""
    model = _build_model(spec, events)
    try:
        config = EngineConfig(spec.beam_size, spec.write_threshold, spec.len_a, spec.len_b)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    session = (
        StreamingTranslator(model, config) if spec.mode == "streaming" else RetranslationSession(model, config)
    )
    references = _read_references(spec.references_path) if spec.references_path else None

    start = time.perf_counter()
    steps: list[tuple[int, list[TranslationEvent]]] = []
    display: list[tuple[int, int, str]] = []
    finals = ""
    intermediate = ""
    last_seq = -1
    try:
        for event in events:
            steps.append((event.seq_no, session.process_event(event)))
            last_seq = event.seq_no
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    steps.append((last_seq + 1, session.finish()))
    model.counters.wall_clock_ms = int((time.perf_counter() - start) * 1000)

    trace = DisplayTrace()
    for seq_no, out in steps:
        if not out:
            continue
        for ev in out:
            if ev.kind is EventKind.FINAL:
                finals += ev.text
                intermediate = ""
            else:
                intermediate = ev.text
        trace.write(finals + intermediate)
        display.append((seq_no, out[-1].sentence_id, finals + intermediate))

    all_events = [ev for _, out in steps for ev in out]
    sentences = session.sentences
    lags = [average_lag(t) for t in _lag_traces(all_events, sentences)]
    score = None
    if references is not None:
        if len(references) != len(sentences):
            raise InputError(f"{len(references)} references for {len(sentences)} translated sentences")
        score = bleu([r.split() for r in references], [s.translation.split() for s in sentences])
    report = MetricsReport(
        bleu=score,
        average_lag=sum(lags) / len(lags) if lags else 0.0,
        char_flicker_pct=char_flicker(trace),
        counters=model.counters,
        per_sentence_flicker_pct=_per_sentence_flicker(display, len(sentences)),
    )
    return RunResult(report, steps, display, sentences)


def write_outputs(result: RunResult, events: Sequence[AsrEvent], output_dir: str | os.PathLike) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for seq_no, evs in result.steps:
            for ev in evs:
                fh.write(json.dumps({"input_seq_no": seq_no, **ev.to_dict()}, ensure_ascii=False) + "\n")
    with open(out / "display.jsonl", "w", encoding="utf-8") as fh:
        for seq_no, sid, text in result.display:
            fh.write(json.dumps({"input_seq_no": seq_no, "sentence_id": sid, "display": text}, ensure_ascii=False) + "\n")
    with open(out / "input_events.jsonl", "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def run(spec: RunSpec) -> MetricsReport:
    events = _load_events(spec)
    result = execute(spec, events)
    write_outputs(result, events, spec.output_dir)
    return result.report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streambeam", description=__doc__.split("\n\n")[0])
    p.add_argument("--mode", choices=("streaming", "retranslate"), default="streaming")
    p.add_argument("--beam", type=int, default=1, help="beam size")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--events", help="JSONL ASR event log")
    src.add_argument("--sentences", help="UTF-8 text, one sentence per line, fed word by word")
    p.add_argument("--model", help="synthetic model config JSON")
    p.add_argument("--refs", help="reference translations, one per line; enables BLEU")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--write-threshold", type=float, default=0.5)
    p.add_argument("--len-a", type=float, default=1.5)
    p.add_argument("--len-b", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=None, help="model seed (overrides the config; default 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = RunSpec(
            mode=args.mode,
            beam_size=args.beam,
            output_dir=args.out,
            events_file=args.events,
            sentences_file=args.sentences,
            model_config_path=args.model,
            references_path=args.refs,
            write_threshold=args.write_threshold,
            len_a=args.len_a,
            len_b=args.len_b,
            seed=args.seed,
        )
        report = run(spec)
    except InputError as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT_ERROR
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG_ERROR
    log.info("wall clock %d ms", report.counters.wall_clock_ms)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
