"""Quality, latency, stability and cost metrics for recorded runs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

BLEU_MAX_ORDER = 4
# numerator used for an n-gram order with zero matches when other orders match
BLEU_EPSILON = 1e-9


@dataclass
class CostCounters:
    decoder_steps: int = 0
    encoder_steps: int = 0
    batched_calls: int = 0
    wall_clock_ms: int = 0

    def record_step(self, kind: str, batch_size: int = 1) -> "CostCounters":
        if batch_size < 0:
            raise ValueError("batch_size must be non-negative")
        if kind == "decoder":
            self.decoder_steps += batch_size
            self.batched_calls += 1
        elif kind == "encoder":
            self.encoder_steps += batch_size
        else:
            raise ValueError(f"unknown step kind {kind!r}")
        return self

    def snapshot(self) -> "CostCounters":
        return CostCounters(**asdict(self))


def record_step(counters: CostCounters, kind: str, batch_size: int = 1) -> CostCounters:
    return counters.record_step(kind, batch_size)


@dataclass(frozen=True)
class LagTrace:
    """``delays[t-1]`` is the number of source words read when target word t was emitted."""

    delays: tuple[int, ...]
    source_len: int
    target_len: int


@dataclass
class DisplayTrace:
    states: list[str] = field(default_factory=list)

    def write(self, display: str) -> None:
        self.states.append(display)


@dataclass
class MetricsReport:
    bleu: float | None
    average_lag: float
    char_flicker_pct: float
    counters: CostCounters
    per_sentence_flicker_pct: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        counters = asdict(self.counters)
        # wall clock varies between runs; reports must be reproducible
        counters.pop("wall_clock_ms")
        return {
            "bleu": self.bleu,
            "average_lag": self.average_lag,
            "char_flicker_pct": self.char_flicker_pct,
            "counters": counters,
            "per_sentence_flicker_pct": self.per_sentence_flicker_pct,
        }


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu(references: Sequence[Sequence[str]], hypotheses: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-4 with a single reference per segment, on a 0-100 scale."""
    if len(references) != len(hypotheses):
        raise ValueError("references and hypotheses differ in length")
    if not references:
        raise ValueError("empty corpus")
    matches = [0] * BLEU_MAX_ORDER
    totals = [0] * BLEU_MAX_ORDER
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, BLEU_MAX_ORDER + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if not any(matches) or hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        log_p += math.log((m if m > 0 else BLEU_EPSILON) / max(t, 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / BLEU_MAX_ORDER)


def average_lag(trace: LagTrace) -> float:
    """Average lagging in source words.

    Sums ``g(t) - (t-1)/gamma`` up to the first target word emitted after the
    whole source was read, with ``gamma = target_len / source_len``.
    """
    if trace.source_len <= 0:
        raise ValueError("source_len must be positive")
    if not trace.delays or trace.target_len <= 0:
        return 0.0
    gamma = trace.target_len / trace.source_len
    total = 0.0
    tau = 0
    for t, g in enumerate(trace.delays, start=1):
        total += g - (t - 1) / gamma
        tau = t
        if g >= trace.source_len:
            break
    return total / tau


def _common_prefix_len(a: str, b: str) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


def char_flicker(trace: DisplayTrace | Sequence[str]) -> float:
    """Mean percentage of displayed characters overwritten per display write."""
    states = trace.states if isinstance(trace, DisplayTrace) else list(trace)
    per_write = [
        100.0 * (len(old) - _common_prefix_len(old, new)) / len(old)
        for old, new in zip(states, states[1:])
        if old
    ]
    if not per_write:
        return 0.0
    return sum(per_write) / len(per_write)
