"""Streaming beam search for simultaneous machine translation."""

from .baseline import RetranslationSession, beam_search_full
from .events import (
    AsrEvent,
    EventKind,
    SourceSplit,
    TranslationEvent,
    accumulate_final,
    detect_sentence_end,
    split_stable_prefix,
)
from .metrics import CostCounters, DisplayTrace, LagTrace, MetricsReport, average_lag, bleu, char_flicker
from .model import DecoderOutput, ModelState, SyntheticModel, SyntheticModelConfig, synthetic_distribution
from .stream_beam import EngineConfig, Hypothesis, SearchState, StreamingTranslator, score
from .tokenizer import TokenSeq, Vocabulary, detokenize, tokenize

__version__ = "0.1.0"
