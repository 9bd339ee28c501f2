"""Simultaneous translation model interface and a deterministic synthetic model.

A simultaneous model exposes an incremental encoder (one source token per
call), a decoder step returning a token distribution together with a write
probability, and a cloneable cached state. The synthetic model below stands
in for a trained network: its outputs are a pure function of the seed, the
source tokens read and the target tokens written, derived through a
counter-based generator, so every run is reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .metrics import CostCounters
from .tokenizer import Vocabulary


@dataclass(frozen=True)
class ModelState:
    """Encoder and decoder caches for one hypothesis.

    ``source`` is the encoder history (its length is the read count) and
    ``fed`` the tokens already pushed through the decoder, starting with
    BOS. Both are tuples, so a state is immutable and any holder can keep
    it without copying.
    """

    source: tuple[int, ...] = ()
    fed: tuple[int, ...] = ()
    eos_read: bool = False

    @property
    def read_count(self) -> int:
        return len(self.source)

    @property
    def written_tokens(self) -> tuple[int, ...]:
        return self.fed[1:]

    def clone(self) -> "ModelState":
        return replace(self)

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(self.source, dtype="<i8").tobytes())
        h.update(b"|")
        h.update(np.asarray(self.fed, dtype="<i8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DecoderOutput:
    log_probs: np.ndarray
    write_prob: float

    def __post_init__(self) -> None:
        self.log_probs.flags.writeable = False


class SimultaneousModel(Protocol):
    vocab: Vocabulary
    counters: CostCounters

    def initial_state(self) -> ModelState: ...

    def encoder_append(self, state: ModelState, token: int) -> ModelState: ...

    def encoder_append_shared(self, states: Sequence[ModelState], token: int) -> list[ModelState]: ...

    def decoder_step(self, state: ModelState, last_output: int) -> tuple[DecoderOutput, ModelState]: ...

    def decoder_step_batched(
        self, states: Sequence[ModelState], last_outputs: Sequence[int]
    ) -> list[tuple[DecoderOutput, ModelState]]: ...


@dataclass(frozen=True)
class SyntheticModelConfig:
    seed: int
    vocab: Vocabulary
    wait_k: int = 1
    write_sharpness: float = 4.0
    # spread of the per-token logits; larger means peakier distributions
    logit_scale: float = 1.0
    # EOS logit shift per target token beyond the read count
    eos_boost: float = 3.0
    allow_eos: bool = True

    def __post_init__(self) -> None:
        if self.wait_k < 0:
            raise ValueError("wait_k must be >= 0")
        if not self.write_sharpness > 0:
            raise ValueError("write_sharpness must be > 0")
        if len(self.vocab) < 4:
            raise ValueError("vocabulary needs at least one token besides BOS, EOS and UNK")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def from_json(cls, path: str | os.PathLike, vocab: Vocabulary | None = None, **overrides) -> "SyntheticModelConfig":
        """Load ``{"seed", "wait_k", "write_sharpness", "vocab_path", ...}``.

        ``vocab_path`` is resolved relative to the config file. A vocabulary
        passed in explicitly wins over the file's.
        """
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("model config must be a JSON object")
        if vocab is None:
            vocab_path = raw.get("vocab_path")
            if vocab_path is None:
                raise ValueError("model config has no vocab_path")
            vocab = Vocabulary.load(os.path.join(os.path.dirname(os.fspath(path)), vocab_path))
        known = {"seed", "wait_k", "write_sharpness", "logit_scale", "eos_boost", "allow_eos"}
        unknown = set(raw) - known - {"vocab_path"}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {k: raw[k] for k in known if k in raw}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        kwargs.setdefault("seed", 0)
        return cls(vocab=vocab, **kwargs)


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _raw_logits(config: SyntheticModelConfig, source: Sequence[int], written: Sequence[int]) -> np.ndarray:
    h = hashlib.blake2b(digest_size=16)
    h.update(config.seed.to_bytes(8, "little"))
    h.update(np.asarray(source, dtype="<i8").tobytes())
    h.update(b"|")
    h.update(np.asarray(written, dtype="<i8").tobytes())
    gen = np.random.Generator(np.random.Philox(key=int.from_bytes(h.digest(), "little")))
    u = gen.random(len(config.vocab))
    # Gumbel noise: argmax of the resulting softmax is uniform over tokens
    logits = -np.log(-np.log(u + 1e-300)) * config.logit_scale
    vocab = config.vocab
    logits[vocab.bos_id] = -np.inf
    logits[vocab.unk_id] = -np.inf
    if config.allow_eos:
        logits[vocab.eos_id] += config.eos_boost * (len(written) - len(source) + 1)
    else:
        logits[vocab.eos_id] = -np.inf
    return logits


def _normalize_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True)))


def write_probability(config: SyntheticModelConfig, reads: int, n_written: int) -> float:
    return _logistic(config.write_sharpness * (reads - n_written - config.wait_k))


def synthetic_distribution(
    config: SyntheticModelConfig,
    reads: int,
    written: Sequence[int],
    source: Sequence[int] | None = None,
) -> DecoderOutput:
    """Token distribution and write probability after ``reads`` source tokens.

    When ``source`` is given the distribution also depends on the source
    token identities; ``reads`` must then equal ``len(source)``.
    """
    if reads < 1:
        raise ValueError("at least one source token must be read")
    if source is None:
        source = (-1,) * reads
    elif len(source) != reads:
        raise ValueError("len(source) must equal reads")
    log_probs = _normalize_rows(_raw_logits(config, source, written))
    return DecoderOutput(log_probs, write_probability(config, reads, len(written)))


class SyntheticModel:
    """Deterministic stand-in for a streaming encoder-decoder.

    Every model evaluation is recorded on ``counters``.
    """

    def __init__(self, config: SyntheticModelConfig, counters: CostCounters | None = None):
        self.config = config
        self.vocab = config.vocab
        self.counters = counters if counters is not None else CostCounters()

    def initial_state(self) -> ModelState:
        return ModelState()

    def _check_token(self, token: int) -> None:
        if not 0 <= token < len(self.vocab):
            raise ValueError(f"token id {token} out of range for vocabulary of size {len(self.vocab)}")

    def _append(self, state: ModelState, token: int) -> ModelState:
        self._check_token(token)
        if state.eos_read:
            raise ValueError("cannot read past the input EOS")
        return ModelState(state.source + (token,), state.fed, token == self.vocab.eos_id)

    def encoder_append(self, state: ModelState, token: int) -> ModelState:
        new = self._append(state, token)
        self.counters.record_step("encoder", 1)
        return new

    def encoder_append_shared(self, states: Sequence[ModelState], token: int) -> list[ModelState]:
        """Append one source token to several hypotheses' states.

        All hypotheses in a beam read the same input, so the encoder work is
        done once and counted as a single encoder step.
        """
        out = [self._append(s, token) for s in states]
        self.counters.record_step("encoder", 1)
        return out

    def _advance(self, state: ModelState, last_output: int) -> ModelState:
        self._check_token(last_output)
        if state.read_count < 1:
            raise ValueError("decoder_step needs at least one source token read")
        if not state.fed:
            if last_output != self.vocab.bos_id:
                raise ValueError("the first decoder input must be BOS")
            return ModelState(state.source, (last_output,), state.eos_read)
        return ModelState(state.source, state.fed + (last_output,), state.eos_read)

    def decoder_step(self, state: ModelState, last_output: int) -> tuple[DecoderOutput, ModelState]:
        new = self._advance(state, last_output)
        out = synthetic_distribution(self.config, new.read_count, new.written_tokens, new.source)
        self.counters.record_step("decoder", 1)
        return out, new

    def decoder_step_batched(
        self, states: Sequence[ModelState], last_outputs: Sequence[int]
    ) -> list[tuple[DecoderOutput, ModelState]]:
        if len(states) != len(last_outputs):
            raise ValueError("states and last_outputs differ in length")
        if not states:
            raise ValueError("empty batch")
        new_states = [self._advance(s, t) for s, t in zip(states, last_outputs)]
        # ragged batch: rows are generated per hypothesis, normalized together
        logits = np.stack([_raw_logits(self.config, s.source, s.written_tokens) for s in new_states])
        log_probs = _normalize_rows(logits)
        results = []
        for row, s in zip(log_probs, new_states):
            wp = write_probability(self.config, s.read_count, len(s.written_tokens))
            results.append((DecoderOutput(row.copy(), wp), s))
        self.counters.record_step("decoder", len(states))
        return results
