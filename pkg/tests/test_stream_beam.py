import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import content_vocab, corpus_vocab, enumerate_leaves, greedy_reference, normalized
from streambeam.events import AsrEvent, EventKind
from streambeam.model import SyntheticModel, SyntheticModelConfig
from streambeam.stream_beam import (
    EngineConfig,
    Hypothesis,
    SearchState,
    StreamingTranslator,
    decode_tokens,
    score,
)
from streambeam.tokenizer import Vocabulary, tokenize

F, I = EventKind.FINAL, EventKind.INTERMEDIATE


class CheckedSearchState(SearchState):
    """Asserts the beam invariants after every public operation."""

    def check(self):
        live = self.live()
        assert all(h.reads == len(self.source_tokens_read) for h in live)
        for h in self.beam:
            assert h.tokens[: len(self.emitted_final_tokens)] == self.emitted_final_tokens
            assert h.sum_log_prob <= 0.0
            if not self.eos_read:
                assert self.vocab.eos_id not in h.tokens
            if h.finished:
                assert h.tokens[-1] == self.vocab.eos_id or len(h.tokens) >= self.config.length_cap(self.source_len)

    def read_token(self, token):
        super().read_token(token)
        self.check()

    def expand_writers(self, force=False):
        super().expand_writers(force)
        self.check()

    def emit_final(self):
        ev = super().emit_final()
        self.check()
        return ev

    def rewind(self):
        super().rewind()
        self.check()


class CheckedTranslator(StreamingTranslator):
    state_class = CheckedSearchState


def make_model(seed=0, vocab=None, **kw):
    return SyntheticModel(SyntheticModelConfig(seed=seed, vocab=vocab or corpus_vocab(), **kw))


def run_events(translator, events):
    out = []
    for ev in events:
        out.extend(translator.process_event(ev))
    out.extend(translator.finish())
    return out


def finals_text(events):
    return "".join(e.text for e in events if e.kind is F)


def hyp(tokens, logs, state=None):
    from streambeam.model import ModelState

    return Hypothesis(tuple(tokens), float(sum(logs)), state or ModelState())


# -- score -----------------------------------------------------------------


def test_score_examples():
    assert score(hyp([5, 6], [-1.0, -2.0])) == -1.5
    assert score(hyp([], [])) == 0.0
    assert score(hyp([5, 6, 7], [-3.0])) > score(hyp([5, 6], [-3.0]))


# -- expand / read ---------------------------------------------------------


def test_expand_with_only_readers_changes_nothing_but_cache():
    model = make_model(vocab=content_vocab(6), wait_k=3)
    state = SearchState(model, EngineConfig(beam_size=2))
    state.read_token(3)
    before = [(h.tokens, h.sum_log_prob, h.state) for h in state.beam]
    state.expand_writers()
    assert [(h.tokens, h.sum_log_prob, h.state) for h in state.beam] == before
    assert all(h.pending is not None for h in state.beam)


def test_read_token_first_read():
    state = SearchState(make_model(vocab=content_vocab(6)), EngineConfig(beam_size=3))
    state.read_token(4)
    assert [h.reads for h in state.beam] == [1]
    assert state.source_tokens_read == (4,)


def test_read_token_errors():
    model = make_model(vocab=content_vocab(6), wait_k=0)
    state = SearchState(model, EngineConfig())
    with pytest.raises(ValueError):
        state.read_token(6)
    state.read_token(3)
    state.expand_writers()
    state.read_token(1)
    with pytest.raises(ValueError):
        state.read_token(3)


def test_read_refused_while_a_hypothesis_wants_to_write():
    state = SearchState(make_model(vocab=content_vocab(6), wait_k=0), EngineConfig())
    state.read_token(3)
    state._evaluate()
    with pytest.raises(ValueError):
        state.read_token(4)


def test_wait_one_writes_once_per_read():
    state = SearchState(make_model(vocab=content_vocab(8), wait_k=1), EngineConfig())
    for i, tok in enumerate([3, 4, 5, 6, 7, 3, 4], start=1):
        state.read_token(tok)
        state.expand_writers()
        assert len(state.beam[0].tokens) == i


@pytest.mark.parametrize("wait_k", [0, 1, 2, 3])
def test_synthetic_model_follows_wait_k_schedule(wait_k):
    state = SearchState(make_model(vocab=content_vocab(8), wait_k=wait_k), EngineConfig())
    for reads, tok in enumerate([3, 4, 5, 6, 7, 3], start=1):
        state.read_token(tok)
        state.expand_writers()
        assert len(state.beam[0].tokens) == max(0, reads - wait_k + 1)


@pytest.mark.parametrize("seed", range(20))
def test_beam_one_equals_greedy(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 16)
    cfg = SyntheticModelConfig(seed=seed, vocab=content_vocab(n), wait_k=rng.randint(0, 3))
    src = [rng.randint(3, n - 1) for _ in range(rng.randint(1, 12))]
    state = decode_tokens(SyntheticModel(cfg), EngineConfig(1), src)
    assert list(state.beam[0].tokens) == greedy_reference(cfg, src)


@pytest.mark.parametrize("src", [[3], [3, 4], [4, 4, 3]])
@pytest.mark.parametrize("wait_k", [0, 1, 2])
def test_exhaustive_beam_matches_enumeration(src, wait_k):
    cfg = SyntheticModelConfig(seed=11, vocab=content_vocab(5), wait_k=wait_k)
    leaves = enumerate_leaves(cfg, src, len_a=1.0, len_b=2.0)
    state = CheckedSearchState(SyntheticModel(cfg), EngineConfig(len(leaves), 0.5, 1.0, 2.0))
    state.feed(src)
    state.read_token(1)
    state.expand_writers(force=True)
    assert sorted((h.tokens, h.sum_log_prob) for h in state.beam) == sorted(leaves)
    assert state.best().tokens == max(leaves, key=normalized)[0]


def test_max_expansions_limits_children():
    model = make_model(vocab=content_vocab(10), wait_k=0)
    state = SearchState(model, EngineConfig(beam_size=20, max_expansions=2))
    state.read_token(3)
    state._evaluate()
    assert len(state._children(state.beam[0])) == 2


# -- emission --------------------------------------------------------------


def state_with(beam_tokens, emitted=(), k=None):
    vocab = Vocabulary(["<s>", "</s>", "<unk>", "a", "b", "c", "d"])
    state = SearchState(make_model(vocab=vocab), EngineConfig(beam_size=k or len(beam_tokens)))
    state.beam = [hyp(t, [-1.0] * len(t)) for t in beam_tokens]
    state.emitted_final_tokens = tuple(emitted)
    return state


def test_emit_final_singleton_beam():
    state = state_with([[3, 4, 5]])
    ev = state.emit_final()
    assert (ev.kind, ev.text) == (F, "abc")
    assert state.emitted_final_tokens == (3, 4, 5)


def test_emit_final_common_prefix():
    state = state_with([[3, 4, 5], [3, 4, 6]])
    assert state.emit_final().text == "ab"
    assert state.emitted_final_tokens == (3, 4)


def test_emit_final_nothing_new():
    state = state_with([[3, 4, 5], [3, 5, 6]], emitted=[3])
    assert state.emit_final() is None
    assert state.emitted_final_tokens == (3,)


def test_emit_intermediate():
    assert state_with([[3]], emitted=[3]).emit_intermediate().text == ""
    state = state_with([[3, 4, 5]], emitted=[3])
    ev = state.emit_intermediate()
    assert (ev.kind, ev.text) == (I, "bc")


def test_emit_intermediate_tie_picks_first():
    state = state_with([[3, 5], [3, 6]], emitted=[3])
    assert state.emit_intermediate().text == "c"


# -- checkpoint / rewind ---------------------------------------------------


def test_checkpoint_then_rewind_is_identity():
    state = SearchState(make_model(vocab=content_vocab(8), wait_k=1), EngineConfig(beam_size=2))
    state.feed([3, 4])
    before = state.snapshot()
    state.checkpoint()
    state.rewind()
    assert state.snapshot() == before


def test_rewind_twice_restores_same_snapshot():
    state = SearchState(make_model(vocab=content_vocab(8), wait_k=1), EngineConfig(beam_size=2))
    state.feed([3])
    state.checkpoint()
    saved = state.snapshot()
    for extra in ([4, 5], [6]):
        state.feed(extra)
        state.rewind()
        assert state.snapshot() == saved


def test_rewind_without_checkpoint():
    state = SearchState(make_model(vocab=content_vocab(8)), EngineConfig())
    with pytest.raises(ValueError):
        state.rewind()


def test_decoding_after_rewind_matches_control():
    cfg = SyntheticModelConfig(seed=5, vocab=content_vocab(9), wait_k=1)
    a = SearchState(SyntheticModel(cfg), EngineConfig(beam_size=3))
    a.feed([3, 4])
    a.checkpoint()
    a.feed([7, 8, 6])
    a.rewind()
    a.feed([5, 6])
    b = SearchState(SyntheticModel(cfg), EngineConfig(beam_size=3))
    b.feed([3, 4, 5, 6])
    assert a.snapshot().beam == b.snapshot().beam
    assert a.emit_final() == b.emit_final()


# -- sentence finalization -------------------------------------------------


def test_length_cap_arithmetic():
    assert EngineConfig(len_a=1.5, len_b=5).length_cap(10) == 20
    assert EngineConfig(len_a=1.5, len_b=5).length_cap(3) == 9


@pytest.mark.parametrize("k", [1, 3])
def test_never_eos_model_stops_at_cap(k):
    cfg = SyntheticModelConfig(seed=2, vocab=content_vocab(7), allow_eos=False)
    src = [3, 4, 5, 6, 3, 4, 5, 6, 3, 4]
    state = decode_tokens(SyntheticModel(cfg), EngineConfig(k, len_a=1.5, len_b=5), src)
    assert len(state.emitted_final_tokens) == 20


def test_finalize_requires_input_eos():
    state = SearchState(make_model(vocab=content_vocab(6)), EngineConfig())
    state.read_token(3)
    with pytest.raises(ValueError):
        state.finalize_sentence()


def test_finalize_makes_whole_sentence_final():
    cfg = SyntheticModelConfig(seed=4, vocab=content_vocab(8), wait_k=2)
    state = SearchState(SyntheticModel(cfg), EngineConfig(beam_size=3))
    state.feed([3, 4, 5])
    state.read_token(1)
    events = state.finalize_sentence()
    assert state.emitted_final_tokens[-1] == 1 or len(state.emitted_final_tokens) == 9
    assert len(events) <= 1
    assert state.beam[0].tokens == state.emitted_final_tokens


# -- event processing ------------------------------------------------------


def test_word_finals_equal_single_event():
    a = run_events(StreamingTranslator(make_model(wait_k=1), EngineConfig()), [AsrEvent(F, "hola ", 0), AsrEvent(F, "mundo.", 1)])
    b = run_events(StreamingTranslator(make_model(wait_k=1), EngineConfig()), [AsrEvent(F, "hola mundo.", 0)])
    assert finals_text(a) == finals_text(b) != ""


def test_intermediate_then_final_equals_final_alone():
    with_inter = [AsrEvent(I, "mund", 0), AsrEvent(F, "mundo.", 1)]
    a = run_events(StreamingTranslator(make_model(), EngineConfig(beam_size=2)), with_inter)
    b = run_events(StreamingTranslator(make_model(), EngineConfig(beam_size=2)), [AsrEvent(F, "mundo.", 1)])
    assert finals_text(a) == finals_text(b)


def test_split_word_is_tokenized_once():
    vocab = corpus_vocab()
    t = CheckedTranslator(make_model(vocab=vocab), EngineConfig())
    out = run_events(t, [AsrEvent(F, "car", 0), AsrEvent(F, "pet ", 1)])
    ref = run_events(StreamingTranslator(make_model(vocab=vocab), EngineConfig()), [AsrEvent(F, "carpet ", 0)])
    assert finals_text(out) == finals_text(ref)
    assert tokenize(vocab, "carpet ").ids == (vocab.id_of("carpet"), vocab.id_of(" "))


def test_events_order_final_before_intermediate():
    t = StreamingTranslator(make_model(wait_k=0), EngineConfig())
    out = t.process_event(AsrEvent(F, "hola mundo ", 0))
    kinds = [e.kind for e in out]
    assert kinds[-1] is I and all(k is F for k in kinds[:-1])


def test_intermediate_event_does_not_move_the_checkpoint():
    t = StreamingTranslator(make_model(), EngineConfig(beam_size=2))
    t.process_event(AsrEvent(F, "hola ", 0))
    saved = t.state.snapshot()
    out = t.process_event(AsrEvent(I, "mundo que tal", 1))
    assert [e.kind for e in out] == [I]
    assert t.state.snapshot() == saved


def test_speculative_sentence_end_is_rewound():
    t = StreamingTranslator(make_model(), EngineConfig(beam_size=2))
    t.process_event(AsrEvent(F, "hola ", 0))
    out = t.process_event(AsrEvent(I, "mundo. que", 1))
    assert out[0].text
    assert t.sentence_id == 0 and t.sentences == []


def test_out_of_order_seq_no():
    t = StreamingTranslator(make_model(), EngineConfig())
    t.process_event(AsrEvent(F, "hola ", 3))
    with pytest.raises(ValueError):
        t.process_event(AsrEvent(F, "mundo ", 3))


def test_sentences_reset_state():
    t = StreamingTranslator(make_model(), EngineConfig())
    run_events(t, [AsrEvent(F, "hola mundo. que tal", 0)])
    assert [s.source for s in t.sentences] == ["hola mundo.", "que tal"]
    assert t.finals == "".join(s.translation for s in t.sentences)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    k=st.integers(1, 4),
    wait_k=st.integers(0, 3),
    src=st.lists(st.integers(3, 7), min_size=1, max_size=10),
)
def test_invariants_hold_during_decoding(seed, k, wait_k, src):
    cfg = SyntheticModelConfig(seed=seed, vocab=content_vocab(8), wait_k=wait_k)
    state = CheckedSearchState(SyntheticModel(cfg), EngineConfig(beam_size=k))
    for tok in src:
        state.read_token(tok)
        state.expand_writers()
        state.emit_final()
    state.read_token(1)
    state.finalize_sentence()
    state.check()


def test_linear_decoder_cost_for_word_feed():
    from streambeam.cli import simulate_word_feed

    words = "hola mundo que tal bien sun rain car pet sale world carpet".split()
    for n_words in (10, 30, 60):
        model = make_model(wait_k=1)
        sentence = " ".join(itertools.islice(itertools.cycle(words), n_words)) + "."
        run_events(StreamingTranslator(model, EngineConfig()), simulate_word_feed(sentence))
        n_tokens = len(tokenize(model.vocab, sentence))
        assert model.counters.encoder_steps == n_tokens + 1
        assert model.counters.decoder_steps <= (1.5 + 1) * n_tokens
