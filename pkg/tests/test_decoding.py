"""Search behavior: greedy, beam, shallow fusion, trace replay."""

import itertools

import numpy as np
import pytest

from fusemt.decoding import (SentenceDecoder, beam_decode, beam_search,
                             greedy_decode, greedy_decode_with_trace,
                             sequence_logprob, shallow_decode, trace_sequence,
                             translate_corpus)
from fusemt.errors import ConfigError, VocabularyMismatchError
from fusemt.fusion import ShallowConfig, make_head
from fusemt.lm import LmParams, greedy_chain, lm_step
from fusemt.tensor import Tensor
from fusemt.tm import TmParams
from fusemt.training import TrainConfig, TrainedModel, train_two_stage
from fusemt.vocab import BOS, EOS, PAD, RESERVED, UNK, Vocabulary
from fusemt.corpus import ParallelCorpus

VARIANTS = ("baseline", "cold", "postnorm", "prenorm", "dynamic")


def toy_vocab(n_extra, prefix="w"):
    tokens = list(RESERVED) + [f"{prefix}{i}" for i in range(n_extra)]
    return Vocabulary(tokens, [0] * 4 + [5] * n_extra)


def make_model(variant="baseline", seed=0, v_src=9, v_tgt=9, embed=6, hidden=8,
               lm_level="token", lm_vocab=None, dtype=np.float64):
    src_vocab = toy_vocab(v_src - 4, "s")
    tgt_vocab = toy_vocab(v_tgt - 4, "t")
    tm_params = TmParams.create(len(src_vocab), len(tgt_vocab), embed, hidden,
                                seed, dtype)
    lm_params = None
    if variant != "baseline":
        if lm_vocab is None:
            lm_vocab = tgt_vocab
        lm_params = LmParams.create(len(lm_vocab), embed, hidden, seed + 1, dtype)
    head = make_head(variant, hidden, len(tgt_vocab),
                     None if lm_vocab is None else len(lm_vocab), seed, dtype)
    return TrainedModel(variant=variant, cfg=TrainConfig(), src_vocab=src_vocab,
                        tgt_vocab=tgt_vocab, tm_params=tm_params, head=head,
                        lm_params=lm_params, lm_vocab=lm_vocab, lm_level=lm_level)


def source_for(model, rng, length=4):
    n = len(model.src_vocab)
    return list(rng.integers(4, n, size=length))


class TestGreedy:
    def test_eos_first_step_gives_empty_output(self):
        model = make_model(seed=3)
        model.tm_params.b_out.data[EOS] = 50.0
        assert greedy_decode(model, ["s0", "s1"]) == []
        hyp = beam_search(model, ["s0", "s1"], beam=3)
        assert hyp.tokens == () and hyp.finished

    def test_all_zero_scores_tie_break_to_lowest_id(self):
        model = make_model(seed=0)
        model.tm_params.W_out.data[:] = 0.0
        model.tm_params.b_out.data[:] = 0.0
        out = greedy_decode(model, ["s0"], max_len=5)
        assert out == [PAD] * 5
        assert beam_decode(model, ["s0"], beam=1, max_len=5) == out

    def test_output_bounds_and_no_eos(self):
        for seed in range(8):
            model = make_model(seed=seed)
            rng = np.random.default_rng([seed, 7])
            out = greedy_decode(model, source_for(model, rng), max_len=7)
            assert len(out) <= 7
            assert EOS not in out
            assert all(0 <= t < len(model.tgt_vocab) for t in out)

    def test_string_and_id_sources_agree(self):
        model = make_model(seed=5)
        by_str = greedy_decode(model, ["s1", "s2", "s0"])
        by_id = greedy_decode(model, model.src_vocab.encode(["s1", "s2", "s0"]))
        assert by_str == by_id

    def test_bad_limits_rejected(self):
        model = make_model()
        with pytest.raises(ConfigError):
            greedy_decode(model, ["s0"], max_len=0)
        with pytest.raises(ConfigError):
            beam_decode(model, ["s0"], beam=0)


class TestBeam:
    def test_beam_one_matches_greedy(self):
        for seed in range(20):
            for variant in VARIANTS:
                model = make_model(variant, seed=seed)
                rng = np.random.default_rng([seed, 11])
                src = source_for(model, rng)
                assert beam_decode(model, src, beam=1, max_len=6) == \
                    greedy_decode(model, src, max_len=6)

    def _prefix_logprob(self, model, src, seq):
        dec = SentenceDecoder(model, src)
        state = dec.start()
        total, prev = 0.0, BOS
        for tok in seq:
            state, logp, _ = dec.step(state, prev)
            total += float(logp[tok])
            prev = tok
        return total

    @pytest.mark.parametrize("variant", ["baseline", "dynamic"])
    def test_wide_beam_matches_exhaustive_search(self, variant):
        max_len, v_tgt = 3, 6
        for seed in (0, 1, 2):
            model = make_model(variant, seed=seed, v_tgt=v_tgt)
            src = ["s0", "s2", "s1"]
            non_eos = [i for i in range(v_tgt) if i != EOS]
            best_score, best_seq = -np.inf, None
            for n in range(max_len):
                for seq in itertools.product(non_eos, repeat=n):
                    score = sequence_logprob(model, src, seq)
                    if score > best_score:
                        best_score, best_seq = score, seq
            for seq in itertools.product(non_eos, repeat=max_len):
                score = self._prefix_logprob(model, src, seq)
                if score > best_score:
                    best_score, best_seq = score, seq
            hyp = beam_search(model, src, beam=v_tgt ** max_len, max_len=max_len)
            assert hyp.score == pytest.approx(best_score, abs=1e-9)
            assert hyp.tokens == best_seq

    def test_wider_beam_never_scores_worse(self):
        for variant in ("baseline", "cold"):
            for seed in range(5):
                model = make_model(variant, seed=seed)
                rng = np.random.default_rng([seed, 13])
                src = source_for(model, rng)
                scores = [beam_search(model, src, beam=b, max_len=4).score
                          for b in (1, 2, 4, 8, 16)]
                for lo, hi in zip(scores, scores[1:]):
                    assert hi >= lo - 1e-9

    def test_sequence_logprob_matches_beam_score(self):
        model = make_model("postnorm", seed=4)
        src = ["s3", "s1"]
        hyp = beam_search(model, src, beam=4, max_len=5)
        if hyp.finished:
            assert sequence_logprob(model, src, hyp.tokens) == \
                pytest.approx(hyp.score, abs=1e-9)


class TestShallow:
    def test_lambda_zero_matches_plain_decode(self):
        model = make_model("baseline", seed=2)
        lm = LmParams.create(len(model.tgt_vocab), 6, 8, seed=9, dtype=np.float64)
        cfg = ShallowConfig(lam=0.0)
        for beam in (1, 3):
            assert shallow_decode(model, lm, cfg, ["s0", "s4"], beam=beam) == \
                beam_decode(model, ["s0", "s4"], beam=beam)

    def test_huge_lambda_follows_lm_chain(self):
        model = make_model("baseline", seed=6)
        lm = LmParams.create(len(model.tgt_vocab), 6, 8, seed=21, dtype=np.float64)
        out = shallow_decode(model, lm, ShallowConfig(lam=1e6), ["s1"],
                             beam=1, max_len=12)
        assert out == greedy_chain(lm, max_len=12)

    def test_vocabulary_mismatch_rejected(self):
        model = make_model("baseline", seed=1)
        lm = LmParams.create(len(model.tgt_vocab) + 3, 6, 8, seed=2)
        with pytest.raises(VocabularyMismatchError):
            shallow_decode(model, lm, ShallowConfig(), ["s0"])

    def test_moderate_lambda_changes_ranking(self):
        changed = 0
        for seed in range(6):
            model = make_model("baseline", seed=seed)
            lm = LmParams.create(len(model.tgt_vocab), 6, 8, seed=seed + 50,
                                 dtype=np.float64)
            rng = np.random.default_rng([seed, 17])
            src = source_for(model, rng)
            plain = beam_decode(model, src, beam=2, max_len=6)
            fused = shallow_decode(model, lm, ShallowConfig(lam=5.0), src,
                                   beam=2, max_len=6)
            changed += int(plain != fused)
        assert changed > 0


class TestLmSync:
    def test_word_level_with_whole_words_matches_token_level(self):
        for seed in range(4):
            token_model = make_model("dynamic", seed=seed, lm_level="token")
            word_model = make_model("dynamic", seed=seed, lm_level="word")
            rng = np.random.default_rng([seed, 19])
            src = source_for(token_model, rng)
            a = greedy_decode(token_model, src, max_len=6)
            b = greedy_decode(word_model, src, max_len=6)
            assert a == b
            if a:
                assert sequence_logprob(token_model, src, a) == \
                    pytest.approx(sequence_logprob(word_model, src, a), abs=1e-12)

    def marker_model(self):
        src_vocab = toy_vocab(3, "s")
        tgt_vocab = Vocabulary(list(RESERVED) + ["ab@@", "c", "zz"],
                               [0, 0, 0, 0, 5, 5, 5])
        lm_vocab = Vocabulary(list(RESERVED) + ["abc"], [0, 0, 0, 0, 5])
        tm_params = TmParams.create(len(src_vocab), len(tgt_vocab), 6, 8, 0,
                                    np.float64)
        lm_params = LmParams.create(len(lm_vocab), 6, 8, 1, np.float64)
        head = make_head("cold", 8, len(tgt_vocab), len(lm_vocab), 0, np.float64)
        return TrainedModel(variant="cold", cfg=TrainConfig(),
                            src_vocab=src_vocab, tgt_vocab=tgt_vocab,
                            tm_params=tm_params, head=head, lm_params=lm_params,
                            lm_vocab=lm_vocab, lm_level="word")

    def test_marker_token_buffers_until_word_completes(self):
        model = self.marker_model()
        dec = SentenceDecoder(model, ["s0", "s1"])
        s1, _, _ = dec.step(dec.start(), BOS)
        assert s1.lm_value is not None and s1.lm_pieces == ()

        s2, _, _ = dec.step(s1, 4)  # "ab@@" starts a word; LM must not move
        assert s2.lm_pieces == ("ab",)
        assert np.array_equal(s2.lm_state, s1.lm_state)
        assert np.array_equal(s2.lm_value, s1.lm_value)

        s3, _, _ = dec.step(s2, 5)  # "c" completes "abc"
        assert s3.lm_pieces == ()
        assert not np.array_equal(s3.lm_value, s2.lm_value)
        expect, _ = lm_step(model.lm_params, Tensor(s1.lm_state), np.array([4]))
        assert np.array_equal(s3.lm_state, expect.data)

    def test_unknown_completed_word_feeds_unk(self):
        model = self.marker_model()
        dec = SentenceDecoder(model, ["s0"])
        s1, _, _ = dec.step(dec.start(), BOS)
        s2, _, _ = dec.step(s1, 6)  # "zz" is a word the LM has never seen
        expect, _ = lm_step(model.lm_params, Tensor(s1.lm_state), np.array([UNK]))
        assert np.array_equal(s2.lm_state, expect.data)


class TestTrace:
    def test_greedy_trace_shapes_and_sums(self):
        model = make_model("dynamic", seed=7)
        src = ["s0", "s1", "s2"]
        ids, traces = greedy_decode_with_trace(model, src, max_len=6)
        assert len(traces) == len(ids)
        for tok, trace in zip(ids, traces):
            assert trace.token == tok
            assert trace.attention.shape == (3,)
            assert trace.attention.sum() == pytest.approx(1.0, abs=1e-9)
            assert trace.alpha.shape == (len(model.lm_vocab),)
            assert trace.alpha.sum() == pytest.approx(1.0, abs=1e-9)

    def test_trace_replay_is_bit_identical(self):
        model = make_model("dynamic", seed=8)
        src = ["s2", "s4"]
        ids, traces = greedy_decode_with_trace(model, src, max_len=5)
        replay = trace_sequence(model, src, ids)
        assert len(replay) == len(traces)
        for a, b in zip(traces, replay):
            assert a.token == b.token
            assert np.array_equal(a.attention, b.attention)
            assert np.array_equal(a.alpha, b.alpha)

    def test_baseline_trace_has_no_alpha(self):
        model = make_model("baseline", seed=9)
        ids, traces = greedy_decode_with_trace(model, ["s0", "s3"], max_len=4)
        assert all(t.alpha is None for t in traces)


class TestCorpus:
    def test_translate_corpus_matches_per_sentence(self):
        model = make_model("prenorm", seed=10)
        rng = np.random.default_rng(3)
        sources = [source_for(model, rng, length=3) for _ in range(5)]
        assert translate_corpus(model, sources, beam=1) == \
            [greedy_decode(model, s) for s in sources]
        assert translate_corpus(model, sources, beam=2) == \
            [beam_decode(model, s, beam=2) for s in sources]


class TestTrainedModelDecode:
    def test_memorizes_single_pair(self):
        pairs = [(("s0", "s1", "s2"), ("t1", "t0"))]
        par = ParallelCorpus(pairs=pairs, provenance="test")
        cfg = TrainConfig(learning_rate=0.05, batch_size=1, max_epochs=120,
                          embed_size=16, hidden_size=16, seed=0)
        model = train_two_stage(par, None, "baseline", cfg)
        out = greedy_decode(model, ["s0", "s1", "s2"], max_len=10)
        assert model.tgt_vocab.decode(out) == ["t1", "t0"]
