"""Metric oracles, bootstrap behavior, and analysis helpers."""

import math
import re

import numpy as np
import pytest

from fusemt.errors import ConfigError, DataError, ShapeError
from fusemt.evaluation import (BleuStats, RibesScore, ScoreReport, bleu,
                               corpus_bleu_stats, corpus_ribes, dump_attention,
                               format_weight, frobenius_decomposition,
                               paired_bootstrap, ribes, score_corpus)
from fusemt.fusion import make_head
from fusemt.lm import LmParams
from fusemt.tensor import Tensor
from fusemt.tm import TmParams
from fusemt.training import TrainConfig, TrainedModel
from fusemt.vocab import RESERVED, Vocabulary


def random_corpus(rng, n_pairs, vocab=("a", "b", "c", "d", "e")):
    out = []
    for _ in range(n_pairs):
        length = int(rng.integers(1, 9))
        out.append([vocab[i] for i in rng.integers(0, len(vocab), size=length)])
    return out


class TestBleu:
    def test_perfect_match_scores_100(self):
        refs = [["the", "cat", "sat", "down"], ["a", "b", "c", "d", "e"]]
        assert bleu(refs, refs) == pytest.approx(100.0, abs=1e-12)

    def test_clipped_unigram_hand_count(self):
        hyp = "the the the the the the the".split()
        ref = "the cat is on the mat".split()
        stats = BleuStats.of_pair(hyp, ref)
        assert stats.matches[0] == 2 and stats.totals[0] == 7
        assert stats.precisions()[0] == pytest.approx(2 / 7, abs=1e-12)

    def test_four_gram_hand_case(self):
        hyp = [["a", "b", "c", "d", "e"]]
        ref = [["a", "b", "c", "d", "f"]]
        want = 100.0 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
        assert bleu(hyp, ref) == pytest.approx(want, rel=1e-12)

    def test_brevity_penalty_hand_case(self):
        hyp = [["a", "b", "c", "d"]]
        ref = [["a", "b", "c", "d", "e", "f"]]
        want = 100.0 * math.exp(1.0 - 6 / 4)
        assert bleu(hyp, ref) == pytest.approx(want, rel=1e-12)

    def test_empty_hypothesis_line_is_finite(self):
        hyps = [[], ["a", "b", "c", "d"]]
        refs = [["a", "b"], ["a", "b", "c", "d"]]
        score = bleu(hyps, refs)
        assert math.isfinite(score)
        assert score == pytest.approx(100.0 * math.exp(1.0 - 6 / 4), rel=1e-12)

    def test_any_zero_precision_gives_zero(self):
        assert bleu([["a", "b", "c"]], [["a", "x", "y"]]) == 0.0

    def test_case_sensitive(self):
        assert bleu([["The", "cat"]], [["the", "cat"]]) < 100.0

    def test_stats_additive(self):
        rng = np.random.default_rng(0)
        hyps, refs = random_corpus(rng, 6), random_corpus(rng, 6)
        whole = corpus_bleu_stats(hyps, refs)
        split = corpus_bleu_stats(hyps[:2], refs[:2]) + corpus_bleu_stats(hyps[2:], refs[2:])
        assert whole == split
        assert whole.score() == split.score()

    def test_order_invariant(self):
        rng = np.random.default_rng(1)
        hyps, refs = random_corpus(rng, 8), random_corpus(rng, 8)
        perm = list(rng.permutation(8))
        assert bleu(hyps, refs) == bleu([hyps[i] for i in perm],
                                        [refs[i] for i in perm])
        assert corpus_ribes(hyps, refs) == corpus_ribes(
            [hyps[i] for i in perm], [refs[i] for i in perm])

    def test_range_and_invariants_random(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            hyps, refs = random_corpus(rng, 3), random_corpus(rng, 3)
            stats = corpus_bleu_stats(hyps, refs)
            assert all(m <= t for m, t in zip(stats.matches, stats.totals))
            assert 0.0 <= stats.score() <= 100.0

    def test_line_count_mismatch_rejected(self):
        with pytest.raises(DataError):
            bleu([["a"]], [["a"], ["b"]])
        with pytest.raises(DataError):
            bleu([], [])

    def test_vector_round_trip(self):
        stats = BleuStats.of_pair(["a", "b", "a"], ["a", "b", "c"])
        assert BleuStats.from_vector(stats.vector()) == stats


class TestRibes:
    def test_identical_sentence_scores_one(self):
        score = ribes(["a", "b", "c", "d"], ["a", "b", "c", "d"])
        assert score.value == pytest.approx(1.0, abs=1e-12)
        assert score.nkt == 1.0 and score.precision == 1.0 and score.bp == 1.0

    def test_full_reversal_scores_zero(self):
        score = ribes(["d", "c", "b", "a"], ["a", "b", "c", "d"])
        assert score.nkt == 0.0 and score.value == 0.0

    def test_one_swap_hand_case(self):
        score = ribes(["b", "a", "c"], ["a", "b", "c"])
        assert score.nkt == pytest.approx(2 / 3, abs=1e-12)
        assert score.precision == 1.0 and score.bp == 1.0
        assert score.value == pytest.approx(2 / 3, abs=1e-12)

    def test_bigram_context_resolves_repeated_word(self):
        score = ribes(["x", "a", "y"], ["a", "x", "a", "y"])
        assert score.nkt == 1.0 and score.precision == 1.0
        assert score.value == pytest.approx(math.exp(-1 / 30), rel=1e-12)

    def test_unresolvable_repeat_leaves_word_unaligned(self):
        score = ribes(["a"], ["a", "a"])
        assert score.precision == 0.0 and score.value == 0.0

    def test_identity_with_triple_repeat_scores_below_one(self):
        # the middle of three consecutive repeats has no unique unigram
        # and no unique bigram context, so even hyp == ref drops it
        sent = ["b", "a", "a", "a", "c"]
        score = ribes(sent, sent)
        assert score.nkt == 1.0 and score.bp == 1.0
        assert score.precision == pytest.approx(4 / 5, rel=1e-12)
        assert score.value == pytest.approx((4 / 5) ** 0.25, rel=1e-12)

    def test_fewer_than_two_aligned_words_scores_zero(self):
        score = ribes(["a", "q", "q"], ["a", "b", "c"])
        assert score.value == 0.0

    def test_empty_hypothesis_scores_zero(self):
        assert ribes([], ["a", "b"]).value == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(DataError):
            ribes(["a"], [])

    def test_value_in_unit_interval_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            hyp = random_corpus(rng, 1)[0]
            ref = random_corpus(rng, 1)[0]
            score = ribes(hyp, ref)
            assert 0.0 <= score.value <= 1.0
            assert 0.0 <= score.nkt <= 1.0
            assert 0.0 <= score.precision <= 1.0
            assert 0.0 < score.bp <= 1.0


class TestBootstrap:
    def refs(self):
        return [["the", "cat", "sat", "down"], ["dogs", "run", "fast", "today"],
                ["a", "b", "c", "d"], ["green", "ideas", "sleep", "furiously"],
                ["one", "two", "three", "four"], ["x", "y", "z", "w"]]

    def test_identical_systems_give_p_one(self):
        refs = self.refs()
        result = paired_bootstrap(refs, refs, refs, n_samples=500, seed=0)
        assert result.p_value == 1.0
        assert result.ties == 500 and result.wins_a == result.wins_b == 0

    def test_dominant_system_gives_p_zero(self):
        refs = self.refs()
        garbage = [["zz"] * 3 for _ in refs]
        result = paired_bootstrap(refs, garbage, refs, n_samples=500, seed=1)
        assert result.p_value == 0.0 and result.wins_a == 500

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        hyps_a, hyps_b = random_corpus(rng, 6), random_corpus(rng, 6)
        refs = random_corpus(rng, 6)
        one = paired_bootstrap(hyps_a, hyps_b, refs, n_samples=300, seed=7)
        two = paired_bootstrap(hyps_a, hyps_b, refs, n_samples=300, seed=7)
        assert one == two

    def test_ribes_metric_supported(self):
        rng = np.random.default_rng(5)
        hyps_a, hyps_b = random_corpus(rng, 5), random_corpus(rng, 5)
        refs = random_corpus(rng, 5)
        result = paired_bootstrap(hyps_a, hyps_b, refs, n_samples=200,
                                  metric="ribes", seed=2)
        assert 0.0 <= result.p_value <= 1.0
        assert result.wins_a + result.wins_b + result.ties == 200

    def test_bad_inputs_rejected(self):
        refs = self.refs()
        with pytest.raises(DataError):
            paired_bootstrap(refs[:3], refs, refs, n_samples=10)
        with pytest.raises(ConfigError):
            paired_bootstrap(refs, refs, refs, n_samples=0)
        with pytest.raises(ConfigError):
            paired_bootstrap(refs, refs, refs, n_samples=10, metric="meteor")


class TestScoreReport:
    def test_perfect_report_format(self):
        refs = [["a", "b", "c", "d"], ["e", "f", "g", "h"]]
        report = score_corpus(refs, refs)
        assert report.render() == "BLEU\t100.00\nRIBES\t100.00\n"

    def test_rival_adds_p_value_line(self):
        refs = [["a", "b", "c", "d"], ["e", "f", "g", "h"]]
        report = score_corpus(refs, refs, rival=refs, n_samples=50)
        lines = report.render().splitlines()
        assert len(lines) == 3
        assert lines[2] == "P-VALUE\t1.0000"
        assert all(len(line.split("\t")) == 2 for line in lines)


def dynamic_model(seed=0):
    src_vocab = Vocabulary(list(RESERVED) + [f"s{i}" for i in range(5)],
                           [0] * 4 + [5] * 5)
    tgt_vocab = Vocabulary(list(RESERVED) + [f"t{i}" for i in range(5)],
                           [0] * 4 + [5] * 5)
    lm_vocab = Vocabulary(list(RESERVED) + [f"u{i}" for i in range(6)],
                          [0] * 4 + [5] * 6)
    tm_params = TmParams.create(len(src_vocab), len(tgt_vocab), 6, 8, seed,
                                np.float64)
    lm_params = LmParams.create(len(lm_vocab), 6, 8, seed + 1, np.float64)
    head = make_head("dynamic", 8, len(tgt_vocab), len(lm_vocab), seed,
                     np.float64)
    return TrainedModel(variant="dynamic", cfg=TrainConfig(),
                        src_vocab=src_vocab, tgt_vocab=tgt_vocab,
                        tm_params=tm_params, head=head, lm_params=lm_params,
                        lm_vocab=lm_vocab, lm_level="word")


WEIGHT_RE = re.compile(r"^\d\.\de-?\d+$")


class TestAttentionDump:
    def test_one_record_per_token_with_sorted_top5(self):
        model = dynamic_model()
        from fusemt.decoding import greedy_decode
        ids = greedy_decode(model, ["s0", "s1", "s2"], max_len=6)
        lines = dump_attention(model, ["s0", "s1", "s2"], max_len=6)
        assert len(lines) == len(ids)
        for pos, line in enumerate(lines, start=1):
            cols = line.split("\t")
            assert len(cols) == 3
            assert int(cols[0]) == pos
            body = re.fullmatch(r"top5\((.*)\)", cols[2]).group(1)
            cells = body.split(",")
            assert len(cells) == 5
            weights = []
            for cell in cells:
                word, weight = cell.split(":")
                assert word in model.lm_vocab.tokens
                assert WEIGHT_RE.fullmatch(weight)
                weights.append(float(weight))
            assert all(a >= b for a, b in zip(weights, weights[1:]))
            assert all(w <= 1.0 for w in weights)
            assert sum(weights) <= 1.0 + 1e-6

    def test_replay_matches_supplied_ids(self):
        model = dynamic_model(seed=2)
        from fusemt.decoding import beam_decode
        ids = beam_decode(model, ["s1", "s3"], beam=2, max_len=5)
        lines = dump_attention(model, ["s1", "s3"], target_ids=ids)
        assert len(lines) == len(ids)
        emitted = [line.split("\t")[1] for line in lines]
        assert emitted == [model.tgt_vocab.tokens[i] for i in ids]

    def test_non_dynamic_model_rejected(self):
        model = dynamic_model()
        model.variant = "baseline"
        with pytest.raises(ConfigError):
            dump_attention(model, ["s0"])

    def test_weight_format(self):
        assert format_weight(0.99) == "9.9e-1"
        assert format_weight(1.0) == "1.0e0"
        assert format_weight(0.0043) == "4.3e-3"
        assert format_weight(0.5) == "5.0e-1"


class TestFrobenius:
    def test_equal_halves_ratio_one(self):
        tm, lm, ratio = frobenius_decomposition(np.ones((4, 3)))
        assert tm == lm and ratio == pytest.approx(1.0, abs=1e-12)

    def test_zero_lm_half_reports_infinity(self):
        W = np.vstack([np.ones((2, 2)), np.zeros((2, 2))])
        tm, lm, ratio = frobenius_decomposition(W)
        assert lm == 0.0 and math.isinf(ratio)

    def test_four_by_two_hand_case(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
        tm, lm, ratio = frobenius_decomposition(W)
        assert tm == pytest.approx(math.sqrt(30.0), rel=1e-12)
        assert lm == pytest.approx(math.sqrt(174.0), rel=1e-12)
        assert ratio == pytest.approx(math.sqrt(30.0 / 174.0), rel=1e-12)

    def test_tensor_input_accepted(self):
        tm, lm, ratio = frobenius_decomposition(Tensor(np.ones((6, 2))))
        assert ratio == pytest.approx(1.0, abs=1e-12)

    def test_bad_shapes_rejected(self):
        with pytest.raises(ShapeError):
            frobenius_decomposition(np.ones((3, 2)))
        with pytest.raises(ShapeError):
            frobenius_decomposition(np.ones(4))
