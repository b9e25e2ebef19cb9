"""Corpus metrics, significance testing, and trained-model analyses.

BLEU is the classic unsmoothed 4-gram corpus score with brevity penalty.
RIBES scores word-order agreement: hypothesis words are aligned to
reference positions (unique unigram match, else unique bigram-context
match, else unaligned) and normalized Kendall's tau over the aligned
positions is damped by unigram precision^alpha and brevity^beta.
Significance comes from paired bootstrap resampling with a per-sample
seeded generator, so the result is deterministic and order-independent.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fusemt.decoding import greedy_decode_with_trace, trace_sequence
from fusemt.errors import ConfigError, DataError, ShapeError

RIBES_ALPHA = 0.25
RIBES_BETA = 0.10
BLEU_ORDER = 4

Tokens = Sequence[str]


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BleuStats:
    """Additive per-sentence sufficient statistics for corpus BLEU."""

    matches: tuple[int, ...]  # clipped n-gram matches, n=1..4
    totals: tuple[int, ...]  # hypothesis n-gram counts, n=1..4
    hyp_len: int
    ref_len: int

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.totals, other.totals)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )

    @classmethod
    def zero(cls) -> "BleuStats":
        return cls((0,) * BLEU_ORDER, (0,) * BLEU_ORDER, 0, 0)

    @classmethod
    def of_pair(cls, hypothesis: Tokens, reference: Tokens) -> "BleuStats":
        hyp, ref = list(hypothesis), list(reference)
        matches, totals = [], []
        for n in range(1, BLEU_ORDER + 1):
            hyp_ngrams = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
            ref_ngrams = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
            matches.append(sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items()))
            totals.append(max(0, len(hyp) - n + 1))
        return cls(tuple(matches), tuple(totals), len(hyp), len(ref))

    def precisions(self) -> list[float]:
        return [m / t if t else 0.0 for m, t in zip(self.matches, self.totals)]

    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        return min(1.0, math.exp(1.0 - self.ref_len / self.hyp_len))

    def score(self) -> float:
        """Corpus BLEU on the 0-100 scale; 0 if any precision is 0."""
        if self.hyp_len == 0:
            return 0.0
        log_sum = 0.0
        for m, t in zip(self.matches, self.totals):
            if m == 0 or t == 0:
                return 0.0
            log_sum += math.log(m / t)
        return 100.0 * self.brevity_penalty() * math.exp(log_sum / BLEU_ORDER)

    def vector(self) -> np.ndarray:
        return np.array([*self.matches, *self.totals, self.hyp_len, self.ref_len],
                        dtype=np.int64)

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "BleuStats":
        v = [int(x) for x in v]
        return cls(tuple(v[:4]), tuple(v[4:8]), v[8], v[9])


def _check_aligned(hypotheses, references):
    if len(hypotheses) != len(references):
        raise DataError(
            f"hypothesis/reference line counts differ: "
            f"{len(hypotheses)} vs {len(references)}"
        )
    if len(hypotheses) == 0:
        raise DataError("cannot score an empty corpus")


def corpus_bleu_stats(hypotheses: Sequence[Tokens],
                      references: Sequence[Tokens]) -> BleuStats:
    _check_aligned(hypotheses, references)
    total = BleuStats.zero()
    for hyp, ref in zip(hypotheses, references):
        total = total + BleuStats.of_pair(hyp, ref)
    return total


def bleu(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Corpus BLEU, 0-100, case-sensitive on pre-tokenized text."""
    return corpus_bleu_stats(hypotheses, references).score()


# ---------------------------------------------------------------------------
# RIBES
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RibesScore:
    nkt: float  # normalized Kendall's tau in [0, 1]
    precision: float  # aligned words / hypothesis length
    bp: float  # brevity penalty in (0, 1]
    value: float  # nkt * precision^alpha * bp^beta


def _align_positions(hyp: list[str], ref: list[str]) -> list[int]:
    """Reference position for each alignable hypothesis word, in
    hypothesis order: unique unigram, else unique bigram context."""
    hyp_uni, ref_uni = Counter(hyp), Counter(ref)
    hyp_bi = Counter(zip(hyp, hyp[1:]))
    ref_bi = Counter(zip(ref, ref[1:]))
    ref_uni_pos = {w: i for i, w in enumerate(ref)}
    ref_bi_pos = {}
    for i, bigram in enumerate(zip(ref, ref[1:])):
        ref_bi_pos[bigram] = i
    positions = []
    for i, word in enumerate(hyp):
        if word not in ref_uni:
            continue
        if ref_uni[word] == 1 and hyp_uni[word] == 1:
            positions.append(ref_uni_pos[word])
            continue
        if i > 0:
            left = (hyp[i - 1], word)
            if hyp_bi[left] == 1 and ref_bi.get(left, 0) == 1:
                positions.append(ref_bi_pos[left] + 1)
                continue
        if i + 1 < len(hyp):
            right = (word, hyp[i + 1])
            if hyp_bi[right] == 1 and ref_bi.get(right, 0) == 1:
                positions.append(ref_bi_pos[right])
    return positions


def ribes(hypothesis: Tokens, reference: Tokens) -> RibesScore:
    """Word-order score of one sentence pair, value in [0, 1]."""
    hyp, ref = list(hypothesis), list(reference)
    if not ref:
        raise DataError("ribes: reference sentence is empty")
    if not hyp:
        return RibesScore(nkt=0.0, precision=0.0, bp=1.0, value=0.0)
    bp = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    positions = _align_positions(hyp, ref)
    k = len(positions)
    if k < 2:
        return RibesScore(nkt=0.0, precision=k / len(hyp), bp=bp, value=0.0)
    concordant = sum(
        1
        for a in range(k)
        for b in range(a + 1, k)
        if positions[a] < positions[b]
    )
    nkt = concordant / (k * (k - 1) / 2)
    precision = k / len(hyp)
    value = nkt * precision ** RIBES_ALPHA * bp ** RIBES_BETA
    return RibesScore(nkt=nkt, precision=precision, bp=bp, value=value)


def corpus_ribes(hypotheses: Sequence[Tokens], references: Sequence[Tokens]) -> float:
    """Mean per-sentence RIBES value in [0, 1] (exact, order-invariant sum)."""
    _check_aligned(hypotheses, references)
    values = [ribes(h, r).value for h, r in zip(hypotheses, references)]
    return math.fsum(values) / len(values)


# ---------------------------------------------------------------------------
# Paired bootstrap significance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    p_value: float  # fraction of resamples where B >= A (tests A > B)
    wins_a: int
    wins_b: int
    ties: int
    n_samples: int


def paired_bootstrap(sys_a: Sequence[Tokens], sys_b: Sequence[Tokens],
                     references: Sequence[Tokens], n_samples: int = 10000,
                     metric: str = "bleu", seed: int = 0) -> BootstrapResult:
    """Resample sentences with replacement; deterministic given seed."""
    _check_aligned(sys_a, references)
    _check_aligned(sys_b, references)
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1 (got {n_samples})")
    n = len(references)
    if metric == "bleu":
        mat_a = np.stack([BleuStats.of_pair(h, r).vector()
                          for h, r in zip(sys_a, references)])
        mat_b = np.stack([BleuStats.of_pair(h, r).vector()
                          for h, r in zip(sys_b, references)])

        def resample_scores(idx):
            a = BleuStats.from_vector(mat_a[idx].sum(axis=0)).score()
            b = BleuStats.from_vector(mat_b[idx].sum(axis=0)).score()
            return a, b
    elif metric == "ribes":
        val_a = np.array([ribes(h, r).value for h, r in zip(sys_a, references)])
        val_b = np.array([ribes(h, r).value for h, r in zip(sys_b, references)])

        def resample_scores(idx):
            return float(val_a[idx].mean()), float(val_b[idx].mean())
    else:
        raise ConfigError(f"unknown bootstrap metric {metric!r}")

    wins_a = wins_b = ties = 0
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        idx = rng.integers(0, n, size=n)
        a, b = resample_scores(idx)
        if a > b:
            wins_a += 1
        elif b > a:
            wins_b += 1
        else:
            ties += 1
    return BootstrapResult(
        p_value=(wins_b + ties) / n_samples,
        wins_a=wins_a, wins_b=wins_b, ties=ties, n_samples=n_samples,
    )


# ---------------------------------------------------------------------------
# Score reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreReport:
    """BLEU and mean RIBES on the 0-100 scale, optional significance."""

    bleu: float
    ribes: float
    p_value: Optional[float] = None
    bootstrap: Optional[BootstrapResult] = None

    def render(self) -> str:
        lines = [f"BLEU\t{self.bleu:.2f}", f"RIBES\t{self.ribes:.2f}"]
        if self.p_value is not None:
            lines.append(f"P-VALUE\t{self.p_value:.4f}")
        return "\n".join(lines) + "\n"


def score_corpus(hypotheses: Sequence[Tokens], references: Sequence[Tokens],
                 rival: Optional[Sequence[Tokens]] = None,
                 n_samples: int = 10000, seed: int = 0) -> ScoreReport:
    """Full corpus report; rival hypotheses trigger the bootstrap test."""
    report = ScoreReport(
        bleu=bleu(hypotheses, references),
        ribes=100.0 * corpus_ribes(hypotheses, references),
    )
    if rival is None:
        return report
    boot = paired_bootstrap(hypotheses, rival, references,
                            n_samples=n_samples, seed=seed)
    return ScoreReport(bleu=report.bleu, ribes=report.ribes,
                       p_value=boot.p_value, bootstrap=boot)


# ---------------------------------------------------------------------------
# Analyses
# ---------------------------------------------------------------------------


def format_weight(value: float) -> str:
    """Scientific notation with a bare exponent, e.g. 0.99 -> 9.9e-1."""
    mantissa, exponent = f"{value:.1e}".split("e")
    return f"{mantissa}e{int(exponent)}"


def dump_attention(model, source, target_ids: Optional[Sequence[int]] = None,
                   max_len: int = 60, top_k: int = 5) -> list[str]:
    """One "position<TAB>token<TAB>top5(word:weight,...)" line per
    emitted token, weights sorted descending. Positions are 1-based.

    With target_ids the trace replays that sequence; otherwise the model
    decodes greedily.
    """
    if model.variant != "dynamic":
        raise ConfigError(
            f"attention dump needs the dynamic variant (got {model.variant!r})"
        )
    if target_ids is None:
        ids, traces = greedy_decode_with_trace(model, source, max_len)
    else:
        ids = list(target_ids)
        traces = trace_sequence(model, source, ids)
    words = model.lm_vocab.tokens
    lines = []
    for pos, (tok, trace) in enumerate(zip(ids, traces), start=1):
        order = np.argsort(-trace.alpha, kind="stable")[:top_k]
        cells = ",".join(f"{words[w]}:{format_weight(float(trace.alpha[w]))}"
                         for w in order)
        lines.append(f"{pos}\t{model.tgt_vocab.tokens[tok]}\ttop{top_k}({cells})")
    return lines


def frobenius_decomposition(W) -> tuple[float, float, float]:
    """Split a fusion projection into the rows applied to the decoder
    state (top half) and to the LM context (bottom half); return each
    half's Frobenius norm and their ratio (inf when the LM half is 0)."""
    data = np.asarray(getattr(W, "data", W), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] % 2 != 0:
        raise ShapeError(
            f"frobenius_decomposition needs a 2-D matrix with an even row "
            f"count, got shape {data.shape}"
        )
    half = data.shape[0] // 2
    norm_tm = float(np.linalg.norm(data[:half]))
    norm_lm = float(np.linalg.norm(data[half:]))
    ratio = math.inf if norm_lm == 0.0 else norm_tm / norm_lm
    return norm_tm, norm_lm, ratio
