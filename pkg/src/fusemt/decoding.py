"""Greedy and beam search over trained models, plus shallow fusion.

Decoding is forward-only (no tape), deterministic, and keeps the
language model synchronized with the hypothesis: token-level LMs
advance on every consumed token, word-level LMs only when a
continuation-marked subword sequence completes a surface word.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from fusemt import fusion, lm as lm_mod, tm as tm_mod
from fusemt.backend import kernels
from fusemt.bpe import MARKER
from fusemt.errors import ConfigError, VocabularyMismatchError
from fusemt.tensor import Tensor
from fusemt.training import TrainedModel
from fusemt.vocab import BOS, EOS, UNK


def log_softmax_row(scores: np.ndarray) -> np.ndarray:
    """Stable log softmax of a 1-D score vector, in float64."""
    s = scores.astype(np.float64)
    m = s.max()
    z = np.exp(s - m)
    return (s - m) - np.log(z.sum())


@dataclass(frozen=True)
class DecodeState:
    """Per-hypothesis model state; arrays are never mutated in place.

    Invariant: the state has consumed bos plus every token of its
    hypothesis except the last; stepping feeds that last token.
    """

    tm_state: np.ndarray  # (1, h) decoder recurrent state
    lm_state: Optional[np.ndarray] = None  # (1, h)
    lm_value: Optional[np.ndarray] = None  # (1, V_LM) logits or probs
    lm_pieces: tuple[str, ...] = ()  # pending subword surfaces (word-level)


@dataclass(frozen=True)
class Hypothesis:
    """Emitted ids (eos excluded), cumulative log-score, model state."""

    tokens: tuple[int, ...]
    score: float
    state: DecodeState
    finished: bool = False


@dataclass
class StepTrace:
    """Everything observable at one decode step."""

    token: int
    attention: np.ndarray  # (L,) source attention
    alpha: Optional[np.ndarray] = None  # (V_LM,) dynamic word attention


class SentenceDecoder:
    """Incremental per-sentence stepper shared by all search modes."""

    def __init__(self, model: TrainedModel, source, marker: str = MARKER):
        self.model = model
        self.marker = marker
        src_ids = (np.asarray(model.src_vocab.encode(source))
                   if len(source) and isinstance(source[0], str) else np.asarray(source))
        self.enc = tm_mod.encode(model.tm_params, src_ids[None, :])
        self._tm_to_lm = None
        if model.lm_params is not None and model.lm_level == "token":
            self._tm_to_lm = np.array(
                [model.lm_vocab.index.get(tok, UNK) for tok in model.tgt_vocab.tokens]
            )

    def start(self) -> DecodeState:
        tm0 = tm_mod.init_decoder_state(self.model.tm_params, self.enc)
        return DecodeState(tm_state=tm0.data)

    def _lm_advance(self, lm_state: Optional[np.ndarray], ids: np.ndarray):
        params = self.model.lm_params
        state = lm_mod.init_state(params, 1) if lm_state is None else Tensor(lm_state)
        state, logits = lm_mod.lm_step(params, state, ids)
        value = logits.data
        if self.model.head.lm_quantity == "probs":
            value = kernels.softmax_rows(np.ascontiguousarray(value))
        return state.data, value

    def _sync_lm(self, state: DecodeState, prev_id: int) -> DecodeState:
        """Feed the consumed token into the LM stream."""
        if self.model.lm_params is None:
            return state
        if prev_id == BOS or self.model.lm_level == "token":
            lm_id = BOS if prev_id == BOS else int(self._tm_to_lm[prev_id])
            lm_state, lm_value = self._lm_advance(state.lm_state, np.array([lm_id]))
            return replace(state, lm_state=lm_state, lm_value=lm_value)
        surface = self.model.tgt_vocab.tokens[prev_id]
        if surface.endswith(self.marker):
            return replace(state, lm_pieces=state.lm_pieces + (surface[: -len(self.marker)],))
        word = "".join(state.lm_pieces) + surface
        word_id = self.model.lm_vocab.index.get(word, UNK)
        lm_state, lm_value = self._lm_advance(state.lm_state, np.array([word_id]))
        return replace(state, lm_state=lm_state, lm_value=lm_value, lm_pieces=())

    def step(self, state: DecodeState, prev_id: int
             ) -> tuple[DecodeState, np.ndarray, StepTrace]:
        """Consume prev_id; return (state', log-probs over V_TM, trace)."""
        state = self._sync_lm(state, prev_id)
        model = self.model
        step = tm_mod.decode_step(model.tm_params, np.array([prev_id]),
                                  Tensor(state.tm_state), self.enc)
        lm_value = None if state.lm_value is None else Tensor(state.lm_value)
        scores = model.head.scores(model.tm_params, step.s_tm, lm_value)
        trace = StepTrace(token=-1, attention=step.attention.data[0].copy())
        if model.variant == "dynamic":
            trace.alpha = model.head.last_trace.alpha.data[0].copy()
        new_state = replace(state, tm_state=step.state.data)
        return new_state, log_softmax_row(scores.data[0]), trace


def greedy_decode(model: TrainedModel, source, max_len: int = 60) -> list[int]:
    """Stepwise argmax until eos or max_len; ties go to the lowest id."""
    ids, _ = greedy_decode_with_trace(model, source, max_len)
    return ids


def greedy_decode_with_trace(model: TrainedModel, source, max_len: int = 60
                             ) -> tuple[list[int], list[StepTrace]]:
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1 (got {max_len})")
    dec = SentenceDecoder(model, source)
    state = dec.start()
    prev = BOS
    out: list[int] = []
    traces: list[StepTrace] = []
    for _ in range(max_len):
        state, logp, trace = dec.step(state, prev)
        prev = int(np.argmax(logp))
        if prev == EOS:
            break
        trace.token = prev
        out.append(prev)
        traces.append(trace)
    return out, traces


def _select_children(hyps, steps, beam: int):
    """Keep the best `beam` (parent, token) pairs over all expansions.

    Candidate order is (score desc, hypothesis index asc, token asc) so
    ties resolve exactly like greedy argmax.
    """
    flat = np.concatenate([hyp.score + logp for hyp, (_, logp) in zip(hyps, steps)])
    vocab = steps[0][1].shape[0]
    picks = []
    for pos in np.argsort(-flat, kind="stable")[:beam]:
        h_idx, token = divmod(int(pos), vocab)
        picks.append((hyps[h_idx], steps[h_idx][0], token, float(flat[pos])))
    return picks


def beam_search(model: TrainedModel, source, beam: int, max_len: int = 60) -> Hypothesis:
    """Breadth-limited search; hypotheses compared by total log-score
    (no length normalization)."""
    if beam < 1:
        raise ConfigError(f"beam must be >= 1 (got {beam})")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1 (got {max_len})")
    dec = SentenceDecoder(model, source)
    live = [Hypothesis(tokens=(), score=0.0, state=dec.start())]
    done: list[Hypothesis] = []
    for _ in range(max_len):
        steps = []
        for hyp in live:
            prev = hyp.tokens[-1] if hyp.tokens else BOS
            state, logp, _ = dec.step(hyp.state, prev)
            steps.append((state, logp))
        children = []
        for parent, state, token, score in _select_children(live, steps, beam):
            if token == EOS:
                done.append(Hypothesis(parent.tokens, score, state, finished=True))
            else:
                children.append(Hypothesis(parent.tokens + (token,), score, state))
        live = children
        if not live:
            break
    done.extend(live)  # hypotheses cut off at max_len without eos
    return max(done, key=lambda h: h.score)


def beam_decode(model: TrainedModel, source, beam: int, max_len: int = 60) -> list[int]:
    return list(beam_search(model, source, beam, max_len).tokens)


def sequence_logprob(model: TrainedModel, source, target_ids: Sequence[int]) -> float:
    """Model log-probability of emitting target_ids then eos."""
    dec = SentenceDecoder(model, source)
    state = dec.start()
    total = 0.0
    prev = BOS
    for tok in list(target_ids) + [EOS]:
        state, logp, _ = dec.step(state, prev)
        total += float(logp[tok])
        prev = int(tok)
    return total


def trace_sequence(model: TrainedModel, source, target_ids: Sequence[int]) -> list[StepTrace]:
    """Replay an emitted sequence collecting one trace per token."""
    dec = SentenceDecoder(model, source)
    state = dec.start()
    traces = []
    prev = BOS
    for tok in target_ids:
        state, _, trace = dec.step(state, prev)
        trace.token = int(tok)
        traces.append(trace)
        prev = int(tok)
    return traces


# ---------------------------------------------------------------------------
# Shallow fusion decoding
# ---------------------------------------------------------------------------


def shallow_decode(model: TrainedModel, lm_params: lm_mod.LmParams,
                   cfg: fusion.ShallowConfig, source, beam: int = 1,
                   max_len: int = 60) -> list[int]:
    """Beam search scoring candidates by logP_TM + lambda * logP_LM.

    The TM and LM must share one vocabulary; the LM advances with every
    consumed token.
    """
    if len(model.tgt_vocab) != lm_params.vocab_size:
        raise VocabularyMismatchError(
            f"shallow fusion needs one shared vocabulary "
            f"(|V_TM|={len(model.tgt_vocab)}, |V_LM|={lm_params.vocab_size})"
        )
    if beam < 1 or max_len < 1:
        raise ConfigError("beam and max_len must be >= 1")
    dec = SentenceDecoder(model, source)

    def lm_logp(lm_state, prev_id):
        state = lm_mod.init_state(lm_params, 1) if lm_state is None else Tensor(lm_state)
        state, logits = lm_mod.lm_step(lm_params, state, np.array([prev_id]))
        return state.data, log_softmax_row(logits.data[0])

    live = [(Hypothesis(tokens=(), score=0.0, state=dec.start()), None)]
    done: list[Hypothesis] = []
    vocab = len(model.tgt_vocab)
    for _ in range(max_len):
        expanded = []
        for hyp, lm_state in live:
            prev = hyp.tokens[-1] if hyp.tokens else BOS
            tm_state, tm_lp, _ = dec.step(hyp.state, prev)
            lm_state, lm_lp = lm_logp(lm_state, prev)
            combined = fusion.shallow_combine(tm_lp, lm_lp, cfg)
            expanded.append((hyp, tm_state, lm_state, combined))
        flat = np.concatenate([hyp.score + comb for hyp, _, _, comb in expanded])
        live = []
        for pos in np.argsort(-flat, kind="stable")[:beam]:
            h_idx, token = divmod(int(pos), vocab)
            hyp, tm_state, lm_state, _ = expanded[h_idx]
            score = float(flat[pos])
            if token == EOS:
                done.append(Hypothesis(hyp.tokens, score, tm_state, finished=True))
            else:
                live.append((Hypothesis(hyp.tokens + (token,), score, tm_state), lm_state))
        if not live:
            break
    done.extend(h for h, _ in live)
    return list(max(done, key=lambda h: h.score).tokens)


def translate_corpus(model: TrainedModel, sources: Sequence, beam: int = 1,
                     max_len: int = 60) -> list[list[int]]:
    """Decode a corpus in input order (deterministic)."""
    if beam == 1:
        return [greedy_decode(model, src, max_len) for src in sources]
    return [beam_decode(model, src, beam, max_len) for src in sources]
