"""AdaGrad optimization and the two-stage training procedure.

Stage 1 trains the language model on monolingual text; stage 2 trains
the translation model and fusion head with the LM bit-exactly frozen
(checksummed before and after). Batches are built by sorting on length
and padding, with the loss averaged per non-pad token; all shuffling is
seeded, so runs are reproducible to the bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from fusemt import fusion, lm as lm_mod, tensor as T, tm as tm_mod
from fusemt.backend import kernels
from fusemt.bpe import MARKER
from fusemt.corpus import ParallelCorpus
from fusemt.errors import ConfigError, DataError, NumericError
from fusemt.tensor import Tape, Tensor, backward
from fusemt.vocab import BOS, EOS, PAD, Vocabulary, build_vocab


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are desk-scale, full_scale() has the
    full-size values."""

    learning_rate: float = 0.01
    batch_size: int = 16
    pretrain_epochs: int = 15
    max_epochs: int = 100
    max_tokens: int = 60
    seed: int = 0
    embed_size: int = 64
    hidden_size: int = 64
    vocab_size: int = 200
    bpe_ops: int = 0
    grad_clip: float = 0.0

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        return cls(learning_rate=0.01, batch_size=128, pretrain_epochs=15,
                   max_epochs=100, max_tokens=60, embed_size=512,
                   hidden_size=512, vocab_size=30000, bpe_ops=16000)

    def validate(self) -> None:
        for name in ("learning_rate", "batch_size", "pretrain_epochs", "max_epochs",
                     "max_tokens", "embed_size", "hidden_size", "vocab_size"):
            if getattr(self, name) <= 0 and name not in ("pretrain_epochs",):
                raise ConfigError(f"TrainConfig.{name} must be positive (got {getattr(self, name)})")
        if self.pretrain_epochs < 0 or self.bpe_ops < 0 or self.grad_clip < 0:
            raise ConfigError("TrainConfig counts must be nonnegative")


@dataclass
class AdagradState:
    """Per-parameter accumulators of squared gradients."""

    accum: dict[str, np.ndarray]
    eps: float = 1e-8

    @classmethod
    def for_tensors(cls, tensors: dict[str, Tensor]) -> "AdagradState":
        return cls({name: np.zeros_like(t.data) for name, t in tensors.items()})


def adagrad_update(tensors: dict[str, Tensor], state: AdagradState, lr: float,
                   grad_clip: float = 0.0) -> None:
    """Apply one AdaGrad step to every tensor that has a gradient."""
    for name, t in tensors.items():
        g = t.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericError(f"adagrad_update: non-finite gradient for '{name}'")
        if grad_clip > 0.0:
            norm = float(np.sqrt((g * g).sum()))
            if norm > grad_clip:
                g = g * (grad_clip / norm)
        kernels.adagrad_step(t.data, np.ascontiguousarray(g), state.accum[name],
                             lr, state.eps)
        t.grad = None


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_loss: float
    seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_loss:.6f}\t{self.seconds:.2f}"


def format_log(logs: Sequence[EpochLog]) -> str:
    return "".join(log.line() + "\n" for log in logs)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def pad_matrix(seqs: Sequence[Sequence[int]], width: int | None = None,
               pad_id: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    """Stack id sequences into (B, W) ids plus a 0/1 float mask."""
    width = width if width is not None else max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def length_sorted_batches(lengths: Sequence[tuple], batch_size: int,
                          rng: np.random.Generator | None) -> list[list[int]]:
    """Deterministic length-bucketed index batches, order shuffled."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(batches)
    return batches


# ---------------------------------------------------------------------------
# Stage 1: language model
# ---------------------------------------------------------------------------


def _lm_batch_nll(params: lm_mod.LmParams, sentences: Sequence[Sequence[int]]):
    """Summed masked NLL over a batch; returns (Tensor total, token count)."""
    inputs, _ = pad_matrix([(BOS,) + tuple(s) for s in sentences])
    golds, mask = pad_matrix([tuple(s) + (EOS,) for s in sentences])
    B, W = inputs.shape
    state = lm_mod.init_state(params, B)
    total = None
    for t in range(W):
        state, logits = lm_mod.lm_step(params, state, inputs[:, t])
        nll = T.cross_entropy(logits, golds[:, t])
        masked = T.tsum(T.mul(nll, Tensor(mask[:, t].astype(params.dtype))))
        total = masked if total is None else T.add(total, masked)
    return total, int(mask.sum())


def lm_corpus_loss(params: lm_mod.LmParams, sentences: Sequence[Sequence[int]],
                   batch_size: int) -> float:
    """Mean per-token NLL without recording gradients."""
    total, count = 0.0, 0
    for batch in length_sorted_batches([len(s) for s in sentences], batch_size, None):
        nll, n = _lm_batch_nll(params, [sentences[i] for i in batch])
        total += float(nll.data)
        count += n
    return total / count


def train_lm(sentences: Sequence[Sequence[int]], vocab_size: int, cfg: TrainConfig,
             dev_sentences: Sequence[Sequence[int]] | None = None,
             epochs: int | None = None) -> tuple[lm_mod.LmParams, list[EpochLog]]:
    """Stage 1: fit the LM on monolingual id sequences."""
    cfg.validate()
    if not sentences:
        raise DataError("language model training corpus is empty")
    params = lm_mod.LmParams.create(vocab_size, cfg.embed_size, cfg.hidden_size, cfg.seed)
    state = AdagradState.for_tensors(params.tensors())
    logs: list[EpochLog] = []
    n_epochs = cfg.pretrain_epochs if epochs is None else epochs
    lengths = [len(s) for s in sentences]
    for epoch in range(1, n_epochs + 1):
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, 11, epoch])
        total, count = 0.0, 0
        for batch in length_sorted_batches(lengths, cfg.batch_size, rng):
            with Tape() as tape:
                nll, n = _lm_batch_nll(params, [sentences[i] for i in batch])
                loss = T.scale(nll, 1.0 / n)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"language model training diverged at epoch {epoch}")
            backward(tape, loss)
            adagrad_update(params.tensors(), state, cfg.learning_rate, cfg.grad_clip)
            total += float(nll.data)
            count += n
        dev = (lm_corpus_loss(params, dev_sentences, cfg.batch_size)
               if dev_sentences else float("nan"))
        logs.append(EpochLog(epoch, total / count, dev, time.perf_counter() - start))
    return params, logs


# ---------------------------------------------------------------------------
# Stage 2: translation model + fusion head with a frozen LM
# ---------------------------------------------------------------------------


@dataclass
class Stage2Example:
    """One encoded training pair plus the LM advance schedule.

    lm_prefix[t] is how many complete LM tokens precede TM prediction
    step t (one entry per decoder step, including the final eos step).
    """

    src: tuple[int, ...]
    tgt: tuple[int, ...]
    lm_ids: Optional[tuple[int, ...]] = None
    lm_prefix: Optional[tuple[int, ...]] = None


def word_schedule(tgt_tokens: Sequence[str], lm_vocab: Vocabulary,
                  marker: str = MARKER) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """LM ids and per-step prefix counts for a word-level LM over
    continuation-marked subword targets. The LM advances only when a
    surface word completes (its last piece carries no marker)."""
    words: list[str] = []
    prefix: list[int] = []
    pieces: list[str] = []
    for tok in tgt_tokens:
        prefix.append(len(words))
        if tok.endswith(marker):
            pieces.append(tok[: -len(marker)])
        else:
            pieces.append(tok)
            words.append("".join(pieces))
            pieces = []
    if pieces:  # unterminated trailing pieces still form a word
        words.append("".join(pieces))
    prefix.append(len(words))  # the eos prediction step
    return tuple(lm_vocab.encode(words)), tuple(prefix)


def make_examples(parallel: ParallelCorpus, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                  lm_vocab: Vocabulary | None = None,
                  lm_level: str = "token") -> list[Stage2Example]:
    """Encode a token-level parallel corpus for stage-2 training."""
    if lm_level not in ("token", "word"):
        raise ConfigError(f"lm_level must be 'token' or 'word' (got '{lm_level}')")
    out = []
    for src_tokens, tgt_tokens in parallel:
        src = tuple(src_vocab.encode(src_tokens))
        tgt = tuple(tgt_vocab.encode(tgt_tokens))
        lm_ids = lm_prefix = None
        if lm_vocab is not None:
            if lm_level == "token":
                lm_ids = tuple(lm_vocab.encode(tgt_tokens))
                lm_prefix = tuple(range(len(tgt_tokens) + 1))
            else:
                lm_ids, lm_prefix = word_schedule(tgt_tokens, lm_vocab)
        out.append(Stage2Example(src, tgt, lm_ids, lm_prefix))
    return out


def _lm_values_for_batch(lm_params: lm_mod.LmParams, examples: Sequence[Stage2Example],
                         n_steps: int, quantity: str) -> np.ndarray:
    """Precompute the frozen LM signal for every decoder step.

    Returns (B, n_steps, V_LM): row b at step t holds the LM logits (or
    probabilities) after consuming lm_prefix[t] tokens of example b.
    """
    B = len(examples)
    max_lm = max(len(ex.lm_ids) for ex in examples)
    inputs, _ = pad_matrix([(BOS,) + ex.lm_ids for ex in examples])
    state = lm_mod.init_state(lm_params, B)
    per_pos = np.empty((B, max_lm + 1, lm_params.vocab_size), dtype=lm_params.dtype)
    for k in range(max_lm + 1):
        state, logits = lm_mod.lm_step(lm_params, state, inputs[:, k])
        per_pos[:, k, :] = logits.data
    if quantity == "probs":
        per_pos = kernels.softmax_rows(
            np.ascontiguousarray(per_pos.reshape(B * (max_lm + 1), -1))
        ).reshape(B, max_lm + 1, -1)
    values = np.zeros((B, n_steps, lm_params.vocab_size), dtype=lm_params.dtype)
    rows = np.arange(B)
    for t in range(n_steps):
        prefix = np.array([ex.lm_prefix[t] if t < len(ex.lm_prefix) else len(ex.lm_ids)
                           for ex in examples])
        values[:, t, :] = per_pos[rows, prefix, :]
    return values


@dataclass
class TrainedModel:
    """Everything stage 2 produces, ready for decoding/checkpointing."""

    variant: str
    cfg: TrainConfig
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    tm_params: tm_mod.TmParams
    head: object
    lm_params: Optional[lm_mod.LmParams] = None
    lm_vocab: Optional[Vocabulary] = None
    lm_level: str = "token"
    lm_logs: list[EpochLog] = field(default_factory=list)
    tm_logs: list[EpochLog] = field(default_factory=list)
    lm_checksum_before: str = ""
    lm_checksum_after: str = ""


def _batch_loss(tm_params, head, lm_params, examples: Sequence[Stage2Example]):
    """Summed masked NLL of one stage-2 batch; (Tensor, token count)."""
    src_ids, src_mask = pad_matrix([ex.src for ex in examples])
    dec_in, _ = pad_matrix([(BOS,) + ex.tgt for ex in examples])
    golds, tgt_mask = pad_matrix([ex.tgt + (EOS,) for ex in examples])
    n_steps = dec_in.shape[1]

    lm_values = None
    if head.lm_quantity is not None:
        lm_values = _lm_values_for_batch(lm_params, examples, n_steps, head.lm_quantity)

    enc = tm_mod.encode(tm_params, src_ids, src_mask.astype(tm_params.dtype))
    state = tm_mod.init_decoder_state(tm_params, enc)
    total = None
    for t in range(n_steps):
        step = tm_mod.decode_step(tm_params, dec_in[:, t], state, enc)
        state = step.state
        lm_value = None if lm_values is None else Tensor(np.ascontiguousarray(lm_values[:, t, :]))
        nll = fusion.head_nll(head, tm_params, step.s_tm, lm_value, golds[:, t])
        masked = T.tsum(T.mul(nll, Tensor(tgt_mask[:, t].astype(tm_params.dtype))))
        total = masked if total is None else T.add(total, masked)
    return total, int(tgt_mask.sum())


def tm_corpus_loss(tm_params, head, lm_params, examples: Sequence[Stage2Example],
                   batch_size: int) -> float:
    """Mean per-token stage-2 NLL without recording gradients."""
    total, count = 0.0, 0
    lengths = [(len(ex.src), len(ex.tgt)) for ex in examples]
    for batch in length_sorted_batches(lengths, batch_size, None):
        nll, n = _batch_loss(tm_params, head, lm_params, [examples[i] for i in batch])
        total += float(nll.data)
        count += n
    return total / count


def train_tm(examples: Sequence[Stage2Example], variant: str, cfg: TrainConfig,
             src_vocab_size: int, tgt_vocab_size: int,
             lm_params: lm_mod.LmParams | None = None,
             dev_examples: Sequence[Stage2Example] | None = None,
             ) -> tuple[tm_mod.TmParams, object, list[EpochLog], tuple[str, str]]:
    """Stage 2: train the TM and head, LM frozen; best-dev params win.

    Returns (tm_params, head, logs, (lm checksum before, after)).
    """
    cfg.validate()
    if not examples:
        raise DataError("translation model training corpus is empty")
    if variant != "baseline" and lm_params is None:
        raise ConfigError(f"variant '{variant}' requires a pretrained language model")

    lm_vocab_size = lm_params.vocab_size if lm_params is not None else None
    tm_params = tm_mod.TmParams.create(src_vocab_size, tgt_vocab_size,
                                       cfg.embed_size, cfg.hidden_size, cfg.seed)
    head = fusion.make_head(variant, cfg.hidden_size, tgt_vocab_size, lm_vocab_size,
                            seed=cfg.seed)
    checksum_before = checksum_after = ""
    if lm_params is not None and variant != "baseline":
        lm_params.freeze()
        checksum_before = lm_params.checksum()

    trainable = dict(tm_params.tensors())
    trainable.update(head.tensors())
    opt = AdagradState.for_tensors(trainable)

    lengths = [(len(ex.src), len(ex.tgt)) for ex in examples]
    logs: list[EpochLog] = []
    best_dev = float("inf")
    best_snapshot = None
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, 13, epoch])
        total, count = 0.0, 0
        for batch in length_sorted_batches(lengths, cfg.batch_size, rng):
            with Tape() as tape:
                nll, n = _batch_loss(tm_params, head, lm_params,
                                     [examples[i] for i in batch])
                loss = T.scale(nll, 1.0 / n)
            if not math.isfinite(float(loss.data)):
                raise NumericError(f"stage-2 training diverged at epoch {epoch}")
            backward(tape, loss)
            adagrad_update(trainable, opt, cfg.learning_rate, cfg.grad_clip)
            total += float(nll.data)
            count += n
        dev = (tm_corpus_loss(tm_params, head, lm_params, dev_examples, cfg.batch_size)
               if dev_examples else float("nan"))
        if dev_examples and math.isfinite(dev) and dev < best_dev:
            best_dev = dev
            best_snapshot = {k: t.data.copy() for k, t in trainable.items()}
        logs.append(EpochLog(epoch, total / count, dev, time.perf_counter() - start))
    if best_snapshot is not None:
        for k, t in trainable.items():
            t.data[...] = best_snapshot[k]
    if lm_params is not None and variant != "baseline":
        checksum_after = lm_params.checksum()
    return tm_params, head, logs, (checksum_before, checksum_after)


def train_two_stage(parallel: ParallelCorpus, mono: Sequence[Sequence[str]] | None,
                    variant: str, cfg: TrainConfig,
                    dev: ParallelCorpus | None = None,
                    lm_level: str = "token",
                    lm_vocab: Vocabulary | None = None,
                    lm_params: lm_mod.LmParams | None = None,
                    mono_dev: Sequence[Sequence[str]] | None = None) -> TrainedModel:
    """Run both stages on token-level corpora.

    Vocabularies come from the parallel corpus alone; monolingual-only
    words map to unk. With lm_level="word" the LM tokenization differs
    from the TM's, so an explicit lm_vocab is required.
    """
    cfg.validate()
    if variant not in fusion.VARIANTS:
        raise ConfigError(f"unknown variant '{variant}' (expected one of {fusion.VARIANTS})")
    kept = parallel.filtered(cfg.max_tokens)
    if not len(kept):
        raise DataError("no training pairs remain after length filtering")
    src_vocab = build_vocab(kept.sources(), cfg.vocab_size)
    tgt_vocab = build_vocab(kept.targets(), cfg.vocab_size)

    lm_logs: list[EpochLog] = []
    if variant == "baseline":
        lm_params, lm_vocab = None, None
    else:
        if lm_level == "word" and lm_vocab is None:
            raise ConfigError("lm_level='word' needs an explicit lm_vocab")
        if lm_vocab is None:
            lm_vocab = tgt_vocab
        if lm_params is None:
            if mono is None:
                raise ConfigError(
                    f"variant '{variant}' needs a monolingual corpus or a pretrained LM"
                )
            lm_sents = [lm_vocab.encode(s) for s in mono if len(s) <= cfg.max_tokens]
            lm_dev = ([lm_vocab.encode(s) for s in mono_dev] if mono_dev else None)
            lm_params, lm_logs = train_lm(lm_sents, len(lm_vocab), cfg, lm_dev)

    examples = make_examples(kept, src_vocab, tgt_vocab,
                             lm_vocab if variant != "baseline" else None, lm_level)
    dev_examples = None
    if dev is not None:
        dev_examples = make_examples(dev, src_vocab, tgt_vocab,
                                     lm_vocab if variant != "baseline" else None, lm_level)

    tm_params, head, tm_logs, checksums = train_tm(
        examples, variant, cfg, len(src_vocab), len(tgt_vocab), lm_params, dev_examples
    )
    return TrainedModel(
        variant=variant, cfg=replace(cfg), src_vocab=src_vocab, tgt_vocab=tgt_vocab,
        tm_params=tm_params, head=head, lm_params=lm_params, lm_vocab=lm_vocab,
        lm_level=lm_level, lm_logs=lm_logs, tm_logs=tm_logs,
        lm_checksum_before=checksums[0], lm_checksum_after=checksums[1],
    )
