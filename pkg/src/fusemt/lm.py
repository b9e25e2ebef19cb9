"""Recurrent target-side language model.

A single-layer GRU over target tokens. lm_step maps (state, previous
token) to (next state, unnormalized next-token logits); the probability
view is softmax of those logits. After pretraining the parameters are
frozen and the model only ever runs forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fusemt import tensor as T
from fusemt.errors import DataError
from fusemt.layers import GruCell, checksum_tensors, freeze_tensors, init_uniform, init_zeros
from fusemt.tensor import Tensor
from fusemt.vocab import BOS, EOS


@dataclass
class LmParams:
    """Embedding, recurrent cell, and output projection."""

    embed: Tensor  # (V, e)
    cell: GruCell
    W_out: Tensor  # (h, V)
    b_out: Tensor  # (V,)

    @classmethod
    def create(cls, vocab_size: int, embed_size: int, hidden_size: int, seed: int,
               dtype=np.float32) -> "LmParams":
        rng = np.random.default_rng([seed, 100])
        return cls(
            embed=init_uniform(rng, (vocab_size, embed_size), dtype, scale=0.1),
            cell=GruCell.create(rng, embed_size, hidden_size, dtype),
            W_out=init_uniform(rng, (hidden_size, vocab_size), dtype),
            b_out=init_zeros((vocab_size,), dtype),
        )

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    @property
    def dtype(self):
        return self.embed.dtype

    def tensors(self) -> dict[str, Tensor]:
        out = {"embed": self.embed, "W_out": self.W_out, "b_out": self.b_out}
        out.update(self.cell.tensors("cell"))
        return out

    def freeze(self) -> None:
        freeze_tensors(self.tensors())

    def checksum(self) -> str:
        return checksum_tensors(self.tensors())


def init_state(params: LmParams, batch: int) -> Tensor:
    """Fresh all-zeros recurrent state (sequences start after bos)."""
    return Tensor(np.zeros((batch, params.hidden_size), dtype=params.dtype))


def lm_step(params: LmParams, state: Tensor, prev_ids: np.ndarray) -> tuple[Tensor, Tensor]:
    """Advance one token: returns (next state (B,h), logits (B,V))."""
    x = T.embedding(params.embed, np.asarray(prev_ids))
    h = params.cell.step(x, state)
    logits = T.add(T.matmul(h, params.W_out), params.b_out)
    return h, logits


def sentence_nll(params: LmParams, ids: Sequence[int]) -> float:
    """Total negative log-likelihood of one sentence (ids exclude
    bos/eos; eos is scored as the final prediction target)."""
    targets = list(ids) + [EOS]
    inputs = [BOS] + list(ids)
    state = init_state(params, 1)
    total = 0.0
    for prev, tgt in zip(inputs, targets):
        state, logits = lm_step(params, state, np.array([prev]))
        nll = T.cross_entropy(logits, np.array([tgt]))
        total += float(nll.data[0])
    return total


def perplexity(params: LmParams, sentences: Sequence[Sequence[int]]) -> float:
    """exp(mean per-token NLL) over the corpus; eos counts as a target."""
    if not sentences:
        raise DataError("perplexity of an empty corpus is undefined")
    total, count = 0.0, 0
    for ids in sentences:
        total += sentence_nll(params, ids)
        count += len(ids) + 1
    return math.exp(total / count)


def greedy_chain(params: LmParams, max_len: int) -> list[int]:
    """Argmax rollout from bos until eos or max_len (diagnostics)."""
    state = init_state(params, 1)
    prev, out = BOS, []
    for _ in range(max_len):
        state, logits = lm_step(params, state, np.array([prev]))
        prev = int(np.argmax(logits.data[0]))
        if prev == EOS:
            break
        out.append(prev)
    return out
