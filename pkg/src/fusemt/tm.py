"""Baseline attentional encoder-decoder translation model.

Single-layer bidirectional GRU encoder whose per-position states are
concatenated and projected to the hidden size; single-layer GRU decoder
with multiplicative source attention and no input feeding. The decoder
output state S_TM (the tanh-combined state/context vector) is what
every fusion head consumes; the baseline's own logits come from
tm_logits(S_TM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fusemt import tensor as T
from fusemt.errors import DataError
from fusemt.layers import GruCell, checksum_tensors, freeze_tensors, init_uniform, init_zeros
from fusemt.tensor import Tensor

ATTENTION_MASK_BIAS = -1e9


@dataclass
class TmParams:
    """All trainable tensors of the baseline encoder-decoder."""

    src_embed: Tensor  # (V_src, e)
    enc_fwd: GruCell  # e -> h
    enc_bwd: GruCell  # e -> h
    W_enc: Tensor  # (2h, h)
    b_enc: Tensor  # (h,)
    tgt_embed: Tensor  # (V_tgt, e)
    dec_cell: GruCell  # e -> h
    W_att: Tensor  # (h, h)
    W_comb: Tensor  # (2h, h)
    b_comb: Tensor  # (h,)
    W_out: Tensor  # (h, V_tgt)
    b_out: Tensor  # (V_tgt,)

    @classmethod
    def create(cls, src_vocab: int, tgt_vocab: int, embed_size: int, hidden_size: int,
               seed: int, dtype=np.float32) -> "TmParams":
        rng = np.random.default_rng([seed, 200])
        e, h = embed_size, hidden_size
        return cls(
            src_embed=init_uniform(rng, (src_vocab, e), dtype, scale=0.1),
            enc_fwd=GruCell.create(rng, e, h, dtype),
            enc_bwd=GruCell.create(rng, e, h, dtype),
            W_enc=init_uniform(rng, (2 * h, h), dtype),
            b_enc=init_zeros((h,), dtype),
            tgt_embed=init_uniform(rng, (tgt_vocab, e), dtype, scale=0.1),
            dec_cell=GruCell.create(rng, e, h, dtype),
            W_att=init_uniform(rng, (h, h), dtype),
            W_comb=init_uniform(rng, (2 * h, h), dtype),
            b_comb=init_zeros((h,), dtype),
            W_out=init_uniform(rng, (h, tgt_vocab), dtype),
            b_out=init_zeros((tgt_vocab,), dtype),
        )

    @property
    def hidden_size(self) -> int:
        return self.dec_cell.hidden_size

    @property
    def src_vocab_size(self) -> int:
        return self.src_embed.shape[0]

    @property
    def tgt_vocab_size(self) -> int:
        return self.W_out.shape[1]

    @property
    def dtype(self):
        return self.src_embed.dtype

    def tensors(self) -> dict[str, Tensor]:
        out = {
            "src_embed": self.src_embed,
            "W_enc": self.W_enc,
            "b_enc": self.b_enc,
            "tgt_embed": self.tgt_embed,
            "W_att": self.W_att,
            "W_comb": self.W_comb,
            "b_comb": self.b_comb,
            "W_out": self.W_out,
            "b_out": self.b_out,
        }
        out.update(self.enc_fwd.tensors("enc_fwd"))
        out.update(self.enc_bwd.tensors("enc_bwd"))
        out.update(self.dec_cell.tensors("dec_cell"))
        return out

    def freeze(self) -> None:
        freeze_tensors(self.tensors())

    def checksum(self) -> str:
        return checksum_tensors(self.tensors())


@dataclass
class EncodedSource:
    """Encoder output plus precomputed attention keys and masking."""

    states: Tensor  # (B, L, h)
    att_keys: Tensor  # (B, L, h) = states @ W_att
    mask: np.ndarray  # (B, L) of 0/1
    att_bias: Tensor  # (B, L) constant, 0 where real, -1e9 where pad

    @property
    def batch(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        return self.states.shape[1]


@dataclass
class DecoderStep:
    """One decoder step: next recurrent state, output state, attention."""

    state: Tensor  # (B, h) next recurrent state
    s_tm: Tensor  # (B, h) decoder output state consumed by heads
    attention: Tensor  # (B, L) source-attention weights


def _masked_update(h_new: Tensor, h_prev: Tensor, mask_col: np.ndarray, dtype) -> Tensor:
    """Keep h_prev where the position is padding."""
    if mask_col.min() >= 1.0:
        return h_new
    m = Tensor(mask_col.astype(dtype).reshape(-1, 1))
    keep = Tensor((1.0 - mask_col).astype(dtype).reshape(-1, 1))
    return T.add(T.mul(m, h_new), T.mul(keep, h_prev))


def encode(params: TmParams, src_ids: np.ndarray, mask: np.ndarray | None = None) -> EncodedSource:
    """Run the bidirectional encoder over (B, L) source ids.

    mask is (B, L) with 1 for real tokens, 0 for padding; None means no
    padding anywhere.
    """
    src_ids = np.asarray(src_ids)
    if src_ids.ndim == 1:
        src_ids = src_ids[None, :]
    B, L = src_ids.shape
    if L == 0:
        raise DataError("cannot encode an empty source sentence")
    if mask is None:
        mask = np.ones((B, L), dtype=params.dtype)
    dtype = params.dtype
    h = params.hidden_size

    xs = [T.embedding(params.src_embed, src_ids[:, t]) for t in range(L)]

    fwd = []
    state = Tensor(np.zeros((B, h), dtype=dtype))
    for t in range(L):
        state = _masked_update(params.enc_fwd.step(xs[t], state), state, mask[:, t], dtype)
        fwd.append(state)
    bwd = [None] * L
    state = Tensor(np.zeros((B, h), dtype=dtype))
    for t in reversed(range(L)):
        state = _masked_update(params.enc_bwd.step(xs[t], state), state, mask[:, t], dtype)
        bwd[t] = state

    projected = []
    for t in range(L):
        cat = T.concat([fwd[t], bwd[t]], axis=1)
        projected.append(T.tanh(T.add(T.matmul(cat, params.W_enc), params.b_enc)))
    states = T.stack(projected, axis=1)  # (B, L, h)

    keys = T.reshape(T.matmul(T.reshape(states, (B * L, h)), params.W_att), (B, L, h))
    att_bias = Tensor((ATTENTION_MASK_BIAS * (1.0 - mask)).astype(dtype))
    return EncodedSource(states=states, att_keys=keys, mask=mask, att_bias=att_bias)


def init_decoder_state(params: TmParams, enc: EncodedSource) -> Tensor:
    """Masked mean of encoder states: the decoder's starting state."""
    weights = enc.mask / enc.mask.sum(axis=1, keepdims=True)
    w = Tensor(weights[:, None, :].astype(params.dtype))  # (B, 1, L)
    return T.reshape(T.bmm(w, enc.states), (enc.batch, params.hidden_size))


def decode_step(params: TmParams, prev_ids: np.ndarray, state: Tensor,
                enc: EncodedSource) -> DecoderStep:
    """One teacher-forced/decoding step for (B,) previous target ids."""
    B, L, h = enc.batch, enc.length, params.hidden_size
    x = T.embedding(params.tgt_embed, np.asarray(prev_ids))
    s = params.dec_cell.step(x, state)

    scores = T.reshape(T.bmm(enc.att_keys, T.reshape(s, (B, h, 1))), (B, L))
    alpha = T.softmax(T.add(scores, enc.att_bias))
    ctx = T.reshape(T.bmm(T.reshape(alpha, (B, 1, L)), enc.states), (B, h))

    s_tm = T.tanh(T.add(T.matmul(T.concat([s, ctx], axis=1), params.W_comb), params.b_comb))
    return DecoderStep(state=s, s_tm=s_tm, attention=alpha)


def tm_logits(params: TmParams, s_tm: Tensor) -> Tensor:
    """Baseline output projection of the decoder output state."""
    return T.add(T.matmul(s_tm, params.W_out), params.b_out)
