"""Language-model fusion heads.

Five mechanisms for mixing a frozen target-side language model into an
attentional translation model, all consuming the decoder output state
S_TM (and, where relevant, the LM's logits S_LM or probabilities P_LM)
and producing final pre-softmax scores over the TM vocabulary:

- shallow: decode-time log-linear mix, no trained parameters
- cold: gated low-rank transform of the LM logits
- postnorm: probability product softmax(tm_logits) * P_LM; trained and
  searched in log domain (see postnorm_log_scores), rendered as a
  distribution by postnorm_combine
- prenorm: softmax(tm_logits + log P_LM)
- dynamic: word attention over LM embeddings weighted by P_LM

PostNorm/PreNorm require the two vocabularies to be identical; dynamic
fusion works across mismatched vocabularies. The LM signal is always a
constant (the LM is frozen before any head trains), so gradients flow
only into TM and head parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fusemt import tensor as T
from fusemt import tm as tm_mod
from fusemt.errors import ConfigError, VocabularyMismatchError
from fusemt.layers import init_uniform
from fusemt.tensor import Tensor

P_LM_FLOOR = 1e-12

VARIANTS = ("baseline", "cold", "postnorm", "prenorm", "dynamic")


def _as_constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# Shallow fusion
# ---------------------------------------------------------------------------


@dataclass
class ShallowConfig:
    """Decode-time LM weight for the log-linear combination."""

    lam: float = 0.2

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"shallow fusion lambda must be >= 0 (got {self.lam})")


def shallow_combine(logp_tm: np.ndarray, logp_lm: np.ndarray, cfg: ShallowConfig) -> np.ndarray:
    """Score vector logP_TM + lambda * logP_LM (shared vocabulary)."""
    logp_tm = np.asarray(logp_tm)
    logp_lm = np.asarray(logp_lm)
    if logp_tm.shape != logp_lm.shape:
        raise VocabularyMismatchError(
            f"shallow fusion needs one shared vocabulary, got score shapes "
            f"{logp_tm.shape} vs {logp_lm.shape}"
        )
    return logp_tm + cfg.lam * logp_lm


# ---------------------------------------------------------------------------
# Cold fusion
# ---------------------------------------------------------------------------


@dataclass
class ColdFusionParams:
    W_LM: Tensor  # (h, V_LM)
    W_gate: Tensor  # (2h, h)
    W_output: Tensor  # (2h, V_TM)

    @classmethod
    def create(cls, hidden: int, lm_vocab: int, tm_vocab: int, seed: int,
               dtype=np.float32) -> "ColdFusionParams":
        rng = np.random.default_rng([seed, 300])
        return cls(
            W_LM=init_uniform(rng, (hidden, lm_vocab), dtype, scale=1.0 / np.sqrt(lm_vocab)),
            W_gate=init_uniform(rng, (2 * hidden, hidden), dtype),
            W_output=init_uniform(rng, (2 * hidden, tm_vocab), dtype),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"W_LM": self.W_LM, "W_gate": self.W_gate, "W_output": self.W_output}


@dataclass
class ColdFusionTrace:
    h_LM: Tensor  # (B, h)
    g: Tensor  # (B, h)
    h_prime: Tensor  # (B, 2h)
    S_cold: Tensor  # (B, V_TM)


def cold_fuse(s_tm: Tensor, s_lm, params: ColdFusionParams) -> tuple[Tensor, ColdFusionTrace]:
    """Gated fusion of LM logits into the decoder state.

    h_LM = W_LM s_lm; g = sigmoid(W_gate [s_tm; h_LM]);
    h' = [s_tm; g * h_LM]; S_cold = W_output h'. The gate nonlinearity
    is sigmoid so g stays a bounded per-unit gate.
    """
    s_lm = _as_constant(s_lm)
    h_lm = T.matmul(s_lm, T.transpose(params.W_LM))
    g = T.sigmoid(T.matmul(T.concat([s_tm, h_lm], axis=1), params.W_gate))
    h_prime = T.concat([s_tm, T.mul(g, h_lm)], axis=1)
    s_cold = T.matmul(h_prime, params.W_output)
    return s_cold, ColdFusionTrace(h_LM=h_lm, g=g, h_prime=h_prime, S_cold=s_cold)


# ---------------------------------------------------------------------------
# Simple fusion (PostNorm / PreNorm)
# ---------------------------------------------------------------------------


def _check_shared_vocab(name: str, n_tm: int, n_lm: int) -> None:
    if n_tm != n_lm:
        raise VocabularyMismatchError(
            f"{name} requires identical TM and LM vocabularies "
            f"(got |V_TM|={n_tm}, |V_LM|={n_lm})"
        )


def postnorm_scores(tm_logits: Tensor, p_lm) -> Tensor:
    """Pre-softmax scores: elementwise softmax(tm_logits) * P_LM."""
    p_lm = _as_constant(p_lm)
    _check_shared_vocab("postnorm fusion", tm_logits.shape[-1], p_lm.shape[-1])
    return T.mul(T.softmax(tm_logits), p_lm)


def postnorm_combine(tm_logits: Tensor, p_lm) -> Tensor:
    """Final distribution: softmax of the probability product vector."""
    return T.softmax(postnorm_scores(tm_logits, p_lm))


def postnorm_log_scores(tm_logits: Tensor, p_lm) -> Tensor:
    """Log-domain postnorm scores: log softmax(tm_logits) + log P_LM.

    Softmax of these scores is the sum-normalized probability product,
    which ranks tokens identically to postnorm_combine (the outer
    softmax there is monotone). Training and search use this form: a
    cross-entropy on the [0,1]-bounded product vector itself has
    near-zero gradient signal and lets the decoder dump probability
    mass on tokens the LM zeroes out (EOS mid-sentence), which
    collapses training.
    """
    p_lm = _as_constant(p_lm)
    _check_shared_vocab("postnorm fusion", tm_logits.shape[-1], p_lm.shape[-1])
    log_p = Tensor(np.log(np.maximum(p_lm.data, P_LM_FLOOR)))
    return T.add(T.log_softmax(tm_logits), log_p)


def prenorm_scores(tm_logits: Tensor, p_lm) -> Tensor:
    """Pre-softmax scores: tm_logits + log(P_LM floored at 1e-12)."""
    p_lm = _as_constant(p_lm)
    _check_shared_vocab("prenorm fusion", tm_logits.shape[-1], p_lm.shape[-1])
    log_p = Tensor(np.log(np.maximum(p_lm.data, P_LM_FLOOR)))
    return T.add(tm_logits, log_p)


def prenorm_combine(tm_logits: Tensor, p_lm) -> Tensor:
    """Final distribution: softmax(tm_logits + log P_LM)."""
    return T.softmax(prenorm_scores(tm_logits, p_lm))


# ---------------------------------------------------------------------------
# Dynamic fusion (word attention over the LM vocabulary)
# ---------------------------------------------------------------------------


@dataclass
class DynamicFusionParams:
    e_word: Tensor  # (V_LM, h) attention embeddings
    W: Tensor  # (2h, V_TM) output projection, replaces the baseline's

    @classmethod
    def create(cls, lm_vocab: int, hidden: int, tm_vocab: int, seed: int,
               dtype=np.float32) -> "DynamicFusionParams":
        rng = np.random.default_rng([seed, 400])
        return cls(
            e_word=init_uniform(rng, (lm_vocab, hidden), dtype, scale=0.1),
            W=init_uniform(rng, (2 * hidden, tm_vocab), dtype),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"e_word": self.e_word, "W": self.W}


@dataclass
class DynamicFusionTrace:
    alpha: Tensor  # (B, V_LM) word attention distribution
    c_LM: Tensor  # (B, h)
    h_TM: Tensor  # (B, 2h)
    S_ATTN: Tensor  # (B, V_TM)
    _e_word: Tensor = field(repr=False, default=None)

    @property
    def c_word(self) -> np.ndarray:
        """Per-word context pieces alpha_word * e_word, (B, V_LM, h)."""
        return self.alpha.data[:, :, None] * self._e_word.data[None, :, :]


def dynamic_fuse(s_tm: Tensor, p_lm, params: DynamicFusionParams
                 ) -> tuple[Tensor, DynamicFusionTrace]:
    """Word attention over the LM vocabulary, then a fused projection.

    alpha = softmax over V_LM of e_word . s_tm; the LM context is
    c_LM = sum_word alpha_word * P_LM(word) * e_word (not renormalized);
    h_TM = [s_tm; c_LM]; S_ATTN = W h_TM. V_LM may differ from V_TM.
    """
    p_lm = _as_constant(p_lm)
    if p_lm.shape[-1] != params.e_word.shape[0]:
        raise VocabularyMismatchError(
            f"dynamic fusion P_LM width {p_lm.shape[-1]} does not match "
            f"e_word vocabulary {params.e_word.shape[0]}"
        )
    scores = T.matmul(s_tm, T.transpose(params.e_word))  # (B, V_LM)
    alpha = T.softmax(scores)
    weighted = T.mul(alpha, p_lm)
    c_lm = T.matmul(weighted, params.e_word)  # (B, h)
    h_tm = T.concat([s_tm, c_lm], axis=1)
    s_attn = T.matmul(h_tm, params.W)
    trace = DynamicFusionTrace(alpha=alpha, c_LM=c_lm, h_TM=h_tm, S_ATTN=s_attn,
                               _e_word=params.e_word)
    return s_attn, trace


# ---------------------------------------------------------------------------
# Uniform head interface for training and decoding
# ---------------------------------------------------------------------------


class BaselineHead:
    """No fusion: scores are the baseline output projection."""

    variant = "baseline"
    lm_quantity = None

    def scores(self, tm_params, s_tm: Tensor, lm_value=None) -> Tensor:
        return tm_mod.tm_logits(tm_params, s_tm)

    def tensors(self) -> dict[str, Tensor]:
        return {}


@dataclass
class ColdFusionHead:
    params: ColdFusionParams
    variant = "cold"
    lm_quantity = "logits"
    last_trace: Optional[ColdFusionTrace] = None

    def scores(self, tm_params, s_tm: Tensor, lm_value) -> Tensor:
        out, self.last_trace = cold_fuse(s_tm, lm_value, self.params)
        return out

    def tensors(self) -> dict[str, Tensor]:
        return {f"head.{k}": v for k, v in self.params.tensors().items()}


class PostNormHead:
    variant = "postnorm"
    lm_quantity = "probs"

    def scores(self, tm_params, s_tm: Tensor, lm_value) -> Tensor:
        return postnorm_log_scores(tm_mod.tm_logits(tm_params, s_tm), lm_value)

    def tensors(self) -> dict[str, Tensor]:
        return {}


class PreNormHead:
    variant = "prenorm"
    lm_quantity = "probs"

    def scores(self, tm_params, s_tm: Tensor, lm_value) -> Tensor:
        return prenorm_scores(tm_mod.tm_logits(tm_params, s_tm), lm_value)

    def tensors(self) -> dict[str, Tensor]:
        return {}


@dataclass
class DynamicFusionHead:
    params: DynamicFusionParams
    variant = "dynamic"
    lm_quantity = "probs"
    last_trace: Optional[DynamicFusionTrace] = None

    def scores(self, tm_params, s_tm: Tensor, lm_value) -> Tensor:
        out, self.last_trace = dynamic_fuse(s_tm, lm_value, self.params)
        return out

    def tensors(self) -> dict[str, Tensor]:
        return {f"head.{k}": v for k, v in self.params.tensors().items()}


def make_head(variant: str, hidden: int, tm_vocab: int, lm_vocab: int | None = None,
              seed: int = 0, dtype=np.float32):
    """Build the fusion head for a variant, enforcing vocabulary rules.

    PostNorm/PreNorm refuse mismatched vocabularies outright; dynamic
    and cold fusion accept any LM vocabulary size.
    """
    if variant == "baseline":
        return BaselineHead()
    if lm_vocab is None:
        raise ConfigError(f"variant '{variant}' needs a language model vocabulary size")
    if variant == "cold":
        return ColdFusionHead(ColdFusionParams.create(hidden, lm_vocab, tm_vocab, seed, dtype))
    if variant == "postnorm":
        _check_shared_vocab("postnorm fusion", tm_vocab, lm_vocab)
        return PostNormHead()
    if variant == "prenorm":
        _check_shared_vocab("prenorm fusion", tm_vocab, lm_vocab)
        return PreNormHead()
    if variant == "dynamic":
        return DynamicFusionHead(DynamicFusionParams.create(lm_vocab, hidden, tm_vocab, seed, dtype))
    raise ConfigError(f"unknown fusion variant '{variant}' (expected one of {VARIANTS})")


def head_nll(head, tm_params, s_tm: Tensor, lm_value, gold_ids: np.ndarray) -> Tensor:
    """Per-row negative log of the head's final distribution at gold.

    Every head returns pre-softmax scores, so the loss is a softmax
    cross-entropy on those scores; for PreNorm this equals -log of the
    combined distribution at the gold id, and for PostNorm it is the
    sum-normalized probability product's NLL (same argmax as the
    rendered distribution). The LM value is a frozen constant, so no
    gradient reaches LM parameters.
    """
    return T.cross_entropy(head.scores(tm_params, s_tm, lm_value), np.asarray(gold_ids))
