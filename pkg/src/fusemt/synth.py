"""Seeded synthetic parallel-corpus generator.

Source sentences are random sequences over a fixed syllabic word list.
The target side is a deterministic transform of the source (token-wise
surface mapping, then order reversal) plus a seeded insertion of one
matched open/close bracket pair, so target-side regularities such as
bracket closure are learnable from target-only text.
"""

from __future__ import annotations

import numpy as np

from fusemt.corpus import ParallelCorpus
from fusemt.errors import ConfigError

OPEN_BRACKET = "「"
CLOSE_BRACKET = "」"
BRACKET_PROB = 0.5

_CONSONANTS = "bdgkmnprst"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]
_VOWEL_MAP = str.maketrans("aeiou", "ouaei")


def source_words(vocab_size: int) -> list[str]:
    """The first vocab_size word surfaces, deterministic and distinct."""
    if vocab_size < 8:
        raise ConfigError(f"synthetic vocab_size must be >= 8 (got {vocab_size})")
    n_syl = len(_SYLLABLES)
    words = []
    # Stride through two-syllable combinations (2500 available), then
    # three-syllable ones; 101 is coprime with 2500 so indices are distinct.
    for i in range(min(vocab_size, n_syl * n_syl)):
        k = (i * 101) % (n_syl * n_syl)
        words.append(_SYLLABLES[k // n_syl] + _SYLLABLES[k % n_syl])
    for i in range(len(words), vocab_size):
        k = i - n_syl * n_syl
        words.append(
            _SYLLABLES[k % n_syl]
            + _SYLLABLES[(k // n_syl) % n_syl]
            + _SYLLABLES[(k // (n_syl * n_syl)) % n_syl]
        )
    return words


def target_word(src_word: str) -> str:
    """Token-wise surface map: rotate vowels, add a shared suffix."""
    return src_word.translate(_VOWEL_MAP) + "ko"


def _draw_pair(rng: np.random.Generator, words: list[str]):
    length = int(rng.integers(3, 13))
    idxs = rng.integers(0, len(words), size=length)
    src = tuple(words[i] for i in idxs)
    tgt = [target_word(w) for w in reversed(src)]
    if rng.random() < BRACKET_PROB:
        i = int(rng.integers(0, len(tgt) + 1))
        j = int(rng.integers(i, len(tgt) + 1))
        tgt = tgt[:i] + [OPEN_BRACKET] + tgt[i:j] + [CLOSE_BRACKET] + tgt[j:]
    return src, tuple(tgt)


def generate_synthetic(seed: int, n_pairs: int, vocab_size: int) -> ParallelCorpus:
    """Seeded parallel corpus; identical output for identical arguments."""
    if n_pairs < 1:
        raise ConfigError(f"n_pairs must be >= 1 (got {n_pairs})")
    words = source_words(vocab_size)
    rng = np.random.default_rng([seed, 0])
    pairs = [_draw_pair(rng, words) for _ in range(n_pairs)]
    return ParallelCorpus(
        pairs, f"synthetic(seed={seed}, n_pairs={n_pairs}, vocab_size={vocab_size})"
    )


def generate_monolingual(seed: int, n_sents: int, vocab_size: int) -> list[tuple[str, ...]]:
    """Seeded target-side-only sentences, disjoint stream from the
    parallel generator so one seed can feed both corpora."""
    if n_sents < 1:
        raise ConfigError(f"n_sents must be >= 1 (got {n_sents})")
    words = source_words(vocab_size)
    rng = np.random.default_rng([seed, 1])
    return [_draw_pair(rng, words)[1] for _ in range(n_sents)]
