"""Token vocabularies with fixed reserved ids.

Ids 0-3 are always pad/unk/bos/eos, in that order. Everything else is
assigned by descending corpus frequency, ties broken lexicographically.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from fusemt.errors import ConfigError, DataError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)


@dataclass
class Vocabulary:
    """Bijective token<->id map with reserved ids 0-3."""

    tokens: list[str]
    counts: list[int]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        if len(self.counts) != len(self.tokens):
            raise DataError("vocabulary counts misaligned with tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Map tokens to ids; unknown tokens become the unk id."""
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, (tok, cnt) in enumerate(zip(self.tokens, self.counts)):
                f.write(f"{tok}\t{i}\t{cnt}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno + 1}: expected token<TAB>id<TAB>count")
                tok, id_str, cnt_str = parts
                if int(id_str) != lineno:
                    raise DataError(f"{path}:{lineno + 1}: ids must be 0,1,2,... in order")
                tokens.append(tok)
                counts.append(int(cnt_str))
        return cls(tokens, counts)


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> Vocabulary:
    """Count tokens and keep the (max_size - 4) most frequent.

    Ties are broken lexicographically. The corpus must contain at least
    one sentence.
    """
    if max_size <= 4:
        raise ConfigError(f"vocabulary max_size must exceed 4 (got {max_size})")
    freq = Counter()
    n_sentences = 0
    for sent in corpus:
        n_sentences += 1
        freq.update(sent)
    if n_sentences == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[: max_size - 4]
    tokens = list(RESERVED) + [tok for tok, _ in kept]
    counts = [0, 0, 0, 0] + [cnt for _, cnt in kept]
    return Vocabulary(tokens, counts)
