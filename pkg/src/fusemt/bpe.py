"""Byte pair encoding: greedy most-frequent-pair merge learning.

Words are segmented into characters plus a trailing end-of-word
sentinel symbol; merges fuse adjacent symbols. Subword units are
rendered with a trailing continuation marker ("@@") on every unit
except the word-final one, so decode is a pure string join.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from fusemt.errors import DataError

END = "</w>"
MARKER = "@@"


@dataclass
class BpeModel:
    """An ordered merge list plus the continuation marker."""

    merges: list[tuple[str, str]]
    marker: str = MARKER
    _cache: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def segment_word(self, word: str) -> tuple[str, ...]:
        """Apply every merge, in order, to the word's symbol sequence."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = apply_merges(tuple(word) + (END,), self.merges)
        self._cache[word] = symbols
        return symbols

    def encode(self, tokens: Sequence[str]) -> list[str]:
        """Split each token into subword units, continuation-marked."""
        out = []
        for word in tokens:
            out.extend(render_units(self.segment_word(word), self.marker))
        return out

    def decode(self, subtokens: Sequence[str]) -> list[str]:
        """Invert encode: join continuation-marked units back into words."""
        words, partial = [], []
        for unit in subtokens:
            if unit.endswith(self.marker):
                partial.append(unit[: -len(self.marker)])
            else:
                partial.append(unit)
                words.append("".join(partial))
                partial = []
        if partial:
            words.append("".join(partial))
        return words

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise DataError(f"{path}:{lineno + 1}: expected 'left right'")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def apply_merges(symbols: tuple[str, ...], merges: Sequence[tuple[str, str]]) -> tuple[str, ...]:
    """Apply each merge exhaustively left-to-right, in merge order."""
    syms = list(symbols)
    for left, right in merges:
        if len(syms) < 2:
            break
        merged = []
        i = 0
        while i < len(syms):
            if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(syms[i])
                i += 1
        syms = merged
    return tuple(syms)


def render_units(symbols: tuple[str, ...], marker: str = MARKER) -> list[str]:
    """Strip the end sentinel and mark non-final units for continuation."""
    visible = []
    for sym in symbols:
        if sym == END:
            continue
        if sym.endswith(END):
            sym = sym[: -len(END)]
        visible.append(sym)
    if not visible:
        return []
    return [u + marker for u in visible[:-1]] + [visible[-1]]


def learn_bpe(corpus: Iterable[Sequence[str]], n_ops: int) -> BpeModel:
    """Learn up to n_ops merges, most frequent adjacent pair first.

    Ties break by lexicographic pair order. Stops early when no
    adjacent pair is left to merge.
    """
    if n_ops < 0:
        raise DataError(f"n_ops must be >= 0 (got {n_ops})")
    word_freq = Counter()
    for sent in corpus:
        word_freq.update(sent)

    words = [(tuple(w) + (END,), freq) for w, freq in sorted(word_freq.items())]
    merges: list[tuple[str, str]] = []
    for _ in range(n_ops):
        pair_freq = Counter()
        for syms, freq in words:
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        best = min(pair_freq.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        words = [(apply_merges(syms, [best]), freq) for syms, freq in words]
    return BpeModel(merges)
