"""Parallel and monolingual corpus containers and file I/O.

Files are UTF-8 plain text, one sentence per line, tokens separated by
single spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from fusemt.errors import DataError


@dataclass
class ParallelCorpus:
    """Aligned (source, target) token-sequence pairs."""

    pairs: list[tuple[tuple[str, ...], tuple[str, ...]]]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[tuple[str, ...], tuple[str, ...]]]:
        return iter(self.pairs)

    def sources(self) -> list[tuple[str, ...]]:
        return [src for src, _ in self.pairs]

    def targets(self) -> list[tuple[str, ...]]:
        return [tgt for _, tgt in self.pairs]

    def filtered(self, max_tokens: int) -> "ParallelCorpus":
        """Drop pairs where either side exceeds max_tokens."""
        kept = [
            (src, tgt)
            for src, tgt in self.pairs
            if len(src) <= max_tokens and len(tgt) <= max_tokens
        ]
        return ParallelCorpus(kept, f"{self.provenance} filtered(max_tokens={max_tokens})")

    def save(self, src_path, tgt_path) -> None:
        save_sentences(self.sources(), src_path)
        save_sentences(self.targets(), tgt_path)


def load_sentences(path, max_tokens: int | None = None) -> list[tuple[str, ...]]:
    """Read one tokenized sentence per line, dropping overlong ones."""
    sents = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = tuple(line.split())
            if max_tokens is None or len(tokens) <= max_tokens:
                sents.append(tokens)
    return sents


def save_sentences(sentences: Sequence[Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")


def load_parallel(src_path, tgt_path, max_tokens: int | None = None) -> ParallelCorpus:
    """Read a line-aligned sentence pair file set.

    Raises DataError when the files disagree on line count. Pairs where
    either side exceeds max_tokens are dropped.
    """
    src = load_sentences(src_path)
    tgt = load_sentences(tgt_path)
    if len(src) != len(tgt):
        raise DataError(
            f"parallel files are misaligned: {src_path} has {len(src)} lines, "
            f"{tgt_path} has {len(tgt)}"
        )
    corpus = ParallelCorpus(list(zip(src, tgt)), f"{src_path}+{tgt_path}")
    if max_tokens is not None:
        corpus = corpus.filtered(max_tokens)
    return corpus
