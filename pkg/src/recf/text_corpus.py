"""Tokenization, vocabulary counting and Huffman coding of the vocabulary.

The Huffman tree defines the hierarchical-softmax output layer: every word is a
leaf, every inner node owns an output vector, and the probability of a word is
the product of binary branch decisions along its root-to-leaf path.
"""
from __future__ import annotations

import heapq
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "EmptyVocabularyError",
    "Vocabulary",
    "HuffmanTree",
    "tokenize",
    "build_vocab",
    "build_huffman",
    "write_vocab",
]

_SPLIT = re.compile(r"[\s,|]+")
_STRIP = string.punctuation


class EmptyVocabularyError(ValueError):
    """No token survived the ``min_count`` threshold."""


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into tag-like tokens.

    Tokens are separated by commas, pipes or whitespace. Punctuation around a
    token is stripped; internal apostrophes and hyphens are kept, so
    ``"Children's"`` stays one token.

    >>> tokenize("animation, children's, comedy")
    ['animation', "children's", 'comedy']
    """
    tokens = []
    for piece in _SPLIT.split(text.lower()):
        piece = piece.strip(_STRIP)
        if piece:
            tokens.append(piece)
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Retained tokens ordered by decreasing count (ties: first appearance)."""

    words: tuple[str, ...]
    counts: tuple[int, ...]
    index: dict[str, int] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: object) -> bool:
        return word in self.index

    @classmethod
    def from_counts(cls, counts: dict[str, int] | Sequence[tuple[str, int]]) -> "Vocabulary":
        items = list(counts.items()) if isinstance(counts, dict) else list(counts)
        items.sort(key=lambda wc: -wc[1])  # stable: keeps first-appearance order on ties
        words = tuple(w for w, _ in items)
        if len(set(words)) != len(words):
            raise ValueError("duplicate token in vocabulary")
        if any(c < 0 for _, c in items):
            raise ValueError("counts must be non-negative")
        return cls(words, tuple(int(c) for _, c in items), {w: i for i, w in enumerate(words)})


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Count tokens over a stream of token sequences.

    Raises :class:`EmptyVocabularyError` when nothing reaches ``min_count``.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counter: Counter[str] = Counter()
    for sentence in corpus:
        counter.update(sentence)
    kept = [(w, c) for w, c in counter.items() if c >= min_count]
    if not kept:
        raise EmptyVocabularyError(f"no token occurs at least {min_count} time(s)")
    return Vocabulary.from_counts(kept)


@dataclass(frozen=True)
class HuffmanTree:
    """Binary coding tree over a vocabulary of ``K`` words.

    Inner nodes are numbered ``0 .. K-2`` in creation order, so the root is
    ``K-2``. ``paths[w]`` lists the inner nodes visited from the root down to
    the parent of leaf ``w`` and ``codes[w][i]`` is True when the walk leaves
    ``paths[w][i]`` through its designated (lighter) child.
    """

    n_words: int
    paths: tuple[tuple[int, ...], ...]
    codes: tuple[tuple[bool, ...], ...]

    @property
    def n_inner(self) -> int:
        return max(self.n_words - 1, 0)

    def depth(self, word: int) -> int:
        """Number of branch decisions for ``word`` (path length ``L(w) - 1``)."""
        return len(self.paths[word])


def build_huffman(vocab: Vocabulary) -> HuffmanTree:
    """Huffman tree over the vocabulary counts.

    Equal weights are broken by node id: leaves use their vocabulary index,
    inner nodes ``K + creation order``; the lower id is the lighter node and
    becomes the designated child.
    """
    K = len(vocab)
    if K == 0:
        raise EmptyVocabularyError("cannot build a tree over an empty vocabulary")
    if K == 1:
        return HuffmanTree(1, ((),), ((),))

    heap = [(c, i) for i, c in enumerate(vocab.counts)]
    heapq.heapify(heap)
    parent = [0] * (2 * K - 1)
    designated = [False] * (2 * K - 1)
    next_id = K
    while len(heap) > 1:
        w1, light = heapq.heappop(heap)
        w2, heavy = heapq.heappop(heap)
        parent[light] = parent[heavy] = next_id
        designated[light] = True
        heapq.heappush(heap, (w1 + w2, next_id))
        next_id += 1

    root = 2 * K - 2
    paths, codes = [], []
    for w in range(K):
        nodes, bits = [], []
        node = w
        while node != root:
            p = parent[node]
            nodes.append(p - K)
            bits.append(designated[node])
            node = p
        paths.append(tuple(reversed(nodes)))
        codes.append(tuple(reversed(bits)))
    return HuffmanTree(K, tuple(paths), tuple(codes))


def write_vocab(vocab: Vocabulary, path) -> None:
    """Debug dump, one ``token<TAB>count`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for w, c in zip(vocab.words, vocab.counts):
            fh.write(f"{w}\t{c}\n")
