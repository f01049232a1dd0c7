"""Skip-gram word vectors with a hierarchical-softmax output layer.

Word vectors are learned by maximizing the average log probability of the
words inside a window of radius ``c`` around each centre word, where each
probability is a product of sigmoid branch decisions along the Huffman path of
the predicted word. Item descriptions are then embedded by averaging the
vectors of their in-vocabulary words.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .text_corpus import HuffmanTree, Vocabulary, build_huffman, build_vocab, tokenize
from .utils import atomic_write

__all__ = [
    "EmptyCorpusError",
    "SkipgramConfig",
    "EmbeddingTable",
    "DescriptionMatrix",
    "hs_probability",
    "average_log_probability",
    "train_skipgram",
    "embed_description",
    "build_description_matrix",
    "save_embeddings",
    "load_embeddings",
    "DescriptionEmbedder",
]

logger = logging.getLogger(__name__)


class EmptyCorpusError(ValueError):
    pass


@dataclass(frozen=True)
class SkipgramConfig:
    dim: int = 10
    window: int = 5
    epochs: int = 20
    initial_step: float = 0.025
    seed: int = 0
    decay: bool = True  # linear decay to 2.5% of initial_step; False freezes the step

    def __post_init__(self):
        if self.dim < 1 or self.window < 1 or self.epochs < 1:
            raise ValueError("dim, window and epochs must all be >= 1")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")


@dataclass
class EmbeddingTable:
    """Input vectors per word and output vectors per inner tree node."""

    words: tuple[str, ...]
    word_vectors: np.ndarray  # (K, e)
    node_vectors: np.ndarray  # (K-1, e)

    def __post_init__(self):
        K = len(self.words)
        if self.word_vectors.shape[0] != K:
            raise ValueError(f"{self.word_vectors.shape[0]} word vectors for {K} words")
        if self.node_vectors.shape != (max(K - 1, 0), self.dim):
            raise ValueError(f"node vectors have shape {self.node_vectors.shape}, expected {(max(K - 1, 0), self.dim)}")
        self._index = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.word_vectors.shape[1]

    def __contains__(self, word: object) -> bool:
        return word in self._index

    def word_id(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise KeyError(f"unknown word {word!r}") from None

    def vector(self, word: str) -> np.ndarray:
        return self.word_vectors[self.word_id(word)]


@dataclass
class DescriptionMatrix:
    """Per-item description vectors; rows of items without one are NaN."""

    rows: np.ndarray  # (M, e)
    present: np.ndarray  # (M,) bool

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.present = np.asarray(self.present, dtype=bool)
        if self.rows.ndim != 2 or self.present.shape != (self.rows.shape[0],):
            raise ValueError("rows must be (M, e) and present (M,)")
        if not np.all(np.isfinite(self.rows[self.present])):
            raise ValueError("present description rows must be finite")

    @property
    def n_items(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def empty(cls, n_items: int, dim: int = 0) -> "DescriptionMatrix":
        return cls(np.full((n_items, dim), np.nan), np.zeros(n_items, dtype=bool))


def _path_arrays(tree: HuffmanTree):
    paths = [np.asarray(p, dtype=np.intp) for p in tree.paths]
    signs = [np.where(np.asarray(c, dtype=bool), 1.0, -1.0) for c in tree.codes]
    return paths, signs


def hs_probability(center: str | int, target: str | int, table: EmbeddingTable, tree: HuffmanTree) -> float:
    """p(target | center): product of sigmoid branch decisions along target's path."""
    c = table.word_id(center) if isinstance(center, str) else int(center)
    t = table.word_id(target) if isinstance(target, str) else int(target)
    K = len(table.words)
    if not (0 <= c < K and 0 <= t < K):
        raise KeyError(f"word id out of range for vocabulary of size {K}")
    path = np.asarray(tree.paths[t], dtype=np.intp)
    if path.size == 0:
        return 1.0
    signs = np.where(np.asarray(tree.codes[t]), 1.0, -1.0)
    x = table.node_vectors[path] @ table.word_vectors[c]
    return float(np.prod(expit(signs * x)))


def _encode(corpus: Iterable[Sequence[str]], vocab: Vocabulary) -> list[np.ndarray]:
    encoded = []
    for sentence in corpus:
        ids = [vocab.index[w] for w in sentence if w in vocab.index]
        if ids:
            encoded.append(np.asarray(ids, dtype=np.intp))
    return encoded


def average_log_probability(corpus, vocab: Vocabulary, tree: HuffmanTree, table: EmbeddingTable, window: int) -> float:
    """Mean over corpus tokens of the summed log p(context | centre) in the window."""
    paths, signs = _path_arrays(tree)
    total, n_tokens = 0.0, 0
    for sent in _encode(corpus, vocab):
        n_tokens += len(sent)
        for t, center in enumerate(sent):
            h = table.word_vectors[center]
            for j in range(max(0, t - window), min(len(sent), t + window + 1)):
                if j == t or paths[sent[j]].size == 0:
                    continue
                target = sent[j]
                x = table.node_vectors[paths[target]] @ h
                total += float(np.sum(log_expit(signs[target] * x)))
    if n_tokens == 0:
        raise EmptyCorpusError("corpus has no in-vocabulary tokens")
    return total / n_tokens


def train_skipgram(corpus, vocab: Vocabulary, tree: HuffmanTree, cfg: SkipgramConfig = SkipgramConfig()) -> EmbeddingTable:
    """Stochastic gradient ascent on the skip-gram log likelihood.

    Sentences never share a window. Tokens missing from ``vocab`` are dropped
    before windowing. Single-threaded and deterministic given ``cfg.seed``.
    """
    sentences = _encode(corpus, vocab)
    n_tokens = sum(len(s) for s in sentences)
    if n_tokens == 0:
        raise EmptyCorpusError("corpus has no in-vocabulary tokens")

    K, e = len(vocab), cfg.dim
    rng = np.random.default_rng(cfg.seed)
    W = rng.uniform(-0.5 / e, 0.5 / e, size=(K, e))
    N = np.zeros((max(K - 1, 0), e))
    paths, signs = _path_arrays(tree)

    total = cfg.epochs * n_tokens
    seen = 0
    for epoch in range(cfg.epochs):
        for sent in sentences:
            for t, center in enumerate(sent):
                lr = cfg.initial_step
                if cfg.decay:
                    lr *= 1.0 - 0.975 * seen / total
                seen += 1
                h = W[center]
                for j in range(max(0, t - cfg.window), min(len(sent), t + cfg.window + 1)):
                    target = sent[j]
                    if j == t or paths[target].size == 0:
                        continue
                    path, s = paths[target], signs[target]
                    nv = N[path]
                    # d/dx log sigmoid(s x) = s (1 - sigmoid(s x))
                    g = lr * s * expit(-s * (nv @ h))
                    grad_h = g @ nv
                    N[path] += np.outer(g, h)
                    h += grad_h
        logger.debug("skip-gram epoch %d/%d done", epoch + 1, cfg.epochs)
    return EmbeddingTable(vocab.words, W, N)


def embed_description(tokens: Sequence[str], table: EmbeddingTable) -> tuple[np.ndarray, bool]:
    """Average of the in-vocabulary word vectors; ``(nan row, False)`` if none."""
    ids = [table._index[w] for w in tokens if w in table._index]
    if not ids:
        return np.full(table.dim, np.nan), False
    return table.word_vectors[ids].mean(axis=0), True


def build_description_matrix(Q: Sequence[Sequence[str]], table: EmbeddingTable) -> DescriptionMatrix:
    rows = np.full((len(Q), table.dim), np.nan)
    present = np.zeros(len(Q), dtype=bool)
    for v, tokens in enumerate(Q):
        rows[v], present[v] = embed_description(tokens, table)
    return DescriptionMatrix(rows, present)


def _fmt_row(label, values) -> str:
    return " ".join([str(label)] + ["%.17g" % x for x in values])


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Write word vectors to ``path`` and inner-node vectors to ``path + '.nodes'``."""
    K, e = table.word_vectors.shape
    lines = [f"{K} {e}"] + [_fmt_row(w, row) for w, row in zip(table.words, table.word_vectors)]
    atomic_write(path, "\n".join(lines) + "\n")
    lines = [f"{table.node_vectors.shape[0]} {e}"] + [_fmt_row(i, row) for i, row in enumerate(table.node_vectors)]
    atomic_write(os.fspath(path) + ".nodes", "\n".join(lines) + "\n")


def _read_vectors(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header")
        n, e = int(header[0]), int(header[1])
        keys, rows = [], np.empty((n, e))
        for i in range(n):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != e + 1:
                raise ValueError(f"{path}:{i + 2}: expected {e + 1} fields, got {len(parts)}")
            keys.append(parts[0])
            rows[i] = [float(x) for x in parts[1:]]
    return keys, rows


def load_embeddings(path) -> EmbeddingTable:
    words, W = _read_vectors(path)
    nodes_path = os.fspath(path) + ".nodes"
    if os.path.exists(nodes_path):
        ids, N = _read_vectors(nodes_path)
        if ids != [str(i) for i in range(len(ids))]:
            raise ValueError(f"{nodes_path}: node ids must be 0..K-2 in order")
    else:
        N = np.zeros((max(len(words) - 1, 0), W.shape[1]))
    return EmbeddingTable(tuple(words), W, N)


def _as_token_lists(X) -> list[list[str]]:
    return [tokenize(x) if isinstance(x, str) else list(x) for x in X]


class DescriptionEmbedder(TransformerMixin, BaseEstimator):
    """Learn word vectors from a corpus and map item descriptions to vectors.

    ``fit`` accepts a sequence of token lists (or raw strings, which are
    tokenized). ``transform`` returns a :class:`DescriptionMatrix` with one
    row per item.
    """

    def __init__(self, dim=10, window=5, epochs=20, initial_step=0.025, min_count=1, seed=0):
        self.dim = dim
        self.window = window
        self.epochs = epochs
        self.initial_step = initial_step
        self.min_count = min_count
        self.seed = seed

    def _config(self) -> SkipgramConfig:
        return SkipgramConfig(self.dim, self.window, self.epochs, self.initial_step, self.seed)

    def fit(self, X, y=None):
        corpus = _as_token_lists(X)
        self.vocab_ = build_vocab(corpus, self.min_count)
        self.tree_ = build_huffman(self.vocab_)
        self.table_ = train_skipgram(corpus, self.vocab_, self.tree_, self._config())
        return self

    def transform(self, X) -> DescriptionMatrix:
        check_is_fitted(self, "table_")
        return build_description_matrix(_as_token_lists(X), self.table_)
